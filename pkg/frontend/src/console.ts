/** Keyboard-first annotation console driving the query/answer HTTP API.
 *
 * The component owns a tiny state machine (loading, query, waiting, done)
 * plus two cross-cutting flags: an error banner for network failures and a
 * toast for per-answer feedback.  All pixel geometry lives server-side; the
 * console only stacks the pre-rendered overlay PNG on top of the image.
 */

import type { Api, Progress, QueryInfo, SubmitResult } from "./api.js";
import { classColor } from "./palette.js";

export interface ConsoleOptions {
  /** Poll interval for progress/query refresh; 0 disables the background
   * timer so tests can drive the console deterministically via tick(). */
  pollMs?: number;
}

type View = "loading" | "waiting" | "query" | "done";

function describeError(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

export class AnnotationConsole {
  private progress: Progress | null = null;
  private current: QueryInfo | null = null;
  private view: View = "loading";
  private outstanding = false;
  private toastMsg: string | null = null;
  private bannerMsg: string | null = null;
  private running = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private lastSignature = "";
  private readonly pollMs: number;
  private readonly keyHandler: (event: KeyboardEvent) => void;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: Api,
    opts: ConsoleOptions = {},
  ) {
    this.pollMs = opts.pollMs ?? 500;
    this.keyHandler = (event) => this.onKey(event);
    root.ownerDocument.addEventListener("keydown", this.keyHandler);
    this.render();
  }

  /** Query currently on screen; answers are only ever submitted for this. */
  get displayedQuery(): QueryInfo | null {
    return this.current;
  }

  get lastProgress(): Progress | null {
    return this.progress;
  }

  start(): void {
    if (this.running) return;
    this.running = true;
    const loop = async (): Promise<void> => {
      if (!this.running) return;
      await this.tick();
      if (!this.running || this.pollMs <= 0) return;
      this.timer = setTimeout(() => void loop(), this.pollMs);
    };
    void loop();
  }

  stop(): void {
    this.running = false;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
  }

  dispose(): void {
    this.stop();
    this.root.ownerDocument.removeEventListener("keydown", this.keyHandler);
  }

  /** One refresh pass: sync progress, fetch a query if none is displayed. */
  async tick(): Promise<void> {
    if (this.outstanding) return;
    try {
      this.progress = await this.client.progress();
      if (this.progress.done) {
        this.current = null;
        this.view = "done";
      } else if (this.current === null) {
        await this.fetchNext();
      } else {
        this.view = "query";
      }
      this.bannerMsg = null;
    } catch (err) {
      this.bannerMsg = describeError(err);
    }
    this.render();
  }

  async submitAnswer(classId: number): Promise<void> {
    const query = this.current;
    if (this.outstanding || query === null || this.view !== "query") return;
    if (classId < 0 || classId >= query.class_names.length) return;
    this.outstanding = true;
    this.render();
    try {
      const result = await this.client.answer(query.query_id, classId);
      await this.applyResult(result);
      this.bannerMsg = null;
    } catch (err) {
      this.bannerMsg = describeError(err);
    } finally {
      this.outstanding = false;
      this.render();
    }
  }

  async submitSkip(): Promise<void> {
    const query = this.current;
    if (this.outstanding || query === null || this.view !== "query") return;
    this.outstanding = true;
    this.render();
    try {
      const result = await this.client.skip(query.query_id);
      await this.applyResult(result);
      this.bannerMsg = null;
    } catch (err) {
      this.bannerMsg = describeError(err);
    } finally {
      this.outstanding = false;
      this.render();
    }
  }

  private async applyResult(result: SubmitResult): Promise<void> {
    if (result.kind === "ok") {
      this.progress = result.progress;
      this.toastMsg = null;
      this.current = null;
      this.view = "waiting";
      await this.advance();
    } else if (result.kind === "conflict") {
      this.toastMsg = "query was already resolved elsewhere; fetching a fresh one";
      this.current = null;
      this.view = "waiting";
      this.progress = await this.client.progress();
      await this.advance();
    } else {
      this.toastMsg = result.detail;
    }
  }

  private async advance(): Promise<void> {
    if (this.progress !== null && this.progress.done) {
      this.view = "done";
      return;
    }
    await this.fetchNext();
  }

  private async fetchNext(): Promise<void> {
    const next = await this.client.nextQuery();
    if (next === null) {
      this.current = null;
      this.view = "waiting";
    } else {
      this.current = next;
      this.view = "query";
    }
  }

  private onKey(event: KeyboardEvent): void {
    if (this.view !== "query" || this.outstanding || this.current === null) return;
    if (event.key >= "1" && event.key <= "9") {
      const index = event.key.charCodeAt(0) - "1".charCodeAt(0);
      if (index < this.current.class_names.length) void this.submitAnswer(index);
    } else if (event.key === "s" || event.key === "S") {
      void this.submitSkip();
    }
  }

  private render(): void {
    const signature = JSON.stringify({
      view: this.view,
      query: this.current?.query_id ?? null,
      progress: this.progress,
      toast: this.toastMsg,
      banner: this.bannerMsg,
      outstanding: this.outstanding,
    });
    if (signature === this.lastSignature) return;
    this.lastSignature = signature;

    const doc = this.root.ownerDocument;
    this.root.textContent = "";
    const wrap = doc.createElement("div");
    wrap.className = "console";

    const header = doc.createElement("header");
    const status = doc.createElement("span");
    status.id = "status";
    status.textContent = this.progress
      ? `round ${this.progress.round} — ${this.progress.pending} pending, ` +
        `${this.progress.answered} answered`
      : "connecting";
    const clicksLabel = doc.createElement("span");
    clicksLabel.className = "clicks-label";
    clicksLabel.textContent = "clicks ";
    const clicks = doc.createElement("span");
    clicks.id = "clicks";
    clicks.textContent = String(this.progress?.clicks_spent ?? 0);
    clicksLabel.appendChild(clicks);
    header.append(status, clicksLabel);
    wrap.appendChild(header);

    if (this.bannerMsg !== null) {
      const banner = doc.createElement("div");
      banner.id = "banner";
      banner.textContent = `${this.bannerMsg} `;
      const retry = doc.createElement("button");
      retry.id = "retry";
      retry.textContent = "retry";
      retry.onclick = () => void this.tick();
      banner.appendChild(retry);
      wrap.appendChild(banner);
    }

    if (this.toastMsg !== null) {
      const toast = doc.createElement("div");
      toast.id = "toast";
      toast.textContent = this.toastMsg;
      wrap.appendChild(toast);
    }

    if (this.view === "loading") {
      const note = doc.createElement("p");
      note.id = "loading";
      note.textContent = "connecting to annotation service…";
      wrap.appendChild(note);
    } else if (this.view === "waiting") {
      const note = doc.createElement("p");
      note.id = "waiting";
      note.textContent = "waiting for the next round…";
      wrap.appendChild(note);
    } else if (this.view === "done") {
      const note = doc.createElement("p");
      note.id = "done";
      note.textContent = "annotation complete — all rounds finished";
      wrap.appendChild(note);
    } else if (this.current !== null) {
      wrap.appendChild(this.renderQuery(doc, this.current));
    }

    this.root.appendChild(wrap);
  }

  private renderQuery(doc: Document, query: QueryInfo): HTMLElement {
    const panel = doc.createElement("div");
    panel.className = "query";

    const viewer = doc.createElement("div");
    viewer.className = "viewer";
    const base = doc.createElement("img");
    base.id = "base-img";
    base.src = this.client.resolveUrl(query.image_url);
    base.alt = `image ${query.image_id}`;
    const overlay = doc.createElement("img");
    overlay.id = "overlay-img";
    overlay.src = this.client.resolveUrl(query.overlay_url);
    overlay.alt = "highlighted region";
    viewer.append(base, overlay);
    panel.appendChild(viewer);

    const prompt = doc.createElement("p");
    prompt.className = "prompt";
    prompt.textContent = "which class covers most of the outlined region?";
    panel.appendChild(prompt);

    const buttons = doc.createElement("div");
    buttons.className = "classes";
    const total = query.class_names.length;
    query.class_names.forEach((name, index) => {
      const btn = doc.createElement("button");
      btn.className = "class-btn";
      btn.dataset.classId = String(index);
      btn.style.backgroundColor = classColor(index, total);
      btn.textContent = index < 9 ? `${index + 1} · ${name}` : name;
      btn.disabled = this.outstanding;
      btn.onclick = () => void this.submitAnswer(index);
      buttons.appendChild(btn);
    });
    panel.appendChild(buttons);

    const skip = doc.createElement("button");
    skip.id = "skip";
    skip.textContent = "skip (s)";
    skip.disabled = this.outstanding;
    skip.onclick = () => void this.submitSkip();
    panel.appendChild(skip);

    return panel;
  }
}
