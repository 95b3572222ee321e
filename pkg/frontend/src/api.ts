/** Typed client for the annotation service's HTTP JSON API. */

export interface Progress {
  round: number;
  pending: number;
  answered: number;
  clicks_spent: number;
  done: boolean;
}

export interface QueryInfo {
  query_id: number;
  image_id: number;
  class_names: string[];
  image_url: string;
  overlay_url: string;
}

/** Outcome of an answer or skip; conflicts and validation are not exceptions. */
export type SubmitResult =
  | { kind: "ok"; progress: Progress }
  | { kind: "conflict"; detail: string }
  | { kind: "invalid"; detail: string };

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** The slice of the API the console consumes; kept small so tests can fake it. */
export interface Api {
  progress(): Promise<Progress>;
  nextQuery(): Promise<QueryInfo | null>;
  answer(queryId: number, classId: number): Promise<SubmitResult>;
  skip(queryId: number): Promise<SubmitResult>;
  resolveUrl(path: string): string;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function detailOf(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
  } catch {
    /* non-JSON error body */
  }
  return `request failed with status ${response.status}`;
}

export class ApiClient implements Api {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  resolveUrl(path: string): string {
    return new URL(path, this.baseUrl).toString();
  }

  async progress(): Promise<Progress> {
    const response = await this.fetchFn(this.resolveUrl("/api/progress"));
    if (!response.ok) throw new ApiError(response.status, await detailOf(response));
    return (await response.json()) as Progress;
  }

  async nextQuery(): Promise<QueryInfo | null> {
    const response = await this.fetchFn(this.resolveUrl("/api/queries/next"));
    if (response.status === 204) return null;
    if (!response.ok) throw new ApiError(response.status, await detailOf(response));
    return (await response.json()) as QueryInfo;
  }

  async answer(queryId: number, classId: number): Promise<SubmitResult> {
    return this.submit(`/api/queries/${queryId}/answer`, { class_id: classId });
  }

  async skip(queryId: number): Promise<SubmitResult> {
    return this.submit(`/api/queries/${queryId}/skip`);
  }

  private async submit(path: string, body?: object): Promise<SubmitResult> {
    const response = await this.fetchFn(this.resolveUrl(path), {
      method: "POST",
      headers: body ? { "Content-Type": "application/json" } : undefined,
      body: body ? JSON.stringify(body) : undefined,
    });
    if (response.ok) {
      return { kind: "ok", progress: (await response.json()) as Progress };
    }
    if (response.status === 409) {
      return { kind: "conflict", detail: await detailOf(response) };
    }
    if (response.status === 422) {
      return { kind: "invalid", detail: await detailOf(response) };
    }
    throw new ApiError(response.status, await detailOf(response));
  }
}
