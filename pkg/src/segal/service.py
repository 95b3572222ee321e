"""HTTP annotation service: pending queries in, dominant labels out.

The loop driver blocks inside ``HumanOracleBroker.collect`` while HTTP
handlers resolve queries one lock-protected mutation at a time.  Every
geometry question (which pixels, what boundary) is answered here, server-side;
clients only ever see opaque image and overlay URLs.
"""

from __future__ import annotations

import io
import threading
from typing import Callable

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from PIL import Image
from pydantic import BaseModel
from scipy.ndimage import binary_erosion

from .loop import (
    STATUS_ANSWERED,
    STATUS_PENDING,
    STATUS_SKIPPED,
    AnnotationLoop,
    QueryRecord,
    RunConfig,
)

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

OVERLAY_RGB = (255, 0, 200)


class AnswerBody(BaseModel):
    class_id: int


class AnnotationSession:
    """State shared between the loop driver thread and the HTTP handlers."""

    def __init__(self, num_classes: int, class_names: tuple[str, ...]):
        self.num_classes = num_classes
        self.class_names = class_names
        self.lock = threading.Condition()  # reentrant underneath
        self.engine: AnnotationLoop | None = None
        self.round = 0
        self.round_records: list[QueryRecord] = []
        self.records: dict[int, QueryRecord] = {}
        self.pending: dict[int, QueryRecord] = {}
        self.refill: Callable[[], QueryRecord | None] | None = None
        self.on_update: Callable[[], None] | None = None
        self.done = False

    # -- driver side --------------------------------------------------------

    def run_collection(
        self,
        records: list[QueryRecord],
        refill: Callable[[], QueryRecord | None],
        on_update: Callable[[], None] | None,
    ) -> list[QueryRecord]:
        with self.lock:
            self.round = records[0].round if records else self.round
            self.round_records = records
            self.refill = refill
            self.on_update = on_update
            for rec in records:
                self.records[rec.query_id] = rec
                if rec.status == STATUS_PENDING:
                    self.pending[rec.query_id] = rec
            self.lock.notify_all()
            while self.pending:
                self.lock.wait()
            self.refill = None
            self.on_update = None
            return [r for r in records if r.status == STATUS_ANSWERED]

    def mark_done(self) -> None:
        with self.lock:
            self.done = True
            self.lock.notify_all()

    # -- HTTP side ------------------------------------------------------------

    def progress(self) -> dict:
        with self.lock:
            clicks = self.engine.state.clicks_spent if self.engine is not None else 0
            return {
                "round": self.round,
                "pending": len(self.pending),
                "answered": sum(
                    1 for r in self.round_records if r.status == STATUS_ANSWERED
                ),
                "clicks_spent": clicks,
                "done": self.done,
            }

    def next_query(self) -> QueryRecord | None:
        with self.lock:
            if not self.pending:
                return None
            return self.pending[min(self.pending)]

    def answer(self, query_id: int, class_id: int) -> dict:
        with self.lock:
            rec = self.records.get(query_id)
            if rec is None:
                raise HTTPException(status_code=404, detail=f"unknown query {query_id}")
            if not (0 <= class_id < self.num_classes):
                raise HTTPException(
                    status_code=422,
                    detail=f"class_id {class_id} out of range [0, {self.num_classes})",
                )
            if rec.status != STATUS_PENDING:
                raise HTTPException(
                    status_code=409, detail=f"query {query_id} already resolved"
                )
            rec.answer = class_id
            rec.status = STATUS_ANSWERED
            del self.pending[query_id]
            if self.on_update is not None:
                self.on_update()
            self.lock.notify_all()
        return self.progress()

    def skip(self, query_id: int) -> dict:
        with self.lock:
            rec = self.records.get(query_id)
            if rec is None:
                raise HTTPException(status_code=404, detail=f"unknown query {query_id}")
            if rec.status != STATUS_PENDING:
                raise HTTPException(
                    status_code=409, detail=f"query {query_id} already resolved"
                )
            rec.status = STATUS_SKIPPED
            del self.pending[query_id]
            if self.refill is not None:
                replacement = self.refill()
                if replacement is not None:
                    self.records[replacement.query_id] = replacement
                    self.pending[replacement.query_id] = replacement
            if self.on_update is not None:
                self.on_update()
            self.lock.notify_all()
        return self.progress()


class HumanOracleBroker:
    """Presents the loop's batches to the HTTP session and waits them out."""

    def __init__(self, session: AnnotationSession):
        self.session = session

    def collect(self, records, refill, on_update=None):
        return self.session.run_collection(records, refill, on_update)


def render_overlay(pixels: np.ndarray, width: int, height: int) -> bytes:
    """Transparent PNG with the region outlined and lightly filled."""
    mask = np.zeros(height * width, dtype=bool)
    mask[pixels] = True
    mask = mask.reshape(height, width)
    boundary = mask & ~binary_erosion(mask, structure=_CROSS, border_value=0)
    rgba = np.zeros((height, width, 4), dtype=np.uint8)
    rgba[mask] = (*OVERLAY_RGB, 64)
    rgba[boundary] = (*OVERLAY_RGB, 255)
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def create_app(engine: AnnotationLoop, session: AnnotationSession) -> FastAPI:
    app = FastAPI(title="annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    overlay_cache: dict[int, bytes] = {}

    @app.get("/api/progress")
    def progress():
        return session.progress()

    @app.get("/api/queries/next")
    def next_query():
        rec = session.next_query()
        if rec is None:
            return Response(status_code=204)
        return {
            "query_id": rec.query_id,
            "image_id": rec.image_id,
            "class_names": list(session.class_names),
            "image_url": f"/img/{rec.image_id}.png",
            "overlay_url": f"/overlay/{rec.query_id}.png",
        }

    @app.post("/api/queries/{query_id}/answer")
    def answer(query_id: int, body: AnswerBody):
        return session.answer(query_id, body.class_id)

    @app.post("/api/queries/{query_id}/skip")
    def skip(query_id: int):
        return session.skip(query_id)

    @app.get("/img/{image_id}.png")
    def image(image_id: int):
        try:
            entry = engine.dataset.by_id(image_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id}")
        return FileResponse(entry.image_path, media_type="image/png")

    @app.get("/overlay/{query_id}.png")
    def overlay(query_id: int):
        with session.lock:
            rec = session.records.get(query_id)
        if rec is None:
            raise HTTPException(status_code=404, detail=f"unknown query {query_id}")
        if query_id not in overlay_cache:
            img = engine.images[rec.image_id]
            overlay_cache[query_id] = render_overlay(
                rec.pixels, img.shape[1], img.shape[0]
            )
        return Response(content=overlay_cache[query_id], media_type="image/png")

    return app


def build_human_loop(cfg: RunConfig) -> tuple[AnnotationLoop, AnnotationSession, FastAPI]:
    session = AnnotationSession(cfg.num_classes, cfg.palette)
    engine = AnnotationLoop(cfg, broker=HumanOracleBroker(session))
    session.engine = engine
    return engine, session, create_app(engine, session)


def serve_loop(cfg: RunConfig) -> None:
    """Run the loop with a human oracle, serving the annotation API (blocking)."""
    import uvicorn

    engine, session, app = build_human_loop(cfg)

    def drive():
        try:
            engine.run()
        finally:
            session.mark_done()

    driver = threading.Thread(target=drive, name="loop-driver", daemon=True)
    driver.start()
    uvicorn.run(app, host=cfg.http_host, port=cfg.http_port, log_level="warning")
