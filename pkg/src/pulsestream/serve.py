"""Inference worker and HTTP aggregation API backing the dashboard.

The API opens a fresh read-only store view per request, so counts always
match an on-disk recount at that snapshot. The scoring worker is the single
store writer while the server runs.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .errors import NotFound
from .ingest import FigureConfig, parse_rfc3339, rfc3339
from .model import ModelParams, predict
from .store import RecordStore
from .textprep import Label, Vocabulary

log = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass
class ScoreStats:
    scored: int


def score_pending(store: RecordStore, params: ModelParams, vocab: Vocabulary,
                  batch_size: int = 64) -> ScoreStats:
    """Score every unscored record's description. Idempotent per model version."""
    pending = list(store.scan(scored=False))
    scored = 0
    for i in range(0, len(pending), batch_size):
        chunk = pending[i:i + batch_size]
        updates = []
        for rec in chunk:
            pred = predict(params, vocab, rec.description)
            updates.append((rec.video_id, pred.label, pred.confidence, params.version))
        store.write_sentiments(updates)
        scored += len(updates)
    return ScoreStats(scored=scored)


@dataclass
class SentimentAggregate:
    figure_id: str
    positive_count: int
    negative_count: int
    pending_count: int
    window_from: datetime
    window_to: datetime
    as_of: datetime

    def to_dict(self) -> dict:
        return {
            "figure_id": self.figure_id,
            "positive": self.positive_count,
            "negative": self.negative_count,
            "pending": self.pending_count,
            "from": rfc3339(self.window_from),
            "to": rfc3339(self.window_to),
            "as_of": rfc3339(self.as_of),
        }


def aggregate(store: RecordStore, figures: list, figure_id: str,
              window_from: datetime | None = None,
              window_to: datetime | None = None) -> SentimentAggregate:
    if figure_id not in {f.figure_id for f in figures}:
        raise NotFound(f"unknown figure: {figure_id}")
    now = datetime.now(timezone.utc).replace(microsecond=0)
    window_from = window_from or EPOCH
    window_to = window_to or now
    pos = neg = pending = 0
    for rec in store.scan(figure_id=figure_id, date_from=window_from, date_to=window_to):
        if rec.sentiment is None:
            pending += 1
        elif rec.sentiment.label is Label.POSITIVE:
            pos += 1
        else:
            neg += 1
    return SentimentAggregate(figure_id=figure_id, positive_count=pos,
                              negative_count=neg, pending_count=pending,
                              window_from=window_from, window_to=window_to, as_of=now)


def _parse_query_date(raw: str) -> datetime:
    # Accept RFC 3339 timestamps or bare YYYY-MM-DD dates.
    return parse_rfc3339(raw)


def create_app(store_root, figures: list, model_version: str | None = None,
               static_dir=None) -> FastAPI:
    figures = list(figures)
    app = FastAPI(title="pulsestream")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["GET"],
                       allow_headers=["*"])

    def open_store() -> RecordStore:
        return RecordStore(store_root, writable=False)

    @app.get("/api/figures")
    def api_figures():
        return [{"figure_id": f.figure_id, "display_name": f.display_name}
                for f in figures]

    @app.get("/api/sentiment")
    def api_sentiment(figure: str,
                      from_raw: str | None = Query(default=None, alias="from"),
                      to_raw: str | None = Query(default=None, alias="to")):
        try:
            window_from = _parse_query_date(from_raw) if from_raw else None
            window_to = _parse_query_date(to_raw) if to_raw else None
        except ValueError:
            return JSONResponse({"error": "malformed date"}, status_code=400)
        if window_from and window_to and window_from > window_to:
            return JSONResponse({"error": "'from' must be <= 'to'"}, status_code=400)
        try:
            agg = aggregate(open_store(), figures, figure, window_from, window_to)
        except NotFound as e:
            return JSONResponse({"error": str(e)}, status_code=404)
        return agg.to_dict()

    @app.get("/api/health")
    def api_health():
        records = open_store().record_count()
        status = "ok" if model_version else "degraded"
        return {"status": status, "records": records, "model_version": model_version}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="dashboard")
    return app


class ScoringWorker:
    """Periodically scores unscored records inside the serve process."""

    def __init__(self, store: RecordStore, params: ModelParams, vocab: Vocabulary,
                 interval: float = 60.0):
        self.store = store
        self.params = params
        self.vocab = vocab
        self.interval = interval
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                stats = score_pending(self.store, self.params, self.vocab)
                if stats.scored:
                    log.info("scored %d records", stats.scored)
            except Exception:
                log.exception("scoring pass failed")
            self._stop.wait(self.interval)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=10)
