"""Single executable wiring the whole pipeline: crawl, train, evaluate, score, serve.

Exit codes: 0 success, 2 configuration/environment error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import signal
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import broker, ingest, serve
from .errors import InvalidArgument, PulseStreamError, StoreIOError
from .evaluation import evaluate
from .ingest import API_KEY_ENV, VIDEO_TOPIC, FigureConfig, QuotaBudget, VideoMetadata
from .model import (ModelConfig, TrainConfig, load_params, save_params, train)
from .store import RecordStore
from .textprep import (DEFAULT_MAX_LEN, DEFAULT_VOCAB_SIZE, Label, Vocabulary,
                       build_vocabulary, clean_text, default_clean_config)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

CONSUMER_GROUP = "store-writer"


@dataclass
class PipelineConfig:
    figures: list
    crawl_interval: float = 3600.0
    quota_daily_limit: int = ingest.DEFAULT_DAILY_QUOTA
    store_root: str = "data/store"
    broker_partitions: int = broker.DEFAULT_PARTITIONS
    model_params_path: str = "models/model.pstm"
    vocabulary_path: str = "models/vocab.json"
    serve_address: str = "127.0.0.1:8000"
    scoring_interval: float = 60.0
    max_pages: int = ingest.DEFAULT_MAX_PAGES

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text("utf-8"))
        figures = ingest.validate_figures(
            FigureConfig(figure_id=f["figure_id"], display_name=f["display_name"],
                         keywords=tuple(f["keywords"]))
            for f in doc["figures"])
        cfg = cls(figures=figures)
        cfg.crawl_interval = float(doc.get("crawl_interval_seconds", cfg.crawl_interval))
        cfg.quota_daily_limit = int(doc.get("quota_daily_limit", cfg.quota_daily_limit))
        cfg.store_root = doc.get("store_root", cfg.store_root)
        cfg.broker_partitions = int(doc.get("broker_partitions", cfg.broker_partitions))
        cfg.model_params_path = doc.get("model_params", cfg.model_params_path)
        cfg.vocabulary_path = doc.get("vocabulary", cfg.vocabulary_path)
        cfg.serve_address = doc.get("serve_address", cfg.serve_address)
        cfg.scoring_interval = float(doc.get("scoring_interval_seconds", cfg.scoring_interval))
        cfg.max_pages = int(doc.get("max_pages", cfg.max_pages))
        return cfg


def _load_config(path: str) -> PipelineConfig:
    try:
        return PipelineConfig.load(path)
    except FileNotFoundError:
        raise SystemExit2(f"config file not found: {path}")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, InvalidArgument) as e:
        raise SystemExit2(f"bad config file {path}: {e}")


class SystemExit2(Exception):
    """Config/environment error -> exit 2."""


class SystemExit3(Exception):
    """Data error -> exit 3."""


def _drain_to_store(bus: broker.MessageBus, store: RecordStore) -> dict:
    """Consume everything currently on the video topic into the store."""
    handle = bus.subscribe(VIDEO_TOPIC, CONSUMER_GROUP)
    written = duplicates = 0
    try:
        while True:
            batch = handle.poll(max_messages=500, timeout=0.05)
            if not batch:
                break
            records = [VideoMetadata.decode(m.payload) for m in batch]
            result = store.append_batch(records)
            written += result.written
            duplicates += result.duplicates
            offsets = {}
            for m in batch:
                offsets[m.partition] = max(offsets.get(m.partition, 0), m.offset + 1)
            handle.commit(offsets)
    finally:
        handle.close()
    return {"stored": written, "duplicates": duplicates}


def cmd_crawl(args) -> int:
    cfg = _load_config(args.config)
    if args.fixture:
        transport = ingest.FixtureTransport(args.fixture)
        api_key = None
    else:
        api_key = os.environ.get(API_KEY_ENV)
        if not api_key:
            raise SystemExit2(
                f"no API key: set {API_KEY_ENV} or pass --fixture <dir>")
        transport = ingest.LiveTransport()

    bus = broker.MessageBus()
    bus.create_topic(VIDEO_TOPIC, cfg.broker_partitions)
    quota = QuotaBudget(daily_limit=cfg.quota_daily_limit)

    with RecordStore(cfg.store_root) as store:
        if args.once:
            per_keyword = {}
            totals = ingest.CrawlStats()
            for fig in cfg.figures:
                for kw in fig.keywords:
                    stats = ingest.crawl_keyword(fig.figure_id, kw, transport, quota,
                                                 bus, max_pages=cfg.max_pages,
                                                 api_key=api_key)
                    per_keyword[f"{fig.figure_id}/{kw}"] = stats.__dict__.copy()
                    totals.merge(stats)
            drained = _drain_to_store(bus, store)
            out = {
                "pages": totals.pages, "videos": totals.videos,
                "requests": totals.requests, "errors": totals.errors,
                "quota_used": quota.used_today(),
                "quota_exhausted": totals.quota_exhausted,
                "per_keyword": per_keyword,
            }
            out.update(drained)
            print(json.dumps(out, indent=2))
            return EXIT_OK

        stop = threading.Event()
        signal.signal(signal.SIGINT, lambda *_: stop.set())
        signal.signal(signal.SIGTERM, lambda *_: stop.set())

        def drain_loop():
            handle = bus.subscribe(VIDEO_TOPIC, CONSUMER_GROUP)
            while not stop.is_set():
                batch = handle.poll(max_messages=500, timeout=0.5)
                if not batch:
                    continue
                store.append_batch([VideoMetadata.decode(m.payload) for m in batch])
                offsets = {}
                for m in batch:
                    offsets[m.partition] = max(offsets.get(m.partition, 0), m.offset + 1)
                handle.commit(offsets)
            handle.close()

        drainer = threading.Thread(target=drain_loop, daemon=True)
        drainer.start()
        stats = ingest.run_schedule(cfg.figures, cfg.crawl_interval, transport, quota,
                                    bus, stop, max_pages=cfg.max_pages, api_key=api_key)
        drainer.join(timeout=5)
        print(json.dumps({"ticks": stats.ticks, "skipped_ticks": stats.skipped_ticks,
                          "crawls": stats.crawls, **stats.crawl.__dict__}, indent=2))
        return EXIT_OK


def _read_dataset(path: str) -> list:
    try:
        f = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise SystemExit2(f"dataset file not found: {path}")
    with f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SystemExit3(f"{path}: empty dataset")
        if [h.strip().lower() for h in header] != ["text", "label"]:
            raise SystemExit3(f"{path}:1: expected header 'text,label'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise SystemExit3(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            text, label_raw = row
            label_raw = label_raw.strip().lower()
            if label_raw not in ("negative", "positive"):
                raise SystemExit3(f"{path}:{lineno}: unknown label {label_raw!r}")
            rows.append((text, Label.from_string(label_raw)))
    return rows


def cmd_train(args) -> int:
    dataset = _read_dataset(args.dataset)
    clean_cfg = default_clean_config()
    cleaned = [clean_text(t, clean_cfg) for t, _ in dataset]
    vocab = build_vocabulary(cleaned, max_size=args.vocab_size, max_len=args.max_len)
    model_cfg = ModelConfig(vocab_len=len(vocab), embed_dim=args.embed_dim,
                            lstm_hidden=args.lstm_hidden, dense_hidden=args.dense_hidden,
                            max_len=args.max_len, seed=args.seed)
    train_cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                            learning_rate=args.learning_rate, shuffle_seed=args.seed)
    try:
        params, history = train(dataset, model_cfg, train_cfg, vocab,
                                clean_config=clean_cfg, version=args.model_version)
    except InvalidArgument as e:
        raise SystemExit3(str(e))

    Path(args.out_params).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out_vocab).parent.mkdir(parents=True, exist_ok=True)
    save_params(params, args.out_params)
    vocab.save(args.out_vocab)

    # Report on the same validation split the trainer used.
    import numpy as np
    rng = np.random.default_rng(train_cfg.shuffle_seed)
    perm = rng.permutation(len(dataset))
    n_train = int(round(train_cfg.train_fraction * len(dataset)))
    n_train = min(max(n_train, 1), len(dataset) - 1)
    val_set = [dataset[i] for i in perm[n_train:]]
    report = evaluate(params, vocab, val_set)
    print(json.dumps({"history": history.to_dict(), "eval": report.to_dict()}, indent=2))
    return EXIT_OK


def _load_artifacts(params_path: str, vocab_path: str):
    for p in (params_path, vocab_path):
        if not Path(p).exists():
            raise SystemExit2(f"missing artifact: {p}")
    return load_params(params_path), Vocabulary.load(vocab_path)


def cmd_evaluate(args) -> int:
    params, vocab = _load_artifacts(args.params, args.vocab)
    dataset = _read_dataset(args.dataset)
    report = evaluate(params, vocab, dataset)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _load_config(args.config)
    params, vocab = _load_artifacts(cfg.model_params_path, cfg.vocabulary_path)
    with RecordStore(cfg.store_root) as store:
        stats = serve.score_pending(store, params, vocab)
    print(json.dumps({"scored": stats.scored}))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    cfg = _load_config(args.config)
    model_version = None
    worker = None
    store = RecordStore(cfg.store_root)  # writer: creates layout, held by the worker
    try:
        try:
            params, vocab = _load_artifacts(cfg.model_params_path, cfg.vocabulary_path)
            model_version = params.version
            worker = serve.ScoringWorker(store, params, vocab,
                                         interval=cfg.scoring_interval)
            worker.start()
        except SystemExit2:
            log.warning("model artifacts missing; serving in degraded mode")

        crawler = None
        if args.with_crawler:
            bus = broker.MessageBus()
            bus.create_topic(VIDEO_TOPIC, cfg.broker_partitions)
            quota = QuotaBudget(daily_limit=cfg.quota_daily_limit)
            api_key = os.environ.get(API_KEY_ENV)
            transport = ingest.FixtureTransport(args.fixture) if args.fixture \
                else ingest.LiveTransport()
            if not args.fixture and not api_key:
                raise SystemExit2(
                    f"--with-crawler needs {API_KEY_ENV} or --fixture <dir>")
            stop = threading.Event()

            def crawl_loop():
                ingest.run_schedule(cfg.figures, cfg.crawl_interval, transport, quota,
                                    bus, stop, max_pages=cfg.max_pages, api_key=api_key)

            def drain_loop():
                handle = bus.subscribe(VIDEO_TOPIC, CONSUMER_GROUP)
                while not stop.is_set():
                    batch = handle.poll(max_messages=500, timeout=0.5)
                    if not batch:
                        continue
                    store.append_batch([VideoMetadata.decode(m.payload) for m in batch])
                    offsets = {}
                    for m in batch:
                        offsets[m.partition] = max(offsets.get(m.partition, 0), m.offset + 1)
                    handle.commit(offsets)

            crawler = stop
            threading.Thread(target=crawl_loop, daemon=True).start()
            threading.Thread(target=drain_loop, daemon=True).start()

        static_dir = args.static or _default_static_dir()
        app = serve.create_app(cfg.store_root, cfg.figures,
                               model_version=model_version, static_dir=static_dir)
        host, _, port = cfg.serve_address.partition(":")
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000),
                    log_level="info")
    finally:
        if worker is not None:
            worker.stop()
        store.close()
    return EXIT_OK


def _default_static_dir():
    # The built dashboard bundle, when present (repo layout: frontend/dist).
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.is_dir() else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsestream",
        description="Political-figure sentiment pipeline over video metadata.",
        epilog=f"Live crawling reads the search API key from ${API_KEY_ENV}.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crawl", help="crawl metadata into the store")
    p.add_argument("--config", required=True)
    p.add_argument("--fixture", help="serve responses from a fixture directory")
    p.add_argument("--once", action="store_true", help="one tick, then exit")
    p.set_defaults(fn=cmd_crawl)

    p = sub.add_parser("train", help="train the sentiment model from a CSV dataset")
    p.add_argument("--dataset", required=True, help="CSV with header text,label")
    p.add_argument("--out-params", required=True)
    p.add_argument("--out-vocab", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--lstm-hidden", type=int, default=64)
    p.add_argument("--dense-hidden", type=int, default=32)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    p.add_argument("--vocab-size", type=int, default=DEFAULT_VOCAB_SIZE)
    p.add_argument("--model-version", default="m1")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained model on a CSV dataset")
    p.add_argument("--params", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("score", help="score unscored store records once")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("serve", help="run the aggregation API and scoring worker")
    p.add_argument("--config", required=True)
    p.add_argument("--with-crawler", action="store_true")
    p.add_argument("--fixture", help="fixture dir for --with-crawler")
    p.add_argument("--static", help="dashboard static files directory")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit2 as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit3 as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except StoreIOError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PulseStreamError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
