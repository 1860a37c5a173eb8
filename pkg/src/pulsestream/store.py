"""Partitioned, append-only, deduplicating record store with a scan API.

On-disk layout:
    <root>/manifest.json
    <root>/index.json                  -- video_id -> segment relpath (rebuildable)
    <root>/data/<YYYY-MM-DD>/segment-<n>.jsonl

Records are JSON-lines in date-partitioned segment files. video_id is the
global dedup key; sentiment is an overlay field updated by rewriting the
record's segment. Single writer (lock file), unlimited readers; scans see a
snapshot of the segment list taken at scan start.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .errors import Conflict, InvalidArgument, NotFound, ScanError, StoreIOError
from .ingest import VideoMetadata, parse_rfc3339, rfc3339
from .textprep import Label

STORE_VERSION = 1


@dataclass(frozen=True)
class Sentiment:
    label: Label
    confidence: float
    scored_at: datetime
    model_version: str

    def to_dict(self) -> dict:
        return {
            "label": str(self.label),
            "confidence": self.confidence,
            "scored_at": rfc3339(self.scored_at),
            "model_version": self.model_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Sentiment":
        return cls(label=Label.from_string(d["label"]), confidence=float(d["confidence"]),
                   scored_at=parse_rfc3339(d["scored_at"]), model_version=d["model_version"])


@dataclass(frozen=True)
class StoredRecord:
    video_id: str
    channel_id: str
    title: str
    description: str
    uri: str
    figure_id: str
    keyword: str
    fetched_at: datetime
    sentiment: Sentiment | None = None

    @classmethod
    def from_metadata(cls, vm: VideoMetadata) -> "StoredRecord":
        return cls(video_id=vm.video_id, channel_id=vm.channel_id, title=vm.title,
                   description=vm.description, uri=vm.uri, figure_id=vm.figure_id,
                   keyword=vm.keyword, fetched_at=vm.fetched_at)

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id, "channel_id": self.channel_id,
            "title": self.title, "description": self.description, "uri": self.uri,
            "figure_id": self.figure_id, "keyword": self.keyword,
            "fetched_at": rfc3339(self.fetched_at),
            "sentiment": self.sentiment.to_dict() if self.sentiment else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StoredRecord":
        sent = d.get("sentiment")
        return cls(video_id=d["video_id"], channel_id=d["channel_id"], title=d["title"],
                   description=d["description"], uri=d["uri"], figure_id=d["figure_id"],
                   keyword=d["keyword"], fetched_at=parse_rfc3339(d["fetched_at"]),
                   sentiment=Sentiment.from_dict(sent) if sent else None)


@dataclass
class SegmentInfo:
    path: str  # relative to root
    date_partition: date
    record_count: int
    min_fetched_at: datetime
    max_fetched_at: datetime
    seq: int

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "date_partition": self.date_partition.isoformat(),
            "record_count": self.record_count,
            "min_fetched_at": rfc3339(self.min_fetched_at),
            "max_fetched_at": rfc3339(self.max_fetched_at),
            "seq": self.seq,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentInfo":
        return cls(path=d["path"], date_partition=date.fromisoformat(d["date_partition"]),
                   record_count=int(d["record_count"]),
                   min_fetched_at=parse_rfc3339(d["min_fetched_at"]),
                   max_fetched_at=parse_rfc3339(d["max_fetched_at"]), seq=int(d["seq"]))


@dataclass
class SegmentManifest:
    segments: list
    store_version: int = STORE_VERSION

    @property
    def record_count(self) -> int:
        return sum(s.record_count for s in self.segments)


@dataclass
class AppendResult:
    written: int
    duplicates: int


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


class RecordStore:
    def __init__(self, root, writable: bool = True):
        self.root = Path(root)
        self.writable = writable
        self._lock = threading.Lock()
        self._lock_fd: int | None = None
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "data").mkdir(exist_ok=True)
        if writable:
            self._acquire_lock()
        try:
            self._load()
        except Exception:
            self._release_lock()
            raise

    # -- lifecycle --

    def _acquire_lock(self) -> None:
        lock_path = self.root / ".lock"
        try:
            self._lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.write(self._lock_fd, str(os.getpid()).encode())
        except FileExistsError:
            raise StoreIOError(
                f"store is locked by another writer: {lock_path} "
                "(remove the file if the writer crashed)") from None

    def _release_lock(self) -> None:
        if self._lock_fd is not None:
            os.close(self._lock_fd)
            try:
                os.unlink(self.root / ".lock")
            except FileNotFoundError:
                pass
            self._lock_fd = None

    def close(self) -> None:
        self._release_lock()

    def __enter__(self) -> "RecordStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- loading --

    def _load(self) -> None:
        manifest_path = self.root / "manifest.json"
        if manifest_path.exists():
            doc = json.loads(manifest_path.read_text("utf-8"))
            self._segments = [SegmentInfo.from_dict(s) for s in doc["segments"]]
            self._next_seq = int(doc.get("next_seq", len(self._segments)))
        else:
            self._segments = []
            self._next_seq = 0
        index_path = self.root / "index.json"
        self._index: dict[str, str] = {}
        loaded = False
        if index_path.exists():
            try:
                self._index = json.loads(index_path.read_text("utf-8"))
                loaded = True
            except (json.JSONDecodeError, ValueError):
                loaded = False
        if not loaded or len(self._index) != sum(s.record_count for s in self._segments):
            self._rebuild_index()

    def _rebuild_index(self) -> None:
        self._index = {}
        for seg in sorted(self._segments, key=lambda s: s.seq):
            for rec in self._read_segment(seg):
                self._index[rec.video_id] = seg.path
        if self.writable:
            self._persist_index()

    def _read_segment(self, seg: SegmentInfo) -> list:
        path = self.root / seg.path
        records = []
        try:
            with open(path, "r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    records.append(StoredRecord.from_dict(json.loads(line)))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
            raise ScanError(f"corrupt segment {seg.path}: {e}", segment=str(path)) from e
        return records

    def _write_segment_file(self, path: Path, records: list) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        data = "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records)
        _atomic_write(path, data.encode("utf-8"))

    def _persist_index(self) -> None:
        _atomic_write(self.root / "index.json",
                      json.dumps(self._index).encode("utf-8"))

    def _persist_manifest(self) -> None:
        doc = {
            "store_version": STORE_VERSION,
            "next_seq": self._next_seq,
            "segments": [s.to_dict() for s in self._segments],
        }
        _atomic_write(self.root / "manifest.json", json.dumps(doc).encode("utf-8"))

    def _require_writable(self) -> None:
        if not self.writable:
            raise StoreIOError("store opened read-only")

    # -- operations --

    def append_batch(self, records: list) -> AppendResult:
        self._require_writable()
        with self._lock:
            fresh: list[StoredRecord] = []
            seen_batch: set[str] = set()
            duplicates = 0
            for vm in records:
                if vm.video_id in self._index or vm.video_id in seen_batch:
                    duplicates += 1
                    continue
                seen_batch.add(vm.video_id)
                fresh.append(StoredRecord.from_metadata(vm))
            if not fresh:
                return AppendResult(written=0, duplicates=duplicates)

            by_date: dict[date, list] = {}
            for rec in fresh:
                by_date.setdefault(rec.fetched_at.astimezone(timezone.utc).date(), []).append(rec)

            new_segments = []
            try:
                for d in sorted(by_date):
                    recs = by_date[d]
                    seq = self._next_seq
                    self._next_seq += 1
                    rel = f"data/{d.isoformat()}/segment-{seq}.jsonl"
                    self._write_segment_file(self.root / rel, recs)
                    new_segments.append(SegmentInfo(
                        path=rel, date_partition=d, record_count=len(recs),
                        min_fetched_at=min(r.fetched_at for r in recs),
                        max_fetched_at=max(r.fetched_at for r in recs), seq=seq))
            except OSError as e:
                # Segments not in the manifest are invisible: batch atomically absent.
                raise StoreIOError(f"failed to write segment: {e}") from e

            self._segments.extend(new_segments)
            for seg, d in zip(new_segments, sorted(by_date)):
                for rec in by_date[d]:
                    self._index[rec.video_id] = seg.path
            self._persist_index()
            self._persist_manifest()
            return AppendResult(written=len(fresh), duplicates=duplicates)

    def scan(self, figure_id: str | None = None, date_from: datetime | None = None,
             date_to: datetime | None = None, scored: bool | None = None) -> Iterator:
        if date_from is not None and date_to is not None and date_from > date_to:
            raise InvalidArgument("date_from must be <= date_to")
        with self._lock:
            snapshot = sorted(self._segments, key=lambda s: (s.date_partition, s.seq))
        for seg in snapshot:
            for rec in self._read_segment(seg):
                if figure_id is not None and rec.figure_id != figure_id:
                    continue
                if date_from is not None and rec.fetched_at < date_from:
                    continue
                if date_to is not None and rec.fetched_at > date_to:
                    continue
                if scored is not None and (rec.sentiment is not None) != scored:
                    continue
                yield rec

    def write_sentiment(self, video_id: str, label: Label, confidence: float,
                        model_version: str) -> None:
        self.write_sentiments([(video_id, label, confidence, model_version)])

    def write_sentiments(self, updates: list, now: datetime | None = None) -> None:
        """Batch form of write_sentiment; one segment rewrite per touched segment."""
        self._require_writable()
        if now is None:
            now = datetime.now(timezone.utc).replace(microsecond=0)
        with self._lock:
            by_segment: dict[str, dict[str, tuple]] = {}
            for video_id, label, confidence, model_version in updates:
                seg_path = self._index.get(video_id)
                if seg_path is None:
                    raise NotFound(f"unknown video_id: {video_id}")
                if not 0.0 <= confidence <= 1.0:
                    raise InvalidArgument(f"confidence out of range: {confidence}")
                by_segment.setdefault(seg_path, {})[video_id] = (label, confidence, model_version)
            seg_by_path = {s.path: s for s in self._segments}
            # Validate everything before touching any file.
            rewrites: list[tuple[SegmentInfo, list]] = []
            for seg_path, wanted in by_segment.items():
                seg = seg_by_path[seg_path]
                updated = []
                for rec in self._read_segment(seg):
                    upd = wanted.get(rec.video_id)
                    if upd is None:
                        updated.append(rec)
                        continue
                    label, confidence, model_version = upd
                    if rec.sentiment is not None and rec.sentiment.model_version == model_version:
                        raise Conflict(
                            f"{rec.video_id} already scored by model {model_version}")
                    updated.append(StoredRecord(
                        **{**rec.__dict__,
                           "sentiment": Sentiment(label, confidence, now, model_version)}))
                rewrites.append((seg, updated))
            for seg, updated in rewrites:
                self._write_segment_file(self.root / seg.path, updated)

    def manifest(self) -> SegmentManifest:
        with self._lock:
            return SegmentManifest(segments=[SegmentInfo(**s.__dict__) for s in self._segments])

    def record_count(self) -> int:
        with self._lock:
            return sum(s.record_count for s in self._segments)
