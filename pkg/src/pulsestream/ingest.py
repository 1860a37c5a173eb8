"""Scheduled crawling of video metadata per political figure, under a daily quota.

Each (figure, keyword) pair is searched page by page via an injectable HTTP
transport; every parsed video is published onto the bus keyed by its video id.
Deduplication is deliberately not done here: it is the store's job.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .errors import InvalidArgument, ParseError, SchemaError, TransportError

log = logging.getLogger(__name__)

API_KEY_ENV = "YOUTUBE_API_KEY"
VIDEO_TOPIC = "video-metadata"
WATCH_URI_PREFIX = "https://www.youtube.com/watch?v="
DEFAULT_MAX_PAGES = 20
DEFAULT_PAGE_SIZE = 50
DEFAULT_DAILY_QUOTA = 2000

RETRY_ATTEMPTS = 3
RETRY_BACKOFF = (0.5, 1.0, 2.0)


def utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


@dataclass(frozen=True)
class FigureConfig:
    figure_id: str
    display_name: str
    keywords: tuple[str, ...]

    def __post_init__(self):
        if not self.figure_id.strip():
            raise InvalidArgument("figure_id must be non-empty")
        if not self.keywords:
            raise InvalidArgument(f"figure {self.figure_id}: keywords must be non-empty")
        for kw in self.keywords:
            if not kw.strip():
                raise InvalidArgument(f"figure {self.figure_id}: blank keyword")


def validate_figures(figures: Iterable[FigureConfig]) -> list[FigureConfig]:
    figures = list(figures)
    seen = set()
    for f in figures:
        if f.figure_id in seen:
            raise InvalidArgument(f"duplicate figure_id: {f.figure_id}")
        seen.add(f.figure_id)
    return figures


@dataclass(frozen=True)
class VideoMetadata:
    video_id: str
    channel_id: str
    title: str
    description: str
    uri: str
    figure_id: str
    keyword: str
    fetched_at: datetime  # UTC, seconds precision

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["fetched_at"] = rfc3339(self.fetched_at)
        return d

    def encode(self) -> bytes:
        return json.dumps(self.to_dict(), ensure_ascii=False).encode("utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "VideoMetadata":
        return cls(
            video_id=d["video_id"], channel_id=d["channel_id"], title=d["title"],
            description=d["description"], uri=d["uri"], figure_id=d["figure_id"],
            keyword=d["keyword"], fetched_at=parse_rfc3339(d["fetched_at"]),
        )

    @classmethod
    def decode(cls, payload: bytes) -> "VideoMetadata":
        return cls.from_dict(json.loads(payload.decode("utf-8")))


def rfc3339(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_rfc3339(s: str) -> datetime:
    dt = datetime.fromisoformat(s.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


@dataclass
class SearchPage:
    items: list
    next_page_token: str | None
    skipped: int = 0


class QuotaBudget:
    """Daily request budget; resets at UTC midnight. Thread-safe."""

    def __init__(self, daily_limit: int = DEFAULT_DAILY_QUOTA,
                 used_today: int = 0, day: date | None = None):
        if daily_limit < 0 or used_today < 0 or used_today > daily_limit:
            raise InvalidArgument("invalid quota state")
        self.daily_limit = daily_limit
        self._used = used_today
        self._day = day or utcnow().date()
        self._lock = threading.Lock()

    def _roll(self, now: datetime) -> None:
        today = now.astimezone(timezone.utc).date()
        if today != self._day:
            self._day = today
            self._used = 0

    def try_consume(self, now: datetime | None = None) -> bool:
        with self._lock:
            self._roll(now or utcnow())
            if self._used >= self.daily_limit:
                return False
            self._used += 1
            return True

    def used_today(self, now: datetime | None = None) -> int:
        with self._lock:
            self._roll(now or utcnow())
            return self._used

    def remaining(self, now: datetime | None = None) -> int:
        with self._lock:
            self._roll(now or utcnow())
            return self.daily_limit - self._used


@dataclass
class RequestDescriptor:
    method: str
    path: str
    params: dict


@dataclass
class TransportResponse:
    status: int
    body: bytes


class Transport(Protocol):
    def execute(self, request: RequestDescriptor) -> TransportResponse: ...


def build_search_request(keyword: str, page_token: str | None = None,
                         page_size: int = DEFAULT_PAGE_SIZE,
                         api_key: str | None = None) -> RequestDescriptor:
    if not keyword.strip():
        raise InvalidArgument("keyword must be non-blank")
    if not 1 <= page_size <= 50:
        raise InvalidArgument(f"page_size must be in [1, 50], got {page_size}")
    params = {"part": "snippet", "q": keyword, "maxResults": page_size, "type": "video"}
    if page_token is not None:
        params["pageToken"] = page_token
    key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
    if key:
        params["key"] = key
    return RequestDescriptor(method="GET", path="/search", params=params)


def parse_search_response(body: bytes, figure_id: str, keyword: str,
                          now: datetime) -> SearchPage:
    try:
        doc = json.loads(body.decode("utf-8", errors="replace"))
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed search response: {e.msg}", offset=e.pos) from e
    if not isinstance(doc, dict) or "items" not in doc:
        raise SchemaError("search response missing top-level 'items'")
    items = []
    skipped = 0
    for raw in doc["items"]:
        vid = (raw.get("id") or {}).get("videoId")
        if not vid:
            skipped += 1
            continue
        snippet = raw.get("snippet") or {}
        items.append(VideoMetadata(
            video_id=vid,
            channel_id=snippet.get("channelId", ""),
            title=snippet.get("title", ""),
            description=snippet.get("description", ""),
            uri=WATCH_URI_PREFIX + vid,
            figure_id=figure_id,
            keyword=keyword,
            fetched_at=now,
        ))
    token = doc.get("nextPageToken")
    if token is not None and not token:
        token = None
    return SearchPage(items=items, next_page_token=token, skipped=skipped)


class FixtureTransport:
    """Serves canned search responses from <root>/<keyword>/<token or 'start'>.json."""

    def __init__(self, root):
        self.root = Path(root)
        self.calls = 0

    def execute(self, request: RequestDescriptor) -> TransportResponse:
        self.calls += 1
        keyword = request.params["q"]
        token = request.params.get("pageToken", "start")
        path = self.root / keyword / f"{token}.json"
        if not path.exists():
            return TransportResponse(status=404, body=b'{"error": "no fixture"}')
        return TransportResponse(status=200, body=path.read_bytes())


class LiveTransport:
    """Real HTTP transport against the search API."""

    def __init__(self, base_url: str = "https://www.googleapis.com/youtube/v3",
                 timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def execute(self, request: RequestDescriptor) -> TransportResponse:
        import requests

        try:
            resp = requests.request(request.method, self.base_url + request.path,
                                    params=request.params, timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportError(str(e)) from e
        return TransportResponse(status=resp.status_code, body=resp.content)


def _execute_with_retry(transport: Transport, request: RequestDescriptor,
                        sleep: Callable[[float], None]) -> TransportResponse:
    last_exc: TransportError | None = None
    for attempt in range(RETRY_ATTEMPTS):
        try:
            resp = transport.execute(request)
        except TransportError as e:
            last_exc = e
            resp = None
        if resp is not None and resp.status < 500:
            return resp
        if attempt < RETRY_ATTEMPTS - 1:
            sleep(RETRY_BACKOFF[attempt])
    if last_exc is not None:
        raise last_exc
    return resp


@dataclass
class CrawlStats:
    pages: int = 0
    videos: int = 0
    skipped_items: int = 0
    errors: int = 0
    requests: int = 0
    quota_exhausted: bool = False

    def merge(self, other: "CrawlStats") -> None:
        self.pages += other.pages
        self.videos += other.videos
        self.skipped_items += other.skipped_items
        self.errors += other.errors
        self.requests += other.requests
        self.quota_exhausted = self.quota_exhausted or other.quota_exhausted


def crawl_keyword(figure_id: str, keyword: str, transport: Transport,
                  quota: QuotaBudget, sink, max_pages: int = DEFAULT_MAX_PAGES,
                  page_size: int = DEFAULT_PAGE_SIZE,
                  now_fn: Callable[[], datetime] = utcnow,
                  sleep: Callable[[float], None] = time.sleep,
                  api_key: str | None = None) -> CrawlStats:
    if max_pages < 1:
        raise InvalidArgument(f"max_pages must be >= 1, got {max_pages}")
    stats = CrawlStats()
    token: str | None = None
    for _ in range(max_pages):
        if not quota.try_consume(now_fn()):
            stats.quota_exhausted = True
            break
        stats.requests += 1
        request = build_search_request(keyword, token, page_size, api_key=api_key)
        try:
            resp = _execute_with_retry(transport, request, sleep)
        except TransportError as e:
            log.warning("crawl %s/%s: transport failed after retries: %s", figure_id, keyword, e)
            stats.errors += 1
            break
        if resp.status != 200:
            log.warning("crawl %s/%s: HTTP %d", figure_id, keyword, resp.status)
            stats.errors += 1
            break
        try:
            page = parse_search_response(resp.body, figure_id, keyword, now_fn())
        except (ParseError, SchemaError) as e:
            log.warning("crawl %s/%s: bad response: %s", figure_id, keyword, e)
            stats.errors += 1
            break
        for vm in page.items:
            sink.publish(VIDEO_TOPIC, key=vm.video_id.encode("utf-8"), payload=vm.encode())
        stats.pages += 1
        stats.videos += len(page.items)
        stats.skipped_items += page.skipped
        token = page.next_page_token
        if token is None:
            break
    return stats


@dataclass
class ScheduleStats:
    ticks: int = 0
    skipped_ticks: int = 0
    crawls: int = 0
    crawl: CrawlStats = field(default_factory=CrawlStats)


def run_schedule(figures: list[FigureConfig], interval: float, transport: Transport,
                 quota: QuotaBudget, sink, stop_signal: threading.Event,
                 max_pages: int = DEFAULT_MAX_PAGES,
                 clock: Callable[[], float] = time.monotonic,
                 wait: Callable[[float], bool] | None = None,
                 now_fn: Callable[[], datetime] = utcnow,
                 sleep: Callable[[float], None] = time.sleep,
                 api_key: str | None = None) -> ScheduleStats:
    """Crawl every (figure, keyword) pair each tick. Overrunning ticks are skipped,
    never overlapped."""
    if interval <= 0:
        raise InvalidArgument(f"interval must be > 0, got {interval}")
    if wait is None:
        wait = stop_signal.wait
    figures = validate_figures(figures)
    stats = ScheduleStats()
    next_tick = clock()
    while not stop_signal.is_set():
        for fig in figures:
            for kw in fig.keywords:
                if stop_signal.is_set():
                    break
                try:
                    one = crawl_keyword(fig.figure_id, kw, transport, quota, sink,
                                        max_pages=max_pages, now_fn=now_fn,
                                        sleep=sleep, api_key=api_key)
                    stats.crawl.merge(one)
                except Exception:
                    log.exception("crawl %s/%s failed", fig.figure_id, kw)
                stats.crawls += 1
        stats.ticks += 1
        next_tick += interval
        now = clock()
        while next_tick <= now:
            next_tick += interval
            stats.skipped_ticks += 1
        if wait(next_tick - now):
            break
    return stats
