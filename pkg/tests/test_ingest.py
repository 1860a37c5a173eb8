import json
import threading
from datetime import datetime, timedelta, timezone

import pytest

from pulsestream.broker import MessageBus
from pulsestream.errors import InvalidArgument, ParseError, SchemaError, TransportError
from pulsestream.ingest import (FigureConfig, FixtureTransport, QuotaBudget,
                                RequestDescriptor, TransportResponse,
                                build_search_request, crawl_keyword,
                                parse_search_response, run_schedule,
                                validate_figures)

NOW = datetime(2024, 3, 1, 9, 0, 0, tzinfo=timezone.utc)


class TestBuildSearchRequest:
    def test_first_page(self):
        req = build_search_request("anies", None, 50, api_key="")
        assert req.method == "GET"
        assert req.params["q"] == "anies"
        assert req.params["maxResults"] == 50
        assert req.params["type"] == "video"
        assert "pageToken" not in req.params

    def test_token_passthrough(self):
        req = build_search_request("ganjar", "TOK123", 50, api_key="")
        assert req.params["pageToken"] == "TOK123"

    def test_zero_page_size(self):
        with pytest.raises(InvalidArgument):
            build_search_request("x", None, 0)

    def test_blank_keyword(self):
        with pytest.raises(InvalidArgument):
            build_search_request("   ", None, 50)

    def test_api_key_from_env(self, monkeypatch):
        monkeypatch.setenv("YOUTUBE_API_KEY", "sekrit")
        assert build_search_request("anies").params["key"] == "sekrit"

    def test_deterministic(self):
        a = build_search_request("anies", "T", 10, api_key="k")
        b = build_search_request("anies", "T", 10, api_key="k")
        assert a == b


class TestParseSearchResponse:
    def body(self, items, token=None):
        doc = {"items": items}
        if token is not None:
            doc["nextPageToken"] = token
        return json.dumps(doc).encode()

    def item(self, vid, desc="d"):
        return {"id": {"videoId": vid},
                "snippet": {"channelId": "c", "title": "t", "description": desc}}

    def test_two_items_with_token(self):
        page = parse_search_response(
            self.body([self.item("v1", "desc one"), self.item("v2", "desc two")], "T2"),
            "anies", "anies", NOW)
        assert len(page.items) == 2
        assert page.next_page_token == "T2"
        first = page.items[0]
        assert first.video_id == "v1"
        assert first.channel_id == "c"
        assert first.title == "t"
        assert first.description == "desc one"
        assert first.uri == "https://www.youtube.com/watch?v=v1"
        assert first.figure_id == "anies"
        assert first.keyword == "anies"
        assert first.fetched_at == NOW

    def test_empty_page(self):
        page = parse_search_response(self.body([]), "anies", "anies", NOW)
        assert page.items == [] and page.next_page_token is None

    def test_not_json(self):
        with pytest.raises(ParseError) as exc:
            parse_search_response(b"not json", "a", "a", NOW)
        assert exc.value.offset >= 0

    def test_missing_items(self):
        with pytest.raises(SchemaError):
            parse_search_response(b'{"nextPageToken": "T"}', "a", "a", NOW)

    def test_items_without_video_id_skipped(self):
        items = [self.item("v1"), {"id": {}, "snippet": {}}]
        page = parse_search_response(self.body(items), "a", "a", NOW)
        assert len(page.items) == 1 and page.skipped == 1

    def test_uniform_stamping(self):
        items = [self.item(f"v{i}") for i in range(10)]
        page = parse_search_response(self.body(items), "puan", "puan maharani", NOW)
        assert {(m.figure_id, m.keyword, m.fetched_at) for m in page.items} \
            == {("puan", "puan maharani", NOW)}


class RecordingSink:
    def __init__(self):
        self.published = []

    def publish(self, topic, key, payload):
        self.published.append((topic, key, payload))
        return (0, len(self.published) - 1)


class TestCrawlKeyword:
    def test_three_page_fixture(self, fixture_dir):
        transport = FixtureTransport(fixture_dir)
        sink = RecordingSink()
        quota = QuotaBudget(daily_limit=2000)
        stats = crawl_keyword("anies", "anies", transport, quota, sink)
        assert stats.pages == 3
        assert stats.videos == 120
        assert len(sink.published) == 120
        assert quota.used_today() == 3
        # token chain: absent, then the tokens received shifted by one
        for topic, key, payload in sink.published:
            assert topic == "video-metadata"
            assert key == json.loads(payload)["video_id"].encode()

    def test_quota_floor(self, fixture_dir):
        quota = QuotaBudget(daily_limit=0)
        stats = crawl_keyword("anies", "anies", FixtureTransport(fixture_dir), quota,
                              RecordingSink())
        assert (stats.pages, stats.videos, stats.quota_exhausted) == (0, 0, True)

    def test_single_page_stops(self, tmp_path):
        d = tmp_path / "kw"
        d.mkdir()
        (d / "start.json").write_text(json.dumps({
            "items": [{"id": {"videoId": "x"}, "snippet": {}}]}))
        stats = crawl_keyword("f", "kw", FixtureTransport(tmp_path),
                              QuotaBudget(2000), RecordingSink())
        assert stats.pages == 1 and stats.quota_exhausted is False

    def test_max_pages_bounds_quota(self, tmp_path):
        # self-referential page: endless token chain
        d = tmp_path / "kw"
        d.mkdir()
        page = {"items": [], "nextPageToken": "LOOP"}
        (d / "start.json").write_text(json.dumps(page))
        (d / "LOOP.json").write_text(json.dumps(page))
        quota = QuotaBudget(2000)
        stats = crawl_keyword("f", "kw", FixtureTransport(tmp_path), quota,
                              RecordingSink(), max_pages=5)
        assert stats.pages == 5 and quota.used_today() == 5

    def test_transport_retry_then_success(self):
        calls = []

        class Flaky:
            def execute(self, request):
                calls.append(request)
                if len(calls) < 3:
                    raise TransportError("boom")
                return TransportResponse(200, json.dumps({"items": []}).encode())

        sleeps = []
        stats = crawl_keyword("f", "kw", Flaky(), QuotaBudget(2000), RecordingSink(),
                              sleep=sleeps.append)
        assert stats.pages == 1 and stats.errors == 0
        assert sleeps == [0.5, 1.0]  # exponential backoff

    def test_4xx_terminal_no_retry(self):
        calls = []

        class Denied:
            def execute(self, request):
                calls.append(request)
                return TransportResponse(403, b"{}")

        stats = crawl_keyword("f", "kw", Denied(), QuotaBudget(2000), RecordingSink(),
                              sleep=lambda s: None)
        assert len(calls) == 1 and stats.errors == 1

    def test_5xx_retried_then_recorded(self):
        calls = []

        class Down:
            def execute(self, request):
                calls.append(request)
                return TransportResponse(503, b"{}")

        stats = crawl_keyword("f", "kw", Down(), QuotaBudget(2000), RecordingSink(),
                              sleep=lambda s: None)
        assert len(calls) == 3 and stats.errors == 1


class TestQuotaBudget:
    def test_daily_reset_at_utc_midnight(self):
        quota = QuotaBudget(daily_limit=2)
        day1 = datetime(2024, 3, 1, 23, 59, tzinfo=timezone.utc)
        assert quota.try_consume(day1) and quota.try_consume(day1)
        assert not quota.try_consume(day1)
        day2 = day1 + timedelta(minutes=1)
        assert quota.try_consume(day2)
        assert quota.used_today(day2) == 1

    def test_invalid_state(self):
        with pytest.raises(InvalidArgument):
            QuotaBudget(daily_limit=2, used_today=3)

    def test_thread_safe_never_overspends(self, fixture_dir):
        quota = QuotaBudget(daily_limit=50)
        consumed = []

        def worker():
            while quota.try_consume():
                consumed.append(1)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(consumed) == 50


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


class TestRunSchedule:
    def figures(self):
        return [FigureConfig("a", "A", ("ka",)), FigureConfig("b", "B", ("kb",))]

    def empty_transport(self, tmp_path):
        for kw in ("ka", "kb"):
            d = tmp_path / kw
            d.mkdir(exist_ok=True)
            (d / "start.json").write_text(json.dumps({"items": []}))
        return FixtureTransport(tmp_path)

    def test_three_ticks_six_crawls(self, tmp_path):
        stop = threading.Event()
        clock = FakeClock()
        ticks = []

        def wait(timeout):
            clock.t += timeout
            ticks.append(timeout)
            if len(ticks) == 3:
                stop.set()
            return stop.is_set()

        stats = run_schedule(self.figures(), 10.0, self.empty_transport(tmp_path),
                             QuotaBudget(2000), RecordingSink(), stop,
                             clock=clock, wait=wait)
        assert stats.ticks == 3
        assert stats.crawls == 6

    def test_stop_before_first_tick(self, tmp_path):
        stop = threading.Event()
        stop.set()
        stats = run_schedule(self.figures(), 10.0, self.empty_transport(tmp_path),
                             QuotaBudget(2000), RecordingSink(), stop)
        assert stats.ticks == 0 and stats.crawls == 0

    def test_overrun_skips_tick(self, tmp_path):
        stop = threading.Event()
        clock = FakeClock()
        transport = self.empty_transport(tmp_path)
        real_execute = transport.execute

        def slow_execute(request):
            clock.t += 25.0  # a tick takes 2.5 intervals
            return real_execute(request)

        transport.execute = slow_execute

        def wait(timeout):
            clock.t += timeout
            stop.set()
            return True

        stats = run_schedule(self.figures()[:1], 10.0, transport, QuotaBudget(2000),
                             RecordingSink(), stop, clock=clock, wait=wait)
        assert stats.ticks == 1
        assert stats.skipped_ticks >= 1

    def test_interval_positive(self, tmp_path):
        with pytest.raises(InvalidArgument):
            run_schedule(self.figures(), 0, self.empty_transport(tmp_path),
                         QuotaBudget(2000), RecordingSink(), threading.Event())

    def test_duplicate_figure_ids_rejected(self):
        with pytest.raises(InvalidArgument):
            validate_figures([FigureConfig("a", "A", ("k",)),
                              FigureConfig("a", "A2", ("k2",))])


def test_figure_config_invariants():
    with pytest.raises(InvalidArgument):
        FigureConfig("a", "A", ())
    with pytest.raises(InvalidArgument):
        FigureConfig("a", "A", ("  ",))
    with pytest.raises(InvalidArgument):
        FigureConfig("", "A", ("k",))


class TestPublishIntoBroker:
    def test_messages_keyed_by_video_id(self, fixture_dir):
        bus = MessageBus()
        bus.create_topic("video-metadata", 4)
        crawl_keyword("anies", "anies", FixtureTransport(fixture_dir),
                      QuotaBudget(2000), bus)
        handle = bus.subscribe("video-metadata", "check")
        seen = 0
        while True:
            batch = handle.poll(max_messages=100)
            if not batch:
                break
            for m in batch:
                assert m.key == json.loads(m.payload)["video_id"].encode()
                seen += 1
        assert seen == 120
