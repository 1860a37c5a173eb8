from datetime import datetime, timezone
from pathlib import Path

import pytest

from pulsestream.ingest import VideoMetadata

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURE_DIR = REPO_ROOT / "fixtures" / "crawl"


def make_video(video_id: str, figure_id: str = "anies", keyword: str = "anies",
               description: str = "dukungan publik", fetched_at: datetime | None = None,
               ) -> VideoMetadata:
    return VideoMetadata(
        video_id=video_id,
        channel_id=f"chan-{video_id}",
        title=f"title {video_id}",
        description=description,
        uri=f"https://www.youtube.com/watch?v={video_id}",
        figure_id=figure_id,
        keyword=keyword,
        fetched_at=fetched_at or datetime(2024, 1, 15, 12, 0, 0, tzinfo=timezone.utc),
    )


@pytest.fixture
def fixture_dir() -> Path:
    return FIXTURE_DIR
