"""tvs-extractor: turns raw videos into screening-toolkit input files."""

__version__ = "0.1.0"

from .clip import make_clip  # noqa: F401
from .jobs import (  # noqa: F401
    CaptionOutcome,
    ExtractionJob,
    JobError,
    caption_frames,
    cross_check,
    embed_frames,
    extract_candidates,
    run_all,
)
from .mp4box import Mp4ParseError, VideoTrack, read_video_track  # noqa: F401
