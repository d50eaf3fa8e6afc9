from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import make_index
from tvskit.intervals import VideoMeta
from tvskit.viewer import KeyframeIndex


@pytest.fixture
def meta100() -> VideoMeta:
    return VideoMeta(
        vid_name="vid100",
        vid_fname="vid100.mp4",
        duration=100.0,
        frame_rate=30.0,
        total_frames=3000,
        resolution=(640, 360),
    )


@pytest.fixture
def index100(meta100) -> KeyframeIndex:
    # sentinel captions double as the launcher-blindness tripwire
    return make_index(
        meta100,
        [(float(t), f"CAP[{round(t * 30)}]") for t in (5, 15, 30, 45, 60, 75, 90)],
    )


@pytest.fixture
def orthogonal_embeddings() -> np.ndarray:
    g1 = np.tile([1.0, 0.0, 0.0], (5, 1))
    g2 = np.tile([0.0, 1.0, 0.0], (5, 1))
    return np.vstack([g1, g2])
