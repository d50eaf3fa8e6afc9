from __future__ import annotations

from pathlib import Path

import numpy as np

from tvskit.backends import MockCaptioner
from tvskit.clustering import IsodataParams
from tvskit.intervals import VideoMeta
from tvskit.viewer import CandidateFrame, KeyframeEntry, KeyframeIndex, build_index

FIXTURES = Path(__file__).parent / "fixtures"


def make_index(meta: VideoMeta, timestamps_captions: list[tuple[float, str]]) -> KeyframeIndex:
    entries = tuple(
        KeyframeEntry(
            timestamp=t,
            frame_index=round(t * meta.frame_rate),
            caption=caption,
            embedding_row=i,
        )
        for i, (t, caption) in enumerate(timestamps_captions)
    )
    return KeyframeIndex(video=meta, entries=entries)


def build_small_index(n_groups: int = 2) -> KeyframeIndex:
    meta = VideoMeta(
        vid_name="clip", vid_fname="clip.mp4", duration=20.0,
        frame_rate=10.0, total_frames=200,
    )
    basis = np.eye(3)
    rows = np.vstack([np.tile(basis[g], (5, 1)) for g in range(n_groups)])
    manifest = [
        CandidateFrame(timestamp=float(2 * i), frame_index=20 * i, embedding_row=i)
        for i in range(rows.shape[0])
    ]
    params = IsodataParams(k_init=2, k_max=4, theta_split=0.9, theta_merge=0.5, rng_seed=0)
    return build_index(manifest, rows, params, MockCaptioner(), meta)
