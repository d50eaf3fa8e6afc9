"""Synthetic test clip generation.

The encoder bundled with OpenCV uses a fixed 12-frame group of pictures,
so writing at ``12 / interval`` frames per second forces a container
keyframe every ``interval`` seconds. Content is a smooth moving rectangle
over a static gradient: enough change for real P-frames, no scene cuts
that would insert extra keyframes.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

GOP_FRAMES = 12


def make_clip(
    path: str | Path,
    duration: float = 10.0,
    keyframe_interval: float = 2.0,
    size: tuple[int, int] = (64, 48),
) -> dict:
    """Write an mp4 clip whose keyframes land every ``keyframe_interval`` s."""
    fps = GOP_FRAMES / keyframe_interval
    frame_count = round(duration * fps)
    width, height = size
    writer = cv2.VideoWriter(
        str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (width, height)
    )
    if not writer.isOpened():
        raise RuntimeError(f"cannot open video writer for {path}")

    yy, xx = np.mgrid[0:height, 0:width]
    gradient = ((xx / width * 160) + (yy / height * 60)).astype(np.uint8)
    base = np.stack([gradient, gradient // 2, 255 - gradient], axis=2)
    for i in range(frame_count):
        frame = base.copy()
        x = int((i / max(frame_count - 1, 1)) * (width - 12))
        cv2.rectangle(frame, (x, 10), (x + 10, 30), (255, 255, 255), -1)
        writer.write(frame)
    writer.release()
    return {
        "path": str(path),
        "fps": fps,
        "frames": frame_count,
        "duration": frame_count / fps,
        "keyframe_interval": keyframe_interval,
    }
