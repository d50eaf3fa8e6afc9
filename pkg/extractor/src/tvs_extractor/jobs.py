"""Extraction jobs: raw video in, manifest + embeddings + captions out.

Candidate keyframes come from the container's sync-sample flags, never
from re-encoding. Frame decoding is delegated to OpenCV's bundled
decoder. Output files follow the screening toolkit's interchange formats:
a JSON Lines manifest, the TVSE binary embedding file, and a JSON Lines
caption sidecar whose header line records the decoding settings.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .models import load_captioner, load_embedder
from .mp4box import Mp4ParseError, read_video_track

TVSE_MAGIC = b"TVSE"
TVSE_VERSION = 1


class JobError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExtractionJob:
    video_path: str
    out_dir: str
    embed_model: str = "builtin:colorhist"
    caption_model: str = "builtin:heuristic"
    device: str = "cpu"

    def paths(self) -> dict[str, Path]:
        out = Path(self.out_dir)
        return {
            "manifest": out / "manifest.jsonl",
            "embeddings": out / "embeddings.tvse",
            "captions": out / "captions.jsonl",
            "meta": out / "meta.json",
            "frames": out / "frames",
        }


@dataclass
class CandidateRow:
    timestamp: float
    frame_index: int
    embedding_row: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "timestamp": self.timestamp,
                "frame_index": self.frame_index,
                "embedding_row": self.embedding_row,
                "is_iframe": True,
            }
        )


def _open_video(path: str) -> cv2.VideoCapture:
    capture = cv2.VideoCapture(path)
    if not capture.isOpened():
        raise JobError(f"decoder could not open {path}")
    return capture


def extract_candidates(job: ExtractionJob) -> list[CandidateRow]:
    """Write the candidate manifest, frame images, and video metadata."""
    paths = job.paths()
    Path(job.out_dir).mkdir(parents=True, exist_ok=True)
    paths["frames"].mkdir(exist_ok=True)

    try:
        track = read_video_track(job.video_path)
    except (Mp4ParseError, OSError) as exc:
        raise JobError(f"cannot parse container of {job.video_path}: {exc}") from exc
    if not track.sync_samples:
        raise JobError(f"{job.video_path}: no keyframes flagged in the container")

    capture = _open_video(job.video_path)
    fps = capture.get(cv2.CAP_PROP_FPS) or 0.0
    width = int(capture.get(cv2.CAP_PROP_FRAME_WIDTH))
    height = int(capture.get(cv2.CAP_PROP_FRAME_HEIGHT))
    if fps <= 0:
        # fall back to container timing
        fps = track.sample_count / track.duration if track.duration > 0 else 0.0
    if fps <= 0:
        raise JobError(f"{job.video_path}: cannot determine frame rate")

    wanted = sorted(set(track.sync_samples))
    rows: list[CandidateRow] = []
    grabbed = {}
    index = 0
    position = 0
    while position <= wanted[-1]:
        ok, frame = capture.read()
        if not ok:
            break
        if position == wanted[index]:
            grabbed[position] = frame
            index += 1
            if index >= len(wanted):
                position += 1
                break
        position += 1
    capture.release()

    missing = [w for w in wanted if w not in grabbed]
    if missing:
        raise JobError(
            f"{job.video_path}: decoder returned no frame for samples {missing[:5]}"
        )

    for row_number, sample in enumerate(wanted):
        timestamp = track.timestamps[sample]
        rows.append(
            CandidateRow(timestamp=timestamp, frame_index=sample, embedding_row=row_number)
        )
        cv2.imwrite(str(paths["frames"] / f"{sample:06d}.png"), grabbed[sample])

    paths["manifest"].write_text("\n".join(r.to_json() for r in rows) + "\n")
    meta = {
        "vid_name": Path(job.video_path).stem,
        "vid_fname": Path(job.video_path).name,
        "duration": track.duration,
        "frame_rate": fps,
        "total_frames": track.sample_count,
        "resolution": [width, height],
    }
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return rows


def _load_manifest_rows(path: Path) -> list[dict]:
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            rows.append(json.loads(line))
    if not rows:
        raise JobError(f"{path}: manifest is empty")
    return rows


def _frame_image(job: ExtractionJob, frame_index: int) -> np.ndarray:
    path = job.paths()["frames"] / f"{frame_index:06d}.png"
    image = cv2.imread(str(path))
    if image is None:
        raise JobError(f"missing frame image {path}")
    return image


def embed_frames(job: ExtractionJob) -> int:
    """Write the TVSE embedding file, one row per manifest row, in order."""
    paths = job.paths()
    rows = _load_manifest_rows(paths["manifest"])
    embedder = load_embedder(job.embed_model)
    matrix = np.zeros((len(rows), embedder.dim), dtype=np.float32)
    for row in rows:
        matrix[row["embedding_row"]] = embedder.embed(
            _frame_image(job, row["frame_index"])
        )
    with open(paths["embeddings"], "wb") as fh:
        fh.write(TVSE_MAGIC)
        fh.write(struct.pack("<III", TVSE_VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix).tobytes(order="C"))
    return len(rows)


@dataclass
class CaptionOutcome:
    written: int = 0
    failures: list[dict] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def caption_frames(job: ExtractionJob) -> CaptionOutcome:
    """Write the caption sidecar; per-frame failures are recorded, not fatal."""
    paths = job.paths()
    rows = _load_manifest_rows(paths["manifest"])
    captioner = load_captioner(job.caption_model)
    outcome = CaptionOutcome()
    lines = [json.dumps({"header": dict(captioner.settings)})]
    for row in rows:
        try:
            image = _frame_image(job, row["frame_index"])
            caption = captioner.caption(image, row["timestamp"])
            lines.append(
                json.dumps({"frame_index": row["frame_index"], "caption": caption})
            )
            outcome.written += 1
        except Exception as exc:  # per-frame failure: record and continue
            entry = {"frame_index": row["frame_index"], "error": str(exc)}
            outcome.failures.append(entry)
            lines.append(json.dumps(entry))
    paths["captions"].write_text("\n".join(lines) + "\n")
    return outcome


def cross_check(job: ExtractionJob) -> dict:
    """Validate 1:1:1 manifest/embedding/caption alignment by frame index."""
    paths = job.paths()
    rows = _load_manifest_rows(paths["manifest"])
    problems: list[str] = []

    for position, row in enumerate(rows):
        if row["embedding_row"] != position:
            problems.append(
                f"manifest row {position} points at embedding row {row['embedding_row']}"
            )

    raw = paths["embeddings"].read_bytes()
    if raw[:4] != TVSE_MAGIC:
        problems.append("embedding file has a bad magic")
    else:
        _, n, d = struct.unpack("<III", raw[4:16])
        if n != len(rows):
            problems.append(f"embedding rows ({n}) != manifest rows ({len(rows)})")
        if len(raw) != 16 + 4 * n * d:
            problems.append("embedding payload size mismatch")

    caption_indexes = set()
    for line in paths["captions"].read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "frame_index" in rec and "caption" in rec:
            caption_indexes.add(rec["frame_index"])
    manifest_indexes = {row["frame_index"] for row in rows}
    missing = sorted(manifest_indexes - caption_indexes)
    if missing:
        problems.append(f"captions missing for frames {missing[:5]}")

    return {"rows": len(rows), "aligned": not problems, "problems": problems}


def run_all(job: ExtractionJob) -> dict:
    rows = extract_candidates(job)
    embedded = embed_frames(job)
    captions = caption_frames(job)
    check = cross_check(job)
    return {
        "candidates": len(rows),
        "embedded": embedded,
        "captions_written": captions.written,
        "caption_failures": captions.failures,
        "aligned": check["aligned"],
        "problems": check["problems"],
    }
