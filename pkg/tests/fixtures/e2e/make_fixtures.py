"""Regenerate the end-to-end fixture set. Run from the repo root:

    python tests/fixtures/e2e/make_fixtures.py

Outputs are committed; rerunning must be byte-stable.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from tvskit.clustering import write_embeddings

HERE = Path(__file__).parent

META = {
    "vid_name": "vid_e2e",
    "vid_fname": "vid_e2e.mp4",
    "duration": 40.0,
    "frame_rate": 25.0,
    "total_frames": 1000,
    "resolution": [640, 360],
}

ANNOTATIONS = {
    "vid_e2e": {
        "duration": 40.0,
        "fps": 25.0,
        "annotations": [
            {"segment": [4.0, 12.0], "sentence": "crack the eggs"},
            {"segment": [11.5, 22.0], "sentence": "pour the sauce"},
            {"segment": [21.5, 32.0], "sentence": "serve the plate"},
        ],
    }
}

# ten candidate frames in three embedding groups -> three keyframes
CANDIDATE_TIMES = [2, 6, 10, 14, 18, 22, 26, 30, 34, 38]
GROUPS = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2]
CAPTIONS = {
    0: "hands cracking eggs into a bowl",
    1: "sauce being poured over the pan",
    2: "finished plate being served",
}

GT = [[11.5, 22.0]]
REWRITE = "What is the cooking step shown in this video?"
TYPES = ["trr1", "trr2", "trr3", "tir1", "tir2", "tir3", "mir1", "mir2", "mir3"]


def fenced(*lines: str) -> str:
    return "```\n" + "\n".join(lines) + "\n```"


def full_scripts() -> dict:
    proceed = fenced(
        "decision: proceed",
        f"query: {REWRITE}",
        "instruction: keep only the middle cooking step",
    )
    succeeded = fenced("judgement: succeeded", f"segments: {json.dumps(GT)}")
    stop = fenced("decision: stop")
    items = {}
    for t in TYPES:
        item_id = f"vid_e2e:0:{t}"
        if t == "trr1":
            # one item drives the viewer through a localize request
            items[item_id] = [
                {"text": proceed},
                {"text": fenced("judgement: view", "action: localize",
                                "query: pour the sauce")},
                {"text": fenced("timestamps: 6, 14, 18, 22, 26")},
                {"text": fenced("choice: 18")},
                {"text": fenced("start: 12", "end: 21")},
                {"text": succeeded},
                {"text": stop},
            ]
        elif t == "mir3":
            # one item fails a round, then recovers
            items[item_id] = [
                {"text": proceed},
                {"text": fenced("judgement: failed", "reason: range unclear")},
                {"text": proceed},
                {"text": succeeded},
                {"text": stop},
            ]
        else:
            items[item_id] = [{"text": proceed}, {"text": succeeded}, {"text": stop}]
    return {"items": items}


def simple_scripts() -> dict:
    final = fenced(f"segments: {json.dumps(GT)}", f"query: {REWRITE}")
    items = {}
    for t in TYPES:
        item_id = f"vid_e2e:0:{t}"
        if t == "tir1":
            items[item_id] = [
                {"tool": "prep", "arguments": {"start": 0, "end": 40}},
                {"text": final},
            ]
        else:
            items[item_id] = [{"text": final}]
    return {"items": items}


def blind_scripts() -> dict:
    plan_reply = fenced(
        f"query: {REWRITE}",
        "plan:",
        "a = range_timestamp_to_index_range(11.5, 22)",
    )
    grounded_reply = fenced(
        f"query: {REWRITE}",
        "plan:",
        "a = range_timestamp_to_index_range(10, 24)",
        'b = grounding_select("sauce", a)',
    )
    items = {}
    for t in TYPES:
        item_id = f"vid_e2e:0:{t}"
        items[item_id] = [{"text": grounded_reply if t == "tir3" else plan_reply}]
    return {"items": items}


def main() -> None:
    HERE.mkdir(parents=True, exist_ok=True)
    (HERE / "annotations.json").write_text(json.dumps(ANNOTATIONS, indent=2) + "\n")
    (HERE / "meta.json").write_text(json.dumps(META, indent=2) + "\n")

    manifest_lines = []
    captions_lines = []
    for row, t in enumerate(CANDIDATE_TIMES):
        frame = t * 25
        manifest_lines.append(json.dumps({
            "timestamp": float(t),
            "frame_index": frame,
            "embedding_row": row,
            "is_iframe": True,
        }))
        captions_lines.append(json.dumps({
            "frame_index": frame,
            "caption": CAPTIONS[GROUPS[row]],
        }))
    (HERE / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n")
    (HERE / "captions.jsonl").write_text("\n".join(captions_lines) + "\n")

    basis = np.eye(4, dtype=np.float32)
    rng = np.random.default_rng(7)
    rows = np.stack([basis[g] for g in GROUPS])
    rows = rows + rng.normal(scale=0.01, size=rows.shape).astype(np.float32)
    write_embeddings(HERE / "embeddings.tvse", rows.astype(np.float32))

    (HERE / "script_full.json").write_text(json.dumps(full_scripts(), indent=2) + "\n")
    (HERE / "script_simple.json").write_text(json.dumps(simple_scripts(), indent=2) + "\n")
    (HERE / "script_blind.json").write_text(json.dumps(blind_scripts(), indent=2) + "\n")
    print("fixtures written to", HERE)


if __name__ == "__main__":
    main()
