"""Command-line surface: benchgen / index / screen / eval / cluster / localize.

Exit codes: 0 success, 1 usage, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .agents import ScreeningConfig, run_tvs, run_tvs_simple
from .backends import (
    BackendBundle,
    HttpChatBackend,
    MockCaptioner,
    ScriptRouter,
    SidecarCaptioner,
)
from .benchgen import (
    generate_items,
    gts_for_eval,
    load_annotations,
    load_items,
    save_items,
    split_dataset,
)
from .clustering import read_embeddings, select_keyframes
from .config import RunConfig
from .errors import BackendError, TvsError, ValidationError
from .intervals import SegmentSet, VideoMeta
from .metrics import evaluate, format_table, load_predictions
from .prompts import PromptLibrary, TEMPLATE_NAMES
from .tooldsl import run_tvs_blind
from .viewer import (
    CaptionMatchGrounder,
    KeyframeIndex,
    Viewer,
    build_index,
    load_manifest,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _safe_name(item_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-._" else "_" for c in item_id)


def _load_prompts(prompt_dir: str) -> PromptLibrary:
    prompts = PromptLibrary.defaults()
    if prompt_dir:
        base = Path(prompt_dir)
        for name in TEMPLATE_NAMES:
            candidate = base / f"{name}.txt"
            if candidate.exists():
                prompts.override(name, candidate)
    return prompts


def cmd_benchgen(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    annotations = load_annotations(args.annotations)
    items, report = generate_items(annotations, theta=args.theta)
    if not items:
        print("warning: no items generated (empty or unconnectable annotations)",
              file=sys.stderr)
    if items and not args.no_split:
        items = split_dataset(items, seed=args.seed)
    save_items(out_dir / "dataset.jsonl", items)
    report_dict = report.to_dict()
    report_dict["theta"] = args.theta
    report_dict["seed"] = args.seed
    report_dict["split"] = not args.no_split
    (out_dir / "build_report.json").write_text(
        json.dumps(report_dict, indent=2, sort_keys=True) + "\n"
    )
    print(
        f"benchgen: {report.videos} videos, {report.groups} groups, "
        f"{report.triplets} triplets, {len(items)} items "
        f"({report.gap_case_links} gap-case links)"
    )
    return EXIT_OK


def cmd_index(args) -> int:
    meta = VideoMeta.from_dict(json.loads(Path(args.meta).read_text()))
    manifest = load_manifest(args.manifest)
    embeddings = read_embeddings(args.embeddings)
    if args.captions:
        captioner = SidecarCaptioner.from_jsonl(args.captions)
    else:
        captioner = MockCaptioner()
    params = RunConfig(
        k_init=args.k_init, k_max=args.k_max, k_min=args.k_min, n_min=args.n_min,
        theta_split=args.theta_split, theta_merge=args.theta_merge,
        max_iters=args.max_iters, seed=args.seed,
    ).isodata_params()
    index = build_index(manifest, embeddings, params, captioner, meta)
    index.save(args.out)
    print(f"index: {len(manifest)} candidates -> {len(index.entries)} keyframes -> {args.out}")
    return EXIT_OK


def _index_for(item, config: RunConfig) -> KeyframeIndex | None:
    if config.index:
        return KeyframeIndex.load(config.index)
    if config.index_dir:
        path = Path(config.index_dir) / f"{item.vid_name}.json"
        if not path.exists():
            raise ValidationError(f"no index for video {item.vid_name!r} at {path}")
        return KeyframeIndex.load(path)
    return None


def _screen_one(item, config: RunConfig, router, prompts) -> dict:
    index = _index_for(item, config)
    if index is None and config.variant != "blind":
        raise ValidationError(f"variant {config.variant!r} requires --index or --index-dir")
    meta = index.video if index is not None else item.meta()
    if config.backend == "scripted":
        chat = router.for_item(item.item_id)
    else:
        chat = router  # shared live client
    captioner = None
    if config.captions:
        captioner = SidecarCaptioner.from_jsonl(config.captions)
    bundle = BackendBundle(
        chat=chat,
        captioner=captioner,
        grounder=CaptionMatchGrounder(index) if index is not None else None,
    )
    screening_config = ScreeningConfig(
        max_rounds=config.max_rounds,
        view_budget=config.view_budget,
        tool_budget=config.tool_budget,
        session_budget=config.session_budget,
    )
    if config.variant == "full":
        result = run_tvs(meta, index, item.question, bundle, screening_config, prompts)
    elif config.variant == "simple":
        result = run_tvs_simple(meta, index, item.question, bundle, screening_config, prompts)
    else:
        result = run_tvs_blind(meta, item.question, bundle, screening_config, prompts)
    return result.to_record(item.item_id)


def cmd_screen(args) -> int:
    config = RunConfig.load(
        args.config,
        dataset=args.dataset,
        variant=args.variant,
        seed=args.seed,
        jobs=args.jobs,
        script=args.script,
        index=args.index or None,
        index_dir=args.index_dir or None,
    )
    config.require_paths("dataset")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    prompts = _load_prompts(config.prompt_dir)

    items = load_items(config.dataset)
    if args.split:
        items = [i for i in items if i.split == args.split]
    items.sort(key=lambda i: i.item_id)

    if config.backend == "scripted":
        config.require_paths("script")
        router = ScriptRouter.from_file(config.script)
    else:
        router = HttpChatBackend(
            endpoint=config.llm_endpoint or None,
            model=config.llm_model or None,
            jitter_seed=config.seed,
            pool_size=config.pool_size,
        )

    pending = []
    skipped = 0
    for item in items:
        record_path = out_dir / f"{_safe_name(item.item_id)}.json"
        if record_path.exists():
            skipped += 1
        else:
            pending.append((item, record_path))

    failures: list[tuple[str, str]] = []

    def work(entry):
        item, record_path = entry
        record = _screen_one(item, config, router, prompts)
        record_path.write_text(json.dumps(record, sort_keys=True) + "\n")
        return item.item_id

    jobs = config.effective_jobs()
    try:
        if jobs == 1:
            for entry in pending:
                try:
                    work(entry)
                except BackendError:
                    raise
                except TvsError as exc:
                    failures.append((entry[0].item_id, str(exc)))
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = {pool.submit(work, entry): entry for entry in pending}
                for future, entry in futures.items():
                    try:
                        future.result()
                    except BackendError:
                        raise
                    except TvsError as exc:
                        failures.append((entry[0].item_id, str(exc)))
    except BackendError as exc:
        print(f"backend failure, run is resumable: {exc}", file=sys.stderr)
        return EXIT_BACKEND

    done = len(pending) - len(failures)
    print(f"screen[{config.variant}]: {done} items done, {skipped} resumed/skipped, "
          f"{len(failures)} failed")
    for item_id, message in sorted(failures):
        print(f"  failed {item_id}: {message}", file=sys.stderr)
    return EXIT_DATA if failures else EXIT_OK


def _collect_records(records_dir: str, jobs: int = 1) -> list[tuple[str, SegmentSet]]:
    paths = sorted(Path(records_dir).glob("*.json"))

    def read(path):
        record = json.loads(path.read_text())
        return record["item_id"], SegmentSet.from_pairs(record["segments"])

    if jobs <= 1 or len(paths) < 2:
        return [read(p) for p in paths]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(read, paths))


def cmd_eval(args) -> int:
    if not args.predictions and not args.records:
        raise ValidationError("eval requires --records or --predictions")
    items = load_items(args.dataset)
    if args.split:
        items = [i for i in items if i.split == args.split]
    gts = gts_for_eval(items)

    if args.predictions:
        preds = load_predictions(args.predictions)
    else:
        jobs = RunConfig.load(None, jobs=args.jobs).effective_jobs()
        preds = _collect_records(args.records, jobs=jobs)
    known = [p for p in preds if p[0] in gts]

    missing = sorted(set(gts) - {item_id for item_id, _ in known})
    extra = sorted({item_id for item_id, _ in preds} - set(gts))
    if extra:
        print(f"warning: {len(extra)} predictions not in the dataset slice "
              f"(first: {extra[:3]})", file=sys.stderr)

    report = evaluate(known, gts)
    print(format_table(report))
    payload = {
        "report": report.to_dict(),
        "missing_items": missing,
        "tool_version": __version__,
        "config_hash": RunConfig.load(
            None, dataset=args.dataset, seed=args.seed
        ).config_hash(),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if missing:
        print(f"missing predictions for {len(missing)} items (excluded): "
              f"{missing[:5]}{'...' if len(missing) > 5 else ''}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_cluster(args) -> int:
    embeddings = read_embeddings(args.embeddings)
    if args.manifest:
        manifest = load_manifest(args.manifest)
        timestamps = [row.timestamp for row in manifest]
    else:
        timestamps = [float(i) for i in range(embeddings.shape[0])]
    params = RunConfig(
        k_init=args.k_init, k_max=args.k_max, k_min=args.k_min, n_min=args.n_min,
        theta_split=args.theta_split, theta_merge=args.theta_merge,
        max_iters=args.max_iters, seed=args.seed,
    ).isodata_params()
    picks = select_keyframes(embeddings, timestamps, params)
    for timestamp, row in picks:
        print(f"keyframe row={row} t={timestamp:.3f}")
    print(f"cluster: {embeddings.shape[0]} rows -> {len(picks)} keyframes")
    return EXIT_OK


def cmd_localize(args) -> int:
    index = KeyframeIndex.load(args.index)
    router = ScriptRouter.from_file(args.script)
    viewer = Viewer(index, router.for_item(args.query), tool_budget=args.tool_budget)
    located, trace = viewer.localize(args.query)
    print(json.dumps({"range": located.to_pair(), "trace": trace.to_dict()}, indent=2))
    return EXIT_OK


def build_parser() -> Parser:
    parser = Parser(prog="tvs", description=__doc__)
    parser.add_argument("--version", action="version", version=f"tvs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("benchgen", help="synthesize the QA benchmark from step annotations")
    p.add_argument("--annotations", required=True, help="annotation JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--theta", type=float, default=0.1, help="connectivity threshold")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-split", action="store_true", help="skip train/val/test assignment")
    p.set_defaults(fn=cmd_benchgen)

    p = sub.add_parser("index", help="build a keyframe index from a candidate manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--meta", required=True, help="video metadata JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--captions", default="", help="caption sidecar (JSONL); mock if absent")
    for flag, default in (
        ("--k-init", 4), ("--k-max", 8), ("--k-min", 1), ("--n-min", 1), ("--max-iters", 20),
    ):
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=int, default=default)
    p.add_argument("--theta-split", type=float, default=0.85)
    p.add_argument("--theta-merge", type=float, default=0.98)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("screen", help="run screening over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="per-item record directory (resumable)")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--variant", choices=("full", "simple", "blind"), default=None)
    p.add_argument("--index", default="", help="single keyframe index file")
    p.add_argument("--index-dir", default="", help="directory of {vid_name}.json indexes")
    p.add_argument("--script", default=None, help="scripted-backend replay file")
    p.add_argument("--split", default="", help="restrict to one split (train/val/test)")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_screen)

    p = sub.add_parser("eval", help="score run records against the dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--records", default="", help="record directory from screen")
    p.add_argument("--predictions", default="", help="prediction JSONL file")
    p.add_argument("--split", default="", help="restrict to one split")
    p.add_argument("--out", default="", help="report JSON path")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("cluster", help="debug: run the clusterer on an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", default="", help="optional manifest for timestamps")
    for flag, default in (
        ("--k-init", 4), ("--k-max", 8), ("--k-min", 1), ("--n-min", 1), ("--max-iters", 20),
    ):
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=int, default=default)
    p.add_argument("--theta-split", type=float, default=0.85)
    p.add_argument("--theta-merge", type=float, default=0.98)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("localize", help="debug: run the three-stage localizer")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--script", required=True, help="scripted-backend replay file")
    p.add_argument("--tool-budget", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_localize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help (0) and usage errors (1)
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except TvsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
