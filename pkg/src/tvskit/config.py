"""Run configuration: a flat key=value file merged with command-line flags.

The file format is one ``key = value`` pair per line with ``#`` comments.
Values parse as int, float, bool, or string (quotes optional). Flags win
over file values.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .clustering import IsodataParams
from .errors import ValidationError


def parse_kv_file(path: str | Path) -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip()] = _coerce(value.strip())
    return values


def _coerce(text: str) -> object:
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


@dataclass
class RunConfig:
    # paths
    annotations: str = ""
    dataset: str = ""
    manifest: str = ""
    embeddings: str = ""
    captions: str = ""
    index: str = ""
    index_dir: str = ""
    out_dir: str = ""
    prompt_dir: str = ""
    script: str = ""  # scripted-backend replay file
    # run shape
    variant: str = "full"  # full | simple | blind
    max_rounds: int = 4
    view_budget: int = 6
    tool_budget: int = 8
    session_budget: int = 32
    theta: float = 0.1
    seed: int = 0
    jobs: int = 0  # 0 = auto: logical cores capped by pool_size
    pool_size: int = 8
    # clustering
    k_init: int = 4
    k_max: int = 8
    k_min: int = 1
    n_min: int = 1
    theta_split: float = 0.85
    theta_merge: float = 0.98
    delta_max: float = 1e-4
    max_iters: int = 20
    # backends
    backend: str = "scripted"  # scripted | http
    llm_endpoint: str = ""
    llm_model: str = ""
    caption_endpoint: str = ""

    def effective_jobs(self) -> int:
        if self.jobs > 0:
            return self.jobs
        return max(1, min(os.cpu_count() or 1, self.pool_size))

    def isodata_params(self, seed: int | None = None) -> IsodataParams:
        return IsodataParams(
            k_init=self.k_init,
            max_iters=self.max_iters,
            theta_split=self.theta_split,
            theta_merge=self.theta_merge,
            k_max=self.k_max,
            k_min=self.k_min,
            delta_max=self.delta_max,
            n_min=self.n_min,
            rng_seed=self.seed if seed is None else seed,
        )

    # path fields are excluded from the hash so reports stay comparable
    # across working directories
    _PATH_FIELDS = (
        "annotations", "dataset", "manifest", "embeddings", "captions",
        "index", "index_dir", "out_dir", "prompt_dir", "script",
    )

    def config_hash(self) -> str:
        values = {
            k: v for k, v in asdict(self).items() if k not in self._PATH_FIELDS
        }
        return hashlib.sha256(
            json.dumps(values, sort_keys=True).encode()
        ).hexdigest()[:16]

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> "RunConfig":
        known = {f.name: f.type for f in fields(cls)}
        values: dict[str, object] = {}
        if path:
            file_values = parse_kv_file(path)
            unknown = sorted(set(file_values) - set(known))
            if unknown:
                raise ValidationError(f"{path}: unknown config keys {unknown}")
            values.update(file_values)
        values.update({k: v for k, v in overrides.items() if v is not None})
        config = cls(**values)
        if config.variant not in ("full", "simple", "blind"):
            raise ValidationError(f"variant must be full/simple/blind, got {config.variant!r}")
        if config.backend not in ("scripted", "http"):
            raise ValidationError(f"backend must be scripted/http, got {config.backend!r}")
        return config

    def require_paths(self, *names: str) -> None:
        missing = []
        for name in names:
            value = getattr(self, name)
            if not value:
                missing.append(f"{name} (not set)")
            elif not Path(value).exists():
                missing.append(f"{name} ({value} does not exist)")
        if missing:
            raise ValidationError("missing required paths: " + ", ".join(missing))
