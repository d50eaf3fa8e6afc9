"""Prompt templates: loading, placeholder validation, strict rendering.

Templates are plain text files with {name} placeholders. Each template name
has a required placeholder set; the launcher template is additionally
restricted to a video-free allowed set, so a template that tries to splice
captions or any other video-derived content into the launcher prompt is
rejected before any run starts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import TemplateError

_PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")

REQUIRED: dict[str, set[str]] = {
    "launcher": {"query", "success_history", "failure_history"},
    "validator": {"query", "rewritten_query", "instruction"},
    "scanner": {"captions", "start", "end"},
    "localize_stage1": {"captions", "query", "duration"},
    "localize_stage2": {"candidates", "query"},
    "localize_stage3": {"choice", "caption", "query", "duration"},
    "simple": {"query", "duration"},
    "blind": {"query", "tools"},
    "judge": {"original", "rewritten", "reference"},
}

# The launcher must stay blind to video content: only these placeholders
# may appear in its template.
LAUNCHER_ALLOWED = {"query", "success_history", "failure_history"}

TEMPLATE_NAMES = tuple(sorted(REQUIRED))


def placeholders(text: str) -> set[str]:
    return set(_PLACEHOLDER.findall(text))


def validate_template(name: str, text: str) -> None:
    if name not in REQUIRED:
        raise TemplateError(f"unknown template name {name!r}")
    found = placeholders(text)
    missing = REQUIRED[name] - found
    if missing:
        raise TemplateError(f"template {name!r} is missing placeholders {sorted(missing)}")
    if name == "launcher":
        extra = found - LAUNCHER_ALLOWED
        if extra:
            raise TemplateError(
                f"launcher template may not reference {sorted(extra)}; "
                f"the launcher is video-free"
            )


def render(text: str, values: Mapping[str, str]) -> str:
    """Substitute {name} placeholders; any unknown name is an error."""

    def sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in values:
            raise TemplateError(f"no value for placeholder {{{key}}}")
        return str(values[key])

    return _PLACEHOLDER.sub(sub, text)


@dataclass
class PromptLibrary:
    templates: dict[str, str] = field(default_factory=dict)

    @classmethod
    def defaults(cls) -> "PromptLibrary":
        lib = cls()
        pkg = resources.files(__package__) / "prompts"
        for name in TEMPLATE_NAMES:
            lib.templates[name] = (pkg / f"{name}.txt").read_text()
        lib.validate()
        return lib

    def override(self, name: str, path: str | Path) -> None:
        text = Path(path).read_text()
        validate_template(name, text)
        self.templates[name] = text

    def validate(self) -> None:
        for name, text in self.templates.items():
            validate_template(name, text)

    def render(self, name: str, **values: str) -> str:
        if name not in self.templates:
            raise TemplateError(f"no template loaded for {name!r}")
        return render(self.templates[name], values)
