"""Embedding and captioning model registry.

The builtins are deterministic pixel statistics so the whole extraction
pipeline runs offline and reproducibly. Model ids that name real encoders
(CLIP variants, VLM captioners) raise a clear error when the weights are
not installed instead of silently substituting a different model.
"""

from __future__ import annotations

import numpy as np


class ModelUnavailableError(RuntimeError):
    pass


BUILTIN_EMBEDDER = "builtin:colorhist"
BUILTIN_CAPTIONER = "builtin:heuristic"


def color_histogram(image: np.ndarray, bins: int = 4) -> np.ndarray:
    """Normalized joint BGR histogram; sums to 1, so it is never the zero vector."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {image.shape}")
    quantized = (image.astype(np.uint16) * bins // 256).clip(0, bins - 1)
    flat = (
        quantized[..., 0] * bins * bins + quantized[..., 1] * bins + quantized[..., 2]
    ).ravel()
    counts = np.bincount(flat, minlength=bins**3).astype(np.float32)
    return counts / counts.sum()


class ColorHistEmbedder:
    """64-d joint color histogram, deterministic."""

    dim = 64

    def embed(self, image: np.ndarray) -> np.ndarray:
        return color_histogram(image, bins=4)


_HUE_NAMES = (
    "red", "orange", "yellow", "green", "teal", "blue", "violet", "magenta",
)


class HeuristicCaptioner:
    """Deterministic caption from brightness and dominant hue."""

    settings = {"model": BUILTIN_CAPTIONER, "temperature": 0, "decoding": "deterministic"}

    def caption(self, image: np.ndarray, timestamp: float) -> str:
        gray = image.mean(axis=2)
        brightness = float(gray.mean())
        if brightness < 64:
            tone = "dark"
        elif brightness < 128:
            tone = "dim"
        elif brightness < 192:
            tone = "bright"
        else:
            tone = "very bright"
        b, g, r = (float(image[..., c].mean()) for c in range(3))
        import colorsys

        hue, _, saturation = colorsys.rgb_to_hsv(r / 255.0, g / 255.0, b / 255.0)
        if saturation < 0.08:
            color = "gray"
        else:
            color = _HUE_NAMES[int(hue * len(_HUE_NAMES)) % len(_HUE_NAMES)]
        return f"a {tone} frame dominated by {color} tones at {timestamp:.1f}s"


def load_embedder(model_id: str):
    if model_id == BUILTIN_EMBEDDER:
        return ColorHistEmbedder()
    raise ModelUnavailableError(
        f"embedding model {model_id!r} is not available in this environment; "
        f"use {BUILTIN_EMBEDDER} for the offline default"
    )


def load_captioner(model_id: str):
    if model_id == BUILTIN_CAPTIONER:
        return HeuristicCaptioner()
    raise ModelUnavailableError(
        f"caption model {model_id!r} is not available in this environment; "
        f"use {BUILTIN_CAPTIONER} for the offline default"
    )
