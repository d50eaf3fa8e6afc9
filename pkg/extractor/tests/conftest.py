from __future__ import annotations

import pytest

pytest.importorskip("tvs_extractor", reason="extractor package is not installed")

from tvs_extractor.clip import make_clip


@pytest.fixture(scope="session")
def clip_10s(tmp_path_factory):
    """The bundled synthetic clip: 10 s, keyframe forced every 2 s."""
    path = tmp_path_factory.mktemp("clips") / "synthetic.mp4"
    info = make_clip(path, duration=10.0, keyframe_interval=2.0)
    return info
