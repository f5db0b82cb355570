from __future__ import annotations

import numpy as np
import pytest

from tack import geometry as geo


def ring_rig(n: int, radius: float = 2.0, size=(160, 120), f: float = 150.0, jitter=None, rng=None) -> list[geo.Camera]:
    """``n`` cameras on a horizontal ring, all looking at the origin."""
    w, h = size
    K = geo.make_intrinsics(f, f, (w - 1) / 2, (h - 1) / 2)
    cams = []
    for i in range(n):
        a = 2 * np.pi * i / n + (0.0 if rng is None else rng.uniform(-0.3, 0.3))
        eye = np.array([radius * np.cos(a), 0.4 * (i % 2) - 0.2, radius * np.sin(a)])
        if jitter is not None:
            eye = eye + jitter[i]
        cams.append(geo.Camera(K, geo.look_at(eye, np.zeros(3)), w, h))
    return cams


def gaussian_logits(center, sigma: float, size) -> np.ndarray:
    """Log of an unnormalised Gaussian bump: a clean detection heatmap."""
    w, h = size
    u, v = np.meshgrid(np.arange(w), np.arange(h))
    return -((u - center[0]) ** 2 + (v - center[1]) ** 2) / (2 * sigma**2)


@pytest.fixture
def rig4():
    return ring_rig(4)


from tack.model import ModelConfig  # noqa: E402
from tack.scene import SceneConfig, make_object_set  # noqa: E402
from tack.training import OnlineSource  # noqa: E402

SMALL_SCENE = SceneConfig(width=32, height=24, sigma=1.5, fov_margin=2.0)
SMALL_MODEL = ModelConfig(embedding_size=3, depth=2, base_width=4, max_width=16, mlp_hidden=8)


@pytest.fixture(scope="session")
def small_objects():
    return make_object_set(0, 2)


@pytest.fixture(scope="session")
def small_batches(small_objects):
    src = OnlineSource(small_objects, SMALL_SCENE, seed=1)
    return [src.meta_batch(i) for i in range(6)]


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE[key])
