"""Gaussian targets, soft-argmax readout and heatmap losses (numpy reference versions)."""

from __future__ import annotations

import numpy as np

from .errors import EmptyInput, ShapeMismatch


def make_target(center, sigma: float, size) -> np.ndarray:
    """Unnormalised Gaussian target of shape ``(H, W)`` centred at sub-pixel ``(u, v)``.

    ``size`` is ``(W, H)``. The peak equals 1 when the centre sits on a pixel.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    w, h = size
    cu, cv = center
    du = (np.arange(w) - cu) ** 2
    dv = (np.arange(h) - cv) ** 2
    return np.exp(-(dv[:, None] + du[None, :]) / (2.0 * sigma * sigma))


def softmax2d(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last two axes."""
    x = np.asarray(logits, dtype=np.float64)
    x = x - x.max(axis=(-2, -1), keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=(-2, -1), keepdims=True)


def expected_coords(prob: np.ndarray) -> np.ndarray:
    """Expected ``(u, v)`` of a (possibly unnormalised) nonnegative map; works on stacks."""
    p = np.asarray(prob, dtype=np.float64)
    h, w = p.shape[-2:]
    total = p.sum(axis=(-2, -1))
    u = (p.sum(axis=-2) * np.arange(w)).sum(axis=-1) / total
    v = (p.sum(axis=-1) * np.arange(h)).sum(axis=-1) / total
    return np.stack([u, v], axis=-1)


def soft_argmax(logits: np.ndarray) -> tuple[float, float]:
    """Expected pixel coordinates under the spatial softmax of ``logits``."""
    u, v = expected_coords(softmax2d(logits))
    return float(u), float(v)


def kl_loss(target: np.ndarray, logits: np.ndarray) -> float:
    """KL(q || softmax(logits)) with ``q`` the target normalised to sum 1."""
    target = np.asarray(target, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if target.shape != logits.shape:
        raise ShapeMismatch(f"target {target.shape} vs logits {logits.shape}")
    q = target / target.sum()
    x = logits - logits.max()
    log_p = x - np.log(np.exp(x).sum())
    nz = q > 0
    return float(np.sum(q[nz] * (np.log(q[nz]) - log_p[nz])))


def rms_pixel_error(preds, targets) -> float:
    """Root of the mean squared Euclidean pixel distance."""
    p = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if len(p) == 0:
        raise EmptyInput("rms_pixel_error needs at least one sample")
    if p.shape != t.shape:
        raise ShapeMismatch(f"{p.shape} vs {t.shape}")
    return float(np.sqrt(np.mean(np.sum((p - t) ** 2, axis=1))))


def write_pgm(path, values: np.ndarray) -> None:
    """Binary 8-bit PGM, scaled so the maximum maps to 255."""
    from .imageio import write_pgm as _write

    _write(path, values)
