from __future__ import annotations

import numpy as np
import pytest

from tack import autodiff as ad
from tack import heatmap as hm
from tack.autodiff import Tensor
from tack.errors import NonScalarLoss, ShapeMismatch


def test_every_primitive_passes_finite_differences():
    report = ad.grad_check(1e-4)
    assert report.passed, report.lines()
    expected = {"conv2d_stride1", "conv2d_stride2", "upsample2x", "relu", "sigmoid", "linear", "add", "mul",
                "channel_concat", "spatial_max", "pixel_softmax", "log_softmax_pixels", "scale_shift",
                "tile_spatial", "kl_pixels", "bce_with_logits"}
    assert expected <= set(report.errors)


@pytest.mark.parametrize("seed", [1, 2])
def test_grad_check_is_seed_robust(seed):
    assert ad.grad_check(1e-4, seed=seed).passed


def _conv_reference(x, w, b, stride):
    """Direct loop convolution with zero padding 1 (independent of im2col)."""
    n, h, wd, _ = x.shape
    k = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
    out = np.zeros((n, ho, wo, w.shape[3]))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, i * stride:i * stride + k, j * stride:j * stride + k, :]
            out[:, i, j, :] = np.einsum("nabc,abcd->nd", patch, w) + b
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_loop_reference(stride):
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(2, 6, 8, 3)), rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4)
    got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride).data
    assert np.allclose(got, _conv_reference(x, w, b, stride), atol=1e-12)


def test_upsample_and_spatial_max_values():
    x = np.arange(8.0).reshape(1, 2, 2, 2)
    up = ad.upsample2x(Tensor(x)).data
    assert up.shape == (1, 4, 4, 2)
    assert np.array_equal(up[0, :2, :2, 0], np.full((2, 2), x[0, 0, 0, 0]))
    assert np.array_equal(ad.spatial_max(Tensor(x)).data, [[6.0, 7.0]])


def test_kl_pixels_matches_numpy_reference_per_channel():
    rng = np.random.default_rng(3)
    t = rng.random((2, 4, 5, 3))
    x = rng.normal(size=(2, 4, 5, 3))
    got = ad.kl_pixels(t, Tensor(x)).data
    want = [[hm.kl_loss(t[n, :, :, c], x[n, :, :, c]) for c in range(3)] for n in range(2)]
    assert np.allclose(got, np.sum(want, axis=1), atol=1e-12)


def test_bce_matches_naive_formula():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 4))
    y = (rng.random((3, 4)) > 0.5).astype(float)
    s = 1 / (1 + np.exp(-x))
    want = -np.mean(y * np.log(s) + (1 - y) * np.log(1 - s))
    assert ad.bce_with_logits(Tensor(x), y).item() == pytest.approx(want, rel=1e-12)


def test_bce_is_stable_for_large_logits():
    v = ad.bce_with_logits(Tensor(np.array([800.0, -800.0])), np.array([0.0, 1.0])).item()
    assert v == pytest.approx(800.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(NonScalarLoss):
        ad.backward(ad.mul(x, 2.0))


def test_gradient_accumulates_over_shared_nodes():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = ad.mul(x, x)
    ad.backward(ad.sum(ad.add(y, y)))
    assert np.allclose(x.grad, 4 * x.data)


def test_no_grad_disables_recording():
    x = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, 3.0)
    assert not y.requires_grad and y.parents == ()


def test_shape_errors_name_the_operation():
    with pytest.raises(ShapeMismatch, match="kl_pixels"):
        ad.kl_pixels(np.ones((1, 2, 2, 1)), Tensor(np.ones((1, 3, 2, 1))))
    with pytest.raises(ShapeMismatch):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3))))


def test_checkpoint_round_trip(tmp_path):
    tensors = {"a.w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
    ad.write_checkpoint(tmp_path / "m.ckpt", tensors)
    back = ad.read_checkpoint(tmp_path / "m.ckpt")
    assert list(back) == ["a.w", "b"]
    assert all(np.array_equal(back[k], v) for k, v in tensors.items())
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:8] == ad.CKPT_MAGIC


def test_checkpoint_rejects_bad_magic(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"NOTACKPT" + b"\0" * 8)
    with pytest.raises(ValueError):
        ad.read_checkpoint(tmp_path / "x.ckpt")
