from __future__ import annotations

import numpy as np
import pytest

from tack import autodiff as ad
from tack.errors import EmptyInput, InvalidConfig, ShapeMismatch, UnknownMode
from tack.model import MODES, ModelConfig, SupervisedModel, TackModel, aggregate, aggregate_numpy

from conftest import SMALL_MODEL


def rand_inputs(n=2, h=24, w=32, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, h, w, 3)), rng.random((n, h, w, 1))


def test_default_widths_double_and_cap():
    assert ModelConfig().widths() == [32, 64, 128, 256, 256]
    assert ModelConfig(depth=5).widths()[-1] == 256


def test_config_validation():
    with pytest.raises(UnknownMode):
        ModelConfig(mode="attention")
    with pytest.raises(InvalidConfig):
        ModelConfig(depth=0)


@pytest.mark.parametrize("mode", MODES)
def test_shapes_in_every_mode(mode):
    m = TackModel.init(ModelConfig(**{**SMALL_MODEL.to_dict(), "mode": mode}), dtype=np.float64)
    img, tgt = rand_inputs()
    c = m.encode(img, tgt)
    assert c.shape == (2, 3)
    kp, seg = m.decode(img, c)
    assert kp.shape == (2, 24, 32, 1) and seg.shape == (2, 24, 32, 1)


def test_encoder_accepts_three_dim_targets():
    m = TackModel.init(SMALL_MODEL, dtype=np.float64)
    img, tgt = rand_inputs()
    assert np.allclose(m.encode(img, tgt[..., 0]).data, m.encode(img, tgt).data)


def test_film_starts_as_identity_conditioning():
    m = TackModel.init(SMALL_MODEL, dtype=np.float64)
    img, _ = rand_inputs(1)
    a, _ = m.decode(img, np.zeros((1, 3)))
    b, _ = m.decode(img, np.full((1, 3), 5.0))
    assert np.array_equal(a.data, b.data)


@pytest.mark.parametrize("mode", ["concat", "gate"])
def test_embedding_changes_output(mode):
    m = TackModel.init(ModelConfig(**{**SMALL_MODEL.to_dict(), "mode": mode}), dtype=np.float64)
    img, _ = rand_inputs(1)
    a, _ = m.decode(img, np.zeros((1, 3)))
    b, _ = m.decode(img, np.full((1, 3), 2.0))
    assert not np.allclose(a.data, b.data)


def test_shape_errors():
    m = TackModel.init(SMALL_MODEL)
    img, tgt = rand_inputs(h=22)
    with pytest.raises(ShapeMismatch):
        m.encode(img, tgt)
    img, tgt = rand_inputs()
    with pytest.raises(ShapeMismatch):
        m.decode(img, np.zeros((2, 4)))
    with pytest.raises(ShapeMismatch):
        m.encode(img, tgt[:1])


def test_aggregate_is_mean_and_order_invariant():
    e = np.random.default_rng(0).normal(size=(6, 3))
    out = aggregate(ad.Tensor(e), groups=2).data
    assert np.allclose(out, [e[:3].mean(0), e[3:].mean(0)])
    assert np.allclose(aggregate(ad.Tensor(e[[2, 0, 1]])).data, aggregate(ad.Tensor(e[:3])).data)
    assert np.allclose(aggregate_numpy(list(e[:3])), e[:3].mean(0))
    with pytest.raises(EmptyInput):
        aggregate(ad.Tensor(np.zeros((0, 3))))
    with pytest.raises(ShapeMismatch):
        aggregate(ad.Tensor(e), groups=4)


def test_task_embedding_independent_of_conditioning_order():
    m = TackModel.init(SMALL_MODEL, dtype=np.float64)
    img, tgt = rand_inputs(3)
    a = aggregate(m.encode(img, tgt)).data
    b = aggregate(m.encode(img[::-1], tgt[::-1])).data
    assert np.allclose(a, b)


@pytest.mark.parametrize("mode", MODES)
def test_end_to_end_gradient_matches_finite_differences(mode):
    cfg = ModelConfig(embedding_size=2, depth=1, base_width=2, max_width=4, mlp_hidden=3, mode=mode)
    m = TackModel.init(cfg, seed=1, dtype=np.float64)
    rng = np.random.default_rng(1)
    for k, t in m.params.items():
        if "film" in k or "gate" in k:
            t.data = rng.normal(scale=0.5, size=t.shape)
    img, tgt = rand_inputs(2, 4, 6, seed=2)
    target = rng.random((1, 4, 6, 1))
    mask = (rng.random((1, 4, 6, 1)) > 0.5).astype(float)

    def loss():
        c = aggregate(m.encode(img, tgt))
        kp, seg = m.decode(img[:1], c)
        return ad.add(ad.sum(ad.kl_pixels(target, kp)), ad.bce_with_logits(seg, mask))

    names = ["enc.stem.w", "enc.mlp2.w", "dec.stem.w", "dec.head_kp.w", "dec.head_seg.b"]
    names += [k for k in m.params if k.startswith("dec.up1.") and ("film" in k or "gate" in k)][:1]
    err = ad.check_gradients(loss, [m.params[n] for n in names], max_entries=12)
    assert err < 1e-5


def test_state_dict_round_trip_and_mismatch():
    a = TackModel.init(SMALL_MODEL, seed=0)
    b = TackModel.init(SMALL_MODEL, seed=1)
    b.load_state_dict(a.state_dict())
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    with pytest.raises(ShapeMismatch):
        TackModel.init(ModelConfig(**{**SMALL_MODEL.to_dict(), "base_width": 8})).load_state_dict(a.state_dict())


def test_init_is_seed_deterministic():
    a, b = TackModel.init(SMALL_MODEL, seed=3), TackModel.init(SMALL_MODEL, seed=3)
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)


def test_snapshot_is_detached():
    m = TackModel.init(SMALL_MODEL)
    s = m.snapshot()
    m.params["dec.stem.b"].data = m.params["dec.stem.b"].data + 1
    assert not np.array_equal(s.params["dec.stem.b"].data, m.params["dec.stem.b"].data)


def test_supervised_model_channels():
    m = SupervisedModel.init(SMALL_MODEL, 5, dtype=np.float64)
    img, _ = rand_inputs()
    assert m.forward(img).shape == (2, 24, 32, 5)
    assert not any("film" in k for k in m.params)
    with pytest.raises(InvalidConfig):
        SupervisedModel.init(SMALL_MODEL, 0)


def test_encoder_head_is_invariant_to_spatial_permutation():
    m = TackModel.init(SMALL_MODEL, 3)
    img, tg = rand_inputs(2, seed=4)
    probe: dict = {}
    with ad.no_grad():
        c = m.encode(img, tg, probe).data
        h = probe["pre_max"].data
        n, hh, ww, ch = h.shape
        perm = np.random.default_rng(0).permutation(hh * ww)
        hp = h.reshape(n, hh * ww, ch)[:, perm].reshape(n, hh, ww, ch)
        z = np.maximum(hp.max(axis=(1, 2)) @ m.params["enc.mlp1.w"].data + m.params["enc.mlp1.b"].data, 0)
        cp = z @ m.params["enc.mlp2.w"].data + m.params["enc.mlp2.b"].data
    assert np.allclose(cp, c, rtol=1e-5, atol=1e-6)


def test_aggregate_of_opposite_vectors_is_zero():
    v = np.random.default_rng(1).normal(size=4)
    assert np.array_equal(aggregate(np.stack([v, -v])).data[0], np.zeros(4))
    assert np.array_equal(aggregate_numpy([v, -v]), np.zeros(4))


def test_aggregate_single_and_permutation():
    rng = np.random.default_rng(2)
    e = rng.normal(size=(7, 4))
    assert np.allclose(aggregate(e[:1]).data, e[:1])
    for _ in range(5):
        assert np.allclose(aggregate(e[rng.permutation(7)]).data, aggregate(e).data, atol=1e-12, rtol=0)


def test_trained_decoder_separates_distinct_embeddings(small_objects):
    from tack.training import OnlineSource, TrainConfig, train_loop

    from conftest import SMALL_SCENE

    m = TackModel.init(SMALL_MODEL, 0)
    train_loop(m, OnlineSource(small_objects, SMALL_SCENE, 0), TrainConfig(steps=100, batch_size=1, lr_start=1e-3, lr_end=1e-3))
    img = np.random.default_rng(5).random((1, 24, 32, 3)).astype(np.float32)
    with ad.no_grad():
        a, _ = m.decode(img, np.array([[1.0, 0.0, -1.0]], np.float32))
        b, _ = m.decode(img, np.array([[-0.5, 2.0, 0.3]], np.float32))
    assert np.abs(a.data - b.data).max() > 0


def test_untrained_model_is_near_the_centre_baseline():
    from tack.evaluation import regime_errors
    from tack.scene import SceneConfig, make_object_set
    from tack.training import OnlineSource

    scene = SceneConfig()
    src = OnlineSource(make_object_set(0, 4), scene, 21)
    batches = [src.meta_batch(i) for i in range(16)]
    m = TackModel.init(ModelConfig(depth=4), 0)
    err = np.sqrt(regime_errors(m, batches, "adaptation").mean())
    kp = np.concatenate([mb.keypoints[mb.n_cond:] for mb in batches])
    centre = np.array([(scene.width - 1) / 2, (scene.height - 1) / 2])
    baseline = np.sqrt(np.mean(np.sum((kp - centre) ** 2, axis=1)))
    assert abs(err - baseline) < 0.2 * baseline
