from __future__ import annotations

import math

import numpy as np
import pytest

from tack import autodiff as ad
from tack import heatmap as hm
from tack.errors import EmptyDataset, InvalidConfig, NonFiniteLoss
from tack.model import TackModel
from tack.scene import MetaBatch, pad_crop
from tack.training import (
    METRIC_COLUMNS,
    Adam,
    DatasetSource,
    OnlineSource,
    TrainConfig,
    adaptation_loss,
    augment_batch,
    autoencoder_loss,
    forward_losses,
    load_run,
    read_metrics,
    regime_rmse,
    save_run,
    segmentation_loss,
    train_loop,
    train_step,
)
from tack.rng import Rng

from conftest import SMALL_MODEL, SMALL_SCENE


def f64_model(seed=0):
    return TackModel.init(SMALL_MODEL, seed=seed, dtype=np.float64)


# -- configuration ---------------------------------------------------------


def test_lr_schedule_endpoints_and_linearity():
    cfg = TrainConfig(steps=11, lr_start=1e-3, lr_end=1e-4)
    assert cfg.lr(0) == 1e-3 and cfg.lr(10) == pytest.approx(1e-4)
    assert cfg.lr(5) == pytest.approx(5.5e-4)
    assert TrainConfig(steps=1).lr(0) == TrainConfig().lr_start


@pytest.mark.parametrize("loss, w", [("both", (1, 1, 0.1)), ("adapt", (1, 0, 0.1)), ("auto", (0, 1, 0.1))])
def test_weights_by_loss_mode(loss, w):
    assert TrainConfig(loss=loss).weights == w


def test_config_rejects_bad_values():
    with pytest.raises(InvalidConfig):
        TrainConfig(loss="none")
    with pytest.raises(InvalidConfig):
        TrainConfig(w_seg=-1)
    with pytest.raises(InvalidConfig):
        TrainConfig(steps=0)


# -- losses ----------------------------------------------------------------


def _manual_losses(model, mb: MetaBatch):
    """Independent route: numpy KL/BCE on per-view decodes."""
    L = mb.n_cond
    c = model.encode(mb.images[:L], mb.targets[:L, ..., None]).data.mean(axis=0, keepdims=True)
    kp, seg = model.decode(mb.images, np.repeat(c, mb.n_views, axis=0))
    kls = [hm.kl_loss(mb.targets[v], kp.data[v, ..., 0]) for v in range(mb.n_views)]
    x, y = seg.data[..., 0], mb.masks
    bce = np.mean(np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x))))
    return np.mean(kls[L:]), np.sum(kls[:L]), bce


def test_single_meta_batch_losses_match_numpy(small_batches):
    m = f64_model()
    mb = small_batches[0]
    a, u, s = _manual_losses(m, mb)
    assert adaptation_loss(m, mb).item() == pytest.approx(a, rel=1e-9)
    assert autoencoder_loss(m, mb).item() == pytest.approx(u, rel=1e-9)
    assert segmentation_loss(m, mb).item() == pytest.approx(s, rel=1e-9)


def test_batched_losses_average_over_meta_batches(small_batches):
    m = f64_model()
    total, parts, _, _ = forward_losses(m, small_batches[:3], (1.0, 1.0, 0.1))
    man = [_manual_losses(m, mb) for mb in small_batches[:3]]
    assert parts["adapt"].item() == pytest.approx(np.mean([x[0] for x in man]), rel=1e-9)
    assert parts["auto"].item() == pytest.approx(np.mean([x[1] for x in man]), rel=1e-9)
    assert parts["seg"].item() == pytest.approx(np.mean([x[2] for x in man]), rel=1e-9)
    want = parts["adapt"].item() + parts["auto"].item() + 0.1 * parts["seg"].item()
    assert total.item() == pytest.approx(want, rel=1e-12)


def test_adapt_only_decodes_no_conditioning_views(small_batches):
    m = f64_model()
    _, parts, kp, st = forward_losses(m, small_batches[:2], (1.0, 0.0, 0.1))
    assert parts["auto"] is None and kp.shape[0] == 2 and st.is_valid.all()


def _grads(model, loss):
    ad.zero_grad(model.parameters())
    ad.backward(loss)
    return {k: np.zeros_like(t.data) if t.grad is None else t.grad.copy() for k, t in model.params.items()}


def test_adapt_only_gradient_is_mean_of_per_task_gradients(small_batches):
    m = f64_model()
    mb = small_batches[:2]
    joint = _grads(m, forward_losses(m, mb, (1.0, 0.0, 0.0))[0])
    parts = [_grads(m, adaptation_loss(m, b)) for b in mb]
    for k in joint:
        assert np.allclose(joint[k], 0.5 * (parts[0][k] + parts[1][k]), atol=1e-12)


def test_auto_only_loss_ignores_validation_views(small_batches):
    m = f64_model()
    mb = small_batches[0]
    altered = MetaBatch(mb.images.copy(), mb.targets.copy(), mb.masks.copy(), mb.cameras, mb.keypoints,
                        mb.points_world, mb.poses, mb.n_cond, mb.task)
    altered.images[mb.n_cond:] = 0.0
    altered.targets[mb.n_cond:] = 1.0
    a = forward_losses(m, [mb], (0.0, 1.0, 0.0))[0].item()
    b = forward_losses(m, [altered], (0.0, 1.0, 0.0))[0].item()
    assert a == b


def test_empty_batch_list():
    with pytest.raises(EmptyDataset):
        forward_losses(f64_model(), [], (1, 1, 0.1))


# -- optimiser -------------------------------------------------------------


def test_adam_first_step_is_signed_lr():
    p = {"w": ad.Tensor(np.array([1.0, -2.0, 3.0]), True)}
    p["w"].grad = np.array([0.5, -4.0, 1e-3])
    Adam(p, eps=1e-12).step(0.1)
    assert np.allclose(p["w"].data, [0.9, -1.9, 2.9])


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    p = {"w": ad.Tensor(rng.normal(size=4), True)}
    opt = Adam(p, 0.9, 0.999, 1e-8)
    w, m, v = p["w"].data.copy(), np.zeros(4), np.zeros(4)
    for t in range(1, 6):
        g = rng.normal(size=4)
        p["w"].grad = g
        opt.step(0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(p["w"].data, w, atol=1e-14)


def test_train_steps_reduce_loss_on_fixed_batch(small_batches):
    m = TackModel.init(SMALL_MODEL, seed=0)
    cfg = TrainConfig(steps=40, lr_start=3e-3, lr_end=3e-3)
    opt = Adam(m.params)
    first = train_step(m, small_batches[:2], cfg, 0, opt).total
    for s in range(1, 40):
        last = train_step(m, small_batches[:2], cfg, s, opt).total
    assert last < 0.7 * first


def test_non_finite_loss_raises(small_batches):
    m = TackModel.init(SMALL_MODEL)
    m.params["dec.head_kp.b"].data[:] = np.nan
    with pytest.raises(NonFiniteLoss):
        train_step(m, small_batches[:1], TrainConfig(steps=2), 0)


def test_train_step_past_end():
    with pytest.raises(InvalidConfig):
        train_step(TackModel.init(SMALL_MODEL), [], TrainConfig(steps=2), 2)


# -- data sources ----------------------------------------------------------


def test_online_source_is_index_addressed(small_objects):
    a = OnlineSource(small_objects, SMALL_SCENE, seed=4)
    b = OnlineSource(small_objects, SMALL_SCENE, seed=4, threads=2)
    x, y = a.batch(3, 2), b.batch(3, 2)
    assert all(p.images.tobytes() == q.images.tobytes() for p, q in zip(x, y))
    assert x[1].images.tobytes() == a.meta_batch(7).images.tobytes()


def test_dataset_source_visits_every_item_once_per_epoch(small_batches):
    src = DatasetSource(small_batches, seed=2)
    epoch = [id(mb) for s in range(3) for mb in src.batch(s, 2)]
    assert sorted(epoch) == sorted(id(mb) for mb in small_batches)
    with pytest.raises(EmptyDataset):
        DatasetSource([])


def test_augment_batch_moves_keypoints_with_targets(small_batches):
    mb = small_batches[0]
    aug = augment_batch(Rng(3), mb, 3)
    offs = Rng(3).integers(0, 7, size=(mb.n_views, 2))
    for v in range(mb.n_views):
        assert np.array_equal(aug.targets[v], pad_crop(mb.targets[v], 3, offs[v]))
        assert np.allclose(aug.keypoints[v], mb.keypoints[v] + 3 - offs[v])
    assert augment_batch(Rng(3), mb, 0) is mb


# -- training loop ---------------------------------------------------------


def _loop(tmp, source, steps=6, stop_at=None, resume=False, evb=None):
    m = TackModel.init(SMALL_MODEL, seed=0)
    cfg = TrainConfig(steps=steps, batch_size=2, lr_start=1e-3, lr_end=1e-4, eval_every=3, checkpoint_every=2)
    return train_loop(m, source, cfg, out=tmp, eval_batches=evb, stop_at=stop_at, resume=resume)


def test_metrics_csv_columns_and_eval_rows(tmp_path, small_objects, small_batches):
    src = OnlineSource(small_objects, SMALL_SCENE, seed=0)
    res = _loop(tmp_path, src, evb=small_batches[:2])
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == METRIC_COLUMNS
    rows = read_metrics(tmp_path / "metrics.csv")
    assert [int(r["step"]) for r in rows] == [1, 2, 3, 4, 5, 6]
    assert [int(r["step"]) for r in rows if not math.isnan(r["rmse_adapt"])] == [3, 6]
    assert res.evals[-1][1] == pytest.approx(regime_rmse(res.model, small_batches[:2])[0])


def test_training_is_bitwise_deterministic(tmp_path, small_objects):
    src = OnlineSource(small_objects, SMALL_SCENE, seed=0)
    _loop(tmp_path / "a", src)
    _loop(tmp_path / "b", src)
    assert (tmp_path / "a/model.ckpt").read_bytes() == (tmp_path / "b/model.ckpt").read_bytes()
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()


def test_resume_matches_uninterrupted_run(tmp_path, small_objects):
    src = OnlineSource(small_objects, SMALL_SCENE, seed=0)
    _loop(tmp_path / "full", src)
    _loop(tmp_path / "split", src, stop_at=4)
    _loop(tmp_path / "split", src, resume=True)
    assert (tmp_path / "full/model.ckpt").read_bytes() == (tmp_path / "split/model.ckpt").read_bytes()
    assert (tmp_path / "full/metrics.csv").read_bytes() == (tmp_path / "split/metrics.csv").read_bytes()


def test_resume_without_checkpoint(tmp_path, small_objects):
    with pytest.raises(FileNotFoundError):
        _loop(tmp_path, OnlineSource(small_objects, SMALL_SCENE, seed=0), resume=True)


def test_save_and_load_run(tmp_path):
    m = TackModel.init(SMALL_MODEL, seed=5)
    save_run(tmp_path, m, None, 7, TrainConfig(), {"note": "x"})
    back, manifest, tensors = load_run(tmp_path)
    assert manifest["step"] == 7 and manifest["note"] == "x" and manifest["model"] == SMALL_MODEL.to_dict()
    assert all(np.array_equal(back.params[k].data, m.params[k].data) for k in m.params)
    assert load_run(tmp_path / "model.ckpt")[1]["step"] == 7
