"""Error reports, annotation sweeps, off-surface analysis, visualisations and baselines."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Tensor
from .errors import EmptyDataset, InvalidConfig, KTooSmall
from .geometry import Camera
from .heatmap import expected_coords, make_target, softmax2d
from .model import ModelConfig, SupervisedModel, TackModel
from .rng import Rng
from .scene import (
    KeypointTask,
    MetaBatch,
    Mesh,
    SceneConfig,
    build_meta_batch,
    render,
    sample_offsurface_point,
    sample_surface_point,
)
from .training import Adam, TrainConfig, _stack, embed, train_loop

REGIMES = ("adaptation", "autoencoder")


@dataclass
class EvalReport:
    """RMS pixel error per condition together with sample counts and a config echo."""

    conditions: list[str]
    rmse: list[float]
    counts: list[int]
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(c <= 0 for c in self.counts):
            raise EmptyDataset("every condition needs at least one sample")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.conditions, self.rmse))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["condition", "rmse", "count"])
            for c, r, n in zip(self.conditions, self.rmse, self.counts):
                w.writerow([c, repr(float(r)), n])


def soft_argmax_batch(logits: np.ndarray) -> np.ndarray:
    """(N, H, W[, 1]) logits -> (N, 2) expected pixel coordinates."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim == 4:
        x = x[..., 0]
    return expected_coords(softmax2d(x))


def _decode_coords(model: TackModel, images: np.ndarray, c: np.ndarray, chunk: int = 32) -> np.ndarray:
    out = []
    with ad.no_grad():
        for i in range(0, len(images), chunk):
            kp, _ = model.decode(images[i:i + chunk], c[i:i + chunk])
            out.append(soft_argmax_batch(kp.data))
    return np.concatenate(out) if out else np.zeros((0, 2))


def _embed_np(model: TackModel, images: np.ndarray, targets: np.ndarray, chunk: int = 32) -> np.ndarray:
    """Per-pair embeddings (N, K) without graph recording."""
    out = []
    with ad.no_grad():
        for i in range(0, len(images), chunk):
            t = targets[i:i + chunk]
            out.append(model.encode(images[i:i + chunk], t[..., None] if t.ndim == 3 else t).data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, model.config.embedding_size))


# ---------------------------------------------------------------------------
# RMS reports
# ---------------------------------------------------------------------------


def regime_errors(model: TackModel, batches: Sequence[MetaBatch], regime: str, chunk: int = 8) -> np.ndarray:
    """Squared pixel errors of every scored view under ``regime``."""
    if regime not in REGIMES:
        raise InvalidConfig(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if len(batches) == 0:
        raise EmptyDataset("evaluation needs at least one meta-batch")
    adapt = regime == "adaptation"
    errs = []
    with ad.no_grad():
        for i in range(0, len(batches), chunk):
            part = list(batches[i:i + chunk])
            st = _stack(part, adapt, not adapt)
            c = embed(model, part).data
            pred = _decode_coords(model, st.images, c[st.groups])
            errs.append(np.sum((pred - st.keypoints) ** 2, axis=1))
    return np.concatenate(errs)


def eval_rmse(model: TackModel, batches: Sequence[MetaBatch], regime: str = "adaptation") -> EvalReport:
    """RMS soft-argmax error on validation views (adaptation) or conditioning views (autoencoder)."""
    d2 = regime_errors(model, batches, regime)
    return EvalReport([regime], [float(np.sqrt(d2.mean()))], [len(d2)], {"model": model.config.to_dict(), "meta_batches": len(batches)})


def uniform_baseline_rmse(width: int, height: int) -> float:
    """Expected RMS error of always predicting the image centre for uniformly placed keypoints."""
    return math.sqrt((width**2 - 1) / 12.0 + (height**2 - 1) / 12.0)


# ---------------------------------------------------------------------------
# number of annotations
# ---------------------------------------------------------------------------


def annotation_sweep(model: TackModel, batches: Sequence[MetaBatch], counts: Sequence[int] = tuple(range(1, 17)), test_views: int = 4) -> list[tuple[int, float]]:
    """Mean per-task RMS on ``test_views`` held-out views versus the number of annotations.

    Every meta-batch supplies ``max(counts)`` conditioning pairs followed by
    at least ``test_views`` held-out views; the embedding for ``n`` is the
    mean over the first ``n`` pairs.
    """
    if len(batches) == 0:
        raise EmptyDataset("annotation sweep needs tasks")
    counts = list(counts)
    nmax = max(counts)
    per_task = np.zeros((len(batches), len(counts)))
    for t, mb in enumerate(batches):
        if mb.n_cond < nmax or mb.n_views - mb.n_cond < test_views:
            raise InvalidConfig(f"task {t} has {mb.n_cond} annotations / {mb.n_views - mb.n_cond} test views")
        e = _embed_np(model, mb.images[:nmax], mb.targets[:nmax])
        test = slice(mb.n_cond, mb.n_cond + test_views)
        cs = np.stack([e[:n].mean(axis=0) for n in counts])
        imgs = np.repeat(mb.images[test][None], len(counts), axis=0).reshape((-1,) + mb.images.shape[1:])
        cc = np.repeat(cs, test_views, axis=0)
        pred = _decode_coords(model, imgs, cc.astype(model.params["dec.stem.w"].dtype)).reshape(len(counts), test_views, 2)
        per_task[t] = np.sqrt(np.mean(np.sum((pred - mb.keypoints[test][None]) ** 2, axis=-1), axis=1))
    return [(n, float(per_task[:, i].mean())) for i, n in enumerate(counts)]


def sweep_tasks(seed: int, n_tasks: int, objects: list[Mesh], scene: SceneConfig, n_annotations: int = 16, test_views: int = 4, cams=None) -> list[MetaBatch]:
    """Tasks with ``n_annotations`` conditioning views and ``test_views`` held-out views each."""
    out = []
    for i in range(n_tasks):
        rng = Rng.derive(seed, 0x5EE9, i)
        mesh = objects[rng.integers(len(objects))]
        x = sample_surface_point(rng, mesh)
        if scene.offsurface_sigma > 0:
            x = sample_offsurface_point(rng, x, scene.offsurface_sigma)
        task = KeypointTask(mesh, x, scene.offsurface_sigma == 0, geo.random_quaternion(rng))
        out.append(build_meta_batch(rng, task, cams or [scene.camera()], n_annotations, scene, test_views))
    return out


# ---------------------------------------------------------------------------
# closest-point oracle and off-surface evaluation
# ---------------------------------------------------------------------------


def closest_points_on_triangles(p, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Exact closest point to ``p`` on each triangle (a[i], b[i], c[i]) via Voronoi-region tests."""
    p = np.asarray(p, dtype=np.float64)
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    dot = lambda x, y: np.einsum("ij,ij->i", x, y)  # noqa: E731
    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_in, w_in = vb / denom, vc / denom
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    conds = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    choices = [
        a, b,
        a + ab * np.nan_to_num(t_ab)[:, None],
        c,
        a + ac * np.nan_to_num(t_ac)[:, None],
        b + (c - b) * np.nan_to_num(t_bc)[:, None],
    ]
    interior = a + ab * np.nan_to_num(v_in)[:, None] + ac * np.nan_to_num(w_in)[:, None]
    out = interior
    for cond, choice in zip(reversed(conds), reversed(choices)):
        out = np.where(cond[:, None], choice, out)
    return out


def closest_surface_point(corners: np.ndarray, x) -> tuple[np.ndarray, float]:
    """Nearest point on a triangle soup (T, 3, 3) and its distance."""
    q = closest_points_on_triangles(x, corners[:, 0], corners[:, 1], corners[:, 2])
    d = np.linalg.norm(q - np.asarray(x, dtype=np.float64), axis=1)
    i = int(np.argmin(d))
    return q[i], float(d[i])


def closest_point_oracle(mesh: Mesh, pose: np.ndarray, x_off, cams: Sequence[Camera]) -> tuple[np.ndarray, list[tuple[float, float]]]:
    """Snap a world-space query to the posed mesh surface and project the result into every camera."""
    corners = mesh.corners @ pose[:3, :3].T + pose[:3, 3]
    q, _ = closest_surface_point(corners, x_off)
    return q, [geo.project(cam, q) for cam in cams]


def distance_buckets(max_cm: int = 12) -> list[tuple[float, float]]:
    return [(i / 100.0, (i + 1) / 100.0) for i in range(max_cm)]


@dataclass
class OffsurfaceTable:
    buckets: list[tuple[float, float]]
    counts: list[int]
    model_rmse: list[float]
    oracle_rmse: list[float]
    distances: np.ndarray  # per query, metres
    model_err: np.ndarray  # per query, pixels
    oracle_err: np.ndarray

    def rows(self) -> list[tuple]:
        return list(zip(self.buckets, self.counts, self.model_rmse, self.oracle_rmse))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["dist_lo_m", "dist_hi_m", "count", "rmse_model", "rmse_oracle"])
            for (lo, hi), n, m, o in self.rows():
                w.writerow([lo, hi, n, "" if math.isnan(m) else repr(m), "" if math.isnan(o) else repr(o)])


def offsurface_eval(
    model: TackModel,
    objects: Sequence[Mesh],
    scene: SceneConfig,
    sigma: float = 0.05,
    points_per_object: int = 3000,
    seed: int = 0,
    L: int = 3,
    cams=None,
    max_cm: int = 12,
) -> OffsurfaceTable:
    """Track Gaussian-displaced surface points and compare with the closest-point oracle.

    Every query is a task conditioned on ``L`` annotated views and scored on
    one held-out view; the oracle snaps the query to the nearest surface point
    in that view's object pose. Errors are bucketed by surface distance.
    """
    if not objects:
        raise EmptyDataset("no evaluation objects")
    scene = replace(scene, offsurface_sigma=sigma)
    dist, merr, oerr = [], [], []
    for oi, mesh in enumerate(objects):
        batches = []
        for k in range(points_per_object):
            rng = Rng.derive(seed, 0x0FF5, oi, k)
            x = sample_offsurface_point(rng, sample_surface_point(rng, mesh), sigma)
            task = KeypointTask(mesh, x, sigma == 0, geo.random_quaternion(rng))
            batches.append(build_meta_batch(rng, task, cams or [scene.camera()], L, scene, 1))
        d2 = regime_errors(model, batches, "adaptation")
        merr.append(np.sqrt(d2))
        for mb in batches:
            _, d = closest_surface_point(mesh.corners, mb.task.point)
            cam, pose = mb.cameras[L], mb.poses[L]
            _, pix = closest_point_oracle(mesh, pose, mb.points_world[L], [cam])
            dist.append(d)
            oerr.append(float(np.hypot(*(np.asarray(pix[0]) - mb.keypoints[L]))))
    dist, merr, oerr = np.asarray(dist), np.concatenate(merr), np.asarray(oerr)
    buckets = distance_buckets(max_cm)
    counts, mr, orr = [], [], []
    for lo, hi in buckets:
        sel = (dist >= lo) & (dist < hi)
        counts.append(int(sel.sum()))
        mr.append(float(np.sqrt(np.mean(merr[sel] ** 2))) if sel.any() else math.nan)
        orr.append(float(np.sqrt(np.mean(oerr[sel] ** 2))) if sel.any() else math.nan)
    return OffsurfaceTable(buckets, counts, mr, orr, dist, merr, oerr)


# ---------------------------------------------------------------------------
# embedding space
# ---------------------------------------------------------------------------


def interpolate_embeddings(model: TackModel, image: np.ndarray, c_start, c_end, steps: int) -> np.ndarray:
    """Soft-argmax detections along the straight line from ``c_start`` to ``c_end``: (steps, 2)."""
    if steps < 2:
        raise InvalidConfig("interpolation needs at least 2 steps")
    a, b = np.asarray(c_start, np.float64), np.asarray(c_end, np.float64)
    ts = np.linspace(0.0, 1.0, steps)
    cs = (1 - ts)[:, None] * a + ts[:, None] * b
    imgs = np.repeat(np.asarray(image)[None], steps, axis=0)
    return _decode_coords(model, imgs, cs.astype(model.params["dec.stem.w"].dtype))


def embedding_image(model: TackModel, image: np.ndarray, sigma: float = 2.0, chunk: int = 64) -> np.ndarray:
    """Per-pixel embeddings (first three dims) as an RGB image, min-max normalised per channel."""
    K = model.config.embedding_size
    if K < 3:
        raise KTooSmall(f"embedding size {K} < 3 cannot be shown as RGB")
    h, w = image.shape[:2]
    dt = model.params["dec.stem.w"].dtype
    emb = np.zeros((h * w, 3))
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    pix = np.stack([us.ravel(), vs.ravel()], axis=1)
    with ad.no_grad():
        for i in range(0, h * w, chunk):
            p = pix[i:i + chunk]
            tg = np.stack([make_target(q, sigma, (w, h)) for q in p]).astype(dt)[..., None]
            imgs = np.repeat(np.asarray(image, dt)[None], len(p), axis=0)
            emb[i:i + len(p)] = model.encode(imgs, tg).data[:, :3]
    return normalize_channels(emb.reshape(h, w, 3))


def normalize_channels(x: np.ndarray) -> np.ndarray:
    """Per-channel min-max scaling to [0, 1]; channels without range map to 0.5."""
    lo = x.min(axis=(0, 1), keepdims=True)
    hi = x.max(axis=(0, 1), keepdims=True)
    rng = hi - lo
    out = np.where(rng > 0, (x - lo) / np.where(rng > 0, rng, 1.0), 0.5)
    return out


def _soft_argmax_tensor(logits: Tensor) -> tuple[Tensor, Tensor]:
    n, h, w, _ = logits.shape
    p = ad.pixel_softmax(logits)
    gu = np.broadcast_to(np.arange(w, dtype=logits.dtype)[None, None, :, None], logits.shape)
    gv = np.broadcast_to(np.arange(h, dtype=logits.dtype)[None, :, None, None], logits.shape)
    return ad.sum(ad.mul(p, Tensor(gu))), ad.sum(ad.mul(p, Tensor(gv)))


def saliency_gradients(model: TackModel, image: np.ndarray, cond, mode: str) -> np.ndarray:
    """Signed input gradients in double precision.

    Encoder mode: ``cond`` is a target heatmap; returns (3, H, W, 3) holding
    d c_k / d image for k = 0..2. Decoder mode: ``cond`` is an embedding;
    returns (2, H, W, 3) holding the gradients of the soft-argmax u and v.
    """
    m = model.astype(np.float64)
    for t in m.parameters():
        t.requires_grad = False
    grads = []
    if mode == "encoder":
        n_out = min(3, m.config.embedding_size)
        for k in range(n_out):
            x = Tensor(np.asarray(image, np.float64)[None], True)
            tg = np.asarray(cond, np.float64)[None, ..., None]
            c = m.encode(x, tg)
            ad.backward(ad.sum(ad.take(ad.reshape(c, (-1,)), [k])))
            grads.append(x.grad[0])
    elif mode == "decoder":
        c = np.asarray(cond, np.float64).reshape(1, -1)
        for k in range(2):
            x = Tensor(np.asarray(image, np.float64)[None], True)
            kp, _ = m.decode(x, c)
            ad.backward(_soft_argmax_tensor(kp)[k])
            grads.append(x.grad[0])
    else:
        raise InvalidConfig(f"unknown saliency mode {mode!r}")
    return np.stack(grads)


def saliency(model: TackModel, image: np.ndarray, cond, mode: str = "decoder") -> np.ndarray:
    """Gradient-magnitude image: encoder mode gives 3 channels, decoder mode 2 (u -> R, v -> G)."""
    g = saliency_gradients(model, image, cond, mode)
    mag = np.sqrt(np.sum(g**2, axis=-1))  # (C, H, W)
    peak = mag.reshape(len(mag), -1).max(axis=1)
    mag = np.where(peak[:, None, None] > 0, mag / np.where(peak > 0, peak, 1.0)[:, None, None], 0.0)
    return np.moveaxis(mag, 0, -1)


# ---------------------------------------------------------------------------
# triangulation baseline
# ---------------------------------------------------------------------------


def weighted_ls_triangulate(cams: Sequence[Camera], heatmaps: Sequence[np.ndarray]) -> np.ndarray:
    """Least-squares ray intersection weighted by the inverse spatial variance of each heatmap."""
    if len(cams) < 2 or len(cams) != len(heatmaps):
        raise InvalidConfig("need >= 2 cameras with one heatmap each")
    rays, weights = [], []
    for cam, hm in zip(cams, heatmaps):
        rays.append(geo.pixel_ray(cam, geo.soft_argmax(hm)))
        weights.append(1.0 / max(geo.heatmap_variance(hm), 1e-12))
    return geo.triangulate_weighted(rays, weights)


# ---------------------------------------------------------------------------
# sweep harnesses and the sparse-keypoint comparison
# ---------------------------------------------------------------------------


def run_sweep(
    param: str,
    values: Sequence,
    objects: list[Mesh],
    scene: SceneConfig,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2),
    eval_batches: int = 32,
    csv_path=None,
) -> list[dict]:
    """Train one model per (value, seed) with ``model_cfg.<param> = value`` and report both regimes."""
    from .training import OnlineSource

    if param not in ModelConfig.__dataclass_fields__:
        raise InvalidConfig(f"cannot sweep unknown model field {param!r}")
    evsrc = OnlineSource(objects, scene, seed=0x7E57, n_cond=train_cfg.n_cond)
    evb = [evsrc.meta_batch(i) for i in range(eval_batches)]
    rows = []
    for value in values:
        for seed in seeds:
            mc = replace(model_cfg, **{param: value})
            tc = replace(train_cfg, seed=seed)
            model = TackModel.init(mc, seed)
            train_loop(model, OnlineSource(objects, scene, seed, tc.n_cond), tc)
            ra = eval_rmse(model, evb, "adaptation").rmse[0]
            ru = eval_rmse(model, evb, "autoencoder").rmse[0]
            rows.append({"param": param, "value": value, "seed": seed, "rmse_adapt": ra, "rmse_auto": ru})
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            w = csv.DictWriter(f, ["param", "value", "seed", "rmse_adapt", "rmse_auto"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return rows


def keypoint_set(mesh: Mesh, n: int, candidates: int = 2000, seed: int = 0) -> np.ndarray:
    """``n`` well-spread object-frame keypoints: farthest-point subsample of dense surface samples."""
    from .scene import sample_surface_points

    pts, _ = sample_surface_points(Rng.derive(seed, 0xF95), mesh, candidates)
    return geo.farthest_point_sample(pts, n)


@dataclass
class SparseView:
    image: np.ndarray
    targets: np.ndarray  # (n, H, W)
    keypoints: np.ndarray  # (n, 2)


def render_keypoint_views(mesh: Mesh, keypoints: np.ndarray, scene: SceneConfig, count: int, seed: int) -> list[SparseView]:
    """Views of one object with all fixed keypoints projected; poses as in task sampling."""
    cam = scene.camera()
    box = geo.TranslationBox.for_camera(cam, mesh.size(), scene.span, scene.lateral)
    out = []
    for i in range(count):
        rng = Rng.derive(seed, 0x5A45, i)
        q, t = geo.sample_task_pose(rng, geo.random_quaternion(rng), scene.pose_std, in_plane_range=scene.in_plane_range, box=box, cam=cam)
        pose = cam.world_from_cam @ geo.pose_matrix(q, t)
        kw = keypoints @ pose[:3, :3].T + pose[:3, 3]
        uv, _ = geo.project_points(cam, kw)
        res = render(mesh, pose, cam)
        tg = np.stack([make_target(p, scene.sigma, (scene.width, scene.height)) for p in uv]).astype(np.float32)
        out.append(SparseView(res.image, tg, uv))
    return out


def train_supervised(model: SupervisedModel, views: list[SparseView], steps: int, batch: int = 4, lr: float = 1e-3, seed: int = 0) -> None:
    """KL training of the fixed-keypoint baseline, one heatmap channel per keypoint."""
    opt = Adam(model.params)
    for s in range(steps):
        idx = Rng.derive(seed, 0x5B, s).integers(0, len(views), size=batch)
        imgs = np.stack([views[i].image for i in idx])
        tg = np.stack([np.moveaxis(views[i].targets, 0, -1) for i in idx])
        logits = model.forward(imgs)
        loss = ad.mul(ad.mean(ad.kl_pixels(tg, logits)), 1.0 / logits.shape[-1])
        ad.zero_grad(model.parameters())
        ad.backward(loss)
        opt.step(lr)


def supervised_errors(model: SupervisedModel, views: list[SparseView]) -> np.ndarray:
    errs = []
    with ad.no_grad():
        for v in views:
            logits = model.forward(v.image[None]).data[0]  # (H, W, n)
            pred = soft_argmax_batch(np.moveaxis(logits, -1, 0))
            errs.append(np.sum((pred - v.keypoints) ** 2, axis=1))
    return np.concatenate(errs)


def tack_sparse_errors(model: TackModel, mesh: Mesh, keypoints: np.ndarray, scene: SceneConfig, seed: int, L: int = 3, per_keypoint: int = 8) -> np.ndarray:
    """Adaptation-regime squared errors of a TACK model on a fixed keypoint set."""
    batches = []
    for j, x in enumerate(keypoints):
        for r in range(per_keypoint):
            rng = Rng.derive(seed, 0x7AC, j, r)
            task = KeypointTask(mesh, np.asarray(x), True, geo.random_quaternion(rng))
            batches.append(build_meta_batch(rng, task, [scene.camera()], L, scene, 1))
    return regime_errors(model, batches, "adaptation")


class FixedKeypointSource:
    """Training tasks restricted to a fixed keypoint set (the subset-trained TACK variant)."""

    def __init__(self, mesh: Mesh, keypoints: np.ndarray, scene: SceneConfig, seed: int, n_cond: int = 3):
        self.mesh, self.keypoints, self.scene, self.seed, self.n_cond = mesh, keypoints, scene, seed, n_cond

    def batch(self, step: int, size: int) -> list[MetaBatch]:
        out = []
        for j in range(size):
            rng = Rng.derive(self.seed, step * size + j)
            x = self.keypoints[rng.integers(len(self.keypoints))]
            task = KeypointTask(self.mesh, np.asarray(x), True, geo.random_quaternion(rng))
            out.append(build_meta_batch(rng, task, [self.scene.camera()], self.n_cond, self.scene, 1))
        return out


def compare_sparse_methods(
    mesh: Mesh,
    scene: SceneConfig,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    n_keypoints: int = 8,
    train_views: int = 200,
    test_views: int = 16,
    seed: int = 0,
    full_model: TackModel | None = None,
) -> EvalReport:
    """RMS on a farthest-point keypoint set for the supervised baseline, subset-trained TACK and (optionally) full TACK."""
    from .training import OnlineSource

    kps = keypoint_set(mesh, n_keypoints, seed=seed)
    train = render_keypoint_views(mesh, kps, scene, train_views, seed)
    test = render_keypoint_views(mesh, kps, scene, test_views, seed + 1)

    sup = SupervisedModel.init(model_cfg, n_keypoints, seed)
    train_supervised(sup, train, train_cfg.steps, train_cfg.batch_size, lr=train_cfg.lr_start, seed=seed)
    e_sup = supervised_errors(sup, test)

    subset = TackModel.init(model_cfg, seed)
    train_loop(subset, FixedKeypointSource(mesh, kps, scene, seed, train_cfg.n_cond), train_cfg)
    e_sub = tack_sparse_errors(subset, mesh, kps, scene, seed + 1, train_cfg.n_cond, max(1, test_views // 2))

    names, rms, counts = ["supervised", "subset_tack"], [e_sup, e_sub], []
    if full_model is None:
        full_model = TackModel.init(model_cfg, seed)
        train_loop(full_model, OnlineSource([mesh], scene, seed, train_cfg.n_cond), train_cfg)
    e_full = tack_sparse_errors(full_model, mesh, kps, scene, seed + 1, train_cfg.n_cond, max(1, test_views // 2))
    names.append("tack")
    rms.append(e_full)
    counts = [len(e) for e in rms]
    return EvalReport(names, [float(np.sqrt(e.mean())) for e in rms], counts, {"n_keypoints": n_keypoints, "seed": seed})
