"""Loss assembly, Adam, learning-rate schedule and the training loop."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyDataset, InvalidConfig, NonFiniteLoss
from .heatmap import expected_coords, softmax2d
from .model import ModelConfig, TackModel, aggregate
from .rng import Rng
from .scene import MetaBatch, Mesh, SceneConfig, generate_meta_batch, pad_crop

LOSS_MODES = ("adapt", "auto", "both")
METRIC_COLUMNS = ("step", "adapt_loss", "auto_loss", "seg_loss", "rmse_adapt", "rmse_auto")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 32
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    w_adapt: float = 1.0
    w_auto: float = 1.0
    w_seg: float = 0.1
    loss: str = "both"
    n_cond: int = 3
    n_valid: int = 1
    augment_pad: int = 0
    seed: int = 0
    log_every: int = 1
    eval_every: int = 500
    eval_batches: int = 32
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.loss not in LOSS_MODES:
            raise InvalidConfig(f"unknown loss {self.loss!r}; expected one of {LOSS_MODES}")
        if self.steps <= 0 or self.batch_size <= 0:
            raise InvalidConfig("steps and batch_size must be positive")
        if min(self.w_adapt, self.w_auto, self.w_seg) < 0:
            raise InvalidConfig("loss weights must be >= 0")
        if self.n_cond < 1 or self.n_valid < 1:
            raise InvalidConfig("need n_cond >= 1 and n_valid >= 1")
        if self.augment_pad < 0:
            raise InvalidConfig("augment_pad must be >= 0")

    @property
    def weights(self) -> tuple[float, float, float]:
        """Effective (adapt, auto, seg) weights after applying the loss mode."""
        wa = self.w_adapt if self.loss in ("adapt", "both") else 0.0
        wu = self.w_auto if self.loss in ("auto", "both") else 0.0
        return wa, wu, self.w_seg

    def lr(self, step: int) -> float:
        """Linear decay from ``lr_start`` at step 0 to ``lr_end`` at the final step."""
        if self.steps == 1:
            return self.lr_start
        frac = min(max(step, 0), self.steps - 1) / (self.steps - 1)
        return self.lr_start + (self.lr_end - self.lr_start) * frac

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    adapt: float
    auto: float
    seg: float
    total: float
    rmse_adapt: float = math.nan
    rmse_auto: float = math.nan

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.adapt, self.auto, self.seg, self.total))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass
class _Stacked:
    cond_images: np.ndarray
    cond_targets: np.ndarray
    images: np.ndarray  # decoded views
    targets: np.ndarray
    masks: np.ndarray
    keypoints: np.ndarray
    groups: np.ndarray  # meta-batch index per decoded view
    is_valid: np.ndarray  # validation view (True) or conditioning view (False)


def _stack(batches: Sequence[MetaBatch], adapt: bool, auto: bool, seg_all: bool = False) -> _Stacked:
    L = batches[0].n_cond
    if any(mb.n_cond != L for mb in batches):
        raise InvalidConfig("all meta-batches in a step must share L")
    cond_i = np.concatenate([mb.images[:L] for mb in batches])
    cond_t = np.concatenate([mb.targets[:L] for mb in batches])[..., None]
    rows = []
    for g, mb in enumerate(batches):
        if auto or seg_all:
            rows += [(g, v, False) for v in range(L)]
        if adapt or seg_all:
            rows += [(g, v, True) for v in range(L, mb.n_views)]
    if not rows:
        return _Stacked(cond_i, cond_t, *(np.zeros(0),) * 6)
    imgs = np.stack([batches[g].images[v] for g, v, _ in rows])
    tgts = np.stack([batches[g].targets[v] for g, v, _ in rows])[..., None]
    masks = np.stack([batches[g].masks[v] for g, v, _ in rows])[..., None]
    kps = np.stack([batches[g].keypoints[v] for g, v, _ in rows])
    return _Stacked(cond_i, cond_t, imgs, tgts, masks, kps,
                    np.array([r[0] for r in rows]), np.array([r[2] for r in rows]))


def embed(model: TackModel, batches: Sequence[MetaBatch]) -> Tensor:
    """Aggregated task embedding per meta-batch, shape (B, K)."""
    L = batches[0].n_cond
    cond_i = np.concatenate([mb.images[:L] for mb in batches])
    cond_t = np.concatenate([mb.targets[:L] for mb in batches])[..., None]
    return aggregate(model.encode(cond_i, cond_t), groups=len(batches))


def forward_losses(model: TackModel, batches: Sequence[MetaBatch], weights=(1.0, 1.0, 0.1)):
    """Differentiable losses for a list of meta-batches.

    Returns ``(total, parts, kp_logits, stacked)`` where ``parts`` maps
    ``adapt``/``auto``/``seg`` to scalar tensors (``None`` when inactive).
    The adaptation term averages the validation-view KL over meta-batches,
    the autoencoder term sums the KL over the L conditioning views of a
    meta-batch and averages over meta-batches, and the segmentation term
    is the mean per-pixel BCE over every decoded view.
    """
    wa, wu, ws = weights
    adapt_on, auto_on = wa > 0, wu > 0
    B = len(batches)
    if B == 0:
        raise EmptyDataset("no meta-batches")
    st = _stack(batches, adapt_on, auto_on, seg_all=not (adapt_on or auto_on) and ws > 0)
    parts: dict[str, Tensor | None] = {"adapt": None, "auto": None, "seg": None}
    if len(st.images) == 0:
        zero = Tensor(np.zeros((), model.params["dec.stem.w"].dtype))
        return zero, parts, None, st
    c = aggregate(model.encode(st.cond_images, st.cond_targets), groups=B)
    kp, seg = model.decode(st.images, ad.take(c, st.groups))
    kl = ad.kl_pixels(st.targets, kp)
    terms = []
    valid_rows = np.flatnonzero(st.is_valid)
    cond_rows = np.flatnonzero(~st.is_valid)
    if adapt_on:
        parts["adapt"] = ad.mul(ad.sum(ad.take(kl, valid_rows)), 1.0 / len(valid_rows))
        terms.append(ad.mul(parts["adapt"], wa))
    if auto_on:
        parts["auto"] = ad.mul(ad.sum(ad.take(kl, cond_rows)), 1.0 / B)
        terms.append(ad.mul(parts["auto"], wu))
    parts["seg"] = ad.bce_with_logits(seg, st.masks)
    if ws > 0:
        terms.append(ad.mul(parts["seg"], ws))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total, parts, kp, st


def adaptation_loss(model: TackModel, mb: MetaBatch) -> Tensor:
    """KL between the validation target and the prediction conditioned on the L pairs."""
    return forward_losses(model, [mb], (1.0, 0.0, 0.0))[1]["adapt"]


def autoencoder_loss(model: TackModel, mb: MetaBatch) -> Tensor:
    """Sum over conditioning views of the KL of their own decodes under the shared embedding."""
    return forward_losses(model, [mb], (0.0, 1.0, 0.0))[1]["auto"]


def segmentation_loss(model: TackModel, mb: MetaBatch) -> Tensor:
    """Mean per-pixel BCE between predicted and rendered masks over all L + 1 views."""
    return forward_losses(model, [mb], (0.0, 0.0, 1.0))[1]["seg"]


def _rmse_rows(kp: np.ndarray, kps: np.ndarray, rows: np.ndarray) -> float:
    if len(rows) == 0:
        return math.nan
    pred = expected_coords(softmax2d(kp[rows, :, :, 0]))
    return float(np.sqrt(np.mean(np.sum((pred - kps[rows]) ** 2, axis=1))))


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction; state kept in the parameter dtype."""

    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            upd = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - upd.astype(p.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array([self.t], np.float32)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.m[k] = state[f"adam.m.{k}"].astype(self.params[k].dtype).copy()
            self.v[k] = state[f"adam.v.{k}"].astype(self.params[k].dtype).copy()
        self.t = int(state["adam.t"][0])


def train_step(model: TackModel, batches: Sequence[MetaBatch], cfg: TrainConfig, step: int, opt: Adam | None = None) -> LossBreakdown:
    """One optimisation step; returns the losses measured before the update."""
    if step >= cfg.steps:
        raise InvalidConfig(f"step {step} is past the configured {cfg.steps} steps")
    opt = opt or Adam(model.params, cfg.beta1, cfg.beta2, cfg.eps)
    ad.zero_grad(model.parameters())
    weights = cfg.weights
    total, parts, kp, st = forward_losses(model, batches, weights)
    vals = {k: (float(v.item()) if v is not None else 0.0) for k, v in parts.items()}
    wa, wu, ws = weights
    out = LossBreakdown(vals["adapt"], vals["auto"], vals["seg"], wa * vals["adapt"] + wu * vals["auto"] + ws * vals["seg"])
    if kp is not None:
        out.rmse_adapt = _rmse_rows(kp.data, st.keypoints, np.flatnonzero(st.is_valid))
        out.rmse_auto = _rmse_rows(kp.data, st.keypoints, np.flatnonzero(~st.is_valid))
    if not (out.is_finite() and math.isfinite(float(total.item()))):
        raise NonFiniteLoss(f"non-finite loss at step {step}: {out}")
    ad.backward(total)
    opt.step(cfg.lr(step))
    return out


# ---------------------------------------------------------------------------
# data sources
# ---------------------------------------------------------------------------


class OnlineSource:
    """Fresh procedural meta-batches; batch ``j`` of step ``s`` depends only on (seed, s, j)."""

    def __init__(self, objects: list[Mesh], scene: SceneConfig, seed: int, n_cond: int = 3, n_valid: int = 1, cams=None, threads: int = 1):
        if not objects:
            raise EmptyDataset("no objects to sample tasks from")
        self.objects, self.scene, self.seed = objects, scene, seed
        self.n_cond, self.n_valid, self.cams = n_cond, n_valid, cams
        self.threads = max(1, int(threads))

    def meta_batch(self, index: int) -> MetaBatch:
        return generate_meta_batch(self.seed, index, self.objects, self.scene, self.n_cond, self.n_valid, self.cams)

    def batch(self, step: int, size: int) -> list[MetaBatch]:
        idx = [step * size + j for j in range(size)]
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                return list(ex.map(self.meta_batch, idx))
        return [self.meta_batch(i) for i in idx]


class DatasetSource:
    """Stored meta-batches, visited in a seeded per-epoch permutation."""

    def __init__(self, batches: list[MetaBatch], seed: int = 0):
        if not batches:
            raise EmptyDataset("dataset holds no meta-batches")
        self.batches, self.seed = batches, seed

    def batch(self, step: int, size: int) -> list[MetaBatch]:
        n = len(self.batches)
        out = []
        for j in range(size):
            k = step * size + j
            perm = Rng.derive(self.seed, 0xE70C, k // n).permutation(n)
            out.append(self.batches[perm[k % n]])
        return out


def augment_batch(rng: Rng, mb: MetaBatch, pad: int) -> MetaBatch:
    """Independent random pad-and-crop per view; keypoints follow the shift."""
    if pad == 0:
        return mb
    V = mb.n_views
    offs = rng.integers(0, 2 * pad + 1, size=(V, 2))
    imgs = np.stack([pad_crop(mb.images[v], pad, offs[v]) for v in range(V)])
    tgts = np.stack([pad_crop(mb.targets[v], pad, offs[v]) for v in range(V)])
    masks = np.stack([pad_crop(mb.masks[v], pad, offs[v]) for v in range(V)])
    kps = mb.keypoints + pad - offs
    return MetaBatch(imgs, tgts, masks, mb.cameras, kps, mb.points_world, mb.poses, mb.n_cond, mb.task)


# ---------------------------------------------------------------------------
# evaluation during training
# ---------------------------------------------------------------------------


def regime_rmse(model: TackModel, batches: Sequence[MetaBatch], chunk: int = 8) -> tuple[float, float]:
    """(adaptation, autoencoder) RMS pixel errors with soft-argmax readout."""
    se_a, n_a, se_u, n_u = 0.0, 0, 0.0, 0
    with ad.no_grad():
        for i in range(0, len(batches), chunk):
            part = batches[i:i + chunk]
            st = _stack(part, True, True)
            c = embed(model, part)
            kp, _ = model.decode(st.images, ad.take(c, st.groups))
            pred = expected_coords(softmax2d(kp.data[..., 0].astype(np.float64)))
            d2 = np.sum((pred - st.keypoints) ** 2, axis=1)
            se_a += d2[st.is_valid].sum()
            n_a += int(st.is_valid.sum())
            se_u += d2[~st.is_valid].sum()
            n_u += int((~st.is_valid).sum())
    return math.sqrt(se_a / n_a), math.sqrt(se_u / n_u)


# ---------------------------------------------------------------------------
# checkpoints and run directories
# ---------------------------------------------------------------------------

CHECKPOINT_NAME = "model.ckpt"
MANIFEST_NAME = "manifest.json"
METRICS_NAME = "metrics.csv"


def save_run(out: Path, model: TackModel, opt: Adam | None, step: int, train_cfg: TrainConfig | None = None, extra: dict | None = None) -> None:
    """Write parameters (+ optimiser state) and a manifest carrying the model config."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    tensors = dict(model.state_dict())
    if opt is not None:
        tensors.update(opt.state_dict())
    tensors["train.step"] = np.array([step], np.float32)
    ad.write_checkpoint(out / CHECKPOINT_NAME, tensors)
    manifest = {"format": "tack-run", "step": step, "model": model.config.to_dict()}
    if train_cfg is not None:
        manifest["train"] = train_cfg.to_dict()
    if extra:
        manifest.update(extra)
    tmp = out / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(out / MANIFEST_NAME)


def load_run(path) -> tuple[TackModel, dict, dict[str, np.ndarray]]:
    """Model, manifest and raw tensors from a run directory or checkpoint file."""
    path = Path(path)
    ckpt = path / CHECKPOINT_NAME if path.is_dir() else path
    manifest = json.loads((ckpt.parent / MANIFEST_NAME).read_text())
    cfg = ModelConfig(**manifest["model"])
    tensors = ad.read_checkpoint(ckpt)
    model = TackModel.init(cfg, seed=0)
    model.load_state_dict(tensors)
    return model, manifest, tensors


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


@dataclass
class TrainResult:
    model: TackModel
    history: list[LossBreakdown] = field(default_factory=list)
    evals: list[tuple[int, float, float]] = field(default_factory=list)
    step: int = 0


def train_loop(
    model: TackModel,
    source,
    cfg: TrainConfig,
    out: Path | None = None,
    eval_batches: Sequence[MetaBatch] | None = None,
    eval_hook: Callable[[int, TackModel], None] | None = None,
    resume: bool = False,
    stop_at: int | None = None,
    progress: Callable[[int, LossBreakdown], None] | None = None,
    manifest_extra: dict | None = None,
) -> TrainResult:
    """Run ``cfg.steps`` optimisation steps (or until ``stop_at``).

    When ``out`` is given, a metrics CSV is appended every ``log_every``
    steps and a checkpoint written every ``checkpoint_every`` steps and at
    the end. Adaptation- and autoencoder-regime RMS on ``eval_batches`` is
    logged every ``eval_every`` steps and at the final step.
    """
    opt = Adam(model.params, cfg.beta1, cfg.beta2, cfg.eps)
    start = 0
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
    if resume:
        if out is None or not (out / CHECKPOINT_NAME).exists():
            raise FileNotFoundError("nothing to resume from")
        tensors = ad.read_checkpoint(out / CHECKPOINT_NAME)
        model.load_state_dict(tensors)
        opt.load_state_dict(tensors)
        start = int(tensors["train.step"][0])
        _truncate_metrics(out / METRICS_NAME, start)
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    result = TrainResult(model, step=start)
    writer_file = None
    if out is not None:
        path = out / METRICS_NAME
        fresh = not path.exists() or path.stat().st_size == 0 or not resume
        writer_file = open(path, "w" if fresh else "a", newline="")
        if fresh:
            writer_file.write(",".join(METRIC_COLUMNS) + "\n")
    try:
        for step in range(start, end):
            batch = source.batch(step, cfg.batch_size)
            if cfg.augment_pad:
                batch = [augment_batch(Rng.derive(cfg.seed, 0xA06, step, j), mb, cfg.augment_pad) for j, mb in enumerate(batch)]
            lb = train_step(model, batch, cfg, step, opt)
            result.history.append(lb)
            result.step = step + 1
            last = step + 1 == end
            ra = ru = math.nan
            if eval_batches and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps):
                ra, ru = regime_rmse(model, eval_batches)
                result.evals.append((step + 1, ra, ru))
            if eval_hook is not None and ((step + 1) % cfg.eval_every == 0 or last):
                eval_hook(step + 1, model.snapshot())
            if writer_file is not None and ((step + 1) % cfg.log_every == 0 or last or not math.isnan(ra)):
                row = [str(step + 1), _fmt(lb.adapt), _fmt(lb.auto), _fmt(lb.seg), _fmt(ra), _fmt(ru)]
                writer_file.write(",".join(row) + "\n")
                writer_file.flush()
            if out is not None and ((step + 1) % cfg.checkpoint_every == 0 or last):
                save_run(out, model, opt, step + 1, cfg, manifest_extra)
            if progress is not None:
                progress(step + 1, lb)
    finally:
        if writer_file is not None:
            writer_file.close()
    return result


def _truncate_metrics(path: Path, step: int) -> None:
    """Drop metric rows logged after ``step`` so a resumed run appends cleanly."""
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    if not lines:
        return
    keep = [lines[0]] + [ln for ln in lines[1:] if ln.strip() and int(ln.split(",", 1)[0]) <= step]
    path.write_text("".join(keep))


def read_metrics(path) -> list[dict[str, float]]:
    rows = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.append({k: (float(v) if v != "" else math.nan) for k, v in r.items()})
    return rows
