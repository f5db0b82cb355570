"""Task encoder, conditioned residual U-Net decoder and the supervised sparse baseline.

All image tensors are channel-last ``(N, H, W, C)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyInput, InvalidConfig, ShapeMismatch, UnknownMode
from .rng import Rng

MODES = ("concat", "gate", "film")


@dataclass(frozen=True)
class ModelConfig:
    embedding_size: int = 4
    depth: int = 4
    mode: str = "film"
    base_width: int = 32
    max_width: int = 256
    mlp_hidden: int = 64
    image_channels: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise UnknownMode(f"unknown conditioning mode {self.mode!r}; expected one of {MODES}")
        if self.depth < 1 or self.embedding_size < 1 or self.base_width < 1:
            raise InvalidConfig("depth, embedding_size and base_width must be >= 1")

    def widths(self) -> list[int]:
        return [min(self.base_width * 2**i, self.max_width) for i in range(self.depth + 1)]

    def to_dict(self) -> dict:
        return asdict(self)


def _he_uniform(rng: Rng, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _ParamBuilder:
    def __init__(self, rng: Rng, dtype):
        self.rng, self.dtype = rng, dtype
        self.params: dict[str, Tensor] = {}

    def conv(self, name: str, cin: int, cout: int, k: int = 3):
        self.params[f"{name}.w"] = Tensor(_he_uniform(self.rng, (k, k, cin, cout), k * k * cin, self.dtype), True, f"{name}.w")
        self.params[f"{name}.b"] = Tensor(np.zeros(cout, self.dtype), True, f"{name}.b")

    def linear(self, name: str, cin: int, cout: int, weight=None, bias=None):
        w = _he_uniform(self.rng, (cin, cout), cin, self.dtype) if weight is None else np.full((cin, cout), weight, self.dtype)
        b = np.zeros(cout, self.dtype) if bias is None else np.full(cout, bias, self.dtype)
        self.params[f"{name}.w"] = Tensor(w, True, f"{name}.w")
        self.params[f"{name}.b"] = Tensor(b, True, f"{name}.b")

    def resblock(self, name: str, ch: int):
        self.conv(f"{name}.c1", ch, ch)
        self.conv(f"{name}.c2", ch, ch)


def _conv(p, name, x, stride=1):
    return ad.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride)


def _lin(p, name, x):
    return ad.linear(x, p[f"{name}.w"], p[f"{name}.b"])


def _resblock(p, name, x):
    r = _conv(p, f"{name}.c1", ad.relu(x))
    r = _conv(p, f"{name}.c2", ad.relu(r))
    return ad.add(x, r)


def _check_image(x: Tensor, depth: int, channels: int | None = None):
    if x.data.ndim != 4:
        raise ShapeMismatch(f"expected (N, H, W, C) image, got {x.shape}")
    _, h, w, c = x.shape
    if h % 2**depth or w % 2**depth:
        raise ShapeMismatch(f"spatial size {h}x{w} must be divisible by 2^{depth}")
    if channels is not None and c != channels:
        raise ShapeMismatch(f"expected {channels} channels, got {c}")


class TackModel:
    """Encoder + conditioned decoder sharing one flat parameter dictionary."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "TackModel":
        b = _ParamBuilder(Rng.derive(seed, 0x5EED), dtype)
        ws, K, D = config.widths(), config.embedding_size, config.depth
        b.conv("enc.stem", config.image_channels + 1, ws[0])
        for i in range(1, D + 1):
            b.resblock(f"enc.s{i}.res", ws[i - 1])
            b.conv(f"enc.s{i}.down", ws[i - 1], ws[i])
        b.linear("enc.mlp1", ws[D], config.mlp_hidden)
        b.linear("enc.mlp2", config.mlp_hidden, K)
        _build_decoder(b, config, conditioned=True, n_out=1, seg_head=True)
        return cls(config, b.params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(np.sum([t.data.size for t in self.params.values()]))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            if k not in state:
                raise ShapeMismatch(f"checkpoint lacks parameter {k!r}")
            if state[k].shape != t.shape:
                raise ShapeMismatch(f"{k}: checkpoint {state[k].shape} vs model {t.shape}")
            t.data = np.asarray(state[k], dtype=t.dtype).copy()

    def snapshot(self) -> "TackModel":
        """Detached copy of the parameters, safe to evaluate while training continues."""
        return TackModel(self.config, {k: Tensor(v.data.copy(), False, k) for k, v in self.params.items()})

    def astype(self, dtype) -> "TackModel":
        return TackModel(self.config, {k: Tensor(v.data.astype(dtype), v.requires_grad, k) for k, v in self.params.items()})

    # -- encoder ---------------------------------------------------------

    def encode(self, image, target, probe: dict | None = None) -> Tensor:
        """Embedding per (image, target) pair: (N, H, W, 3) + (N, H, W, 1) -> (N, K).

        When ``probe`` is a dict, the feature map entering the spatial max is
        stored under ``probe["pre_max"]``.
        """
        p, D = self.params, self.config.depth
        image, target = ad._as_tensor(image), ad._as_tensor(target)
        _check_image(image, D, self.config.image_channels)
        if target.data.ndim == 3:
            target = ad.reshape(target, target.shape + (1,))
        if target.shape[:3] != image.shape[:3] or target.shape[3] != 1:
            raise ShapeMismatch(f"target {target.shape} does not match image {image.shape}")
        h = _conv(p, "enc.stem", ad.concat([image, target]))
        for i in range(1, D + 1):
            h = _resblock(p, f"enc.s{i}.res", h)
            h = _conv(p, f"enc.s{i}.down", ad.relu(h), stride=2)
        if probe is not None:
            probe["pre_max"] = h
        h = ad.spatial_max(h)
        h = ad.relu(_lin(p, "enc.mlp1", h))
        return _lin(p, "enc.mlp2", h)

    # -- decoder ---------------------------------------------------------

    def decode(self, image, c) -> tuple[Tensor, Tensor]:
        """Keypoint and segmentation logits, each (N, H, W, 1), conditioned on embeddings ``c`` (N, K)."""
        image, c = ad._as_tensor(image), ad._as_tensor(c)
        _check_image(image, self.config.depth, self.config.image_channels)
        if c.shape != (image.shape[0], self.config.embedding_size):
            raise ShapeMismatch(f"embedding {c.shape} vs batch {image.shape[0]} x K={self.config.embedding_size}")
        return _decoder_forward(self.params, self.config, image, c, self.config.mode, seg_head=True)


def aggregate(embeddings: Tensor, groups: int | None = None) -> Tensor:
    """Mean embedding. ``(L, K) -> (1, K)``, or ``(G*L, K) -> (G, K)`` when ``groups`` is given."""
    e = ad._as_tensor(embeddings)
    if e.data.ndim != 2 or e.shape[0] == 0:
        raise EmptyInput("aggregate needs at least one embedding")
    g = 1 if groups is None else groups
    if e.shape[0] % g:
        raise ShapeMismatch(f"{e.shape[0]} embeddings do not split into {g} groups")
    return ad.mean(ad.reshape(e, (g, e.shape[0] // g, e.shape[1])), axis=1)


def aggregate_numpy(embeddings: Sequence[np.ndarray]) -> np.ndarray:
    if len(embeddings) == 0:
        raise EmptyInput("aggregate needs at least one embedding")
    return np.mean(np.stack([np.asarray(e) for e in embeddings]), axis=0)


# ---------------------------------------------------------------------------
# shared U-Net trunk
# ---------------------------------------------------------------------------


def _cond_names(depth: int) -> list[str]:
    return [f"dec.down{i}" for i in range(1, depth + 1)] + [f"dec.up{i}" for i in range(depth, 0, -1)]


def _build_decoder(b: _ParamBuilder, config: ModelConfig, conditioned: bool, n_out: int, seg_head: bool):
    ws, K, D = config.widths(), config.embedding_size, config.depth
    mode = config.mode if conditioned else None
    in_ch = config.image_channels + (K if mode == "concat" else 0)
    b.conv("dec.stem", in_ch, ws[0])
    for i in range(1, D + 1):
        b.conv(f"dec.down{i}.conv", ws[i - 1], ws[i])
        b.resblock(f"dec.down{i}.res", ws[i])
    for i in range(D, 0, -1):
        b.conv(f"dec.up{i}.conv", ws[i] + ws[i - 1], ws[i - 1])
        b.resblock(f"dec.up{i}.res", ws[i - 1])
    b.conv("dec.head_kp", ws[0], n_out)
    if seg_head:
        b.conv("dec.head_seg", ws[0], 1)
    if mode in ("gate", "film"):
        chans = [ws[i] for i in range(1, D + 1)] + [ws[i - 1] for i in range(D, 0, -1)]
        for name, ch in zip(_cond_names(D), chans):
            if mode == "gate":
                b.linear(f"{name}.gate", K, ch)
            else:
                # identity start: scale 1, shift 0 for every embedding
                b.linear(f"{name}.film_scale", K, ch, weight=0.0, bias=1.0)
                b.linear(f"{name}.film_shift", K, ch, weight=0.0, bias=0.0)


def _condition(p, name: str, mode: str | None, h: Tensor, c: Tensor | None) -> Tensor:
    if mode == "gate":
        return ad.scale_shift(h, ad.sigmoid(_lin(p, f"{name}.gate", c)))
    if mode == "film":
        return ad.scale_shift(h, _lin(p, f"{name}.film_scale", c), _lin(p, f"{name}.film_shift", c))
    return h


def _decoder_forward(p, config: ModelConfig, image: Tensor, c: Tensor | None, mode: str | None, seg_head: bool):
    D = config.depth
    x = image
    if mode == "concat":
        x = ad.concat([image, ad.tile_spatial(c, image.shape[1], image.shape[2])])
    h = _conv(p, "dec.stem", x)
    skips = [h]
    for i in range(1, D + 1):
        h = _conv(p, f"dec.down{i}.conv", ad.relu(h), stride=2)
        h = _condition(p, f"dec.down{i}", mode, h, c)
        h = _resblock(p, f"dec.down{i}.res", h)
        skips.append(h)
    for i in range(D, 0, -1):
        h = ad.concat([ad.upsample2x(h), skips[i - 1]])
        h = _conv(p, f"dec.up{i}.conv", ad.relu(h))
        h = _condition(p, f"dec.up{i}", mode, h, c)
        h = _resblock(p, f"dec.up{i}.res", h)
    h = ad.relu(h)
    kp = _conv(p, "dec.head_kp", h)
    seg = _conv(p, "dec.head_seg", h) if seg_head else None
    return kp, seg


class SupervisedModel:
    """Sparse baseline: the decoder trunk without conditioning and one heatmap channel per keypoint."""

    def __init__(self, config: ModelConfig, n_keypoints: int, params: dict[str, Tensor]):
        self.config, self.n_keypoints, self.params = config, n_keypoints, params

    @classmethod
    def init(cls, config: ModelConfig, n_keypoints: int, seed: int = 0, dtype=np.float32) -> "SupervisedModel":
        if n_keypoints < 1:
            raise InvalidConfig("n_keypoints must be >= 1")
        b = _ParamBuilder(Rng.derive(seed, 0x5EED, 1), dtype)
        _build_decoder(b, config, conditioned=False, n_out=n_keypoints, seg_head=False)
        return cls(config, n_keypoints, b.params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(np.sum([t.data.size for t in self.params.values()]))

    def forward(self, image) -> Tensor:
        image = ad._as_tensor(image)
        _check_image(image, self.config.depth, self.config.image_channels)
        kp, _ = _decoder_forward(self.params, self.config, image, None, None, seg_head=False)
        return kp


def supervised_forward(model: SupervisedModel, image) -> Tensor:
    """Logits with one channel per fixed keypoint: (N, H, W, n_keypoints)."""
    return model.forward(image)
