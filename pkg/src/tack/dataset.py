"""On-disk meta-batch datasets: a JSON manifest plus little-endian float32 tensor files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CorruptManifest, ShapeMismatch
from .geometry import Camera
from .imageio import write_ppm
from .scene import MetaBatch

MANIFEST = "manifest.json"
FORMAT = "tack-dataset"
VERSION = 1
TENSORS = ("images", "targets", "masks", "cameras", "keypoints")
CAMERA_FIELDS = 9 + 16  # intrinsics then world_from_cam, row-major


def _camera_row(cam: Camera) -> np.ndarray:
    return np.concatenate([cam.intrinsics.ravel(), cam.world_from_cam.ravel()])


def _camera_from_row(row: np.ndarray, width: int, height: int) -> Camera:
    row = row.astype(np.float64)
    return Camera(row[:9].reshape(3, 3), row[9:].reshape(4, 4), width, height)


def write_dataset(path, batches: Sequence[MetaBatch], config: dict | None = None, seed: int | None = None, shape=None) -> Path:
    """Write tensors first and the manifest last, so a manifest marks a complete dataset.

    ``shape`` = (views, n_cond, height, width) is required when ``batches`` is empty.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if batches:
        V, L = batches[0].n_views, batches[0].n_cond
        H, W = batches[0].images.shape[1:3]
        for mb in batches:
            if mb.n_views != V or mb.n_cond != L or mb.images.shape[1:3] != (H, W):
                raise ShapeMismatch("all meta-batches in a dataset must share views, L and resolution")
    elif shape is not None:
        V, L, H, W = shape
    else:
        raise ShapeMismatch("empty dataset needs an explicit shape")
    N = len(batches)
    arrays = {
        "images": np.stack([mb.images for mb in batches]) if N else np.zeros((0, V, H, W, 3)),
        "targets": np.stack([mb.targets for mb in batches]) if N else np.zeros((0, V, H, W)),
        "masks": np.stack([mb.masks for mb in batches]) if N else np.zeros((0, V, H, W)),
        "cameras": np.stack([[_camera_row(c) for c in mb.cameras] for mb in batches]) if N else np.zeros((0, V, CAMERA_FIELDS)),
        "keypoints": np.stack([mb.keypoints for mb in batches]) if N else np.zeros((0, V, 2)),
    }
    manifest_path = path / MANIFEST
    if manifest_path.exists():
        manifest_path.unlink()
    tensors = {}
    for name in TENSORS:
        a = np.ascontiguousarray(arrays[name], dtype="<f4")
        (path / f"{name}.f32").write_bytes(a.tobytes())
        tensors[name] = {"shape": list(a.shape), "dtype": "<f4"}
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "count": N,
        "views": V,
        "n_cond": L,
        "height": H,
        "width": W,
        "seed": seed,
        "config": config or {},
        "tensors": tensors,
    }
    tmp = path / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(manifest_path)
    return path


def read_manifest(path) -> dict:
    mpath = Path(path) / MANIFEST
    if not mpath.exists():
        if not Path(path).exists():
            raise FileNotFoundError(f"{path}: no such dataset directory")
        raise CorruptManifest(f"{path}: missing {MANIFEST} (incomplete dataset?)")
    try:
        m = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise CorruptManifest(f"{mpath}: {e}") from None
    required = ("format", "version", "count", "views", "n_cond", "height", "width", "tensors")
    missing = [k for k in required if k not in m]
    if missing:
        raise CorruptManifest(f"{mpath}: missing fields {missing}")
    if m["format"] != FORMAT or m["version"] != VERSION:
        raise CorruptManifest(f"{mpath}: unsupported format {m['format']!r} v{m['version']}")
    N, V, H, W = m["count"], m["views"], m["height"], m["width"]
    expected = {
        "images": [N, V, H, W, 3],
        "targets": [N, V, H, W],
        "masks": [N, V, H, W],
        "cameras": [N, V, CAMERA_FIELDS],
        "keypoints": [N, V, 2],
    }
    for name, shape in expected.items():
        if name not in m["tensors"] or list(m["tensors"][name]["shape"]) != shape:
            raise CorruptManifest(f"{mpath}: tensor {name!r} does not match count/views/resolution")
    return m


def read_dataset(path) -> list[MetaBatch]:
    """Load every meta-batch; raises CorruptManifest or ShapeMismatch on inconsistent files."""
    path = Path(path)
    m = read_manifest(path)
    arrays = {}
    for name in TENSORS:
        shape = tuple(m["tensors"][name]["shape"])
        raw = (path / f"{name}.f32").read_bytes()
        if len(raw) != 4 * int(np.prod(shape)):
            raise ShapeMismatch(f"{name}.f32 holds {len(raw)} bytes, expected {4 * int(np.prod(shape))}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    out = []
    W, H, L = m["width"], m["height"], m["n_cond"]
    for i in range(m["count"]):
        cams = [_camera_from_row(r, W, H) for r in arrays["cameras"][i]]
        V = len(cams)
        out.append(MetaBatch(
            arrays["images"][i], arrays["targets"][i], arrays["masks"][i], cams,
            arrays["keypoints"][i].astype(np.float64), np.full((V, 3), np.nan), np.full((V, 4, 4), np.nan), L,
        ))
    return out


def export_ppm(path, out_dir=None) -> int:
    """Write every view of a dataset as ``images/<batch>_<view>.ppm``; returns the file count."""
    path = Path(path)
    out_dir = Path(out_dir) if out_dir is not None else path / "ppm"
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    for i, mb in enumerate(read_dataset(path)):
        for v, img in enumerate(mb.images):
            write_ppm(out_dir / f"{i:06d}_{v}.ppm", img)
            n += 1
    return n
