"""Pinhole cameras, rays, triangulation and pose sampling.

Pixel convention: ``u`` is the column (x) index and ``v`` the row (y) index,
with pixel centres at integer coordinates. A heatmap array has shape
``(height, width)`` and is indexed ``[v, u]``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateGeometry,
    EmptyInput,
    InvalidConfig,
    NonPositiveDepth,
    NoValidSubset,
    SingularIntrinsics,
)
from .heatmap import soft_argmax
from .rng import Rng

DEPTH_EPS = 1e-9
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: 3x3 intrinsics and a 4x4 world-from-camera transform."""

    intrinsics: np.ndarray
    world_from_cam: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        T = np.asarray(self.world_from_cam, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "world_from_cam", T)
        if self.width <= 0 or self.height <= 0:
            raise InvalidConfig(f"camera size must be positive, got {self.width}x{self.height}")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise InvalidConfig("focal lengths must be positive")
        R = T[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise InvalidConfig("world_from_cam rotation is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_from_cam[:3, :3]

    @property
    def center(self) -> np.ndarray:
        return self.world_from_cam[:3, 3].copy()

    @property
    def cam_from_world(self) -> np.ndarray:
        R, t = self.rotation, self.world_from_cam[:3, 3]
        out = np.eye(4)
        out[:3, :3] = R.T
        out[:3, 3] = -R.T @ t
        return out

    def with_principal_shift(self, du: float, dv: float) -> "Camera":
        K = self.intrinsics.copy()
        K[0, 2] += du
        K[1, 2] += dv
        return Camera(K, self.world_from_cam, self.width, self.height)

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.reshape(-1).tolist(),
            "world_from_cam": self.world_from_cam.reshape(-1).tolist(),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        try:
            K = np.asarray(d["intrinsics"], dtype=np.float64)
            T = np.asarray(d["world_from_cam"], dtype=np.float64)
            if K.size != 9 or T.size != 16:
                raise InvalidConfig("intrinsics needs 9 numbers and world_from_cam 16")
            return cls(K.reshape(3, 3), T.reshape(4, 4), int(d["width"]), int(d["height"]))
        except KeyError as exc:
            raise InvalidConfig(f"camera entry missing {exc}") from None


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray


def make_intrinsics(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross carries heavy per-call overhead for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """World-from-camera transform for a camera at ``eye`` whose +z axis points at ``target``.

    Camera axes follow the usual computer-vision convention: +x right, +y down.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    x = _cross(-up, z)
    if np.linalg.norm(x) < 1e-9:
        x = _cross(np.array([1.0, 0.0, 0.0]), z)
    x /= np.linalg.norm(x)
    y = _cross(z, x)
    T = np.eye(4)
    T[:3, 0], T[:3, 1], T[:3, 2], T[:3, 3] = x, y, z, eye
    return T


def load_rig(path) -> list[Camera]:
    """Read a camera rig JSON file (array of camera objects)."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise InvalidConfig("camera rig must be a JSON array")
    return [Camera.from_dict(d) for d in data]


def save_rig(path, cams: Sequence[Camera]) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cams], indent=2))


# ---------------------------------------------------------------------------
# projection and rays
# ---------------------------------------------------------------------------


def to_camera(cam: Camera, points: np.ndarray) -> np.ndarray:
    """World points (..., 3) expressed in the camera frame."""
    R, t = cam.rotation, cam.world_from_cam[:3, 3]
    return (np.asarray(points, dtype=np.float64) - t) @ R


def project_points(cam: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection without depth checks.

    Returns ``(uv, depth)`` with ``uv`` of shape (..., 2); entries with
    non-positive depth are NaN.
    """
    pc = to_camera(cam, points)
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        h = pc @ cam.intrinsics.T
        uv = h[..., :2] / h[..., 2:3]
    uv[z <= DEPTH_EPS] = np.nan
    return uv, z


def project(cam: Camera, x) -> tuple[float, float]:
    """Project a world point to pixel coordinates (may lie outside the image)."""
    pc = to_camera(cam, np.asarray(x, dtype=np.float64).reshape(3))
    if pc[2] <= DEPTH_EPS:
        raise NonPositiveDepth(f"camera-frame depth {pc[2]:.3g} m is not positive")
    h = cam.intrinsics @ pc
    return float(h[0] / h[2]), float(h[1] / h[2])


def in_image(cam: Camera, uv, margin: float = 0.0) -> bool:
    u, v = uv
    return bool(margin <= u <= cam.width - 1 - margin and margin <= v <= cam.height - 1 - margin)


def pixel_ray(cam: Camera, pixel) -> Ray:
    """World-frame ray through a pixel."""
    K = cam.intrinsics
    if abs(np.linalg.det(K)) < 1e-12 or np.linalg.cond(K) > MAX_CONDITION:
        raise SingularIntrinsics("intrinsics matrix is not invertible")
    u, v = pixel
    d_cam = np.linalg.solve(K, np.array([u, v, 1.0]))
    d = cam.rotation @ d_cam
    return Ray(cam.center, d / np.linalg.norm(d))


def triangulate_weighted(rays: Sequence[Ray], weights: Sequence[float] | None = None) -> np.ndarray:
    """Weighted least-squares point closest to all rays."""
    if len(rays) < 2:
        raise EmptyInput("triangulation needs at least two rays")
    if weights is None:
        weights = np.ones(len(rays))
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for ray, w in zip(rays, weights):
        d = np.asarray(ray.direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        P = np.eye(3) - np.outer(d, d)
        A += w * P
        b += w * (P @ np.asarray(ray.origin, dtype=np.float64))
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > MAX_CONDITION:
        raise DegenerateGeometry("normal equations are ill-conditioned (near-parallel rays)")
    return np.linalg.solve(A, b)


def triangulate(rays: Sequence[Ray]) -> np.ndarray:
    """Point minimising the summed squared distance to every ray."""
    return triangulate_weighted(rays, None)


# ---------------------------------------------------------------------------
# robust multi-view selection
# ---------------------------------------------------------------------------


def bilinear(values: np.ndarray, u: float, v: float) -> float:
    """Bilinear sample of ``values[v, u]``; caller guarantees in-bounds."""
    h, w = values.shape
    u0 = min(int(math.floor(u)), w - 2) if w > 1 else 0
    v0 = min(int(math.floor(v)), h - 2) if h > 1 else 0
    fu, fv = u - u0, v - v0
    u1, v1 = min(u0 + 1, w - 1), min(v0 + 1, h - 1)
    top = (1 - fu) * values[v0, u0] + fu * values[v0, u1]
    bot = (1 - fu) * values[v1, u0] + fu * values[v1, u1]
    return float((1 - fv) * top + fv * bot)


def detection_score(x, cams: Sequence[Camera], heatmaps: Sequence[np.ndarray]) -> float:
    """Sum over cameras of the max-normalised exponentiated logits at the reprojection of ``x``.

    A camera where ``x`` is behind the camera or projects outside the image
    contributes 0.
    """
    score = 0.0
    for cam, logits in zip(cams, heatmaps):
        try:
            uv = project(cam, x)
        except NonPositiveDepth:
            continue
        if not in_image(cam, uv):
            continue
        logits = np.asarray(logits, dtype=np.float64)
        score += bilinear(np.exp(logits - logits.max()), *uv)
    return score


@dataclass(frozen=True)
class SubsetCandidate:
    subset: tuple[int, ...]
    point: np.ndarray
    score: float


def subset_candidates(cams: Sequence[Camera], heatmaps: Sequence[np.ndarray]) -> list[SubsetCandidate]:
    """Triangulate and score every camera subset of size two or more.

    Degenerate subsets are skipped.
    """
    if len(cams) != len(heatmaps):
        raise InvalidConfig("cameras and heatmaps must align")
    if len(cams) < 2:
        raise EmptyInput("need at least two cameras")
    rays = [pixel_ray(cam, soft_argmax(h)) for cam, h in zip(cams, heatmaps)]
    out = []
    for size in range(2, len(cams) + 1):
        for subset in itertools.combinations(range(len(cams)), size):
            try:
                x = triangulate([rays[i] for i in subset])
            except DegenerateGeometry:
                continue
            out.append(SubsetCandidate(subset, x, detection_score(x, cams, heatmaps)))
    return out


def best_subset_triangulate(cams: Sequence[Camera], heatmaps: Sequence[np.ndarray]) -> tuple[np.ndarray, tuple[int, ...]]:
    """3D point from the camera subset whose triangulation scores highest over all cameras.

    Ties go to the larger subset, then the lexicographically smallest one.
    """
    best = select_best(subset_candidates(cams, heatmaps))
    return best.point, best.subset


def select_best(cands: Sequence[SubsetCandidate]) -> SubsetCandidate:
    """Highest score; ties go to the larger subset, then the lexicographically smallest."""
    if not cands:
        raise NoValidSubset("every camera subset was degenerate")
    return min(cands, key=lambda c: (-c.score, -len(c.subset), c.subset))


def heatmap_variance(logits: np.ndarray) -> float:
    """Trace of the spatial covariance of softmax(logits)."""
    p = np.exp(logits - logits.max())
    p /= p.sum()
    h, w = p.shape
    jj, ii = np.mgrid[0:h, 0:w]
    mx, my = (p * ii).sum(), (p * jj).sum()
    return float((p * ((ii - mx) ** 2 + (jj - my) ** 2)).sum())


# ---------------------------------------------------------------------------
# quaternions and pose sampling
# ---------------------------------------------------------------------------


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_multiply(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * axis])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def geodesic_angle(a, b) -> float:
    """Rotation angle (radians) between two unit quaternions."""
    d = abs(float(np.dot(quat_normalize(a), quat_normalize(b))))
    return 2.0 * math.acos(min(1.0, d))


def random_quaternion(rng: Rng) -> np.ndarray:
    """Uniformly distributed rotation."""
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def pose_matrix(q, t) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = quat_to_matrix(q)
    T[:3, 3] = t
    return T


@dataclass(frozen=True)
class TranslationBox:
    """Camera-frame box for object translations.

    ``depth`` bounds z; ``lateral`` is the half-extent of x and y expressed
    as a fraction of the image half-width at that depth, so the object centre
    stays near the middle of the view.
    """

    depth: tuple[float, float]
    lateral: float = 0.25

    @classmethod
    def for_camera(cls, cam: Camera, object_size: float, span=(0.2, 0.6), lateral=0.25) -> "TranslationBox":
        """Depth range over which an object of ``object_size`` metres covers ``span`` of the image width."""
        f = cam.intrinsics[0, 0]
        lo, hi = span
        return cls((f * object_size / (hi * cam.width), f * object_size / (lo * cam.width)), lateral)

    def sample(self, rng: Rng, cam: Camera | None = None) -> np.ndarray:
        z = rng.uniform(*self.depth)
        if cam is None:
            half_x = half_y = self.lateral * z
        else:
            K = cam.intrinsics
            half_x = self.lateral * z * (cam.width / 2) / K[0, 0]
            half_y = self.lateral * z * (cam.height / 2) / K[1, 1]
        return np.array([rng.uniform(-half_x, half_x), rng.uniform(-half_y, half_y), z])


def sample_task_pose(
    rng: Rng,
    q_base,
    std: float = 0.2,
    *,
    in_plane_range: float = 2 * math.pi,
    box: TranslationBox | None = None,
    cam: Camera | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Object-in-camera pose correlated with ``q_base``.

    Each quaternion component is perturbed by N(0, std^2) noise and the
    result normalised; a uniform rotation about the camera's optical axis in
    ``[-in_plane_range/2, in_plane_range/2)`` is then composed on the left.
    """
    q = np.asarray(q_base, dtype=np.float64)
    if std > 0:
        q = q + rng.normal(0.0, std, size=4)
    q = q / np.linalg.norm(q)
    if in_plane_range > 0:
        angle = (rng.random() - 0.5) * in_plane_range
        q = quat_multiply(quat_from_axis_angle((0.0, 0.0, 1.0), angle), q)
        q = q / np.linalg.norm(q)
    t = box.sample(rng, cam) if box is not None else np.zeros(3)
    return q, t


# ---------------------------------------------------------------------------
# point subsampling
# ---------------------------------------------------------------------------


def farthest_point_indices(points, n: int) -> list[int]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInput("farthest point sampling needs at least one point")
    if not 1 <= n <= len(pts):
        raise InvalidConfig(f"cannot select {n} of {len(pts)} points")
    centroid = pts.mean(axis=0)
    first = int(np.argmin(np.linalg.norm(pts - centroid, axis=1)))
    chosen = [first]
    dist = np.linalg.norm(pts - pts[first], axis=1)
    for _ in range(n - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return chosen


def farthest_point_sample(points, n: int) -> np.ndarray:
    """Greedy farthest-point subsample seeded at the point nearest the centroid."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts[farthest_point_indices(pts, n)]
