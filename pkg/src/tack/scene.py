"""Procedural objects, software rendering and meta-batch generation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import geometry as geo
from .errors import FovBudgetExceeded, InvalidConfig, RejectionBudgetExceeded
from .geometry import Camera, TranslationBox
from .heatmap import make_target
from .rng import Rng

NEAR_PLANE = 1e-3
LIGHT_DIR = np.array([-0.4, -0.6, -1.0]) / np.linalg.norm([-0.4, -0.6, -1.0])


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) metres, object frame
    triangles: np.ndarray  # (T, 3) int
    face_colors: np.ndarray  # (T, 3) in [0, 1]
    object_id: int = 0
    body_triangles: int | None = None  # leading triangles forming the superellipsoid body

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.face_colors = np.asarray(self.face_colors, dtype=np.float64)
        if len(self.triangles) < 4:
            raise InvalidConfig("a mesh needs at least 4 triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise InvalidConfig("triangle index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise InvalidConfig("mesh has non-finite vertices")

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) triangle corner coordinates."""
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def surface_area(self, body_only: bool = False) -> float:
        areas = self.triangle_areas()
        if body_only and self.body_triangles is not None:
            areas = areas[: self.body_triangles]
        return float(areas.sum())

    def extent(self) -> np.ndarray:
        return self.vertices.max(axis=0) - self.vertices.min(axis=0)

    def size(self) -> float:
        return float(self.extent().max())

    def signed_volume(self) -> float:
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)


@dataclass(frozen=True)
class ObjectClassConfig:
    """Ranges for the superellipsoid-plus-wedge object family (metres / ratios)."""

    length: tuple[float, float] = (0.22, 0.30)
    width_ratio: tuple[float, float] = (0.32, 0.42)
    height_ratio: tuple[float, float] = (0.28, 0.40)
    exponent: tuple[float, float] = (0.6, 1.0)
    wedge_length: tuple[float, float] = (0.25, 0.40)
    wedge_height: tuple[float, float] = (0.8, 1.4)
    n_lat: int = 8
    n_lon: int = 12

    def validate(self) -> None:
        for name in ("length", "width_ratio", "height_ratio", "exponent", "wedge_length", "wedge_height"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi) or not math.isfinite(hi):
                raise InvalidConfig(f"{name} range must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if self.exponent[0] < 0.5 or self.exponent[1] > 2.0:
            raise InvalidConfig("superellipsoid exponents must lie in [0.5, 2]")
        if self.n_lat < 3 or self.n_lon < 3:
            raise InvalidConfig("tessellation needs n_lat >= 3 and n_lon >= 3")


def _spow(x: np.ndarray, e: float) -> np.ndarray:
    return np.sign(x) * np.abs(x) ** e


def superellipsoid_point(a, b, c, e1, e2, eta, omega):
    ce, se = np.cos(eta), np.sin(eta)
    return np.stack([
        a * _spow(ce, e1) * _spow(np.cos(omega), e2),
        b * _spow(ce, e1) * _spow(np.sin(omega), e2),
        c * _spow(se, e1),
    ], axis=-1)


def _orient_outward(vertices: np.ndarray, tris: np.ndarray, center: np.ndarray) -> np.ndarray:
    c = vertices[tris]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    flip = np.einsum("ij,ij->i", n, c.mean(axis=1) - center) < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def superellipsoid_mesh(a, b, c, e1, e2, n_lat: int, n_lon: int) -> tuple[np.ndarray, np.ndarray]:
    """Latitude/longitude tessellation with single-vertex poles."""
    etas = np.linspace(-math.pi / 2, math.pi / 2, n_lat + 1)[1:-1]
    omegas = np.linspace(-math.pi, math.pi, n_lon, endpoint=False)
    E, W = np.meshgrid(etas, omegas, indexing="ij")
    ring = superellipsoid_point(a, b, c, e1, e2, E, W).reshape(-1, 3)
    verts = np.vstack([[0.0, 0.0, -c], ring, [0.0, 0.0, c]])
    south, north = 0, len(verts) - 1

    def vid(i, j):
        return 1 + i * n_lon + (j % n_lon)

    tris = []
    for j in range(n_lon):
        tris.append((south, vid(0, j + 1), vid(0, j)))
        tris.append((vid(n_lat - 2, j), vid(n_lat - 2, j + 1), north))
    for i in range(n_lat - 2):
        for j in range(n_lon):
            tris.append((vid(i, j), vid(i, j + 1), vid(i + 1, j + 1)))
            tris.append((vid(i, j), vid(i + 1, j + 1), vid(i + 1, j)))
    tris = np.asarray(tris, dtype=np.int64)
    return verts, _orient_outward(verts, tris, np.zeros(3))


def prism_mesh(x0, x1, z0, height, half_width) -> tuple[np.ndarray, np.ndarray]:
    """Triangular prism: vertical back face at ``x0``, slope down to ``x1``, extruded along y."""
    prof = [(x0, z0), (x1, z0), (x0, z0 + height)]
    verts = np.array([(x, y, z) for y in (-half_width, half_width) for x, z in prof])
    tris = np.array([
        (0, 2, 1), (3, 4, 5),
        (0, 1, 4), (0, 4, 3),
        (1, 2, 5), (1, 5, 4),
        (2, 0, 3), (2, 3, 5),
    ], dtype=np.int64)
    return verts, _orient_outward(verts, tris, verts.mean(axis=0))


def make_object(rng: Rng, config: ObjectClassConfig = ObjectClassConfig(), object_id: int = 0) -> Mesh:
    """Superellipsoid body with a wedge on the rear top, coloured by object-frame position."""
    config.validate()
    length = rng.uniform(*config.length)
    a = length / 2
    b = a * rng.uniform(*config.width_ratio)
    c = a * rng.uniform(*config.height_ratio)
    e1, e2 = rng.uniform(*config.exponent), rng.uniform(*config.exponent)
    body_v, body_t = superellipsoid_mesh(a, b, c, e1, e2, config.n_lat, config.n_lon)

    wl = length * rng.uniform(*config.wedge_length)
    wh = c * rng.uniform(*config.wedge_height)
    x0 = -a * 0.8
    wedge_v, wedge_t = prism_mesh(x0, x0 + wl, c * 0.3, wh, b * 0.55)

    verts = np.vstack([body_v, wedge_v])
    tris = np.vstack([body_t, wedge_t + len(body_v)])

    cent = verts[tris].mean(axis=1)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    rel = (cent - lo) / (hi - lo)
    tint = rng.uniform(0.2, 0.9, size=3)
    colors = 0.15 + 0.75 * (0.7 * rel + 0.3 * tint)
    colors[len(body_t):] = 0.6 * colors[len(body_t):] + 0.4 * np.array([0.9, 0.2, 0.2])
    return Mesh(verts, tris, np.clip(colors, 0.0, 1.0), object_id, body_triangles=len(body_t))


def make_object_set(seed: int, count: int, config: ObjectClassConfig = ObjectClassConfig(), split: int = 0) -> list[Mesh]:
    """Deterministic object instances; ``split`` separates train (0) from eval (1) objects."""
    return [make_object(Rng.derive(seed, 0x0B1EC7, split, i), config, object_id=split * 1000 + i) for i in range(count)]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Background:
    color: tuple[float, float, float] = (0.05, 0.05, 0.08)
    noise: float = 0.0


@dataclass
class RenderResult:
    image: np.ndarray  # (H, W, 3) float32
    mask: np.ndarray  # (H, W) bool, target object front-most
    depth: np.ndarray  # (H, W) float64, inf where empty
    ids: np.ndarray  # (H, W) int, -1 where empty


def _rasterize(cam: Camera, corners_w: np.ndarray, colors: np.ndarray, ids: np.ndarray):
    """Z-buffered flat-shaded rasterisation of world-space triangles (T, 3, 3)."""
    H, W = cam.height, cam.width
    depth = np.full(H * W, np.inf)
    rgb = np.zeros((H * W, 3))
    idmap = np.full(H * W, -1, dtype=np.int64)
    if len(corners_w) == 0:
        return rgb, depth, idmap

    pc = geo.to_camera(cam, corners_w)  # (T, 3, 3)
    keep = np.all(pc[..., 2] > NEAR_PLANE, axis=1)
    pc, colors, ids = pc[keep], colors[keep], ids[keep]
    if len(pc) == 0:
        return rgb, depth, idmap

    h = pc @ cam.intrinsics.T
    uv = h[..., :2] / h[..., 2:3]
    z = pc[..., 2]

    # flat shading with the normal turned toward the camera
    n = np.cross(pc[:, 1] - pc[:, 0], pc[:, 2] - pc[:, 0])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    facing = np.einsum("ij,ij->i", n, pc.mean(axis=1)) > 0
    n[facing] *= -1
    shade = 0.35 + 0.65 * np.clip(n @ LIGHT_DIR, 0.0, None)
    shaded = colors * shade[:, None]

    # barycentric set-up in screen space
    p0, p1, p2 = uv[:, 0], uv[:, 1], uv[:, 2]
    d1, d2 = p1 - p0, p2 - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    ok = np.abs(det) > 1e-12
    umin = np.clip(np.ceil(uv[..., 0].min(axis=1)), 0, W)
    umax = np.clip(np.floor(uv[..., 0].max(axis=1)), -1, W - 1)
    vmin = np.clip(np.ceil(uv[..., 1].min(axis=1)), 0, H)
    vmax = np.clip(np.floor(uv[..., 1].max(axis=1)), -1, H - 1)
    bw = np.where(ok, np.maximum(umax - umin + 1, 0), 0).astype(np.int64)
    bh = np.where(ok, np.maximum(vmax - vmin + 1, 0), 0).astype(np.int64)
    counts = bw * bh
    total = int(counts.sum())
    if total == 0:
        return rgb, depth, idmap

    tri = np.repeat(np.arange(len(pc)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    pu = umin[tri] + local % bw[tri]
    pv = vmin[tri] + local // bw[tri]
    ru, rv = pu - p0[tri, 0], pv - p0[tri, 1]
    inv = 1.0 / det[tri]
    l1 = (ru * d2[tri, 1] - rv * d2[tri, 0]) * inv
    l2 = (rv * d1[tri, 0] - ru * d1[tri, 1]) * inv
    l0 = 1.0 - l1 - l2
    eps = -1e-9
    inside = (l0 >= eps) & (l1 >= eps) & (l2 >= eps)
    tri, pu, pv = tri[inside], pu[inside], pv[inside]
    l0, l1, l2 = l0[inside], l1[inside], l2[inside]
    inv_z = l0 / z[tri, 0] + l1 / z[tri, 1] + l2 / z[tri, 2]
    zz = 1.0 / inv_z
    pix = (pv * W + pu).astype(np.int64)

    order = np.lexsort((zz, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]
    depth[pix[win]] = zz[win]
    rgb[pix[win]] = shaded[tri[win]]
    idmap[pix[win]] = ids[tri[win]]
    return rgb, depth, idmap


def render(
    mesh: Mesh | None,
    pose: np.ndarray,
    cam: Camera,
    background: Background = Background(),
    distractors: list[tuple[Mesh, np.ndarray]] = (),
    rng: Rng | None = None,
) -> RenderResult:
    """Render the target object (object-to-world ``pose``) plus distractors from ``cam``."""
    corners, colors, ids = [], [], []
    items = ([(mesh, pose, 0)] if mesh is not None else []) + [(m, p, k + 1) for k, (m, p) in enumerate(distractors)]
    for m, p, oid in items:
        c = m.corners @ p[:3, :3].T + p[:3, 3]
        corners.append(c)
        colors.append(m.face_colors)
        ids.append(np.full(len(c), oid))
    if corners:
        rgb, depth, idmap = _rasterize(cam, np.concatenate(corners), np.concatenate(colors), np.concatenate(ids))
    else:
        rgb, depth, idmap = _rasterize(cam, np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0, np.int64))
    H, W = cam.height, cam.width
    empty = idmap < 0
    bg = np.broadcast_to(np.asarray(background.color, dtype=np.float64), (H * W, 3)).copy()
    if background.noise > 0 and rng is not None:
        bg += rng.normal(0.0, background.noise, size=(H * W, 3))
    rgb[empty] = bg[empty]
    return RenderResult(
        np.clip(rgb, 0.0, 1.0).reshape(H, W, 3).astype(np.float32),
        (idmap == 0).reshape(H, W) if mesh is not None else np.zeros((H, W), dtype=bool),
        depth.reshape(H, W),
        idmap.reshape(H, W),
    )


# ---------------------------------------------------------------------------
# point sampling
# ---------------------------------------------------------------------------


def sample_surface_points(rng: Rng, mesh: Mesh, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` area-weighted surface samples; returns points and triangle indices."""
    tri = rng.choices(mesh.triangle_areas(), n)
    u = rng.random((n, 2))
    s = np.sqrt(u[:, 0])
    bary = np.stack([1.0 - s, s * (1.0 - u[:, 1]), s * u[:, 1]], axis=1)
    pts = np.einsum("nk,nkd->nd", bary, mesh.corners[tri])
    return pts, tri


def sample_surface_point(rng: Rng, mesh: Mesh) -> np.ndarray:
    """Uniform point on the mesh surface (area-weighted triangle, uniform barycentric)."""
    return sample_surface_points(rng, mesh, 1)[0][0]


def sample_offsurface_point(rng: Rng, x, sigma: float) -> np.ndarray:
    """``x`` displaced by isotropic Gaussian noise of standard deviation ``sigma`` per axis."""
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, sigma, size=3)


def sample_near_object_rejection(
    rng: Rng,
    mesh: Mesh | None,
    pose: np.ndarray,
    cams: list[Camera],
    box: tuple[np.ndarray, np.ndarray],
    max_attempts: int = 10_000,
) -> np.ndarray:
    """Uniform world point in ``box`` whose projection is background in every camera."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    masks = [render(mesh, pose, cam).mask for cam in cams]
    for _ in range(max_attempts):
        x = lo + (hi - lo) * rng.random(3)
        if all(_projects_to_background(cam, m, x) for cam, m in zip(cams, masks)):
            return x
    raise RejectionBudgetExceeded(f"no background point found in {max_attempts} attempts")


def _projects_to_background(cam: Camera, mask: np.ndarray, x: np.ndarray) -> bool:
    try:
        u, v = geo.project(cam, x)
    except geo.NonPositiveDepth:
        return False
    iu, iv = int(round(u)), int(round(v))
    if not (0 <= iu < cam.width and 0 <= iv < cam.height):
        return False
    return not mask[iv, iu]


# ---------------------------------------------------------------------------
# tasks and meta-batches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneConfig:
    width: int = 64
    height: int = 48
    focal_ratio: float = 1.0  # focal length in units of image width
    sigma: float = 2.0
    pad: int = 3
    pose_std: float = 0.2
    in_plane_range: float = 2 * math.pi
    span: tuple[float, float] = (0.2, 0.6)
    lateral: float = 0.75
    fov_margin: float = 3.0
    offsurface_sigma: float = 0.0
    distractors: int = 0
    background: tuple[float, float, float] = (0.05, 0.05, 0.08)
    background_noise: float = 0.0
    train_objects: int = 12
    eval_objects: int = 4
    object_seed: int = 0
    single_object: bool = False  # evaluate on the training instance(s) instead of held-out ones
    object_class: ObjectClassConfig = field(default_factory=ObjectClassConfig)

    def camera(self) -> Camera:
        f = self.focal_ratio * self.width
        K = geo.make_intrinsics(f, f, (self.width - 1) / 2, (self.height - 1) / 2)
        return Camera(K, np.eye(4), self.width, self.height)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        if "object_class" in d and isinstance(d["object_class"], dict):
            oc = {k: tuple(v) if isinstance(v, list) else v for k, v in d["object_class"].items()}
            d["object_class"] = ObjectClassConfig(**oc)
        for k in ("span", "background"):
            if k in d and isinstance(d[k], list):
                d[k] = tuple(d[k])
        return cls(**d)


def train_objects(cfg: SceneConfig) -> list[Mesh]:
    return make_object_set(cfg.object_seed, cfg.train_objects, cfg.object_class, split=0)


def eval_objects(cfg: SceneConfig) -> list[Mesh]:
    """Held-out instances, or the training instances in single-object mode."""
    if cfg.single_object or cfg.eval_objects == 0:
        return train_objects(cfg)
    return make_object_set(cfg.object_seed, cfg.eval_objects, cfg.object_class, split=1)


@dataclass
class KeypointTask:
    mesh: Mesh
    point: np.ndarray  # object frame
    on_surface: bool
    q_base: np.ndarray

    @property
    def object_id(self) -> int:
        return self.mesh.object_id


@dataclass
class MetaBatch:
    """``n_cond`` conditioning views followed by held-out validation views of one task."""

    images: np.ndarray  # (V, H, W, 3) float32
    targets: np.ndarray  # (V, H, W) float32
    masks: np.ndarray  # (V, H, W) float32
    cameras: list[Camera]
    keypoints: np.ndarray  # (V, 2) pixel coordinates
    points_world: np.ndarray  # (V, 3)
    poses: np.ndarray  # (V, 4, 4) object-to-world
    n_cond: int
    task: KeypointTask | None = None

    @property
    def n_views(self) -> int:
        return len(self.images)

    def subset(self, cond: list[int], valid: list[int]) -> "MetaBatch":
        idx = list(cond) + list(valid)
        return replace(
            self,
            images=self.images[idx], targets=self.targets[idx], masks=self.masks[idx],
            cameras=[self.cameras[i] for i in idx], keypoints=self.keypoints[idx],
            points_world=self.points_world[idx], poses=self.poses[idx], n_cond=len(cond),
        )


def sample_task(rng: Rng, objects: list[Mesh], offsurface_sigma: float = 0.0) -> KeypointTask:
    mesh = objects[rng.integers(len(objects))]
    x = sample_surface_point(rng, mesh)
    on_surface = offsurface_sigma == 0
    if not on_surface:
        x = sample_offsurface_point(rng, x, offsurface_sigma)
    return KeypointTask(mesh, x, on_surface, geo.random_quaternion(rng))


def _distractor_poses(rng: Rng, cfg: SceneConfig, cam: Camera, center: np.ndarray, count: int):
    out = []
    for k in range(count):
        m = make_object(rng.spawn(), cfg.object_class, object_id=-1 - k)
        t = center + np.array([rng.uniform(-0.15, 0.15), rng.uniform(-0.1, 0.1), rng.uniform(-0.15, 0.05)])
        t[2] = max(t[2], 0.1)
        out.append((m, cam.world_from_cam @ geo.pose_matrix(geo.random_quaternion(rng), t)))
    return out


def build_meta_batch(
    rng: Rng,
    task: KeypointTask,
    cams: list[Camera],
    L: int = 3,
    cfg: SceneConfig = SceneConfig(),
    n_valid: int = 1,
    max_resamples: int = 100,
) -> MetaBatch:
    """Render ``L + n_valid`` correlated views of a task; view ``i`` uses ``cams[i % len(cams)]``."""
    if L < 1 or n_valid < 0:
        raise InvalidConfig("need L >= 1 conditioning views")
    background = Background(cfg.background, cfg.background_noise)
    point_h = np.append(task.point, 1.0)
    n_views = L + n_valid
    images = np.empty((n_views, cfg.height, cfg.width, 3), np.float32)
    targets = np.empty((n_views, cfg.height, cfg.width), np.float32)
    masks = np.empty((n_views, cfg.height, cfg.width), np.float32)
    keypoints = np.empty((n_views, 2))
    points_world = np.empty((n_views, 3))
    poses = np.empty((n_views, 4, 4))
    views_cams = []
    for v in range(n_views):
        cam = cams[v % len(cams)]
        box = TranslationBox.for_camera(cam, task.mesh.size(), cfg.span, cfg.lateral)
        for _ in range(max_resamples):
            q, t = geo.sample_task_pose(rng, task.q_base, cfg.pose_std, in_plane_range=cfg.in_plane_range, box=box, cam=cam)
            pose = cam.world_from_cam @ geo.pose_matrix(q, t)
            xw = (pose @ point_h)[:3]
            try:
                uv = geo.project(cam, xw)
            except geo.NonPositiveDepth:
                continue
            if geo.in_image(cam, uv, cfg.fov_margin):
                break
        else:
            raise FovBudgetExceeded(f"view {v}: keypoint left the field of view {max_resamples} times")
        distract = _distractor_poses(rng, cfg, cam, t, cfg.distractors) if cfg.distractors else []
        res = render(task.mesh, pose, cam, background, distract, rng)
        images[v] = res.image
        masks[v] = res.mask
        targets[v] = make_target(uv, cfg.sigma, (cfg.width, cfg.height))
        keypoints[v] = uv
        points_world[v] = xw
        poses[v] = pose
        views_cams.append(cam)
    return MetaBatch(images, targets, masks, views_cams, keypoints, points_world, poses, L, task)


def generate_meta_batch(seed: int, index: int, objects: list[Mesh], cfg: SceneConfig, L: int = 3, n_valid: int = 1, cams=None) -> MetaBatch:
    """Meta-batch ``index`` of the stream defined by ``seed``; independent of every other index."""
    rng = Rng.derive(seed, index)
    task = sample_task(rng, objects, cfg.offsurface_sigma)
    return build_meta_batch(rng, task, cams or [cfg.camera()], L, cfg, n_valid)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def pad_crop(arr: np.ndarray, pad: int, offset: tuple[int, int]) -> np.ndarray:
    """Zero-pad the two leading (H, W) axes by ``pad`` and crop back at ``offset=(ox, oy)``."""
    if pad == 0:
        return arr.copy()
    h, w = arr.shape[:2]
    padded = np.zeros((h + 2 * pad, w + 2 * pad) + arr.shape[2:], dtype=arr.dtype)
    padded[pad:pad + h, pad:pad + w] = arr
    ox, oy = offset
    return padded[oy:oy + h, ox:ox + w].copy()


def augment_pad_crop(rng: Rng, image, target, mask, pad: int = 8):
    """Random translation by zero-padding and cropping; the same offset for all three arrays."""
    if pad < 0:
        raise InvalidConfig("pad must be >= 0")
    if pad == 0:
        return image.copy(), target.copy(), mask.copy()
    ox, oy = (int(v) for v in rng.integers(0, 2 * pad + 1, size=2))
    return tuple(pad_crop(a, pad, (ox, oy)) for a in (image, target, mask))
