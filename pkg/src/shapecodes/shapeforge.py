"""Procedural shapes, a sphere-tracing renderer, and viewgrid datasets.

Shapes are unions of signed-distance primitives built from a family name and a
parameter vector. World frame: y is up; the camera for (elevation, azimuth)
sits on the direction ``(cos e sin a, sin e, cos e cos a)`` and looks at the
origin through an orthographic window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as rngmod
from .viewgrid import ViewSphereSpec, Viewgrid

# --------------------------------------------------------------------------
# signed-distance primitives; all take points shaped (n, 3)


def _len3(x, y, z):
    return np.sqrt(x * x + y * y + z * z)


def _len2(x, y):
    return np.sqrt(x * x + y * y)


def _axis_frame(p, center, axis):
    """Move points into a local frame whose long axis is y."""
    q = p - np.asarray(center, dtype=np.float64)
    if axis == "y":
        return q[:, 0], q[:, 1], q[:, 2]
    if axis == "x":
        return q[:, 1], q[:, 0], q[:, 2]
    if axis == "z":
        return q[:, 0], q[:, 2], q[:, 1]
    raise ValueError(f"bad axis {axis!r}")


@dataclass(frozen=True)
class Box:
    center: Tuple[float, float, float]
    half: Tuple[float, float, float]

    def sdf(self, p):
        q = np.abs(p - np.asarray(self.center)) - np.asarray(self.half)
        qx, qy, qz = q[:, 0], q[:, 1], q[:, 2]
        outside = _len3(np.maximum(qx, 0), np.maximum(qy, 0), np.maximum(qz, 0))
        inside = np.minimum(np.maximum(qx, np.maximum(qy, qz)), 0)
        return outside + inside

    def radius(self):
        c, h = np.abs(self.center), np.asarray(self.half)
        return float(np.linalg.norm(c + h))


@dataclass(frozen=True)
class Cylinder:
    center: Tuple[float, float, float]
    radius_: float
    half_height: float
    axis: str = "y"

    def sdf(self, p):
        x, y, z = _axis_frame(p, self.center, self.axis)
        dx = _len2(x, z) - self.radius_
        dy = np.abs(y) - self.half_height
        return np.minimum(np.maximum(dx, dy), 0) + _len2(np.maximum(dx, 0), np.maximum(dy, 0))

    def radius(self):
        c = np.abs(self.center)
        along = {"x": 0, "y": 1, "z": 2}[self.axis]
        across = [i for i in range(3) if i != along]
        return float(math.hypot(c[along] + self.half_height, math.hypot(*c[across]) + self.radius_))


@dataclass(frozen=True)
class Cone:
    """Capped cone along y: ``bottom`` radius at -half_height, ``top`` at +half_height."""

    center: Tuple[float, float, float]
    bottom: float
    top: float
    half_height: float

    def sdf(self, p):
        x, y, z = _axis_frame(p, self.center, "y")
        h, r1, r2 = self.half_height, self.bottom, self.top
        qx, qy = _len2(x, z), y
        k2x, k2y = r2 - r1, 2.0 * h
        cax = qx - np.minimum(qx, np.where(qy < 0, r1, r2))
        cay = np.abs(qy) - h
        t = np.clip(((r2 - qx) * k2x + (h - qy) * k2y) / (k2x * k2x + k2y * k2y), 0.0, 1.0)
        cbx = qx - r2 + k2x * t
        cby = qy - h + k2y * t
        s = np.where((cbx < 0) & (cay < 0), -1.0, 1.0)
        return s * np.sqrt(np.minimum(cax * cax + cay * cay, cbx * cbx + cby * cby))

    def radius(self):
        c = np.abs(self.center)
        r = max(self.bottom, self.top)
        return float(math.hypot(c[1] + self.half_height, math.hypot(c[0], c[2]) + r))


@dataclass(frozen=True)
class Ellipsoid:
    center: Tuple[float, float, float]
    radii: Tuple[float, float, float]

    def sdf(self, p):
        # scaled-sphere bound: 1-Lipschitz, zero exactly on the surface
        q = (p - np.asarray(self.center)) / np.asarray(self.radii)
        return (_len3(q[:, 0], q[:, 1], q[:, 2]) - 1.0) * min(self.radii)

    def radius(self):
        return float(np.linalg.norm(self.center) + max(self.radii))


@dataclass(frozen=True)
class Capsule:
    a: Tuple[float, float, float]
    b: Tuple[float, float, float]
    radius_: float

    def sdf(self, p):
        a, b = np.asarray(self.a), np.asarray(self.b)
        ba = b - a
        pa = p - a
        dot = pa[:, 0] * ba[0] + pa[:, 1] * ba[1] + pa[:, 2] * ba[2]
        h = np.clip(dot / float(ba @ ba), 0.0, 1.0)
        d = pa - h[:, None] * ba
        return _len3(d[:, 0], d[:, 1], d[:, 2]) - self.radius_

    def radius(self):
        return float(max(np.linalg.norm(self.a), np.linalg.norm(self.b)) + self.radius_)


@dataclass(frozen=True)
class Torus:
    """Ring lying in the xz plane."""

    center: Tuple[float, float, float]
    major: float
    minor: float

    def sdf(self, p):
        x, y, z = _axis_frame(p, self.center, "y")
        return _len2(_len2(x, z) - self.major, y) - self.minor

    def radius(self):
        return float(np.linalg.norm(self.center) + self.major + self.minor)


class Scene:
    """Union of primitives, optionally uniformly scaled about the origin."""

    def __init__(self, parts: Sequence = (), scale: float = 1.0):
        self.parts = tuple(parts)
        self.scale = float(scale)

    def sdf(self, p: np.ndarray) -> np.ndarray:
        if not self.parts:
            return np.full(p.shape[0], np.inf)
        q = p / self.scale
        d = self.parts[0].sdf(q)
        for part in self.parts[1:]:
            d = np.minimum(d, part.sdf(q))
        return d * self.scale

    def bounding_radius(self) -> float:
        return max((part.radius() for part in self.parts), default=0.0) * self.scale


# --------------------------------------------------------------------------
# shape families
#
# Each family declares (name, low, high) parameter ranges and a builder. The
# builder output is normalised so its bounding radius is NORMALIZED_RADIUS.

NORMALIZED_RADIUS = 0.95


@dataclass(frozen=True)
class Family:
    name: str
    ranges: Tuple[Tuple[str, float, float], ...]
    build: Callable[..., List]


def _box_parts(w, h, d):
    return [Box((0, 0, 0), (w, h, d))]


def _cylinder_parts(r, h):
    return [Cylinder((0, 0, 0), r, h)]


def _cone_parts(r, h, top):
    return [Cone((0, 0, 0), r, top, h)]


def _ellipsoid_parts(a, b, c):
    return [Ellipsoid((0, 0, 0), (a, b, c))]


def _capsule_parts(half_len, r, tilt):
    dx, dy = half_len * math.cos(tilt), half_len * math.sin(tilt)
    return [Capsule((-dx, -dy, 0), (dx, dy, 0), r)]


def _torus_parts(major, minor):
    return [Torus((0, 0, 0), major, minor)]


def _l_bracket_parts(length, height, width, t):
    base = Box((0, -height + t, 0), (length, t, width))
    wall = Box((-length + t, 0, 0), (t, height, width))
    return [base, wall]


def _t_bracket_parts(span, height, width, t):
    bar = Box((0, height - t, 0), (span, t, width))
    stem = Box((0, 0, 0), (t, height, width))
    return [bar, stem]


def _table_parts(w, d, h, top_t, leg_r):
    parts = [Box((0, h - top_t, 0), (w, top_t, d))]
    lx, lz = w - leg_r * 1.5, d - leg_r * 1.5
    leg_h = h - top_t
    for sx in (-1, 1):
        for sz in (-1, 1):
            parts.append(Cylinder((sx * lx, -top_t, sz * lz), leg_r, leg_h))
    return parts


def _chair_parts(w, seat_h, back_h, t, leg_t):
    # seat at height 0, legs down to -seat_h, back up along -z edge
    parts = [Box((0, 0, 0), (w, t, w))]
    l = w - leg_t
    for sx in (-1, 1):
        for sz in (-1, 1):
            parts.append(Box((sx * l, -t - seat_h / 2, sz * l), (leg_t, seat_h / 2, leg_t)))
    parts.append(Box((0, back_h / 2 + t, -w + t), (w, back_h / 2, t)))
    return parts


def _cross_parts(arm, t, h):
    return [Box((0, 0, 0), (arm, h, t)), Box((0, 0, 0), (t, h, arm))]


def _stepped_parts(w, d, step_h, shrink, steps):
    n = int(round(steps))
    parts = []
    y = -n * step_h
    for i in range(n):
        f = 1.0 - shrink * i
        parts.append(Box((0, y + step_h, 0), (w * f, step_h, d * f)))
        y += 2 * step_h
    return parts


FAMILIES: Tuple[Family, ...] = (
    Family("box", (("half_x", 0.25, 1.0), ("half_y", 0.25, 1.0), ("half_z", 0.25, 1.0)), _box_parts),
    Family("cylinder", (("radius", 0.25, 0.9), ("half_height", 0.2, 1.0)), _cylinder_parts),
    Family("cone", (("base_radius", 0.4, 1.0), ("half_height", 0.4, 1.0), ("top_radius", 0.0, 0.15)), _cone_parts),
    Family("ellipsoid", (("rx", 0.35, 1.0), ("ry", 0.35, 1.0), ("rz", 0.35, 1.0)), _ellipsoid_parts),
    Family("capsule", (("half_length", 0.3, 0.9), ("radius", 0.12, 0.4), ("tilt", -0.5, 0.5)), _capsule_parts),
    Family("torus", (("major", 0.45, 0.8), ("minor", 0.08, 0.3)), _torus_parts),
    Family("l_bracket", (("length", 0.5, 1.0), ("height", 0.4, 1.0), ("width", 0.2, 0.7), ("thickness", 0.06, 0.18)), _l_bracket_parts),
    Family("t_bracket", (("span", 0.5, 1.0), ("height", 0.5, 1.0), ("width", 0.1, 0.5), ("thickness", 0.06, 0.18)), _t_bracket_parts),
    Family("table", (("half_width", 0.5, 1.0), ("half_depth", 0.3, 0.8), ("half_height", 0.3, 0.7), ("top_thickness", 0.04, 0.1), ("leg_radius", 0.04, 0.1)), _table_parts),
    Family("chair", (("half_width", 0.3, 0.5), ("seat_height", 0.4, 0.8), ("back_height", 0.4, 0.9), ("seat_thickness", 0.04, 0.08), ("leg_thickness", 0.03, 0.07)), _chair_parts),
    Family("cross", (("arm", 0.5, 1.0), ("thickness", 0.08, 0.25), ("half_height", 0.08, 0.5)), _cross_parts),
    Family("stepped", (("half_width", 0.5, 1.0), ("half_depth", 0.3, 1.0), ("step_half_height", 0.08, 0.25), ("shrink", 0.15, 0.3), ("steps", 2.0, 3.0)), _stepped_parts),
)

FAMILY_NAMES = tuple(f.name for f in FAMILIES)


def family_by_name(name: str) -> Family:
    for f in FAMILIES:
        if f.name == name:
            return f
    raise KeyError(f"unknown shape family {name!r}")


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    params: Tuple[float, ...]
    instance_seed: int = 0

    def scene(self) -> Scene:
        fam = family_by_name(self.family)
        if len(self.params) != len(fam.ranges):
            raise ValueError(f"{self.family} takes {len(fam.ranges)} parameters, got {len(self.params)}")
        raw = Scene(fam.build(*self.params))
        return Scene(raw.parts, NORMALIZED_RADIUS / raw.bounding_radius())


def sample_shape(family: str, rng: np.random.Generator, instance_seed: int = 0) -> ShapeSpec:
    fam = family_by_name(family)
    params = tuple(float(rng.uniform(lo, hi)) for _, lo, hi in fam.ranges)
    return ShapeSpec(family, params, instance_seed)


# --------------------------------------------------------------------------
# renderer


@dataclass(frozen=True)
class RenderConfig:
    image_size: int = 32
    ortho_window: float = 1.2
    light_direction: Tuple[float, float, float] = tuple((np.ones(3) / np.sqrt(3)).tolist())
    ambient: float = 0.2
    diffuse: float = 0.8
    background: float = 0.0
    max_steps: int = 128
    hit_threshold: float = 1e-3
    camera_distance: float = 3.0

    def __post_init__(self):
        light = np.asarray(self.light_direction, dtype=np.float64)
        n = float(np.linalg.norm(light))
        if n == 0:
            raise ValueError("light direction must be non-zero")
        object.__setattr__(self, "light_direction", tuple((light / n).tolist()))


@dataclass(frozen=True)
class CameraPose:
    elevation: float
    azimuth: float

    def basis(self):
        """(position direction, right, up) unit vectors.

        ``right`` depends on azimuth only, so the frame stays defined at the
        poles; there the image rotates in-plane with azimuth.
        """
        if not -90 <= self.elevation <= 90:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        e, a = math.radians(self.elevation), math.radians(self.azimuth % 360.0)
        ce, se, ca, sa = math.cos(e), math.sin(e), math.cos(a), math.sin(a)
        c = np.array([ce * sa, se, ce * ca])
        r = np.array([ca, 0.0, -sa])
        u = np.cross(c, r)
        return c, r, u


def pixel_centers(cfg: RenderConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Image-plane x (per column) and y (per row) of pixel centres."""
    n, w = cfg.image_size, cfg.ortho_window
    x = -w + (np.arange(n) + 0.5) * (2 * w / n)
    return x, -x


def _rays(pose: CameraPose, cfg: RenderConfig):
    c, r, u = pose.basis()
    xs, ys = pixel_centers(cfg)
    gx, gy = np.meshgrid(xs, ys)  # (row, col)
    origins = cfg.camera_distance * c + gx.reshape(-1, 1) * r + gy.reshape(-1, 1) * u
    dirs = np.broadcast_to(-c, origins.shape)
    return origins, dirs


def _trace(scene: Scene, origins, dirs, cfg: RenderConfig):
    """Sphere-trace every ray; returns (hit mask, hit points)."""
    n = origins.shape[0]
    t = np.zeros(n)
    hit = np.zeros(n, dtype=bool)
    active = np.arange(n)
    t_max = 2 * cfg.camera_distance
    for _ in range(cfg.max_steps):
        if active.size == 0:
            break
        p = origins[active] + t[active, None] * dirs[active]
        d = scene.sdf(p)
        done = d < cfg.hit_threshold
        hit[active[done]] = True
        keep = ~done
        active = active[keep]
        t[active] += d[keep]
        active = active[t[active] <= t_max]
    points = origins + t[:, None] * dirs
    return hit, points


def _normals(scene: Scene, p, eps=1e-4):
    e = np.eye(3) * eps
    g = np.stack([scene.sdf(p + e[i]) - scene.sdf(p - e[i]) for i in range(3)], axis=1)
    return g / _len3(g[:, 0], g[:, 1], g[:, 2])[:, None]


def _shade(scene: Scene, origins, dirs, cfg: RenderConfig) -> np.ndarray:
    hit, points = _trace(scene, origins, dirs, cfg)
    out = np.full(origins.shape[0], cfg.background)
    if hit.any():
        nrm = _normals(scene, points[hit])
        lx, ly, lz = cfg.light_direction
        lam = np.maximum(nrm[:, 0] * lx + nrm[:, 1] * ly + nrm[:, 2] * lz, 0.0)
        out[hit] = np.clip(cfg.ambient + cfg.diffuse * lam, 0.0, 1.0)
    return out


def _as_scene(shape) -> Scene:
    return shape.scene() if isinstance(shape, ShapeSpec) else shape


def render_view(shape, pose: CameraPose, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """One H x W view in [0, 1]; rays that do not converge count as misses."""
    o, d = _rays(pose, cfg)
    return _shade(_as_scene(shape), o, d, cfg).reshape(cfg.image_size, cfg.image_size)


def render_viewgrid(shape, spec: ViewSphereSpec, cfg: RenderConfig = RenderConfig(), class_id=None) -> Viewgrid:
    """All views of ``spec`` in one batched trace.

    Every ray runs the same per-element arithmetic as in ``render_view``,
    so cells match single-view renders bit for bit.
    """
    scene = _as_scene(shape)
    rays = [_rays(CameraPose(e, a), cfg) for e, a in spec.poses()]
    o = np.concatenate([r[0] for r in rays])
    d = np.concatenate([r[1] for r in rays])
    n = cfg.image_size
    img = _shade(scene, o, d, cfg).reshape(spec.num_elevations, spec.num_azimuths, n, n)
    return Viewgrid(spec, img, class_id)


# --------------------------------------------------------------------------
# datasets

TRAIN, VAL, TEST, UNSEEN_TRAIN, UNSEEN_TEST = "train", "val", "test", "unseen_train", "unseen_test"
SPLITS = (TRAIN, VAL, TEST, UNSEEN_TRAIN, UNSEEN_TEST)


@dataclass
class DatasetConfig:
    """Seen classes are the first ``num_classes`` families; unseen ones follow.

    Per seen class, ``instances_per_class`` objects are split into val/test by
    the given fractions (rounded) and the remainder goes to train. Unseen
    classes get ``unseen_per_class`` objects split into unseen_train/unseen_test.
    """

    num_classes: int = 8
    instances_per_class: int = 86
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    num_unseen: int = 0
    unseen_per_class: int = 60
    unseen_test_fraction: float = 0.3
    families: Optional[Tuple[str, ...]] = None

    def family_order(self) -> Tuple[str, ...]:
        fams = tuple(self.families) if self.families else FAMILY_NAMES
        need = self.num_classes + self.num_unseen
        if self.num_classes < 1:
            raise ValueError("need at least one class")
        if need > len(fams):
            raise ValueError(f"requested {self.num_classes} seen + {self.num_unseen} unseen classes, "
                             f"only {len(fams)} families available")
        for f in fams:
            family_by_name(f)
        return fams[:need]

    def split_counts(self, seen: bool) -> Tuple[Tuple[str, int], ...]:
        if seen:
            n = self.instances_per_class
            n_val, n_test = round(n * self.val_fraction), round(n * self.test_fraction)
            if n_val + n_test > n:
                raise ValueError("val + test fractions exceed the instance count")
            return (TRAIN, n - n_val - n_test), (VAL, n_val), (TEST, n_test)
        n = self.unseen_per_class
        n_test = round(n * self.unseen_test_fraction)
        return (UNSEEN_TRAIN, n - n_test), (UNSEEN_TEST, n_test)


@dataclass
class Dataset:
    """Rendered viewgrids plus labels; pixel values stored as u8 and exposed as v/255."""

    spec: ViewSphereSpec
    pixels: np.ndarray  # (num_objects, N, M, H, W) uint8
    class_ids: np.ndarray  # (num_objects,) uint16
    splits: np.ndarray  # (num_objects,) uint8 indices into split_names
    split_names: Tuple[str, ...] = SPLITS
    class_names: Tuple[str, ...] = ()
    metadata: Dict = field(default_factory=dict)

    def __len__(self):
        return self.pixels.shape[0]

    @property
    def image_size(self) -> int:
        return self.pixels.shape[-1]

    def split_indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits == self.split_names.index(split))

    def images(self, indices=None, dtype=np.float32) -> np.ndarray:
        px = self.pixels if indices is None else self.pixels[indices]
        return px.astype(dtype) / dtype(255.0)

    def viewgrid(self, i: int) -> Viewgrid:
        return Viewgrid(self.spec, self.images(i), int(self.class_ids[i]))

    def classes_in(self, split: str) -> List[int]:
        return sorted(set(self.class_ids[self.split_indices(split)].tolist()))


def quantize(images: np.ndarray) -> np.ndarray:
    return np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)


def _object_plan(cfg: DatasetConfig, seed: int):
    """Deterministic (class_id, split, ShapeSpec) list in file order."""
    fams = cfg.family_order()
    plan = []
    for cls, fam in enumerate(fams):
        index = 0
        for split, count in cfg.split_counts(seen=cls < cfg.num_classes):
            for _ in range(count):
                r = rngmod.make_rng(seed, rngmod.DATA, cls, index)
                shape = sample_shape(fam, r, instance_seed=index)
                plan.append((cls, SPLITS.index(split), shape))
                index += 1
    return fams, plan


def _render_quantized(args):
    shape, spec, rcfg = args
    return quantize(render_viewgrid(shape, spec, rcfg).images)


def generate_dataset(cfg: DatasetConfig, spec: ViewSphereSpec, render_cfg: RenderConfig = RenderConfig(),
                     seed: int = 0, workers: int = 1, progress: Optional[Callable[[int, int], None]] = None) -> Dataset:
    """Render every planned object into a preallocated array.

    Output depends only on (cfg, spec, render_cfg, seed); ``workers`` changes
    wall time, not bytes.
    """
    fams, plan = _object_plan(cfg, seed)
    n, h = len(plan), render_cfg.image_size
    pixels = np.zeros((n, spec.num_elevations, spec.num_azimuths, h, h), dtype=np.uint8)
    jobs = [(shape, spec, render_cfg) for _, _, shape in plan]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            for i, px in enumerate(ex.map(_render_quantized, jobs, chunksize=4)):
                pixels[i] = px
                if progress:
                    progress(i + 1, n)
    else:
        for i, job in enumerate(jobs):
            pixels[i] = _render_quantized(job)
            if progress:
                progress(i + 1, n)
    meta = {
        "seed": int(seed),
        "dataset_config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(cfg).items()},
        "render": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(render_cfg).items()},
        "shapes": [[s.family, list(s.params), s.instance_seed] for _, _, s in plan],
    }
    return Dataset(
        spec=spec,
        pixels=pixels,
        class_ids=np.array([c for c, _, _ in plan], dtype=np.uint16),
        splits=np.array([s for _, s, _ in plan], dtype=np.uint8),
        split_names=SPLITS,
        class_names=fams,
        metadata=meta,
    )
