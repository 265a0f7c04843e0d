"""Viewgrids: the N x M array of views that serves as an image-based shape model.

Rows are camera elevations (increasing), columns are azimuths. A learned
model predicts grids *relative* to the observed view, i.e. with the observed
azimuth moved to column 0; the helpers here build the matching targets.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .ndtensor import ShapeError, mse_mean

RELATIVE = "relative"
CANONICAL = "canonical"
ALIGNMENT_MODES = (RELATIVE, CANONICAL)


@dataclass(frozen=True)
class ViewSphereSpec:
    num_azimuths: int
    elevations: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "elevations", tuple(float(e) for e in self.elevations))
        if self.num_azimuths < 1:
            raise ValueError("need at least one azimuth")
        if not self.elevations:
            raise ValueError("need at least one elevation")
        if len(set(self.elevations)) != len(self.elevations):
            raise ValueError(f"duplicate elevations in {self.elevations}")
        if any(b <= a for a, b in zip(self.elevations, self.elevations[1:])):
            raise ValueError("elevations must be strictly increasing")
        if any(abs(e) > 90 for e in self.elevations):
            raise ValueError("elevations must lie in [-90, 90]")

    @property
    def num_elevations(self) -> int:
        return len(self.elevations)

    @property
    def azimuths(self) -> Tuple[float, ...]:
        return tuple(k * 360.0 / self.num_azimuths for k in range(self.num_azimuths))

    @property
    def size(self) -> int:
        return self.num_azimuths * self.num_elevations

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.num_elevations, self.num_azimuths

    def poses(self) -> List[Tuple[float, float]]:
        """(elevation, azimuth) pairs in row-major cell order."""
        return [(e, a) for e in self.elevations for a in self.azimuths]


def sample_view_sphere(num_azimuths: int, elevations: Sequence[float]) -> ViewSphereSpec:
    """Cartesian product of ``num_azimuths`` evenly spaced azimuths and the given elevations.

    >>> sample_view_sphere(12, [-90, -60, -30, 0, 30, 60, 90]).grid_shape
    (7, 12)
    """
    return ViewSphereSpec(int(num_azimuths), tuple(elevations))


@dataclass(frozen=True)
class ViewIndex:
    elev_row: int
    azim_col: int

    def validate(self, spec: ViewSphereSpec) -> "ViewIndex":
        if not (0 <= self.elev_row < spec.num_elevations and 0 <= self.azim_col < spec.num_azimuths):
            raise IndexError(f"{self} outside a {spec.grid_shape} grid")
        return self

    def flat(self, spec: ViewSphereSpec) -> int:
        return self.elev_row * spec.num_azimuths + self.azim_col


@dataclass
class Viewgrid:
    spec: ViewSphereSpec
    images: np.ndarray  # (N, M, H, W)
    class_id: Optional[int] = None

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[:2] != self.spec.grid_shape:
            raise ShapeError(f"images {self.images.shape} do not match grid {self.spec.grid_shape}")

    @property
    def image_shape(self) -> Tuple[int, int]:
        return self.images.shape[2], self.images.shape[3]

    def view(self, index: ViewIndex) -> np.ndarray:
        return self.images[index.elev_row, index.azim_col]


def _images(vg) -> np.ndarray:
    return vg.images if isinstance(vg, Viewgrid) else np.asarray(vg)


def shift_images(images: np.ndarray, k) -> np.ndarray:
    """Circular azimuth shift on raw arrays with azimuth on axis -3.

    Output column j holds input column (j + k) mod M. ``k`` may be a vector
    with one shift per leading batch entry when ``images`` is (B, N, M, H, W).
    """
    m = images.shape[-3]
    if np.ndim(k) == 0:
        cols = (np.arange(m) + int(k)) % m
        return images[..., cols, :, :]
    k = np.asarray(k)
    cols = (np.arange(m)[None, :] + k[:, None]) % m  # (B, M)
    b = np.arange(images.shape[0])[:, None]
    return images[b, :, cols].transpose(0, 2, 1, 3, 4)


def azimuth_shift(vg: Viewgrid, k: int) -> Viewgrid:
    return Viewgrid(vg.spec, shift_images(vg.images, k), vg.class_id)


def align_target(gt: Viewgrid, observed: ViewIndex) -> Viewgrid:
    """Rotate ``gt`` so the observed azimuth sits in column 0."""
    observed.validate(gt.spec)
    return azimuth_shift(gt, observed.azim_col)


def _check_pair(pred, gt: Viewgrid):
    p = _images(pred)
    if p.shape != gt.images.shape:
        raise ShapeError(f"prediction {p.shape} vs ground truth {gt.images.shape}")
    if isinstance(pred, Viewgrid) and pred.spec != gt.spec:
        raise ShapeError("prediction and ground truth use different view spheres")
    return p


def _cell_mask(mask, shape):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != shape[:2]:
        raise ShapeError(f"mask {mask.shape} must be the grid shape {shape[:2]}")
    return mask[:, :, None, None]


def viewgrid_loss(pred, gt: Viewgrid, observed: ViewIndex, mask=None) -> Tuple[float, np.ndarray]:
    """Relative-alignment regression loss and its gradient w.r.t. ``pred``.

    ``mask`` is an optional (N, M) 0/1 array in the ground truth's own cell
    coordinates marking which views exist; missing views drop out of the mean.
    """
    p = _check_pair(pred, gt)
    target = align_target(gt, observed).images
    if mask is not None:
        mask = shift_images(np.asarray(mask)[:, :, None, None], observed.azim_col)[:, :, 0, 0]
    return mse_mean(p, target.astype(p.dtype, copy=False), _cell_mask(mask, p.shape))


def ca_loss(pred, gt: Viewgrid, mask=None) -> Tuple[float, np.ndarray]:
    """Loss against the grid in its canonical (dataset) azimuth frame."""
    p = _check_pair(pred, gt)
    return mse_mean(p, gt.images.astype(p.dtype, copy=False), _cell_mask(mask, p.shape))


def mse_metric_x1000(pred, gt: Viewgrid, observed: Optional[ViewIndex], mode: str = RELATIVE) -> float:
    """Per-pixel MSE scaled by 1000, against the target aligned per ``mode``."""
    p = np.asarray(_check_pair(pred, gt), dtype=np.float64)
    if mode == RELATIVE:
        if observed is None:
            raise ValueError("relative alignment needs the observed view")
        target = align_target(gt, observed).images
    elif mode == CANONICAL:
        target = gt.images
    else:
        raise ValueError(f"unknown alignment mode {mode!r}")
    loss, _ = mse_mean(p, np.asarray(target, dtype=np.float64))
    return 1000.0 * loss


# --------------------------------------------------------------------------
# PGM montages

SEPARATOR = 255


def to_u8(images: np.ndarray) -> np.ndarray:
    return np.round(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)


def montage(images: np.ndarray) -> np.ndarray:
    """Tile (N, M, H, W) into one u8 image with 1-pixel separators on every edge."""
    n, m, h, w = images.shape
    tiles = images if images.dtype == np.uint8 else to_u8(images)
    out = np.full((n * (h + 1) + 1, m * (w + 1) + 1), SEPARATOR, dtype=np.uint8)
    for i in range(n):
        for j in range(m):
            r, c = 1 + i * (h + 1), 1 + j * (w + 1)
            out[r:r + h, c:c + w] = tiles[i, j]
    return out


def stack_montages(*grids: np.ndarray) -> np.ndarray:
    """Stack tile grids vertically, sharing the separator rows between them."""
    parts = [montage(g) for g in grids]
    return np.concatenate([parts[0]] + [p[1:] for p in parts[1:]], axis=0)


def untile(canvas: np.ndarray, n: int, m: int, h: int, w: int, offset_rows: int = 0) -> np.ndarray:
    """Inverse of ``montage`` for a grid starting at row ``offset_rows``."""
    out = np.empty((n, m, h, w), dtype=canvas.dtype)
    for i in range(n):
        for j in range(m):
            r, c = offset_rows + 1 + i * (h + 1), 1 + j * (w + 1)
            out[i, j] = canvas[r:r + h, c:c + w]
    return out


def write_pgm(path, image: np.ndarray):
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = to_u8(image)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(image).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    # header: magic, width, height, maxval separated by whitespace, then one whitespace byte
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w).copy()
