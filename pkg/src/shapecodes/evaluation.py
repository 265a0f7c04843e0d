"""Reconstruction baselines, reconstruction scoring, k-NN recognition and per-view error maps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as rngmod
from .network import AUTOENCODER, CA, FEATURE_LAYERS, ShapeCodeNet
from .shapeforge import TEST, TRAIN, UNSEEN_TEST, UNSEEN_TRAIN, Dataset
from .viewgrid import CANONICAL, RELATIVE, shift_images

AVG_VIEW, AVG_VIEWGRID = "avg_view", "avg_viewgrid"
CLASS_AVG_VIEW, CLASS_AVG_VIEWGRID = "class_avg_view", "class_avg_viewgrid"
AVG_KINDS = (AVG_VIEW, AVG_VIEWGRID, CLASS_AVG_VIEW, CLASS_AVG_VIEWGRID)


class NotApplicable(Exception):
    """Predictor cannot score this data, e.g. a class-conditioned baseline on unseen classes."""


# --------------------------------------------------------------------------
# reconstruction predictors
#
# A predictor maps (ground-truth grids, class ids, observed rows, observed cols)
# to predicted grids (B, N, M, H, W) in its own alignment ``mode``.


@dataclass
class AvgPredictor:
    kind: str
    mean_grid: Optional[np.ndarray] = None  # (N, M, H, W)
    class_grids: Dict[int, np.ndarray] = field(default_factory=dict)
    mode: str = CANONICAL

    def grid_for(self, class_id: Optional[int] = None) -> np.ndarray:
        if self.kind in (AVG_VIEW, AVG_VIEWGRID):
            return self.mean_grid
        if class_id is None or int(class_id) not in self.class_grids:
            raise NotApplicable(f"{self.kind} has no training data for class {class_id}")
        return self.class_grids[int(class_id)]

    def predict_batch(self, grids, class_ids, rows, cols) -> np.ndarray:
        return np.stack([self.grid_for(c) for c in class_ids])


def _mean_grid(grids: np.ndarray, per_view: bool) -> np.ndarray:
    g = np.asarray(grids, dtype=np.float64)
    if per_view:
        return g.mean(axis=0)
    mean_image = g.mean(axis=(0, 1, 2))
    return np.broadcast_to(mean_image, g.shape[1:]).copy()


def fit_avg_predictor(grids: np.ndarray, kind: str, class_ids: Optional[Sequence[int]] = None) -> AvgPredictor:
    """Fit on training grids (n, N, M, H, W).

    ``avg_view`` replicates the grand mean image to every cell; ``avg_viewgrid``
    keeps one mean per cell, which exploits the data's canonical alignment.
    The ``class_*`` kinds do the same per ground-truth class.
    """
    if kind not in AVG_KINDS:
        raise ValueError(f"unknown baseline {kind!r}")
    grids = np.asarray(grids)
    if grids.shape[0] == 0:
        raise ValueError("cannot fit a baseline on an empty split")
    per_view = kind in (AVG_VIEWGRID, CLASS_AVG_VIEWGRID)
    if kind in (AVG_VIEW, AVG_VIEWGRID):
        return AvgPredictor(kind, mean_grid=_mean_grid(grids, per_view))
    if class_ids is None:
        raise ValueError(f"{kind} needs class labels")
    class_ids = np.asarray(class_ids)
    table = {int(c): _mean_grid(grids[class_ids == c], per_view) for c in np.unique(class_ids)}
    return AvgPredictor(kind, class_grids=table)


def fit_avg_from_dataset(ds: Dataset, kind: str, split: str = TRAIN) -> AvgPredictor:
    idx = ds.split_indices(split)
    return fit_avg_predictor(ds.images(idx, np.float64), kind, ds.class_ids[idx])


class NetReconstructor:
    """Viewgrid network as a predictor; relative frame for ours, canonical for CA."""

    def __init__(self, net: ShapeCodeNet, elevations: Sequence[float], batch_size: int = 64):
        if net.cfg.variant == AUTOENCODER:
            raise ValueError("the autoencoder does not predict viewgrids")
        self.net = net
        self.mode = CANONICAL if net.cfg.variant == CA else RELATIVE
        self.elevations = np.asarray(elevations, dtype=np.float32)
        self.batch_size = batch_size

    def predict_batch(self, grids, class_ids, rows, cols) -> np.ndarray:
        b = np.arange(len(rows))
        images = np.asarray(grids)[b, rows, cols]
        return self.net.predict(images, self.elevations[rows], self.batch_size)


# --------------------------------------------------------------------------
# scoring


def pair_mse(pred: np.ndarray, grid: np.ndarray, col: int, mode: str) -> float:
    """Per-pixel MSE of one prediction against one ground-truth grid."""
    target = shift_images(grid, col) if mode == RELATIVE else grid
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(d * d))


def view_mse_matrix(predictor, grid: np.ndarray, class_id: int) -> np.ndarray:
    """(N, M) MSE of the reconstruction when the observed view is each cell in turn."""
    n, m = grid.shape[:2]
    rows, cols = np.divmod(np.arange(n * m), m)
    preds = predictor.predict_batch(np.broadcast_to(grid, (n * m,) + grid.shape), [class_id] * (n * m), rows, cols)
    mode = predictor.mode
    targets = shift_images(np.broadcast_to(grid, (n * m,) + grid.shape), cols) if mode == RELATIVE else grid[None]
    d = np.asarray(preds, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    return np.mean((d * d).reshape(n * m, -1), axis=1).reshape(n, m)


@dataclass
class ReconResult:
    overall: float  # MSE x 1000
    per_class: Dict[int, float]
    pairs: int


def evaluate_reconstruction(predictor, ds: Dataset, split: str) -> ReconResult:
    """MSE x 1000 over every (object, observed view) pair of ``split``.

    Raises ``NotApplicable`` when the predictor cannot handle a class in the split.
    """
    idx = ds.split_indices(split)
    if len(idx) == 0:
        raise ValueError(f"split {split!r} is empty")
    sums: Dict[int, float] = {}
    counts: Dict[int, int] = {}
    total, pairs = 0.0, 0
    for i in idx:
        c = int(ds.class_ids[i])
        mat = view_mse_matrix(predictor, ds.images(i, np.float64), c)
        s = float(mat.sum())
        sums[c] = sums.get(c, 0.0) + s
        counts[c] = counts.get(c, 0) + mat.size
        total += s
        pairs += mat.size
    per_class = {c: 1000.0 * sums[c] / counts[c] for c in sorted(sums)}
    return ReconResult(1000.0 * total / pairs, per_class, pairs)


def per_view_mse_heatmap(predictor, ds: Dataset, indices: Iterable[int]) -> np.ndarray:
    """Mean (N, M) reconstruction MSE conditioned on the observed cell, over ``indices``."""
    indices = list(indices)
    if not indices:
        raise ValueError("need at least one instance")
    acc = np.zeros(ds.spec.grid_shape)
    for i in indices:
        acc += view_mse_matrix(predictor, ds.images(i, np.float64), int(ds.class_ids[i]))
    return acc / len(indices)


# --------------------------------------------------------------------------
# k-NN recognition


@dataclass
class FeatureSet:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    method: str = ""
    layer: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        self.labels = np.asarray(self.labels).astype(np.int64)
        if len(self.labels) != len(self.features):
            raise ValueError("features and labels disagree in length")


def _vote(dist: np.ndarray, labels: np.ndarray) -> int:
    """Majority among the given neighbours; ties -> smaller summed distance -> lower class id."""
    classes = np.unique(labels)
    votes = np.array([(labels == c).sum() for c in classes])
    summed = np.array([dist[labels == c].sum() for c in classes])
    order = np.lexsort((classes, summed, -votes))
    return int(classes[order[0]])


def knn_predict(train: FeatureSet, queries: np.ndarray, k: int = 5, chunk: int = 512) -> np.ndarray:
    """Euclidean k-NN on raw features.

    Rows tied with the k-th nearest distance all join the vote, so the result
    does not depend on training-row order.
    """
    n = len(train.labels)
    if n == 0:
        raise ValueError("empty k-NN training set")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} needs between 1 and {n} training rows")
    X = train.features
    q_all = np.asarray(queries, dtype=np.float64)
    if q_all.ndim == 1:
        q_all = q_all[None]
    x2 = np.einsum("ij,ij->i", X, X)
    out = np.empty(len(q_all), dtype=np.int64)
    for s in range(0, len(q_all), chunk):
        q = q_all[s:s + chunk]
        d2 = np.einsum("ij,ij->i", q, q)[:, None] + x2[None] - 2.0 * (q @ X.T)
        np.maximum(d2, 0, out=d2)
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        for r in range(len(q)):
            # the expanded form carries roundoff, so widen the cut and rank the candidates exactly
            slack = 1e-9 * (kth[r] + x2.max() + d2[r].min()) + 1e-12
            cand = np.flatnonzero(d2[r] <= kth[r] + slack)
            diff = X[cand] - q[r]
            dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            cut = np.partition(dist, k - 1)[k - 1]
            keep = dist <= cut
            out[s + r] = _vote(dist[keep], train.labels[cand[keep]])
    return out


def knn_classify(train: FeatureSet, query: np.ndarray, k: int = 5) -> int:
    return int(knn_predict(train, np.asarray(query)[None], k)[0])


SPLIT_PAIRS = {"seen": (TRAIN, TEST), "unseen": (UNSEEN_TRAIN, UNSEEN_TEST)}


def sample_views(ds: Dataset, split: str, per_class: int, seed: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Up to ``per_class`` (object, row, col) views per class, drawn without replacement."""
    n, m = ds.spec.grid_shape
    idx = ds.split_indices(split)
    objs, rows, cols = [], [], []
    for c in ds.classes_in(split):
        members = idx[ds.class_ids[idx] == c]
        total = len(members) * n * m
        r = rngmod.make_rng(seed, rngmod.KNN, c)
        pick = np.sort(r.choice(total, size=min(per_class, total), replace=False))
        o, cell = np.divmod(pick, n * m)
        objs.append(members[o])
        rows.append(cell // m)
        cols.append(cell % m)
    return np.concatenate(objs), np.concatenate(rows), np.concatenate(cols)


def all_views(ds: Dataset, split: str):
    n, m = ds.spec.grid_shape
    idx = ds.split_indices(split)
    cells = np.arange(n * m)
    return np.repeat(idx, n * m), np.tile(cells // m, len(idx)), np.tile(cells % m, len(idx))


def gather_views(ds: Dataset, objs, rows, cols) -> np.ndarray:
    return ds.pixels[objs, rows, cols].astype(np.float32) / np.float32(255.0)


FeatureFn = Callable[[np.ndarray], np.ndarray]


def pixel_features(images: np.ndarray) -> np.ndarray:
    return np.asarray(images, dtype=np.float32).reshape(len(images), -1)


def net_features(net: ShapeCodeNet, layer: str) -> FeatureFn:
    if layer not in FEATURE_LAYERS:
        raise KeyError(f"unknown feature layer {layer!r}")
    return lambda images: net.features(images, layer)


def recognition_accuracy(feature_fn: FeatureFn, ds: Dataset, classes: str = "unseen", samples_per_class: int = 1000,
                         k: int = 5, seed: int = 0) -> float:
    """Percent of test views labelled correctly by k-NN over sampled training views."""
    train_split, test_split = SPLIT_PAIRS[classes]
    tr = sample_views(ds, train_split, samples_per_class, seed)
    if len(tr[0]) < k:
        raise ValueError(f"only {len(tr[0])} training views for k={k}")
    te = all_views(ds, test_split)
    train_set = FeatureSet(feature_fn(gather_views(ds, *tr)), ds.class_ids[tr[0]])
    pred = knn_predict(train_set, feature_fn(gather_views(ds, *te)), k)
    return 100.0 * float(np.mean(pred == ds.class_ids[te[0]]))


def tsv_table(rows: Iterable[Tuple]) -> str:
    lines = ["method\tlayer\tsplit\tmetric\tvalue"]
    for method, layer, split, metric, value in rows:
        lines.append(f"{method}\t{layer}\t{split}\t{metric}\t{value:.6f}")
    return "\n".join(lines) + "\n"
