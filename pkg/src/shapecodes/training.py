"""Minibatch SGD training with validation early stopping and a learning-rate sweep."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as rngmod
from .formats import parse_checkpoint, checkpoint_bytes
from .ndtensor import LayerParams, NonFiniteError, OptimizerConfig, mse_mean, sgd_momentum_step
from .network import AUTOENCODER, CA, LAYER_NAMES, OURS, NetConfig, ShapeCodeNet
from .shapeforge import TRAIN, VAL, Dataset
from .viewgrid import shift_images

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_grid: Tuple[float, ...] = (0.1, 0.03, 0.01, 0.003)
    momentum: float = 0.9
    batch_size: int = 32
    patience: int = 3
    max_epochs: int = 60
    val_interval: int = 0  # steps between validations; 0 = once per epoch
    val_views_per_object: int = 4
    seed: int = 0

    def __post_init__(self):
        self.lr_grid = tuple(float(x) for x in self.lr_grid)
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not self.lr_grid:
            raise ValueError("lr_grid is empty")
        OptimizerConfig(self.lr_grid[0], self.momentum, self.batch_size)

    def to_dict(self) -> Dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass
class LogRow:
    lr: float
    epoch: int
    step: int
    train_loss: float
    val_loss: float
    best: bool = False

    HEADER = "lr\tepoch\tstep\ttrain_loss\tval_loss\tbest"

    def line(self) -> str:
        return f"{self.lr:g}\t{self.epoch}\t{self.step}\t{self.train_loss:.9g}\t{self.val_loss:.9g}\t{int(self.best)}"


@dataclass
class RunSummary:
    lr: float
    best_val: float
    best_epoch: int
    epochs_run: int
    diverged: bool = False
    message: str = ""


@dataclass
class TrainResult:
    net: ShapeCodeNet
    learning_rate: float
    log: List[LogRow]
    runs: List[RunSummary]

    def log_text(self) -> str:
        return "\n".join([LogRow.HEADER] + [row.line() for row in self.log]) + "\n"


# --------------------------------------------------------------------------
# batches


def make_batch(ds: Dataset, objects: np.ndarray, rows: np.ndarray, cols: np.ndarray, variant: str):
    """Inputs and targets for (object, observed cell) triples."""
    grids = ds.images(objects)  # (B, N, M, H, W)
    b = np.arange(len(objects))
    images = grids[b, rows, cols]
    elevations = np.asarray(ds.spec.elevations, dtype=np.float32)[rows]
    if variant == OURS:
        target = shift_images(grids, cols)
    elif variant == CA:
        target = grids
    elif variant == AUTOENCODER:
        target = images[:, None]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return images, elevations, target.reshape(len(objects), -1, *images.shape[-2:])


def batch_loss(net: ShapeCodeNet, ds, objects, rows, cols, train: bool) -> float:
    images, elev, target = make_batch(ds, objects, rows, cols, net.cfg.variant)
    _, out = net.forward(images, elev, cache=train)
    loss, grad = mse_mean(out, target)
    if not math.isfinite(loss):
        raise NonFiniteError(f"loss is {loss}")
    if train:
        net.backward(grad)
    return loss


def validation_views(ds: Dataset, cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed (object, row, col) triples used for every validation pass."""
    objs = ds.split_indices(VAL)
    r = rngmod.make_rng(cfg.seed, rngmod.VALIDATION)
    n, m = ds.spec.grid_shape
    k = min(cfg.val_views_per_object, n * m)
    cells = np.stack([r.choice(n * m, size=k, replace=False) for _ in objs]) if len(objs) else np.zeros((0, k), int)
    return np.repeat(objs, k), (cells // m).reshape(-1), (cells % m).reshape(-1)


def evaluate_loss(net: ShapeCodeNet, ds: Dataset, views, batch_size: int = 64) -> float:
    """Mean per-example loss; batches summed in order, weighted by size."""
    objs, rows, cols = views
    total = 0.0
    for i in range(0, len(objs), batch_size):
        sl = slice(i, i + batch_size)
        total += batch_loss(net, ds, objs[sl], rows[sl], cols[sl], train=False) * len(objs[sl])
    return total / len(objs)


# --------------------------------------------------------------------------
# training


def _snapshot(net: ShapeCodeNet) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    return {k: (p.weight.copy(), p.bias.copy()) for k, p in net.params.items()}


def _restore(net: ShapeCodeNet, snap):
    for k, (w, b) in snap.items():
        net.params[k].weight[...] = w
        net.params[k].bias[...] = b


def train_single_lr(ds: Dataset, net_cfg: NetConfig, cfg: TrainConfig, lr: float,
                    progress: Optional[Callable[[LogRow], None]] = None):
    """One learning rate: fresh init, SGD with momentum, early stopping on validation loss."""
    net = ShapeCodeNet(net_cfg, seed=cfg.seed)
    opt = OptimizerConfig(lr, cfg.momentum, cfg.batch_size)
    train_objs = ds.split_indices(TRAIN)
    val_views = validation_views(ds, cfg)
    n, m = ds.spec.grid_shape
    rows: List[LogRow] = []

    best = evaluate_loss(net, ds, val_views)
    rows.append(LogRow(lr, 0, 0, float("nan"), best, True))
    best_snap, best_epoch, since_best = _snapshot(net), 0, 0
    step, epoch, running = 0, 0, []
    summary = RunSummary(lr, best, 0, 0)

    def validate():
        nonlocal best, best_snap, best_epoch, since_best
        val = evaluate_loss(net, ds, val_views)
        train_loss = float(np.mean(running)) if running else float("nan")
        running.clear()
        row = LogRow(lr, epoch, step, train_loss, val)
        if val < best:
            best, best_snap, best_epoch, since_best = val, _snapshot(net), epoch, 0
            row.best = True
        else:
            since_best += 1
        rows.append(row)
        if progress:
            progress(row)
        return since_best >= cfg.patience

    try:
        stop = False
        for epoch in range(1, cfg.max_epochs + 1):
            r = rngmod.make_rng(cfg.seed, rngmod.TRAIN, epoch)
            order = r.permutation(train_objs)
            cells = r.integers(0, n * m, size=len(order))
            for i in range(0, len(order), cfg.batch_size):
                sl = slice(i, i + cfg.batch_size)
                loss = batch_loss(net, ds, order[sl], cells[sl] // m, cells[sl] % m, train=True)
                sgd_momentum_step(net.layer_params(), opt)
                running.append(loss)
                step += 1
                if cfg.val_interval and step % cfg.val_interval == 0 and validate():
                    stop = True
                    break
            if stop:
                break
            if not cfg.val_interval and validate():
                break
        summary.epochs_run = epoch
    except NonFiniteError as exc:
        summary.diverged, summary.message = True, str(exc)
        log.warning("lr=%g diverged at step %d: %s", lr, step, exc)
    if not math.isfinite(best):
        summary.diverged = True
    _restore(net, best_snap)
    net.zero_grad()
    summary.best_val, summary.best_epoch = best, best_epoch
    return net, rows, summary


def train(ds: Dataset, net_cfg: NetConfig, cfg: TrainConfig,
          progress: Optional[Callable[[LogRow], None]] = None) -> TrainResult:
    """Sweep ``cfg.lr_grid`` and keep the run with the lowest validation loss."""
    if len(ds.split_indices(TRAIN)) == 0 or len(ds.split_indices(VAL)) == 0:
        raise ValueError("dataset needs non-empty train and val splits")
    if (net_cfg.num_elevations, net_cfg.num_azimuths) != ds.spec.grid_shape:
        raise ValueError(f"network grid {net_cfg.num_elevations}x{net_cfg.num_azimuths} vs dataset {ds.spec.grid_shape}")
    if net_cfg.image_size != ds.image_size:
        raise ValueError("network and dataset image sizes differ")
    best = None
    all_rows, runs = [], []
    for lr in cfg.lr_grid:
        net, rows, summary = train_single_lr(ds, net_cfg, cfg, lr, progress)
        all_rows += rows
        runs.append(summary)
        log.info("lr=%g best val %.6g at epoch %d (%d epochs)", lr, summary.best_val, summary.best_epoch,
                 summary.epochs_run)
        if not summary.diverged and (best is None or summary.best_val < best[1].best_val):
            best = (net, summary)
    if best is None:
        raise NonFiniteError("every learning rate diverged")
    return TrainResult(best[0], best[1].lr, all_rows, runs)


# --------------------------------------------------------------------------
# checkpoints


def checkpoint_metadata(net: ShapeCodeNet, train_cfg: Optional[TrainConfig] = None, dataset_hash: str = "",
                        learning_rate: Optional[float] = None, extra: Optional[Dict] = None) -> Dict:
    meta = {"net_config": net.cfg.to_dict(), "dataset_sha256": dataset_hash}
    if train_cfg is not None:
        meta["train_config"] = train_cfg.to_dict()
        meta["seed"] = train_cfg.seed
    if learning_rate is not None:
        meta["learning_rate"] = learning_rate
    if extra:
        meta.update(extra)
    return meta


def net_tensors(net: ShapeCodeNet) -> Dict[str, np.ndarray]:
    out = {}
    for name in LAYER_NAMES:
        out.update(net.params[name].tensors())
    return out


def net_from_tensors(tensors: Dict[str, np.ndarray], meta: Dict) -> ShapeCodeNet:
    cfg = NetConfig.from_dict(meta["net_config"])
    params = {}
    for name in LAYER_NAMES:
        try:
            params[name] = LayerParams(name, tensors[f"{name}.weight"], tensors[f"{name}.bias"])
        except KeyError as exc:
            raise ValueError(f"checkpoint lacks tensor {exc}") from None
    return ShapeCodeNet(cfg, params)


def net_to_bytes(net: ShapeCodeNet, meta: Dict) -> bytes:
    return checkpoint_bytes(net_tensors(net), meta)


def net_from_bytes(data: bytes) -> Tuple[ShapeCodeNet, Dict]:
    tensors, meta = parse_checkpoint(data)
    return net_from_tensors(tensors, meta), meta
