"""Finite-difference gradient checks for every layer and the whole network.

Each check draws a random configuration (shapes, strides, paddings, values),
runs in float64 and compares analytic gradients to central differences.
Linear layers are probed through a random projection ``sum(out * R)`` so that
every output element carries an O(1) gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import ndtensor as nd
from . import rng as rngmod
from .ndtensor import GradCheckReport, grad_check
from .network import AUTOENCODER, CA, OURS, NetConfig, ShapeCodeNet
from .viewgrid import ViewIndex, Viewgrid, ViewSphereSpec, ca_loss, viewgrid_loss

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    check: str
    instance: int
    description: str
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        verdict = "ok" if self.passed else "FAIL"
        return f"{self.check}\t{self.instance}\t{self.report.worst:.3e}\t{verdict}\t{self.description}"


def _projected(fn: Callable[[], np.ndarray], proj: np.ndarray) -> Callable[[], float]:
    return lambda: float(np.sum(fn() * proj))


def _away_from_zero(r: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    """Values in +-[margin, 1] so a finite-difference step never crosses a ReLU kink."""
    return r.uniform(margin, 1.0, shape) * r.choice([-1.0, 1.0], shape)


# --------------------------------------------------------------------------
# single layers


def check_conv(r: np.random.Generator, tol: float = TOLERANCE):
    k = int(r.integers(1, 6))
    s = int(r.integers(1, 4))
    p = int(r.integers(0, k))
    b, ci, co = (int(v) for v in r.integers(1, 4, size=3))
    h = int(r.integers(max(k - 2 * p, 1), 9))
    w = int(r.integers(max(k - 2 * p, 1), 9))
    x = r.normal(size=(b, ci, h, w))
    wt = r.normal(size=(co, ci, k, k))
    bias = r.normal(size=co)
    out = nd.conv2d_forward(x, wt, bias, s, p)
    proj = r.normal(size=out.shape)
    loss = _projected(lambda: nd.conv2d_forward(x, wt, bias, s, p), proj)

    def grads():
        gx, gw, gb = nd.conv2d_backward(proj, x, wt, s, p)
        return {"x": gx, "weight": gw, "bias": gb}

    desc = f"x={x.shape} k={k} stride={s} pad={p} out={out.shape}"
    return desc, grad_check(loss, grads, {"x": x, "weight": wt, "bias": bias}, tol, STEP)


def check_deconv(r: np.random.Generator, tol: float = TOLERANCE):
    k = int(r.integers(1, 6))
    s = int(r.integers(1, 4))
    b, ci, co = (int(v) for v in r.integers(1, 4, size=3))
    h, w = (int(v) for v in r.integers(1, 6, size=2))
    max_pad = (min(h, w) - 1) * s + k - 1
    p = int(r.integers(0, min(k, max_pad // 2 + 1)))
    x = r.normal(size=(b, ci, h, w))
    wt = r.normal(size=(ci, co, k, k))
    bias = r.normal(size=co)
    out = nd.deconv2d_forward(x, wt, bias, s, p)
    proj = r.normal(size=out.shape)
    loss = _projected(lambda: nd.deconv2d_forward(x, wt, bias, s, p), proj)

    def grads():
        gx, gw, gb = nd.deconv2d_backward(proj, x, wt, s, p)
        return {"x": gx, "weight": gw, "bias": gb}

    desc = f"x={x.shape} k={k} stride={s} pad={p} out={out.shape}"
    return desc, grad_check(loss, grads, {"x": x, "weight": wt, "bias": bias}, tol, STEP)


def check_fc(r: np.random.Generator, tol: float = TOLERANCE):
    b, di, do = (int(v) for v in r.integers(1, 8, size=3))
    x, wt, bias = r.normal(size=(b, di)), r.normal(size=(do, di)), r.normal(size=do)
    proj = r.normal(size=(b, do))
    loss = _projected(lambda: nd.fc_forward(x, wt, bias), proj)

    def grads():
        gx, gw, gb = nd.fc_backward(proj, x, wt)
        return {"x": gx, "weight": gw, "bias": gb}

    return f"x={x.shape} out={do}", grad_check(loss, grads, {"x": x, "weight": wt, "bias": bias}, tol, STEP)


def check_relu(r: np.random.Generator, tol: float = TOLERANCE):
    x = _away_from_zero(r, tuple(int(v) for v in r.integers(1, 6, size=3)))
    proj = r.normal(size=x.shape)
    loss = _projected(lambda: nd.relu_forward(x), proj)
    return f"x={x.shape}", grad_check(loss, lambda: {"x": nd.relu_backward(proj, x)}, {"x": x}, tol, STEP)


def check_sigmoid(r: np.random.Generator, tol: float = TOLERANCE):
    x = r.normal(scale=3.0, size=tuple(int(v) for v in r.integers(1, 6, size=3)))
    proj = r.normal(size=x.shape)
    loss = _projected(lambda: nd.sigmoid_forward(x), proj)
    grads = lambda: {"x": nd.sigmoid_backward(proj, nd.sigmoid_forward(x))}  # noqa: E731
    return f"x={x.shape}", grad_check(loss, grads, {"x": x}, tol, STEP)


def check_mse(r: np.random.Generator, tol: float = TOLERANCE):
    shape = tuple(int(v) for v in r.integers(1, 6, size=3))
    pred, target = r.uniform(size=shape), r.uniform(size=shape)
    mask = None
    if r.random() < 0.5:
        mask = (r.random(shape) < 0.7).astype(np.float64)
        mask.reshape(-1)[0] = 1.0
    loss = lambda: nd.mse_mean(pred, target, mask)[0]  # noqa: E731
    grads = lambda: {"pred": nd.mse_mean(pred, target, mask)[1]}  # noqa: E731
    return f"pred={shape} masked={mask is not None}", grad_check(loss, grads, {"pred": pred}, tol, STEP)


def check_viewgrid_loss(r: np.random.Generator, tol: float = TOLERANCE):
    n, m, h = int(r.integers(1, 4)), int(r.integers(1, 6)), int(r.integers(1, 4))
    spec = ViewSphereSpec(m, tuple(np.linspace(-60, 60, n).tolist()) if n > 1 else (0.0,))
    pred = r.uniform(size=(n, m, h, h))
    gt = Viewgrid(spec, r.uniform(size=(n, m, h, h)))
    obs = ViewIndex(int(r.integers(n)), int(r.integers(m)))
    canonical = bool(r.random() < 0.3)
    if canonical:
        loss = lambda: ca_loss(pred, gt)[0]  # noqa: E731
        grads = lambda: {"pred": ca_loss(pred, gt)[1]}  # noqa: E731
    else:
        loss = lambda: viewgrid_loss(pred, gt, obs)[0]  # noqa: E731
        grads = lambda: {"pred": viewgrid_loss(pred, gt, obs)[1]}  # noqa: E731
    desc = f"grid={n}x{m} observed={obs.elev_row},{obs.azim_col} canonical={canonical}"
    return desc, grad_check(loss, grads, {"pred": pred}, tol, STEP)


LAYER_CHECKS: Dict[str, Callable] = {
    "conv2d": check_conv,
    "deconv2d": check_deconv,
    "linear": check_fc,
    "relu": check_relu,
    "sigmoid": check_sigmoid,
    "mse": check_mse,
    "viewgrid_loss": check_viewgrid_loss,
}


# --------------------------------------------------------------------------
# whole network


def _relu_layers(net: ShapeCodeNet):
    return [*net.conv_act, net.fc1_act, *net.elev_act, net.fc2_act, net.fc3_act, net.fc4_act, *net.deconv_act[:-1]]


def _draw_network(r: np.random.Generator, cfg: NetConfig):
    net = ShapeCodeNet(cfg, seed=int(r.integers(2 ** 31)), dtype=np.float64)
    b = int(r.integers(1, 4))
    images = r.uniform(size=(b, cfg.image_size, cfg.image_size))
    elevations = r.choice([-90.0, -45.0, 0.0, 45.0, 90.0], size=b)
    # Redraw weights with variance 2 / fan_in so activations and gradients keep O(1)
    # scale through every layer; at the +-0.1 training init the early-layer
    # gradients of this tiny net sink to ~1e-10, below central-difference resolution.
    for name, p in net.params.items():
        w = p.weight
        if name.startswith("deconv"):
            fan_in = w.shape[0] * w.shape[2] * w.shape[3] / 4.0
        else:
            fan_in = float(np.prod(w.shape[1:]))
        w[...] = r.uniform(-1.0, 1.0, w.shape) * np.sqrt(6.0 / fan_in)
        p.bias[...] = r.uniform(0.0, 0.1, p.bias.shape)
    return net, images, elevations


def check_network(r: np.random.Generator, variant: str = OURS, tol: float = TOLERANCE, max_entries: int = 6,
                  kink_margin: float = 1e-4, max_draws: int = 100):
    """Miniature network, float64, training loss for ``variant`` against random targets.

    Draws are rejected while any ReLU input lies within ``kink_margin`` of 0,
    where a finite-difference step could straddle the kink.
    """
    cfg = NetConfig.miniature(variant=variant)
    for draw in range(max_draws):
        net, images, elevations = _draw_network(r, cfg)
        net.forward(images, elevations, cache=True)
        margin = min(float(np.min(np.abs(act._cache))) for act in _relu_layers(net))
        if margin > kink_margin:
            break
    else:
        raise RuntimeError(f"no kink-free draw in {max_draws} tries")
    b = len(images)
    target = r.uniform(size=(b, cfg.output_maps, cfg.image_size, cfg.image_size))

    def loss():
        _, out = net.forward(images, elevations)
        return nd.mse_mean(out, target)[0]

    def grads():
        net.zero_grad()
        _, out = net.forward(images, elevations, cache=True)
        net.backward(nd.mse_mean(out, target)[1])
        g = {}
        for name, p in net.params.items():
            g[f"{name}.weight"] = p.weight_grad.copy()
            g[f"{name}.bias"] = p.bias_grad.copy()
        return g

    tensors = {}
    for name, p in net.params.items():
        tensors[f"{name}.weight"] = p.weight
        tensors[f"{name}.bias"] = p.bias
    report = grad_check(loss, grads, tensors, tol, STEP, max_entries=max_entries, rng=r)
    return f"variant={variant} batch={b} draws={draw + 1} relu_margin={margin:.1e}", report


NETWORK_VARIANTS = (OURS, CA, AUTOENCODER)


def run_suite(instances: int = 20, seed: int = 0, tol: float = TOLERANCE,
              checks: Optional[Sequence[str]] = None) -> List[CheckResult]:
    """All layer checks plus the end-to-end check for each variant, ``instances`` draws apiece."""
    names = list(checks) if checks else list(LAYER_CHECKS) + [f"network:{v}" for v in NETWORK_VARIANTS]
    results = []
    for ci, name in enumerate(names):
        for i in range(instances):
            r = rngmod.make_rng(seed, rngmod.EVAL, ci, i)
            if name.startswith("network:"):
                desc, rep = check_network(r, name.split(":", 1)[1], tol)
            elif name in LAYER_CHECKS:
                desc, rep = LAYER_CHECKS[name](r, tol)
            else:
                raise KeyError(f"unknown check {name!r}")
            results.append(CheckResult(name, i, desc, rep))
    return results
