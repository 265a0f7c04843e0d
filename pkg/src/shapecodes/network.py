"""Encoder-decoder that lifts one view plus its elevation to a full viewgrid.

Layout (defaults for 32x32 input, 7x12 grid)::

    image 1x32x32 -> conv1 32@16 -> conv2 64@8 -> conv3 128@4 -> fc1 256   (image sensor)
    elevation/90  -> elev_fc1 16 -> elev_fc2 16                           (elevation sensor)
    concat 272    -> fc2 256 -> fc3 256 = code                            (fusion)
    code          -> fc4 -> 256@4x4 -> deconv1 128@8 -> deconv2 64@16 -> deconv3 (M*N)@32 -> sigmoid

Every hidden layer is followed by ReLU.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import rng as rngmod
from .viewgrid import ViewSphereSpec, Viewgrid
from .ndtensor import (ConvTranspose2d, Conv2d, LayerParams, Linear, ReLU, ShapeError, Sigmoid,
                       conv_output_size)

OURS, CA, AUTOENCODER = "relative", "canonical", "autoencoder"
VARIANTS = (OURS, CA, AUTOENCODER)
VARIANT_ALIASES = {"ours": OURS, "relative": OURS, "ca": CA, "canonical": CA, "autoencoder": AUTOENCODER}
FEATURE_LAYERS = ("fc1", "fc2", "fc3")

LAYER_NAMES = ("conv1", "conv2", "conv3", "fc1", "elev_fc1", "elev_fc2", "fc2", "fc3", "fc4",
               "deconv1", "deconv2", "deconv3")


@dataclass
class NetConfig:
    image_size: int = 32
    code_dim: int = 256
    num_elevations: int = 7
    num_azimuths: int = 12
    variant: str = OURS
    conv_channels: Tuple[int, int, int] = (32, 64, 128)
    conv_kernels: Tuple[int, int, int] = (5, 5, 3)
    fc1_dim: int = 256
    elev_dim: int = 16
    fc2_dim: int = 256
    deconv_channels: Tuple[int, int, int] = (256, 128, 64)  # fc4 maps, deconv1 out, deconv2 out
    deconv_kernel: int = 4

    def __post_init__(self):
        self.variant = VARIANT_ALIASES.get(self.variant, self.variant)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.conv_channels = tuple(self.conv_channels)
        self.conv_kernels = tuple(self.conv_kernels)
        self.deconv_channels = tuple(self.deconv_channels)
        if self.image_size % 8:
            raise ValueError("image_size must be divisible by 8")

    @property
    def output_maps(self) -> int:
        return 1 if self.variant == AUTOENCODER else self.num_elevations * self.num_azimuths

    @property
    def seed_size(self) -> int:
        """Spatial size of the maps fc4 reshapes into."""
        return self.image_size // 8

    def to_dict(self) -> Dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: Dict) -> "NetConfig":
        return cls(**d)

    @classmethod
    def miniature(cls, **kw) -> "NetConfig":
        """Tiny 8x8 network used for finite-difference checks."""
        base = dict(image_size=8, code_dim=6, num_elevations=3, num_azimuths=4, conv_channels=(2, 3, 4),
                    conv_kernels=(3, 3, 3), fc1_dim=5, elev_dim=3, fc2_dim=6, deconv_channels=(4, 3, 2))
        base.update(kw)
        return cls(**base)


def _conv_pad(k: int) -> int:
    return (k - 1) // 2


def param_shapes(cfg: NetConfig) -> Dict[str, Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """Weight and bias shape for every named layer, in initialisation order."""
    c1, c2, c3 = cfg.conv_channels
    k1, k2, k3 = cfg.conv_kernels
    s = cfg.seed_size
    d0, d1, d2 = cfg.deconv_channels
    kd = cfg.deconv_kernel
    return {
        "conv1": ((c1, 1, k1, k1), (c1,)),
        "conv2": ((c2, c1, k2, k2), (c2,)),
        "conv3": ((c3, c2, k3, k3), (c3,)),
        "fc1": ((cfg.fc1_dim, c3 * s * s), (cfg.fc1_dim,)),
        "elev_fc1": ((cfg.elev_dim, 1), (cfg.elev_dim,)),
        "elev_fc2": ((cfg.elev_dim, cfg.elev_dim), (cfg.elev_dim,)),
        "fc2": ((cfg.fc2_dim, cfg.fc1_dim + cfg.elev_dim), (cfg.fc2_dim,)),
        "fc3": ((cfg.code_dim, cfg.fc2_dim), (cfg.code_dim,)),
        "fc4": ((d0 * s * s, cfg.code_dim), (d0 * s * s,)),
        "deconv1": ((d0, d1, kd, kd), (d1,)),
        "deconv2": ((d1, d2, kd, kd), (d2,)),
        "deconv3": ((d2, cfg.output_maps, kd, kd), (cfg.output_maps,)),
    }


def init_params(cfg: NetConfig, seed: int, dtype=np.float32) -> Dict[str, LayerParams]:
    """Uniform [-0.1, 0.1] initialisation, layer by layer in ``LAYER_NAMES`` order.

    Each layer draws from its own stream so the autoencoder's different final
    layer leaves every other tensor identical to the viewgrid model's.
    """
    out = {}
    for i, (name, (ws, bs)) in enumerate(param_shapes(cfg).items()):
        r = rngmod.make_rng(seed, rngmod.INIT, i)
        out[name] = LayerParams.uniform(name, ws, bs, r, dtype)
    return out


@dataclass
class EncoderOutput:
    fc1: np.ndarray
    fc2: np.ndarray
    fc3: np.ndarray

    @property
    def code(self) -> np.ndarray:
        return self.fc3


class ShapeCodeNet:
    """Forward/backward over batches; owns the layer objects, not the data."""

    def __init__(self, cfg: NetConfig, params: Optional[Dict[str, LayerParams]] = None, seed: int = 0,
                 dtype=np.float32):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed, dtype)
        expected = param_shapes(cfg)
        for name, (ws, bs) in expected.items():
            p = self.params.get(name)
            if p is None or p.weight.shape != ws or p.bias.shape != bs:
                raise ShapeError(f"parameter {name} missing or mis-shaped for this config")
        P = self.params
        kd = cfg.deconv_kernel
        pd = (kd - 2) // 2  # stride-2 transposed conv that doubles the size
        self.conv = [Conv2d(P[f"conv{i + 1}"], 2, _conv_pad(k)) for i, k in enumerate(cfg.conv_kernels)]
        self.conv_act = [ReLU() for _ in self.conv]
        self.fc1, self.fc1_act = Linear(P["fc1"]), ReLU()
        self.elev = [Linear(P["elev_fc1"]), Linear(P["elev_fc2"])]
        self.elev_act = [ReLU(), ReLU()]
        self.fc2, self.fc2_act = Linear(P["fc2"]), ReLU()
        self.fc3, self.fc3_act = Linear(P["fc3"]), ReLU()
        self.fc4, self.fc4_act = Linear(P["fc4"]), ReLU()
        self.deconv = [ConvTranspose2d(P[f"deconv{i + 1}"], 2, pd) for i in range(3)]
        self.deconv_act = [ReLU(), ReLU(), Sigmoid()]
        self.forward_passes = 0
        self._check_geometry()

    def _check_geometry(self):
        s = self.cfg.image_size
        for k in self.cfg.conv_kernels:
            s = conv_output_size(s, k, 2, _conv_pad(k))
        if s != self.cfg.seed_size:
            raise ShapeError(f"conv stack ends at {s}x{s}, decoder starts at {self.cfg.seed_size}")

    @property
    def dtype(self):
        return self.params["conv1"].weight.dtype

    def layer_params(self) -> List[LayerParams]:
        return [self.params[n] for n in LAYER_NAMES]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # -- forward ---------------------------------------------------------

    def _prep(self, images, elevations):
        images = np.asarray(images, dtype=self.dtype)
        if images.ndim == 2:
            images = images[None]
        if images.ndim == 3:
            images = images[:, None]
        n = self.cfg.image_size
        if images.shape[1:] != (1, n, n):
            raise ShapeError(f"expected {n}x{n} single-channel images, got {images.shape}")
        elev = np.asarray(elevations, dtype=self.dtype).reshape(-1, 1)
        if elev.shape[0] != images.shape[0]:
            raise ShapeError("one elevation per image is required")
        if np.any(np.abs(elev) > 90):
            raise ValueError("elevation outside [-90, 90]")
        return images, elev / self.dtype.type(90.0)

    def encode(self, images, elevations, cache: bool = False) -> EncoderOutput:
        x, e = self._prep(images, elevations)
        for layer, act in zip(self.conv, self.conv_act):
            x = act.forward(layer.forward(x, cache), cache)
        x = x.reshape(x.shape[0], -1)
        f1 = self.fc1_act.forward(self.fc1.forward(x, cache), cache)
        for layer, act in zip(self.elev, self.elev_act):
            e = act.forward(layer.forward(e, cache), cache)
        h = np.concatenate([f1, e], axis=1)
        f2 = self.fc2_act.forward(self.fc2.forward(h, cache), cache)
        f3 = self.fc3_act.forward(self.fc3.forward(f2, cache), cache)
        return EncoderOutput(f1, f2, f3)

    def decode(self, code, cache: bool = False) -> np.ndarray:
        """Code batch (B, D) -> (B, maps, H, W); for grid variants reshape to (B, N, M, H, W) via ``as_grid``."""
        code = np.asarray(code, dtype=self.dtype)
        if code.ndim == 1:
            code = code[None]
        if code.shape[1] != self.cfg.code_dim:
            raise ShapeError(f"code length {code.shape[1]} != {self.cfg.code_dim}")
        x = self.fc4_act.forward(self.fc4.forward(code, cache), cache)
        s = self.cfg.seed_size
        x = x.reshape(x.shape[0], self.cfg.deconv_channels[0], s, s)
        for layer, act in zip(self.deconv, self.deconv_act):
            x = act.forward(layer.forward(x, cache), cache)
        return x

    def as_grid(self, maps: np.ndarray) -> np.ndarray:
        if self.cfg.variant == AUTOENCODER:
            return maps
        b, _, h, w = maps.shape
        return maps.reshape(b, self.cfg.num_elevations, self.cfg.num_azimuths, h, w)

    def forward(self, images, elevations, cache: bool = False) -> Tuple[EncoderOutput, np.ndarray]:
        self.forward_passes += 1
        enc = self.encode(images, elevations, cache)
        return enc, self.decode(enc.code, cache)

    # -- backward --------------------------------------------------------

    def backward(self, grad_maps: np.ndarray) -> np.ndarray:
        """Backpropagate d(loss)/d(output maps); accumulates parameter grads, returns d/d(image)."""
        g = grad_maps.reshape(grad_maps.shape[0], self.cfg.output_maps, *grad_maps.shape[-2:])
        for layer, act in zip(reversed(self.deconv), reversed(self.deconv_act)):
            g = layer.backward(act.backward(g))
        g = g.reshape(g.shape[0], -1)
        g = self.fc4.backward(self.fc4_act.backward(g))
        g = self.fc3.backward(self.fc3_act.backward(g))
        g = self.fc2.backward(self.fc2_act.backward(g))
        g_img, g_elev = g[:, :self.cfg.fc1_dim], g[:, self.cfg.fc1_dim:]
        for layer, act in zip(reversed(self.elev), reversed(self.elev_act)):
            g_elev = layer.backward(act.backward(g_elev))
        g = self.fc1.backward(self.fc1_act.backward(g_img))
        s = self.cfg.seed_size
        g = g.reshape(g.shape[0], self.cfg.conv_channels[2], s, s)
        for layer, act in zip(reversed(self.conv), reversed(self.conv_act)):
            g = layer.backward(act.backward(g))
        return g

    # -- inference helpers -------------------------------------------------

    def predict(self, images, elevations, batch_size: int = 64) -> np.ndarray:
        """Batched forward without caching; grid variants return (B, N, M, H, W)."""
        images = np.asarray(images)
        elevations = np.asarray(elevations).reshape(-1)
        outs = []
        for i in range(0, images.shape[0], batch_size):
            _, maps = self.forward(images[i:i + batch_size], elevations[i:i + batch_size])
            outs.append(self.as_grid(maps))
        return np.concatenate(outs) if outs else np.zeros((0,))

    def features(self, images, layer: str = "fc3", elevations=None, batch_size: int = 256) -> np.ndarray:
        """Encoder activations; elevation input defaults to 0 for every image."""
        if layer not in FEATURE_LAYERS:
            raise KeyError(f"unknown feature layer {layer!r}; choose from {FEATURE_LAYERS}")
        images = np.asarray(images)
        if elevations is None:
            elevations = np.zeros(images.shape[0])
        out = []
        for i in range(0, images.shape[0], batch_size):
            enc = self.encode(images[i:i + batch_size], elevations[i:i + batch_size])
            out.append(getattr(enc, layer))
        return np.concatenate(out)


def extract_features(net: ShapeCodeNet, image, layer: str = "fc3") -> np.ndarray:
    """Feature vector for one image with the elevation input forced to 0."""
    return net.features(np.asarray(image)[None], layer)[0]


def predict_viewgrid(net: ShapeCodeNet, image, elevation: float, spec: ViewSphereSpec) -> Viewgrid:
    """Whole viewgrid from one view in a single forward pass, observed azimuth at column 0."""
    if net.cfg.variant == AUTOENCODER:
        raise ValueError("the autoencoder variant reconstructs one view, not a viewgrid")
    if spec.grid_shape != (net.cfg.num_elevations, net.cfg.num_azimuths):
        raise ShapeError(f"network predicts {net.cfg.num_elevations}x{net.cfg.num_azimuths} grids, spec is {spec.grid_shape}")
    _, maps = net.forward(np.asarray(image)[None], [elevation])
    return Viewgrid(spec, net.as_grid(maps)[0])
