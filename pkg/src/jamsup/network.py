"""The D-layer conv/ReLU/BN denoising network, its loss and its optimizer."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .layers import (
    BatchNormParams,
    ConvLayerParams,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
)

__all__ = [
    "NetworkConfig",
    "NetworkWeights",
    "AdamState",
    "TrainedModel",
    "init_weights",
    "network_forward",
    "network_backward",
    "loss",
    "loss_grad",
    "adam_step",
    "save_model",
    "load_model",
    "MAGIC",
    "VERSION",
]

MAGIC = b"JSDN"
VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 5
    hidden_filters: int = 32
    kernel_rows: int = 5
    kernel_cols: int = 2
    input_channels: int = 2
    output_channels: int = 1
    column_padding: str = "alternate"

    def __post_init__(self):
        if self.column_padding not in ("alternate", "right"):
            raise ValueError("column_padding must be 'alternate' or 'right'")
        if self.depth < 2:
            raise ValueError(f"depth must be at least 2, got {self.depth}")
        if min(self.hidden_filters, self.kernel_rows, self.kernel_cols) < 1:
            raise ValueError("hidden_filters and kernel dims must be positive")

    def col_pad(self, layer: int) -> str:
        """Zero-column side for 0-based ``layer``: right, left, right, ...

        With one-sided padding on every layer the last output column would
        never see the first input column; alternating lets every output
        column draw on both the real and imaginary parts.
        """
        if self.column_padding == "right":
            return "right"
        return "right" if layer % 2 == 0 else "left"

    def layer_channels(self) -> list[tuple[int, int]]:
        h = self.hidden_filters
        chans = [(self.input_channels, h)]
        chans += [(h, h)] * (self.depth - 2)
        chans.append((h, self.output_channels))
        return chans


@dataclass
class NetworkWeights:
    conv_layers: list[ConvLayerParams]
    bn_layers: list[BatchNormParams]

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (kernels, biases, then gamma, beta)."""
        out = []
        for c in self.conv_layers:
            out += [c.kernels, c.biases]
        for b in self.bn_layers:
            out += [b.gamma, b.beta]
        return out

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(
            [ConvLayerParams(c.kernels.copy(), c.biases.copy()) for c in self.conv_layers],
            [
                BatchNormParams(
                    b.gamma.copy(), b.beta.copy(), b.running_mean.copy(),
                    b.running_var.copy(), b.momentum, b.epsilon,
                )
                for b in self.bn_layers
            ],
        )

    def astype(self, dtype) -> "NetworkWeights":
        w = self.copy()
        for c in w.conv_layers:
            c.kernels, c.biases = c.kernels.astype(dtype), c.biases.astype(dtype)
        for b in w.bn_layers:
            for name in ("gamma", "beta", "running_mean", "running_var"):
                setattr(b, name, getattr(b, name).astype(dtype))
        return w

    def check(self, config: NetworkConfig) -> None:
        chans = config.layer_channels()
        if len(self.conv_layers) != config.depth or len(self.bn_layers) != config.depth - 2:
            raise ValueError("weights do not match network depth")
        for d, (c, (cin, cout)) in enumerate(zip(self.conv_layers, chans)):
            want = (config.kernel_rows, config.kernel_cols, cin, cout)
            if c.kernels.shape != want or c.biases.shape != (cout,):
                raise ValueError(f"layer {d + 1}: kernels {c.kernels.shape}, expected {want}")


def _float32(x: float) -> float:
    # BN scalars are stored as float32 on disk; keep them representable
    return float(np.float32(x))


def init_weights(config: NetworkConfig, rng: np.random.Generator, dtype=np.float32,
                 momentum=0.9, epsilon=1e-5) -> NetworkWeights:
    """He-normal kernels (std sqrt(2/fan_in)), zero biases, identity BN."""
    convs = []
    for cin, cout in config.layer_channels():
        fan_in = config.kernel_rows * config.kernel_cols * cin
        k = rng.standard_normal((config.kernel_rows, config.kernel_cols, cin, cout))
        convs.append(ConvLayerParams((k * np.sqrt(2.0 / fan_in)).astype(dtype),
                                     np.zeros(cout, dtype)))
    bns = [
        BatchNormParams.identity(config.hidden_filters, _float32(momentum), _float32(epsilon), dtype)
        for _ in range(config.depth - 2)
    ]
    return NetworkWeights(convs, bns)


@dataclass
class _Cache:
    inputs: list = field(default_factory=list)  # conv input per layer
    cols: list = field(default_factory=list)
    preact: list = field(default_factory=list)  # conv output feeding ReLU
    bn: list = field(default_factory=list)


def network_forward(x, weights: NetworkWeights, config: NetworkConfig, mode="inference",
                    update_running=True):
    """Layer 1: conv->ReLU; layers 2..D-1: conv->ReLU->BN; layer D: conv.

    ``x`` is a (B, S, 2, 2) batch; returns the (B, S, 2, 1) output and a cache
    for :func:`network_backward`.
    """
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[3] != config.input_channels:
        raise ValueError(f"expected (B, S, 2, {config.input_channels}) input, got {x.shape}")
    cache = _Cache()
    h = x
    last = config.depth - 1
    for d, conv in enumerate(weights.conv_layers):
        cache.inputs.append(h)
        h, cols = conv2d_forward(h, conv, return_cols=True, col_pad=config.col_pad(d))
        cache.cols.append(cols)
        if d == last:
            break
        cache.preact.append(h)
        h = relu_forward(h)
        if d >= 1:
            h, bc = batchnorm_forward(h, weights.bn_layers[d - 1], mode, update_running)
            cache.bn.append(bc)
    return h, cache


def network_backward(cache: _Cache, weights: NetworkWeights, config: NetworkConfig, upstream):
    """Gradients for every array in ``weights.arrays()`` order."""
    conv_grads = [None] * config.depth
    bn_grads = [None] * (config.depth - 2)
    g = upstream
    for d in range(config.depth - 1, -1, -1):
        if d < config.depth - 1:
            if d >= 1:
                g, gg, gb = batchnorm_backward(cache.bn[d - 1], g)
                bn_grads[d - 1] = (gg, gb)
            g = relu_backward(cache.preact[d], g)
        g, kg, bg = conv2d_backward(
            cache.inputs[d], weights.conv_layers[d], g, cols=cache.cols[d],
            need_input_grad=d > 0, col_pad=config.col_pad(d),
        )
        conv_grads[d] = (kg, bg)
    out = []
    for kg, bg in conv_grads:
        out += [kg, bg]
    for gg, gb in bn_grads:
        out += [gg, gb]
    return out


def loss(prediction, target) -> float:
    """Summed squared error over the batch and both real/imaginary planes."""
    prediction, target = np.asarray(prediction), np.asarray(target)
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    diff = (prediction - target).astype(np.float64)
    return float(np.sum(diff * diff))


def loss_grad(prediction, target):
    return 2 * (prediction - target)


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 1e-3

    @classmethod
    def zeros_like(cls, weights: NetworkWeights, **hyper) -> "AdamState":
        arrs = weights.arrays()
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs], **hyper)

    def copy(self) -> "AdamState":
        return AdamState([m.copy() for m in self.first_moment],
                         [v.copy() for v in self.second_moment], self.step_count,
                         self.beta1, self.beta2, self.epsilon, self.learning_rate)


def adam_step(weights: NetworkWeights, grads, state: AdamState):
    """One bias-corrected ADAM update, applied in place to ``weights``."""
    params = weights.arrays()
    if len(grads) != len(params):
        raise ValueError("gradient list does not match weights")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1**t
    bc2 = 1 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)).astype(p.dtype)
    return weights, state


@dataclass
class TrainedModel:
    config: NetworkConfig
    weights: NetworkWeights
    training_meta: dict = field(default_factory=dict)

    def predict_tensor(self, x, batch_size=512):
        outs = []
        for i in range(0, len(x), batch_size):
            out, _ = network_forward(x[i : i + batch_size], self.weights, self.config, "inference")
            outs.append(out)
        return np.concatenate(outs) if outs else np.zeros((0,) + x.shape[1:3] + (1,), np.float32)


# ---------------------------------------------------------------------------
# model file: "JSDN", u32 version, u32 D, hidden, kernel_rows, kernel_cols,
# then conv kernels/biases per layer, then BN gamma, beta, mean, var,
# momentum, epsilon per BN layer; all float32 little-endian.

def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def save_model(model: TrainedModel, sink: BinaryIO) -> None:
    cfg = model.config
    model.weights.check(cfg)
    if cfg.column_padding != NetworkConfig.column_padding:
        # the header has no field for it; a reload would silently change the network
        raise ValueError(f"column_padding={cfg.column_padding!r} cannot be stored in a model file")
    sink.write(MAGIC)
    sink.write(struct.pack("<5I", VERSION, cfg.depth, cfg.hidden_filters,
                           cfg.kernel_rows, cfg.kernel_cols))
    for c in model.weights.conv_layers:
        sink.write(_f32(c.kernels))
        sink.write(_f32(c.biases))
    for b in model.weights.bn_layers:
        for a in (b.gamma, b.beta, b.running_mean, b.running_var):
            sink.write(_f32(a))
        sink.write(_f32([b.momentum, b.epsilon]))


def _take(data: bytes, pos: int, count: int, what: str):
    end = pos + 4 * count
    if end > len(data):
        raise ValueError(f"truncated model file while reading {what}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float32), end


def load_model(source: BinaryIO) -> TrainedModel:
    data = source.read()
    if data[:4] != MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 24:
        raise ValueError("truncated model file header")
    version, depth, hidden, kr, kc = struct.unpack_from("<5I", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported model file version {version} (expected {VERSION})")
    cfg = NetworkConfig(depth, hidden, kr, kc)
    pos = 24
    convs = []
    for d, (cin, cout) in enumerate(cfg.layer_channels()):
        k, pos = _take(data, pos, kr * kc * cin * cout, f"layer {d + 1} kernels")
        b, pos = _take(data, pos, cout, f"layer {d + 1} biases")
        convs.append(ConvLayerParams(k.reshape(kr, kc, cin, cout), b))
    bns = []
    for d in range(depth - 2):
        arrs = []
        for name in ("gamma", "beta", "running_mean", "running_var"):
            a, pos = _take(data, pos, hidden, f"BN {d + 1} {name}")
            arrs.append(a)
        scal, pos = _take(data, pos, 2, f"BN {d + 1} scalars")
        bns.append(BatchNormParams(*arrs, momentum=float(scal[0]), epsilon=float(scal[1])))
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes after model payload")
    return TrainedModel(cfg, NetworkWeights(convs, bns))
