"""Forward/backward primitives on batched (B, S, 2, C) real tensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ConvLayerParams",
    "BatchNormParams",
    "conv2d_forward",
    "conv2d_backward",
    "relu_forward",
    "relu_backward",
    "batchnorm_forward",
    "batchnorm_backward",
]


@dataclass
class ConvLayerParams:
    kernels: np.ndarray  # (kernel_rows, kernel_cols, in_channels, out_channels)
    biases: np.ndarray  # (out_channels,)

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[3]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")

    @classmethod
    def identity(cls, channels: int, momentum=0.9, epsilon=1e-5, dtype=np.float32):
        return cls(
            np.ones(channels, dtype),
            np.zeros(channels, dtype),
            np.zeros(channels, dtype),
            np.ones(channels, dtype),
            momentum,
            epsilon,
        )


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected (S, 2, C) or (B, S, 2, C) tensor, got shape {x.shape}")
    return x, False


def _padding(kernel_rows, kernel_cols, col_pad="right"):
    """(top, bottom, left, right) zero padding that keeps the (S, W) grid."""
    if col_pad not in ("right", "left"):
        raise ValueError(f"col_pad must be 'right' or 'left', got {col_pad!r}")
    extra = kernel_cols - 1
    left, right = (0, extra) if col_pad == "right" else (extra, 0)
    return (kernel_rows - 1) // 2, kernel_rows // 2, left, right


def _im2col(x, kernel_rows, kernel_cols, col_pad="right"):
    top, bottom, left, right = _padding(kernel_rows, kernel_cols, col_pad)
    xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    win = sliding_window_view(xp, (kernel_rows, kernel_cols), axis=(1, 2))
    # win: (B, S, W, C, kr, kc) -> rows ordered (kr, kc, C) to match kernel layout
    b, s, w = x.shape[:3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * s * w, -1)


def conv2d_forward(x, params: ConvLayerParams, return_cols: bool = False, col_pad="right"):
    """Zero-padded 2-D cross-correlation preserving the (S, 2) grid.

    Padding is (kr-1)//2 rows on top, kr//2 rows at the bottom and kc-1
    columns on the ``col_pad`` side, i.e. 2+2 rows and one column for a 5x2
    kernel.
    """
    x, squeeze = _as_batch(x)
    kr, kc, cin, cout = params.kernels.shape
    if x.shape[3] != cin:
        raise ValueError(f"input has {x.shape[3]} channels, kernel expects {cin}")
    if params.biases.shape != (cout,):
        raise ValueError(f"bias shape {params.biases.shape} != ({cout},)")
    cols = _im2col(x, kr, kc, col_pad)
    out = cols @ params.kernels.reshape(-1, cout)
    out += params.biases
    out = out.reshape(*x.shape[:3], cout)
    if squeeze:
        out = out[0]
    return (out, cols) if return_cols else out


def conv2d_backward(x, params: ConvLayerParams, upstream, cols=None, need_input_grad=True,
                    col_pad="right"):
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernels and biases."""
    x, squeeze = _as_batch(x)
    g, _ = _as_batch(upstream)
    kr, kc, cin, cout = params.kernels.shape
    if g.shape != (*x.shape[:3], cout):
        raise ValueError(f"upstream shape {g.shape} inconsistent with input {x.shape}")
    if cols is None:
        cols = _im2col(x, kr, kc, col_pad)
    g2 = g.reshape(-1, cout)
    kernel_grad = (cols.T @ g2).reshape(params.kernels.shape)
    bias_grad = g2.sum(axis=0)
    if not need_input_grad:
        return None, kernel_grad, bias_grad
    b, s, w = x.shape[:3]
    top, bottom, left, right = _padding(kr, kc, col_pad)
    dcols = (g2 @ params.kernels.reshape(-1, cout).T).reshape(b, s, w, kr, kc, cin)
    dxp = np.zeros((b, s + top + bottom, w + left + right, cin), dtype=dcols.dtype)
    for p in range(kr):
        for q in range(kc):
            dxp[:, p : p + s, q : q + w, :] += dcols[:, :, :, p, q, :]
    dx = dxp[:, top : top + s, left : left + w, :]
    if squeeze:
        dx = dx[0]
    return dx, kernel_grad, bias_grad


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, upstream):
    # subgradient 0 at x == 0
    return np.where(np.asarray(x) > 0, upstream, 0).astype(np.result_type(upstream))


@dataclass
class _BNCache:
    mode: str
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def batchnorm_forward(x, params: BatchNormParams, mode: str = "training", update_running=True):
    """Per-channel batch normalization over (batch, rows, cols).

    In training mode the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch_stat``.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"batchnorm expects a (B, S, 2, C) batch, got shape {x.shape}")
    if mode == "training":
        if x.shape[0] < 2:
            raise ValueError("training-mode batch normalization needs a batch of at least 2")
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        if update_running:
            m = params.momentum
            params.running_mean[...] = m * params.running_mean + (1 - m) * mean
            params.running_var[...] = m * params.running_var + (1 - m) * var
    elif mode == "inference":
        mean, var = params.running_mean, params.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + params.epsilon)
    xhat = (x - mean) * inv_std
    out = params.gamma * xhat + params.beta
    return out.astype(x.dtype, copy=False), _BNCache(mode, xhat, inv_std, params.gamma)


def batchnorm_backward(cache: _BNCache, upstream):
    if cache.mode != "training":
        raise ValueError("batchnorm_backward needs a training-mode cache")
    g = np.asarray(upstream)
    axes = (0, 1, 2)
    n = g.shape[0] * g.shape[1] * g.shape[2]
    beta_grad = g.sum(axis=axes)
    gamma_grad = (g * cache.xhat).sum(axis=axes)
    dxhat = g * cache.gamma
    dx = (cache.inv_std / n) * (
        n * dxhat - dxhat.sum(axis=axes) - cache.xhat * (dxhat * cache.xhat).sum(axis=axes)
    )
    return dx.astype(g.dtype, copy=False), gamma_grad, beta_grad
