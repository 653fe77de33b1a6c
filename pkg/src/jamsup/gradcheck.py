"""Central finite-difference checks of every hand-written backward pass.

Everything runs in float64.  Instances are redrawn until all ReLU inputs sit
at least ``KINK_MARGIN`` away from zero, so a perturbation of ``STEP`` never
crosses a kink.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

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
from .network import NetworkConfig, init_weights, loss, loss_grad, network_backward, network_forward

STEP = 1e-5
TOLERANCE = 1e-5
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    name: str
    trials: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<14} trials={self.trials:<3d} "
                f"max_rel_err={self.max_rel_error:.2e} ({self.seconds:.1f}s)")


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x, step=STEP):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g


def _conv_instance(rng):
    s = 8
    cin, cout = rng.integers(1, 4), rng.integers(1, 4)
    x = rng.standard_normal((2, s, 2, cin))
    p = ConvLayerParams(rng.standard_normal((5, 2, cin, cout)), rng.standard_normal(cout))
    w = rng.standard_normal((2, s, 2, cout))
    return x, p, w


def check_conv(trials=20, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, t0 = 0.0, time.perf_counter()
    for trial in range(trials):
        side = ("right", "left")[trial % 2]
        x, p, w = _conv_instance(rng)

        def f():
            return float(np.sum(conv2d_forward(x, p, col_pad=side) * w))

        dx, dk, db = conv2d_backward(x, p, w, col_pad=side)
        for analytic, arr in ((dx, x), (dk, p.kernels), (db, p.biases)):
            worst = max(worst, rel_error(analytic, numeric_grad(f, arr)))
    return CheckResult("conv2d", trials, worst, time.perf_counter() - t0)


def _off_kink(rng, shape):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < KINK_MARGIN, KINK_MARGIN * np.sign(x + (x == 0)), x)


def check_relu(trials=20, seed=1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, t0 = 0.0, time.perf_counter()
    for _ in range(trials):
        x = _off_kink(rng, (2, 8, 2, 3))
        w = rng.standard_normal(x.shape)

        def f():
            return float(np.sum(relu_forward(x) * w))

        worst = max(worst, rel_error(relu_backward(x, w), numeric_grad(f, x)))
    return CheckResult("relu", trials, worst, time.perf_counter() - t0)


def check_batchnorm(trials=20, seed=2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, t0 = 0.0, time.perf_counter()
    for _ in range(trials):
        c = int(rng.integers(1, 4))
        x = rng.standard_normal((3, 8, 2, c)) * rng.uniform(0.5, 2) + rng.standard_normal()
        p = BatchNormParams(rng.uniform(0.5, 1.5, c), rng.standard_normal(c),
                            np.zeros(c), np.ones(c), 0.9, 1e-5)
        w = rng.standard_normal(x.shape)

        def f():
            out, _ = batchnorm_forward(x, p, "training", update_running=False)
            return float(np.sum(out * w))

        _, cache = batchnorm_forward(x, p, "training", update_running=False)
        dx, dg, db = batchnorm_backward(cache, w)
        for analytic, arr in ((dx, x), (dg, p.gamma), (db, p.beta)):
            worst = max(worst, rel_error(analytic, numeric_grad(f, arr)))
    return CheckResult("batchnorm", trials, worst, time.perf_counter() - t0)


def _min_preactivation(x, weights, config):
    _, cache = network_forward(x, weights, config, "training", update_running=False)
    return min(float(np.abs(p).min()) for p in cache.preact)


def check_network(trials=20, seed=3, config: NetworkConfig | None = None) -> CheckResult:
    """End-to-end loss gradient w.r.t. every trainable parameter (S=8, D=3, 4 filters)."""
    config = config or NetworkConfig(depth=3, hidden_filters=4)
    rng = np.random.default_rng(seed)
    worst, t0 = 0.0, time.perf_counter()
    done = 0
    while done < trials:
        weights = init_weights(config, rng, dtype=np.float64)
        for c in weights.conv_layers:
            c.biases[...] = 0.1 * rng.standard_normal(c.biases.shape)
        for b in weights.bn_layers:
            b.gamma[...] = rng.uniform(0.5, 1.5, b.gamma.shape)
            b.beta[...] = 0.1 * rng.standard_normal(b.beta.shape)
        x = rng.standard_normal((3, 8, 2, config.input_channels))
        target = rng.standard_normal((3, 8, 2, config.output_channels))
        if _min_preactivation(x, weights, config) < KINK_MARGIN:
            continue

        def f():
            out, _ = network_forward(x, weights, config, "training", update_running=False)
            return loss(out, target)

        out, cache = network_forward(x, weights, config, "training", update_running=False)
        grads = network_backward(cache, weights, config, loss_grad(out, target))
        for g, arr in zip(grads, weights.arrays()):
            worst = max(worst, rel_error(g, numeric_grad(f, arr)))
        done += 1
    return CheckResult("network", trials, worst, time.perf_counter() - t0)


def run_all(trials=20, seed=0) -> list[CheckResult]:
    return [
        check_conv(trials, seed),
        check_relu(trials, seed + 1),
        check_batchnorm(trials, seed + 2),
        check_network(trials, seed + 3),
    ]
