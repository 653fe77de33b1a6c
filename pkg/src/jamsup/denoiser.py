"""Model-driven CNN jammer suppression.

The network sees two real-valued (S, 2) channels: the received chips and the
match-filter-bank output ``S^H r``, each scaled by its maximum complex
magnitude.  It is trained to emit the clean user mixture (scaled by the
received-signal scale) as an (S, 2) real/imaginary image.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_signal, check_signals
from .network import (
    AdamState,
    NetworkConfig,
    TrainedModel,
    adam_step,
    init_weights,
    loss,
    loss_grad,
    network_backward,
    network_forward,
)
from .sigmodel import SpreadingMatrix, hadamard_codes

__all__ = [
    "InputTensor",
    "TrainConfig",
    "TrainingDiverged",
    "build_input_tensor",
    "build_input_batch",
    "target_batch",
    "train",
    "denoise",
    "denoise_batch",
    "JammerSuppressor",
]

log = logging.getLogger(__name__)


class InputTensor(NamedTuple):
    tensor: np.ndarray  # (S, 2, 2)
    scale_received: float
    scale_mfb: float


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    # optional step decay: the last decay_epochs epochs run at learning_rate * decay_factor
    decay_epochs: int = 0
    decay_factor: float = 0.1

    def __post_init__(self):
        if not 0 <= self.decay_epochs <= self.epochs:
            raise ValueError(f"decay_epochs must be in [0, epochs], got {self.decay_epochs}")
        if not self.decay_factor > 0:
            raise ValueError(f"decay_factor must be positive, got {self.decay_factor}")

    def rate(self, epoch: int) -> float:
        """Step size used during 1-based ``epoch``."""
        if epoch > self.epochs - self.decay_epochs:
            return self.learning_rate * self.decay_factor
        return self.learning_rate


def _scales(z: np.ndarray) -> np.ndarray:
    m = np.abs(z).max(axis=-1)
    return np.where(m > 0, m, 1.0)


def build_input_batch(received, codes: SpreadingMatrix, dtype=np.float32):
    """Vectorized :func:`build_input_tensor`: returns (tensor batch, received scales, MFB scales)."""
    R = check_signals(received, codes.spreading_factor, "received")
    if codes.num_users != codes.spreading_factor:
        raise ValueError(
            f"MFB channel needs N == S, got N={codes.num_users}, S={codes.spreading_factor}"
        )
    mfb = R @ codes.entries.conj()
    sr, sm = _scales(R), _scales(mfb)
    rn, mn = R / sr[:, None], mfb / sm[:, None]
    x = np.stack([np.stack([rn.real, rn.imag], -1), np.stack([mn.real, mn.imag], -1)], -1)
    return x.astype(dtype), sr, sm


def build_input_tensor(received, codes: SpreadingMatrix) -> InputTensor:
    r = check_signal(received, codes.spreading_factor, "received")
    x, sr, sm = build_input_batch(r[None], codes)
    return InputTensor(x[0], float(sr[0]), float(sm[0]))


def target_batch(clean, scale_received, dtype=np.float32):
    """Clean mixtures as (B, S, 2, 1) real images in received-signal units."""
    Y = check_signals(clean, name="clean") / np.asarray(scale_received)[:, None]
    return np.stack([Y.real, Y.imag], -1)[..., None].astype(dtype)


def _unpack(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 2:
        return dataset
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    return np.stack([ex.received for ex in dataset]), np.stack([ex.clean for ex in dataset])


def _batches(n, batch_size, order):
    # a trailing batch of one sample cannot feed training-mode BN; fold it in
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] < 2:
        starts.pop()
    ends = starts[1:] + [n]
    return [order[a:b] for a, b in zip(starts, ends)]


def train(
    dataset,
    net_config: NetworkConfig,
    train_config: TrainConfig,
    codes: SpreadingMatrix,
    rng: np.random.Generator | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainedModel:
    """Fit the denoiser with ADAM on the summed squared error.

    ``dataset`` is a sequence of examples (``received``/``clean`` fields) or a
    ``(received, clean)`` pair of complex arrays.  Runs serially; the same
    seed, data and configs reproduce the model bit for bit.
    """
    R, Y = _unpack(dataset)
    x, sr, _ = build_input_batch(R, codes)
    t = target_batch(Y, sr)
    n = len(x)
    if n < 2:
        raise ValueError("training needs at least 2 examples (batch normalization)")
    rng = np.random.default_rng(train_config.seed) if rng is None else rng
    weights = init_weights(net_config, rng)
    state = AdamState.zeros_like(
        weights,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        epsilon=train_config.epsilon,
        learning_rate=train_config.learning_rate,
    )

    initial = 0.0
    for idx in _batches(n, train_config.batch_size, np.arange(n)):
        out, _ = network_forward(x[idx], weights, net_config, "training", update_running=False)
        initial += loss(out, t[idx])
    initial /= n
    log.info("untrained mean loss %.6g", initial)

    history = []
    t0 = time.perf_counter()
    for epoch in range(1, train_config.epochs + 1):
        state.learning_rate = train_config.rate(epoch)
        total = 0.0
        for idx in _batches(n, train_config.batch_size, rng.permutation(n)):
            out, cache = network_forward(x[idx], weights, net_config, "training")
            batch_loss = loss(out, t[idx])
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (step {state.step_count + 1}); "
                    f"try a smaller learning rate than {state.learning_rate}"
                )
            total += batch_loss
            grads = network_backward(cache, weights, net_config, loss_grad(out, t[idx]))
            adam_step(weights, grads, state)
        history.append(total / n)
        log.info("epoch %d mean loss %.6g (%.1fs)", epoch, history[-1], time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])

    meta = {
        "train_config": asdict(train_config),
        "num_examples": n,
        "initial_loss": initial,
        "loss_history": history,
        "final_loss": history[-1] if history else initial,
    }
    return TrainedModel(net_config, weights, meta)


def _check_model(model: TrainedModel, codes: SpreadingMatrix):
    if model is None or not hasattr(model, "weights"):
        raise ValueError("denoising needs a trained model")
    model.weights.check(model.config)


def denoise_batch(model: TrainedModel, received, codes: SpreadingMatrix, batch_size=512):
    """De-jammed complex signals for a (n, S) batch of received signals."""
    _check_model(model, codes)
    x, sr, _ = build_input_batch(received, codes)
    out = model.predict_tensor(x, batch_size)[..., 0].astype(np.float64)
    return (out[..., 0] + 1j * out[..., 1]) * sr[:, None]


def denoise(model: TrainedModel, received, codes: SpreadingMatrix) -> np.ndarray:
    r = check_signal(received, codes.spreading_factor, "received")
    return denoise_batch(model, r[None], codes)[0]


class JammerSuppressor(TransformerMixin, BaseEstimator):
    """Scikit-learn style wrapper: ``fit(received, clean)``, ``transform(received)``.

    Parameters mirror :class:`NetworkConfig` and :class:`TrainConfig`.  When
    ``codes`` is None, unit-norm Walsh-Hadamard codes matching the signal
    length are used.
    """

    def __init__(self, depth=5, hidden_filters=32, kernel_rows=5, kernel_cols=2,
                 batch_size=64, epochs=200, learning_rate=1e-3, codes=None, random_state=0):
        self.depth = depth
        self.hidden_filters = hidden_filters
        self.kernel_rows = kernel_rows
        self.kernel_cols = kernel_cols
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.codes = codes
        self.random_state = random_state

    def _codes_for(self, length):
        if self.codes is None:
            return hadamard_codes(length)
        if isinstance(self.codes, SpreadingMatrix):
            return self.codes
        return SpreadingMatrix(np.asarray(self.codes))

    def fit(self, X, y):
        X = check_signals(X, name="received")
        y = check_signals(y, X.shape[1], name="clean")
        if len(X) != len(y):
            raise ValueError(f"{len(X)} received signals but {len(y)} clean targets")
        self.codes_ = self._codes_for(X.shape[1])
        net = NetworkConfig(self.depth, self.hidden_filters, self.kernel_rows, self.kernel_cols)
        tc = TrainConfig(self.batch_size, self.epochs, self.learning_rate, seed=self.random_state)
        self.model_ = train((X, y), net, tc, self.codes_)
        self.loss_curve_ = list(self.model_.training_meta["loss_history"])
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: TrainedModel, codes: SpreadingMatrix):
        """Wrap an already trained (e.g. loaded) model."""
        cfg = model.config
        est = cls(cfg.depth, cfg.hidden_filters, cfg.kernel_rows, cfg.kernel_cols, codes=codes)
        est.codes_ = codes
        est.model_ = model
        est.loss_curve_ = list(model.training_meta.get("loss_history", []))
        est.n_features_in_ = codes.spreading_factor
        return est

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_signals(X, self.n_features_in_, name="received")
        return denoise_batch(self.model_, X, self.codes_)

    def suppression_ratio(self, X, y):
        """Mean of ||y_hat - y||^2 / ||r - y||^2 over the batch."""
        X = check_signals(X, self.n_features_in_, name="received")
        y = check_signals(y, self.n_features_in_, name="clean")
        return suppression_ratio(self.transform(X), X, y)


def suppression_ratio(denoised, received, clean) -> float:
    num = np.sum(np.abs(denoised - clean) ** 2, axis=1)
    den = np.sum(np.abs(received - clean) ** 2, axis=1)
    return float(np.mean(num / den))
