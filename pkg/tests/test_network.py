import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamsup.gradcheck import check_network
from jamsup.network import (
    AdamState,
    NetworkConfig,
    TrainedModel,
    adam_step,
    init_weights,
    load_model,
    loss,
    network_forward,
    save_model,
)


def _random_model(seed, cfg=NetworkConfig(depth=4, hidden_filters=3)):
    rng = np.random.default_rng(seed)
    w = init_weights(cfg, rng)
    for c in w.conv_layers:
        c.biases[...] = rng.standard_normal(c.biases.shape)
    for b in w.bn_layers:
        for name in ("gamma", "beta", "running_mean"):
            getattr(b, name)[...] = rng.standard_normal(b.gamma.shape)
        b.running_var[...] = rng.uniform(0.1, 2, b.gamma.shape)
    return TrainedModel(cfg, w)


def _assert_same_model(a: TrainedModel, b: TrainedModel):
    assert a.config == b.config
    for x, y in zip(a.weights.conv_layers, b.weights.conv_layers):
        np.testing.assert_array_equal(x.kernels, y.kernels)
        np.testing.assert_array_equal(x.biases, y.biases)
    for x, y in zip(a.weights.bn_layers, b.weights.bn_layers):
        for name in ("gamma", "beta", "running_mean", "running_var"):
            np.testing.assert_array_equal(getattr(x, name), getattr(y, name))
        assert (x.momentum, x.epsilon) == (y.momentum, y.epsilon)


def test_default_config_dimensions():
    cfg = NetworkConfig()
    assert (cfg.depth, cfg.hidden_filters, cfg.kernel_rows, cfg.kernel_cols) == (5, 32, 5, 2)
    assert cfg.layer_channels() == [(2, 32), (32, 32), (32, 32), (32, 32), (32, 1)]


def test_config_rejects_shallow():
    with pytest.raises(ValueError):
        NetworkConfig(depth=1)


def test_alternating_column_padding():
    assert [NetworkConfig().col_pad(d) for d in range(5)] == ["right", "left", "right", "left", "right"]
    assert {NetworkConfig(column_padding="right").col_pad(d) for d in range(5)} == {"right"}


def test_column_mixing_reaches_both_outputs():
    """Every output column responds to a perturbation of input column 0."""
    cfg = NetworkConfig(depth=5, hidden_filters=4)
    w = init_weights(cfg, np.random.default_rng(0), dtype=np.float64)
    x = np.random.default_rng(1).standard_normal((2, 8, 2, 2))
    base, _ = network_forward(x, w, cfg, "inference")
    x2 = x.copy()
    x2[:, :, 0, :] += 0.5
    moved, _ = network_forward(x2, w, cfg, "inference")
    assert np.abs(moved - base)[:, :, 1].max() > 0
    right = NetworkConfig(depth=5, hidden_filters=4, column_padding="right")
    base, _ = network_forward(x, w, right, "inference")
    moved, _ = network_forward(x2, w, right, "inference")
    assert np.abs(moved - base)[:, :, 1].max() == 0


@pytest.mark.parametrize("s,b", [(8, 2), (32, 3), (128, 2)])
def test_output_shape(s, b):
    cfg = NetworkConfig(depth=5, hidden_filters=8)
    w = init_weights(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((b, s, 2, 2)).astype(np.float32)
    for mode in ("training", "inference"):
        out, _ = network_forward(x, w, cfg, mode, update_running=False)
        assert out.shape == (b, s, 2, 1)


def test_zero_weights_give_zero_output():
    cfg = NetworkConfig(depth=5, hidden_filters=8)
    w = init_weights(cfg, np.random.default_rng(0))
    for c in w.conv_layers:
        c.kernels[...] = 0
    for b in w.bn_layers:
        b.gamma[...] = 0
    x = np.random.default_rng(1).standard_normal((3, 16, 2, 2))
    for mode in ("training", "inference"):
        out, _ = network_forward(x, w, cfg, mode, update_running=False)
        assert not np.any(out)


def test_forward_rejects_bad_input():
    cfg = NetworkConfig(depth=3, hidden_filters=4)
    w = init_weights(cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        network_forward(np.zeros((2, 8, 2, 3)), w, cfg)


def test_training_mode_needs_two_samples():
    cfg = NetworkConfig(depth=3, hidden_filters=4)
    w = init_weights(cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        network_forward(np.zeros((1, 8, 2, 2)), w, cfg, "training")


def test_end_to_end_finite_differences():
    assert check_network(trials=20).max_rel_error < 1e-5


def test_end_to_end_finite_differences_right_padding():
    cfg = NetworkConfig(depth=3, hidden_filters=4, column_padding="right")
    assert check_network(trials=5, seed=11, config=cfg).max_rel_error < 1e-5


# --- loss ------------------------------------------------------------------------

def test_loss_zero_at_target():
    t = np.random.default_rng(0).standard_normal((3, 8, 2, 1))
    assert loss(t, t) == 0


def test_loss_constant_offset():
    s, c = 16, 0.3
    t = np.random.default_rng(0).standard_normal((1, s, 2, 1))
    assert loss(t + c, t) == pytest.approx(2 * s * c**2, rel=1e-12)


def test_loss_matches_complex_error():
    rng = np.random.default_rng(1)
    p, t = rng.standard_normal((2, 4, 32, 2, 1))
    yp = p[..., 0, 0] + 1j * p[..., 1, 0]
    yt = t[..., 0, 0] + 1j * t[..., 1, 0]
    assert abs(loss(p, t) - np.sum(np.abs(yp - yt) ** 2)) < 1e-12


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        loss(np.zeros((1, 8, 2, 1)), np.zeros((2, 8, 2, 1)))


# --- adam ------------------------------------------------------------------------

def _small_weights(seed=0):
    return init_weights(NetworkConfig(depth=3, hidden_filters=4), np.random.default_rng(seed))


def test_adam_zero_gradient_noop():
    w = _small_weights()
    before = [a.copy() for a in w.arrays()]
    state = AdamState.zeros_like(w)
    adam_step(w, [np.zeros_like(a) for a in w.arrays()], state)
    assert state.step_count == 1
    for a, b in zip(before, w.arrays()):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), steps=st.integers(1, 5))
def test_adam_zero_gradient_noop_property(seed, steps):
    w = _small_weights(seed % 1000)
    before = [a.copy() for a in w.arrays()]
    state = AdamState.zeros_like(w)
    for _ in range(steps):
        adam_step(w, [np.zeros_like(a) for a in w.arrays()], state)
    for a, b in zip(before, w.arrays()):
        np.testing.assert_array_equal(a, b)


def test_adam_first_step_is_learning_rate_sized():
    w = _small_weights().astype(np.float64)
    rng = np.random.default_rng(3)
    grads = [rng.choice([-1, 1], a.shape) * 10 ** rng.uniform(-3, 3, a.shape) for a in w.arrays()]
    before = [a.copy() for a in w.arrays()]
    state = AdamState.zeros_like(w, learning_rate=1e-3)
    adam_step(w, grads, state)
    for a, b, g in zip(before, w.arrays(), grads):
        step = a - b
        # bias-corrected first step: lr * g / (|g| + eps)
        np.testing.assert_allclose(step, 1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-9)
        np.testing.assert_allclose(np.abs(step), 1e-3, rtol=1e-4)


def test_adam_deterministic():
    rng = np.random.default_rng(4)
    w1, w2 = _small_weights(), _small_weights()
    grads = [rng.standard_normal(a.shape).astype(a.dtype) for a in w1.arrays()]
    s1, s2 = AdamState.zeros_like(w1), AdamState.zeros_like(w2)
    for _ in range(3):
        adam_step(w1, grads, s1)
        adam_step(w2, grads, s2)
    for a, b in zip(w1.arrays(), w2.arrays()):
        np.testing.assert_array_equal(a, b)
    for a in s1.second_moment:
        assert np.all(a >= 0)


def test_adam_shape_mismatch():
    w = _small_weights()
    with pytest.raises(ValueError):
        adam_step(w, [np.zeros(3)], AdamState.zeros_like(w))


# --- serialization -----------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(2, 5), filters=st.integers(1, 6))
def test_model_round_trip(seed, depth, filters):
    m = _random_model(seed, NetworkConfig(depth=depth, hidden_filters=filters))
    buf = io.BytesIO()
    save_model(m, buf)
    back = load_model(io.BytesIO(buf.getvalue()))
    _assert_same_model(m, back)
    buf2 = io.BytesIO()
    save_model(back, buf2)
    assert buf.getvalue() == buf2.getvalue()


def test_model_file_layout():
    cfg = NetworkConfig(depth=3, hidden_filters=4)
    buf = io.BytesIO()
    save_model(_random_model(0, cfg), buf)
    data = buf.getvalue()
    assert data[:4] == b"JSDN"
    assert np.frombuffer(data[4:24], "<u4").tolist() == [1, 3, 4, 5, 2]
    n_conv = (5 * 2 * 2 * 4 + 4) + (5 * 2 * 4 * 4 + 4) + (5 * 2 * 4 * 1 + 1)
    n_bn = 4 * 4 + 2
    assert len(data) == 24 + 4 * (n_conv + n_bn)


def test_model_bad_magic():
    buf = io.BytesIO()
    save_model(_random_model(0), buf)
    data = b"XXXX" + buf.getvalue()[4:]
    with pytest.raises(ValueError, match="magic"):
        load_model(io.BytesIO(data))


def test_model_bad_version():
    buf = io.BytesIO()
    save_model(_random_model(0), buf)
    data = bytearray(buf.getvalue())
    data[4:8] = (2).to_bytes(4, "little")
    with pytest.raises(ValueError, match="version"):
        load_model(io.BytesIO(bytes(data)))


@pytest.mark.parametrize("cut", [6, 30, 1])
def test_model_truncated(cut):
    buf = io.BytesIO()
    save_model(_random_model(0), buf)
    data = buf.getvalue()
    with pytest.raises(ValueError, match="truncated"):
        load_model(io.BytesIO(data[: cut if cut > 1 else len(data) - 1]))


def test_model_trailing_bytes():
    buf = io.BytesIO()
    save_model(_random_model(0), buf)
    with pytest.raises(ValueError, match="trailing"):
        load_model(io.BytesIO(buf.getvalue() + b"\0\0\0\0"))


def test_model_file_rejects_unstorable_padding():
    cfg = NetworkConfig(depth=3, hidden_filters=2, column_padding="right")
    with pytest.raises(ValueError, match="column_padding"):
        save_model(TrainedModel(cfg, init_weights(cfg, np.random.default_rng(0))), io.BytesIO())
