import numpy as np
import pytest
import yaml

from jamsup.denoiser import TrainConfig, train
from jamsup.harness import (
    CONFIG_KEYS,
    CSV_HEADER,
    PRESETS,
    EvalResult,
    SweepSpec,
    binomial_sigma,
    build_config,
    evaluate,
    load_config,
    sweep,
    wilson_interval,
)
from jamsup.network import NetworkConfig
from jamsup.sigmodel import QPSK, ScenarioConfig, generate_dataset, hadamard_codes

SMALL = ScenarioConfig(spreading_factor=16, num_users=16, num_segments=12)


@pytest.fixture(scope="module")
def tiny_model():
    codes = hadamard_codes(16)
    data = generate_dataset(SMALL, codes, QPSK, 64, seed=5)
    return train(data, NetworkConfig(depth=3, hidden_filters=4), TrainConfig(16, 2), codes)


def test_clean_channel_baseline_reduced():
    cfg = ScenarioConfig(jammer_enabled=False, noise_power_db=-20)
    r = evaluate(None, cfg, 1000, seed=1)
    assert r.errors_proposed is None and r.proposed_rate is None
    assert r.baseline_rate < 1e-3


def test_jammed_baseline_reduced():
    assert evaluate(None, ScenarioConfig(), 1000, seed=2).baseline_rate > 0.5


def test_evaluate_reproducible_and_chunk_free(tiny_model):
    a = evaluate(tiny_model, SMALL, 300, seed=3)
    b = evaluate(tiny_model, SMALL, 300, seed=3, chunk=7)
    assert a == b
    assert 0 <= a.proposed_rate <= 1 and a.proposed_rate == a.errors_proposed / 300


def test_evaluate_prefix_consistency():
    # run i depends only on (seed, i): a longer evaluation extends a shorter one
    short = evaluate(None, SMALL, 50, seed=4)
    long = evaluate(None, SMALL, 100, seed=4)
    assert long.errors_baseline >= short.errors_baseline


def test_evaluate_dimension_mismatch(tiny_model):
    with pytest.raises(ValueError):
        evaluate(tiny_model, ScenarioConfig(spreading_factor=32, num_users=32), 10)


def test_evaluate_rejects_zero_runs():
    with pytest.raises(ValueError):
        evaluate(None, SMALL, 0)


def test_sweep_rows_and_single_value(tiny_model):
    spec = SweepSpec("jammer_power_db", (10.0, 20.0, 30.0), SMALL, 100)
    res = sweep(spec, tiny_model, seed=6)
    assert [r.swept_value for r in res.rows] == [10.0, 20.0, 30.0]
    one = sweep(SweepSpec("jammer_power_db", (20.0,), SMALL, 100), tiny_model, seed=6)
    assert one.rows[0].result == evaluate(tiny_model, SMALL.with_(jammer_power_db=20.0), 100, 6)
    assert one.rows[0].result == res.rows[1].result


def test_sweep_num_active_is_integer():
    res = sweep(SweepSpec("num_active", (1, 3), SMALL, 20), None, seed=0)
    assert [r.swept_value for r in res.rows] == [1, 3]
    assert res.to_csv().splitlines()[1].startswith("1,")


def test_csv_format_and_bytes(tiny_model):
    spec = SweepSpec("noise_power_db", (-20.0, -10.0), SMALL, 50)
    a = sweep(spec, tiny_model, seed=7).to_csv()
    b = sweep(spec, tiny_model, seed=7).to_csv()
    assert a == b
    lines = a.splitlines()
    assert lines[0] == "swept_value,proposed_error_rate,baseline_error_rate,num_runs,errors_proposed,errors_baseline"
    assert lines[0].split(",") == CSV_HEADER
    assert len(lines) == 3
    for line in lines[1:]:
        v, p, b_, n, ep, eb = line.split(",")
        assert float(p) == int(ep) / int(n) and float(b_) == int(eb) / int(n)
        assert 0 <= float(p) <= 1 and 0 <= float(b_) <= 1


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec("depth", (1,), SMALL, 10)
    with pytest.raises(ValueError):
        SweepSpec("jammer_power_db", (), SMALL, 10)
    with pytest.raises(ValueError):
        SweepSpec("jammer_power_db", (1,), SMALL, 0)


def test_baseline_monotone_in_jammer_power():
    values = np.linspace(0, 30, 10)
    res = sweep(SweepSpec("jammer_power_db", tuple(values), ScenarioConfig(), 1000), None, seed=8)
    rates = [r.result.baseline_rate for r in res.rows]
    inversions = 0
    for lo, hi in zip(rates, rates[1:]):
        if hi < lo:
            inversions += 1
            assert lo - hi <= 2 * np.hypot(binomial_sigma(lo, 1000), binomial_sigma(hi, 1000))
    assert inversions <= 1


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0 and 0 < hi < 0.05
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and hi - 0.5 == pytest.approx(0.5 - lo)
    r = EvalResult(100, 10, 90)
    assert r.interval("proposed")[0] < 0.1 < r.interval("proposed")[1]


# --- configs -----------------------------------------------------------------------------

def test_default_config_is_reference_setting():
    cfg = build_config()
    s, n, t = cfg.scenario, cfg.network, cfg.training
    assert (s.spreading_factor, s.num_users, s.num_active) == (128, 128, 2)
    assert (s.jammer_power_db, s.noise_power_db) == (20, -10)
    assert (n.depth, n.hidden_filters, t.batch_size) == (5, 32, 64)
    assert cfg.num_runs == 10000


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(KeyError, match="bogus"):
        build_config({"bogus": 1})
    p = tmp_path / "c.yaml"
    p.write_text("spreading_factor: 32\nnot_a_key: 3\n")
    with pytest.raises(KeyError, match="not_a_key"):
        load_config(p)


def test_nested_config_rejected(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("scenario:\n  spreading_factor: 32\n")
    with pytest.raises(ValueError, match="nested"):
        load_config(p)


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"preset": "fast", "epochs": 3, "decay_epochs": 1, "seed": 9}))
    cfg = load_config(p, {"num_runs": 17})
    assert cfg.scenario.spreading_factor == 32 and cfg.network.hidden_filters == 16
    assert cfg.training.epochs == 3 and cfg.training.decay_epochs == 1
    assert cfg.training.seed == 9 and cfg.num_runs == 17


def test_flat_round_trip():
    cfg = build_config({"preset": "fast"})
    assert build_config(cfg.flat()) == cfg
    assert set(cfg.flat()) <= CONFIG_KEYS


def test_presets_are_valid():
    for name in PRESETS:
        build_config({"preset": name})
    with pytest.raises(KeyError):
        build_config({"preset": "nope"})


def test_step_decay_schedule():
    tc = TrainConfig(epochs=10, learning_rate=1e-2, decay_epochs=3)
    assert [tc.rate(e) for e in (1, 7, 8, 10)] == [1e-2, 1e-2, 1e-2 * 0.1, 1e-2 * 0.1]
    assert TrainConfig(epochs=4).rate(4) == 1e-3
    with pytest.raises(ValueError):
        TrainConfig(epochs=2, decay_epochs=3)
    with pytest.raises(ValueError):
        TrainConfig(decay_factor=0)


def test_full_decay_equals_scaled_rate():
    codes = hadamard_codes(16)
    data = generate_dataset(SMALL, codes, QPSK, 32, seed=5)
    net = NetworkConfig(depth=2, hidden_filters=4)
    a = train(data, net, TrainConfig(16, 2, 1e-2, decay_epochs=2, decay_factor=0.5), codes)
    b = train(data, net, TrainConfig(16, 2, 5e-3), codes)
    assert a.training_meta["loss_history"] == b.training_meta["loss_history"]
