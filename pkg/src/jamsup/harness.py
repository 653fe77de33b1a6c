"""Monte-Carlo error-rate evaluation, parameter sweeps and experiment configs."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml
from scipy.stats import binomtest

from .denoiser import TrainConfig, denoise_batch
from .detector import mfb_batch, rdd_detect_batch, run_errors_batch
from .network import NetworkConfig, TrainedModel
from .sigmodel import (
    QPSK,
    STREAM_EVAL,
    ScenarioConfig,
    SpreadingMatrix,
    SymbolAlphabet,
    hadamard_codes,
    iter_scenarios,
)

__all__ = [
    "EvalResult",
    "SweepSpec",
    "SweepRow",
    "SweepResult",
    "ExperimentConfig",
    "evaluate",
    "sweep",
    "wilson_interval",
    "load_config",
    "PRESETS",
    "CSV_HEADER",
]

CSV_HEADER = [
    "swept_value",
    "proposed_error_rate",
    "baseline_error_rate",
    "num_runs",
    "errors_proposed",
    "errors_baseline",
]
SWEEPABLE = ("noise_power_db", "jammer_power_db", "num_active")


def wilson_interval(errors: int, runs: int, confidence=0.95) -> tuple[float, float]:
    ci = binomtest(errors, runs).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class EvalResult:
    num_runs: int
    errors_proposed: int | None
    errors_baseline: int

    @property
    def proposed_rate(self) -> float | None:
        if self.errors_proposed is None:
            return None
        return self.errors_proposed / self.num_runs

    @property
    def baseline_rate(self) -> float:
        return self.errors_baseline / self.num_runs

    def interval(self, which="baseline"):
        errs = self.errors_baseline if which == "baseline" else self.errors_proposed
        return wilson_interval(errs, self.num_runs)


def evaluate(
    model: TrainedModel | None,
    config: ScenarioConfig,
    num_runs: int,
    seed: int | None = None,
    codes: SpreadingMatrix | None = None,
    alphabet: SymbolAlphabet = QPSK,
    chunk: int = 1000,
) -> EvalResult:
    """Error counts of the denoiser+RDD pipeline and of RDD on the raw signal.

    Run ``i`` is generated from ``(seed, i)`` alone, so results do not depend
    on chunking or scheduling.  With ``model=None`` only the baseline is run.
    """
    if num_runs < 1:
        raise ValueError("num_runs must be at least 1")
    seed = config.seed if seed is None else seed
    codes = hadamard_codes(config.spreading_factor) if codes is None else codes
    if model is not None:
        model.weights.check(model.config)
    k = config.num_active
    err_p = 0 if model is not None else None
    err_b = 0
    for start in range(0, num_runs, chunk):
        count = min(chunk, num_runs - start)
        scen = list(iter_scenarios(config, codes, alphabet, count, seed, STREAM_EVAL, start))
        R = np.stack([s.received for s in scen])
        truths = [s.active for s in scen]
        idx, sym = rdd_detect_batch(mfb_batch(codes, R), k, alphabet)
        err_b += int(run_errors_batch(idx, sym, truths).sum())
        if model is not None:
            Yh = denoise_batch(model, R, codes)
            idx, sym = rdd_detect_batch(mfb_batch(codes, Yh), k, alphabet)
            err_p += int(run_errors_batch(idx, sym, truths).sum())
    return EvalResult(num_runs, err_p, err_b)


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    base: ScenarioConfig
    num_runs: int
    model_path: str | None = None

    def __post_init__(self):
        if self.variable not in SWEEPABLE:
            raise ValueError(f"cannot sweep {self.variable!r}; choose one of {SWEEPABLE}")
        if len(self.values) == 0:
            raise ValueError("sweep needs at least one value")
        if self.num_runs < 1:
            raise ValueError("num_runs must be at least 1")


@dataclass(frozen=True)
class SweepRow:
    swept_value: float
    result: EvalResult


@dataclass
class SweepResult:
    variable: str
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            r = row.result
            w.writerow([
                _fmt(row.swept_value),
                _fmt(r.proposed_rate) if r.proposed_rate is not None else "",
                _fmt(r.baseline_rate),
                r.num_runs,
                r.errors_proposed if r.errors_proposed is not None else "",
                r.errors_baseline,
            ])
        return buf.getvalue()

    def intervals(self):
        """Per row: ((proposed low, high), (baseline low, high)) Wilson 95% bounds."""
        out = []
        for row in self.rows:
            r = row.result
            prop = r.interval("proposed") if r.errors_proposed is not None else None
            out.append((prop, r.interval("baseline")))
        return out


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def sweep(spec: SweepSpec, model: TrainedModel | None, seed: int | None = None,
          codes: SpreadingMatrix | None = None) -> SweepResult:
    """One :func:`evaluate` per swept value; the model is never retrained."""
    seed = spec.base.seed if seed is None else seed
    rows = []
    for v in spec.values:
        v = int(v) if spec.variable == "num_active" else float(v)
        cfg = spec.base.with_(**{spec.variable: v})
        rows.append(SweepRow(v, evaluate(model, cfg, spec.num_runs, seed, codes)))
    return SweepResult(spec.variable, rows)


# ---------------------------------------------------------------------------
# configuration: a flat YAML mapping

@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig
    network: NetworkConfig
    training: TrainConfig
    num_train: int = 20000
    num_runs: int = 10000
    sweep_variable: str = "jammer_power_db"
    sweep_values: tuple = tuple(np.linspace(10.0, 30.0, 10))

    def flat(self) -> dict:
        d = {f.name: getattr(self.scenario, f.name) for f in fields(self.scenario)}
        d.update({k: getattr(self.network, k) for k in sorted(_NETWORK_KEYS)})
        d.update({k: getattr(self.training, k) for k in sorted(_TRAIN_KEYS)})
        d["train_seed"] = self.training.seed
        for name in ("num_train", "num_runs", "sweep_variable"):
            d[name] = getattr(self, name)
        d["sweep_values"] = list(self.sweep_values)
        return d


_SCENARIO_KEYS = {f.name for f in fields(ScenarioConfig)}
_NETWORK_KEYS = {"depth", "hidden_filters", "kernel_rows", "kernel_cols"}
# the training seed follows the scenario seed unless given as train_seed
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
_TOP_KEYS = {"num_train", "num_runs", "sweep_variable", "sweep_values", "preset", "train_seed"}
CONFIG_KEYS = _SCENARIO_KEYS | _NETWORK_KEYS | _TRAIN_KEYS | _TOP_KEYS


PRESETS = {
    # desk-scale training at the reference operating point; the larger step
    # size lets 30 short epochs leave the all-zero-output plateau
    "desk": dict(num_train=20000, epochs=30, learning_rate=1e-2, num_runs=2000),
    # fast tier: S = N = 32, 16 filters, dwell scaled to 25 segments; the final
    # epochs at a tenth of the step size settle an otherwise oscillating error rate
    "fast": dict(spreading_factor=32, num_users=32, num_segments=25, hidden_filters=16,
                 num_train=20000, epochs=30, learning_rate=1e-2, decay_epochs=10,
                 num_runs=2000),
    # long schedule: 200k examples, 200 epochs, default step size
    "full": dict(num_train=200000, epochs=200),
}


def build_config(values: dict | None = None) -> ExperimentConfig:
    """Assemble an :class:`ExperimentConfig`, failing on unknown keys."""
    values = dict(values or {})
    unknown = set(values) - CONFIG_KEYS
    if unknown:
        raise KeyError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    preset = values.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise KeyError(f"unknown preset {preset!r}; choose one of {sorted(PRESETS)}")
        values = {**PRESETS[preset], **values}
    scen = ScenarioConfig(**{k: values[k] for k in _SCENARIO_KEYS & set(values)})
    net = NetworkConfig(**{k: values[k] for k in _NETWORK_KEYS & set(values)})
    tvals = {k: values[k] for k in _TRAIN_KEYS & set(values)}
    tvals["seed"] = values.get("train_seed", scen.seed)
    top = {k: values[k] for k in ("num_train", "num_runs", "sweep_variable") if k in values}
    if "sweep_values" in values:
        top["sweep_values"] = tuple(values["sweep_values"])
    return ExperimentConfig(scen, net, TrainConfig(**tvals), **top)


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a flat key-value mapping")
        nested = [k for k, v in loaded.items() if isinstance(v, dict)]
        if nested:
            raise ValueError(f"{path}: nested sections are not allowed ({', '.join(nested)})")
        values.update(loaded)
    values.update(overrides or {})
    return build_config(values)


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)
