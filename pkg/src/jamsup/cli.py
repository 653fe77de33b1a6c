"""Command-line entry point: ``jamsup {gen-data,train,eval,sweep,gradcheck}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import yaml

from .denoiser import denoise_batch, suppression_ratio, train
from .gradcheck import run_all
from .harness import SweepSpec, evaluate, load_config, sweep
from .network import load_model, save_model
from .sigmodel import (
    QPSK,
    STREAM_HOLDOUT,
    generate_dataset,
    hadamard_codes,
    read_dataset,
    write_dataset,
)

log = logging.getLogger("jamsup")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this tool reserves 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_set(items):
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(raw)
    return out


def _config(args):
    overrides = _parse_set(args.set)
    if args.preset is not None:
        overrides.setdefault("preset", args.preset)
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        return load_config(args.config, overrides)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(str(exc).strip("'\"")) from exc


@contextmanager
def _sink(path, mode="w"):
    if path is None or str(path) == "-":
        yield sys.stdout.buffer if "b" in mode else sys.stdout
    else:
        with open(path, mode) as fh:
            yield fh


def _load(path):
    with open(path, "rb") as fh:
        return load_model(fh)


def cmd_gen_data(args, cfg):
    if args.output is None:
        raise UsageError("gen-data needs --output")
    count = cfg.num_train if args.count is None else args.count
    codes = hadamard_codes(cfg.scenario.spreading_factor)
    data = generate_dataset(cfg.scenario, codes, QPSK, count)
    with open(args.output, "wb") as fh:
        write_dataset(data, fh)
    log.info("wrote %d examples to %s", count, args.output)


def cmd_train(args, cfg):
    if args.output is None:
        raise UsageError("train needs --output for the model file")
    codes = hadamard_codes(cfg.scenario.spreading_factor)
    if args.data is not None:
        with open(args.data, "rb") as fh:
            data = read_dataset(fh)
    else:
        log.info("generating %d training examples", cfg.num_train)
        data = generate_dataset(cfg.scenario, codes, QPSK, cfg.num_train)
    with _sink(args.loss_log) as fh:
        fh.write("epoch,mean_loss\n")

        def on_epoch(epoch, value):
            fh.write(f"{epoch},{value!r}\n")
            fh.flush()

        model = train(data, cfg.network, cfg.training, codes, on_epoch=on_epoch)
    with open(args.output, "wb") as fh:
        save_model(model, fh)
    log.info("saved model to %s", args.output)


def cmd_eval(args, cfg):
    if args.model is None:
        raise UsageError("eval needs --model")
    model = _load(args.model)
    runs = cfg.num_runs if args.runs is None else args.runs
    res = evaluate(model, cfg.scenario, runs)
    lines = [
        f"num_runs,{res.num_runs}",
        f"proposed_error_rate,{res.proposed_rate!r}",
        f"baseline_error_rate,{res.baseline_rate!r}",
        "proposed_ci95,{:.6g},{:.6g}".format(*res.interval("proposed")),
        "baseline_ci95,{:.6g},{:.6g}".format(*res.interval("baseline")),
    ]
    if args.holdout:
        codes = hadamard_codes(cfg.scenario.spreading_factor)
        held = generate_dataset(cfg.scenario, codes, QPSK, args.holdout, stream=STREAM_HOLDOUT)
        R = np.stack([e.received for e in held])
        Y = np.stack([e.clean for e in held])
        ratio = suppression_ratio(denoise_batch(model, R, codes), R, Y)
        lines.append(f"suppression_ratio,{ratio!r}")
    with _sink(args.output) as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_sweep(args, cfg):
    model = _load(args.model) if args.model is not None else None
    if model is None:
        log.warning("no --model given: sweeping the baseline only")
    values = cfg.sweep_values if args.values is None else tuple(args.values)
    runs = cfg.num_runs if args.runs is None else args.runs
    spec = SweepSpec(cfg.sweep_variable, values, cfg.scenario, runs, args.model)
    result = sweep(spec, model)
    for row, (prop, base) in zip(result.rows, result.intervals()):
        log.info("%s=%g baseline CI95 [%.4g, %.4g]%s", spec.variable, row.swept_value, *base,
                 "" if prop is None else " proposed CI95 [%.4g, %.4g]" % prop)
    with _sink(args.output) as fh:
        fh.write(result.to_csv())


def cmd_gradcheck(args, cfg):
    results = run_all(trials=args.trials, seed=cfg.scenario.seed)
    with _sink(args.output) as fh:
        for r in results:
            fh.write(r.line() + "\n")
    if not all(r.passed for r in results):
        log.error("gradient check failed")
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat YAML config file")
    common.add_argument("--preset", help="named preset (desk, fast, full)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("-o", "--output", help="output path ('-' for stdout)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    # shared flags live on each subcommand: jamsup train --seed 3 ...
    p = _Parser(prog="jamsup", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="write a training dataset file")
    g.add_argument("--count", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train the denoiser")
    t.add_argument("--data", type=Path, help="dataset file (generated from the config if absent)")
    t.add_argument("--loss-log", help="epoch,mean_loss CSV (stdout if absent)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="Monte-Carlo error rates")
    e.add_argument("--model", type=Path)
    e.add_argument("--runs", type=int)
    e.add_argument("--holdout", type=int, default=0,
                   help="also report the suppression ratio on this many fresh examples")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="error rate versus one parameter, as CSV")
    s.add_argument("--model", type=Path)
    s.add_argument("--runs", type=int)
    s.add_argument("--values", type=float, nargs="+")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    c.add_argument("--trials", type=int, default=20)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        cfg = _config(args)
        code = args.func(args, cfg)
    except UsageError as exc:
        print(f"jamsup {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"jamsup {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
