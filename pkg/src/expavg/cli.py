"""Command-line interface.

Subcommands: ``simulate`` (emit a dataset CSV), ``test`` (analyze one
dataset), ``table1`` (Monte Carlo rejection table), ``limits``
(limit-law critical values). Exit codes: 0 success, 2 config error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import cpcox, gausscp, harness
from .core import write_dataset_csv
from .errors import ConfigError, DataError, ExpavgError, NumericalError


def _load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _simulate_cmd(args) -> int:
    raw = _load_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    d = dict(raw)
    model = harness._take(d, "model", "")
    n = int(harness._take(d, "n", ""))
    truth = harness._take(d, "truth", "")
    seed = int(harness._take(d, "seed", ""))
    v_max = float(harness._take(d, "v_max", "", required=False, default=5.0))
    harness._no_leftovers(d, "")
    if model == "cpcox_cs":
        if truth == "null":
            params = cpcox.CPParams(0.0, 0.0, 0.0, 0.5)
        else:
            t = dict(truth)
            params = cpcox.CPParams(
                float(harness._take(t, "beta1", "truth.")),
                float(harness._take(t, "beta2", "truth.")),
                float(harness._take(t, "alpha", "truth.")),
                float(harness._take(t, "zeta", "truth.")),
            )
            harness._no_leftovers(t, "truth.")
        ds = cpcox.simulate(n, params, v_max, seed)
        write_dataset_csv(ds, args.out)
    elif model == "gauss_cp":
        if truth == "null":
            params = gausscp.GaussCPParams(0.0, 0.0, 1.0, 0.5)
        else:
            t = dict(truth)
            params = gausscp.GaussCPParams(
                float(harness._take(t, "mu", "truth.")),
                float(harness._take(t, "beta", "truth.")),
                float(harness._take(t, "sigma", "truth.")),
                float(harness._take(t, "zeta", "truth.")),
            )
            harness._no_leftovers(t, "truth.")
        ds = gausscp.g_simulate(n, params, seed)
        gausscp.write_gauss_csv(ds, args.out)
    else:
        raise ConfigError(f"model must be 'cpcox_cs' or 'gauss_cp', got {model!r}", "model")
    print(f"wrote {n} observations to {args.out}")
    return 0


def _experiment_config(args) -> harness.ExperimentConfig:
    raw = _load_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["max_workers"] = args.workers
    return harness.ExperimentConfig.from_dict(raw)


def _test_cmd(args) -> int:
    cfg = _experiment_config(args)
    report = harness.run_single_test(args.dataset, cfg)
    text = harness.report_to_json(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote report to {args.out}")
    else:
        print(text)
    return 0


def _table1_cmd(args) -> int:
    cfg = _experiment_config(args)
    rows = harness.run_table1(cfg)
    if args.out:
        harness.write_rows_csv(rows, args.out)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        for r in rows:
            print(r)
    return 0


def _limits_cmd(args) -> int:
    raw = _load_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = harness.LimitConfig.from_dict(raw)
    rows = harness.run_limit_table(cfg)
    if args.out:
        harness.write_limit_csv(rows, args.out)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        for r in rows:
            print(r)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expavg",
        description="Exponential-average tests under loss of identifiability",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p, needs_out: bool):
        p.add_argument("--config", required=True, help="JSON configuration path")
        p.add_argument("--out", required=needs_out, help="output path")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=None, help="override max_workers")

    p = sub.add_parser("simulate", help="emit a simulated dataset CSV")
    _common(p, needs_out=True)
    p.set_defaults(func=_simulate_cmd)

    p = sub.add_parser("test", help="analyze a single dataset")
    p.add_argument("dataset", help="dataset CSV path")
    _common(p, needs_out=False)
    p.set_defaults(func=_test_cmd)

    p = sub.add_parser("table1", help="Monte Carlo rejection-frequency table")
    _common(p, needs_out=False)
    p.set_defaults(func=_table1_cmd)

    p = sub.add_parser("limits", help="limit-law critical-value table")
    _common(p, needs_out=False)
    p.set_defaults(func=_limits_cmd)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, ExpavgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
