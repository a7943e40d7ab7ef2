"""Command line interface: ``python3 -m minmax_bo {run,sweep,aggregate}``.

Every option can also be given in a ``--config`` file of ``key = value``
lines (``#`` starts a comment); keys are the long option names with or
without the leading dashes.  Explicit command line flags win over the file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    ACQUISITIONS,
    TrialConfig,
    aggregate,
    emit_csv,
    read_trace_csv,
    run_experiment,
)
from .problems import PROBLEM_NAMES

_DEFAULTS = TrialConfig("camel_star", "thompson")

# option name -> TrialConfig field
_TRIAL_OPTIONS = {
    "iters": "iterations",
    "init-count": "init_count",
    "acq-resolution": "acquisition_resolution",
    "report-resolution": "reporting_resolution",
    "representative-count": "representative_count",
    "argmax-samples": "argmax_samples",
    "quadrature-nodes": "quadrature_nodes",
    "ep-damping": "ep_damping",
    "ep-tol": "ep_tol",
    "ep-max-sweeps": "ep_max_sweeps",
    "ep-retry-damping": "ep_retry_damping",
    "prune-margin": "prune_margin",
    "es-grid-stride": "es_grid_stride",
    "fantasy-count": "fantasy_count",
    "beta-0": "beta_0",
    "beta-min": "beta_min",
}


def read_config_file(path) -> dict[str, str]:
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.lstrip("-").replace("_", "-")] = value
    return values


def _common(p: argparse.ArgumentParser, acquisition_default=None):
    p.add_argument("--config", help="key = value file mirroring these options")
    p.add_argument("--problem", choices=PROBLEM_NAMES, default="camel_star")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0, help="master seed; trial k uses seed + k")
    p.add_argument("--out", default="results")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    g = p.add_argument_group("trial and acquisition settings")
    for opt, name in _TRIAL_OPTIONS.items():
        default = getattr(_DEFAULTS, name)
        g.add_argument(f"--{opt}", dest=name, type=type(default), default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minmax_bo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run seeded trials and write traces plus aggregate CSV")
    _common(run)
    run.add_argument("--acquisition", nargs="+", choices=ACQUISITIONS, default=["entropy_search"])

    sweep = sub.add_parser("sweep", help="entropy search for several representative counts")
    _common(sweep)
    sweep.add_argument("--counts", type=int, nargs="+", default=[5, 10, 20])

    agg = sub.add_parser("aggregate", help="aggregate trace CSV files")
    agg.add_argument("traces", nargs="+", help="trace CSV files or directories holding trial_*.csv")
    agg.add_argument("--out", required=True, help="aggregate CSV path")
    parser.commands = {"run": run, "sweep": sweep, "aggregate": agg}
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or known.command not in ("run", "sweep"):
        return
    sub = parser.commands[known.command]
    actions = {
        s.lstrip("-"): a for a in sub._actions for s in a.option_strings if s.startswith("--")
    }
    defaults = {}
    for key, raw in read_config_file(known.config).items():
        if key not in actions or key == "config":
            raise ValueError(f"{known.config}: unknown key {key!r}")
        action = actions[key]
        if action.nargs in ("+", "*"):
            value = [action.type(v) if action.type else v for v in raw.replace(",", " ").split()]
        elif isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        else:
            value = action.type(raw) if action.type else raw
        if action.choices is not None:
            for v in value if isinstance(value, list) else [value]:
                if v not in action.choices:
                    raise ValueError(f"{known.config}: {key} = {v!r} is not one of {action.choices}")
        defaults[action.dest] = value
    sub.set_defaults(**defaults)


def _trial_config(args, acquisition: str, **over) -> TrialConfig:
    settings = {name: getattr(args, name) for name in _TRIAL_OPTIONS.values()}
    settings.update(over)
    return TrialConfig(args.problem, acquisition, **settings)


def _run(configs, args) -> int:
    ok = True
    for cfg in configs:
        result = run_experiment(cfg, args.trials, args.out, args.seed, args.parallelism, args.quiet)
        ok &= result.complete
        if not args.quiet:
            print(f"{result.directory}/aggregate.csv", file=sys.stderr)
    return 0 if ok else 1


def _trace_files(items):
    for item in items:
        path = Path(item)
        if path.is_dir():
            yield from sorted(path.glob("trial_*.csv"))
        else:
            yield path


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _run([_trial_config(args, a) for a in args.acquisition], args)
        if args.command == "sweep":
            base = _trial_config(args, "entropy_search")
            return _run([replace(base, representative_count=n) for n in args.counts], args)
        traces = [read_trace_csv(p) for p in _trace_files(args.traces)]
        emit_csv(aggregate(traces), args.out)
        return 0
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
