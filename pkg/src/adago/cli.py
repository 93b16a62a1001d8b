"""Command-line entry point: ``adago run|grid|preset|diagnose|plot``.

Results go to ``--out``, or to a subdirectory of ``$ADAGO_OUT`` (default
``./runs``) named after the experiment. The summary CSV is also echoed to
stdout so runs can be piped.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics, harness
from .data import BatchSchedule
from .errors import ConfigurationError, InvalidInputError
from .harness import OPTIMIZERS, SCENARIOS
from .optim import NORMS

# CLI spelling -> OptimizerConfig field
OPT_FLAGS = {
    "eta": "eta", "mu": "mu", "gamma": "gamma", "eps": "epsilon", "v0": "v0",
    "ns_iters": "ns_iters", "norm": "norm", "adam_eta": "adam_eta",
}


def _seeds(text: str) -> tuple[int, ...]:
    """``'0,1,2'`` or a range ``'0-4'``."""
    try:
        if "-" in text.strip("-") and "," not in text:
            lo, hi = text.split("-", 1)
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _batch(text: str) -> BatchSchedule:
    try:
        return BatchSchedule.parse(text)
    except (ValueError, ConfigurationError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_opt_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eta", type=float, help="learning rate")
    p.add_argument("--mu", type=float, help="momentum")
    p.add_argument("--gamma", type=float, help="gradient-norm clamp")
    p.add_argument("--eps", type=float, help="stepsize floor")
    p.add_argument("--v0", type=float, help="initial accumulator")
    p.add_argument("--ns-iters", type=int, help="Newton-Schulz iterations (0 = exact SVD)")
    p.add_argument("--norm", choices=NORMS, help="norm used in the AdaGO stepsize")
    p.add_argument("--adam-eta", type=float, help="Adam learning rate for non-matrix parameters")


def _add_run_flags(p: argparse.ArgumentParser, scenario: bool = True) -> None:
    if scenario:
        p.add_argument("--scenario", choices=SCENARIOS, default="grf_regression")
        p.add_argument("--optimizer", choices=OPTIMIZERS, default="hybrid_adago")
        p.add_argument("--full-shape", action="store_true", help="10 000 x 50 regression data")
        _add_opt_flags(p)
        p.add_argument("--steps", type=int)
        p.add_argument("--batch", type=_batch, help="integer size, 'full', 'sqrt_t' or 'linear_t'")
    p.add_argument("--seeds", type=_seeds, help="comma list or range, e.g. 0,1,2 or 0-4")
    p.add_argument("--log-every", type=int)
    p.add_argument("--out", help="output directory (default: $ADAGO_OUT/<name>)")
    p.add_argument("--plot", action="store_true", help="also write SVG charts")


def config_from_args(args) -> harness.ExperimentConfig:
    cfg = harness.scenario_config(args.scenario, args.optimizer, full_shape=args.full_shape)
    opt_over = {f: getattr(args, a) for a, f in OPT_FLAGS.items() if getattr(args, a) is not None}
    over = {k: getattr(args, k) for k in ("steps", "batch", "seeds", "log_every") if getattr(args, k) is not None}
    return replace(cfg, opt=replace(cfg.opt, **opt_over), **over)


def _out_dir(args, name: str) -> Path:
    return Path(args.out) if args.out else harness.default_output_dir() / name


def _maybe_plot(args, result, out: Path) -> None:
    if args.plot:
        from .plots import emit_plots

        emit_plots({f"{result.config.optimizer} seed{s}": tr for s, tr in result.trajectories.items()}, out)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    out = _out_dir(args, f"{cfg.scenario}-{cfg.optimizer}")
    result = harness.run_experiment(replace(cfg, out=str(out)))
    _maybe_plot(args, result, out)
    sys.stdout.write(harness.summary_csv([result.summary]))
    return 0


def _parse_grid(items: list[str]) -> dict[str, list]:
    grid = {}
    for item in items:
        key, _, values = item.partition("=")
        key = key.strip().replace("-", "_")
        field = OPT_FLAGS.get(key, key)
        if field not in set(OPT_FLAGS.values()) or not values:
            raise ConfigurationError(f"bad grid axis {item!r}; use e.g. eta=0.1,0.2")
        cast = int if field == "ns_iters" else (str if field == "norm" else float)
        grid[field] = [cast(v) for v in values.split(",")]
    return grid


def cmd_grid(args) -> int:
    cfg = config_from_args(args)
    grid = _parse_grid(args.grid)
    out = _out_dir(args, f"grid-{cfg.scenario}-{cfg.optimizer}")
    rows = harness.grid_search(replace(cfg, out=str(out)), grid, args.eps_lt_eta_sq)
    sys.stdout.write(harness.summary_csv(rows))
    return 0


def cmd_preset(args) -> int:
    over = {k: getattr(args, k) for k in ("log_every",) if getattr(args, k) is not None}
    cfg = harness.theorem_preset(args.which, args.T, args.q, seeds=args.seeds or (0,), **over)
    out = _out_dir(args, f"preset{args.which}-T{args.T}")
    result = harness.run_experiment(replace(cfg, out=str(out)))
    _maybe_plot(args, result, out)
    sys.stdout.write(harness.summary_csv([result.summary]))
    lo = min(args.window_start, args.T // 10)
    fits = {s: diagnostics.rate_slope_fit(tr, window=(lo, args.T)) for s, tr in result.trajectories.items()
            if len(tr) == args.T}
    for s, fit in fits.items():
        print(f"seed {s}: slope {fit.slope:.4f} (r2 {fit.r_squared:.4f}) over t in [{lo}, {args.T}]")
    if fits:
        print(f"mean slope {np.mean([f.slope for f in fits.values()]):.4f}")
    return 0


def cmd_diagnose(args) -> int:
    report = {}
    for i, path in enumerate(args.trajectory):
        params = args.params[i] if args.params and i < len(args.params) else None
        traj = diagnostics.Trajectory.from_csv(path, params)
        entry = {"steps": len(traj), "final_train_loss": traj.records[-1].train_loss if len(traj) else None}
        try:
            fit = diagnostics.rate_slope_fit(traj, args.metric, tuple(args.window) if args.window else None)
            entry["rate_fit"] = {"slope": fit.slope, "intercept": fit.intercept,
                                 "r_squared": fit.r_squared, "window": list(fit.window)}
        except InvalidInputError as exc:
            entry["rate_fit"] = {"error": str(exc)}
        if params:
            checks = {}
            for name in traj.param_names():
                v = traj.param_series(name, "v_after")
                if not np.all(np.isfinite(v)):
                    continue  # not an AdaGO parameter
                chk, bound = diagnostics.accumulator_log_sum(traj, name, args.gamma, args.v0)
                checks[name] = {"lhs": chk.lhs, "rhs": chk.rhs, "holds": chk.holds,
                                "closed_form_bound": bound,
                                "v_nondecreasing": bool(np.all(np.diff(v) >= 0))}
            entry["log_sum"] = checks
        report[str(path)] = entry
    print(json.dumps(report, indent=2))
    return 0


def cmd_plot(args) -> int:
    from .plots import emit_plots

    trajs = {}
    for i, path in enumerate(args.trajectory):
        label = args.labels[i] if args.labels and i < len(args.labels) else Path(path).stem
        trajs[label] = diagnostics.Trajectory.from_csv(path)
    out = _out_dir(args, "plots")
    for kind, path in emit_plots(trajs, out).items():
        print(f"{kind}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adago", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration over one or more seeds")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="grid-search optimizer hyperparameters")
    _add_run_flags(p)
    p.add_argument("--grid", action="append", required=True, metavar="KEY=V1,V2",
                   help="one axis per flag, e.g. --grid eta=0.1,0.5 --grid eps=1e-3")
    p.add_argument("--eps-lt-eta-sq", action="store_true", help="skip cells with eps >= eta^2")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("preset", help="AdaGO with the theorem-prescribed schedules")
    p.add_argument("--which", choices=harness.PRESETS, required=True)
    p.add_argument("--T", type=int, required=True, help="horizon")
    p.add_argument("--q", type=float, default=0.05)
    p.add_argument("--window-start", type=int, default=100)
    _add_run_flags(p, scenario=False)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("diagnose", help="rate fits and accumulator checks on trajectory CSVs")
    p.add_argument("trajectory", nargs="+")
    p.add_argument("--params", nargs="*", help="matching params CSVs for the log-sum check")
    p.add_argument("--metric", choices=("avg_nuclear_grad", "min_nuclear_grad"), default="avg_nuclear_grad")
    p.add_argument("--window", type=int, nargs=2, metavar=("T_MIN", "T_MAX"))
    p.add_argument("--gamma", type=float, default=1e3)
    p.add_argument("--v0", type=float, default=1.0)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("plot", help="SVG charts from trajectory CSVs")
    p.add_argument("trajectory", nargs="+")
    p.add_argument("--labels", nargs="*")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, InvalidInputError) as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
