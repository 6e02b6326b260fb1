"""Command-line entry point: ``overfit-bounds <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 bound violation, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import mp_analytics as mp
from . import simulation as sim
from . import verify
from .errors import ConfigError, DomainError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BOUND = 3
EXIT_VERIFY = 4

SEED_ENV = "OVERFIT_SEED"

CURVE_HEADER = ("tau", "analytic_excess", "universal_sqrt", "universal_legacy", "small_tau_bound")
SIMULATE_HEADER = (
    "tau", "gamma", "mc_mean", "mc_stderr", "infeasible_count", "analytic", "universal_sqrt", "universal_legacy",
)
BOUNDS_HEADER = ("tau", "n", "p", "universal_sqrt", "universal_legacy", "analytic")


class UsageError(Exception):
    """Invalid flag values detected after parsing."""


# ---------------------------------------------------------------------------
# parsing helpers


def parse_grid(text: str) -> tuple[float, ...]:
    """``"a,b,c"`` or ``"start:stop:count"`` (inclusive, count >= 2)."""
    text = text.strip()
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
            if count < 2:
                raise argparse.ArgumentTypeError("grid count must be at least 2")
            return tuple(float(v) for v in np.linspace(start, stop, count))
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use a,b,c or start:stop:count") from None
    if not values:
        raise argparse.ArgumentTypeError("empty grid")
    return values


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return "%.17g" % v


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _label(value: float) -> str:
    return f"{value:g}"


def resolve_seed(cli_seed: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return cli_seed
    try:
        return int(env, 0)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


def _check_taus(taus: Sequence[float]) -> None:
    if any(not 0.0 <= t <= 1.0 for t in taus):
        raise UsageError("tau values must lie in [0, 1]")


# ---------------------------------------------------------------------------
# commands


def cmd_curve(args) -> int:
    _check_taus(args.tau)
    out = Path(args.out)
    for g in args.gamma:
        if not g > 0.0:
            raise UsageError("gamma must be positive")
        rows = []
        for tau in args.tau:
            small = mp.small_tau_bound(tau, g, args.sigma2) if g < 1.0 and tau <= 1.0 - g else None
            rows.append((
                tau,
                mp.analytic_excess_loss(tau, g, args.sigma2),
                mp.universal_bound(tau, g, 1.0, args.sigma2, "sqrt"),
                mp.universal_bound(tau, g, 1.0, args.sigma2, "cube_root_legacy"),
                small,
            ))
        print(write_csv(out / f"curve_gamma_{_label(g)}.csv", CURVE_HEADER, rows))
    return EXIT_OK


def cmd_bounds(args) -> int:
    _check_taus(args.tau)
    if args.n < 1 or args.p < 1:
        raise UsageError("n and p must be positive")
    rows = [
        (
            tau, args.n, args.p,
            mp.universal_bound(tau, args.n, args.p, args.sigma2, "sqrt"),
            mp.universal_bound(tau, args.n, args.p, args.sigma2, "cube_root_legacy"),
            mp.analytic_excess_loss(tau, args.n / args.p, args.sigma2),
        )
        for tau in args.tau
    ]
    print(write_csv(Path(args.out) / "bounds.csv", BOUNDS_HEADER, rows))
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        config = sim.ExperimentConfig(
            n=args.n, p=args.p, sigma=args.sigma, tau_grid=args.tau, trials=args.trials,
            master_seed=args.seed, feature_dist=args.features, covariance_spec=args.covariance,
            noise_dist=args.noise, student_t_dof=args.dof, beta_star_spec=args.beta_star,
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    reports = sim.run_experiment(config, threads=args.threads)
    rows = [
        (r.tau, r.gamma, r.mc_mean, r.mc_stderr, r.infeasible_count, r.analytic_value,
         r.universal_bound_sqrt, r.universal_bound_legacy)
        for r in reports
    ]
    print(write_csv(Path(args.out) / "simulate.csv", SIMULATE_HEADER, rows))
    violated = [r for r in reports if r.bound_violated]
    for r in violated:
        print(
            f"bound violation at tau={fmt(r.tau)}: mc_mean={fmt(r.mc_mean)} "
            f"< bound {fmt(r.universal_bound_sqrt)} - 3*{fmt(r.mc_stderr)}",
            file=sys.stderr,
        )
    errors = sum(r.error_count for r in reports)
    if errors:
        print(f"{errors} solver errors recorded (see log)", file=sys.stderr)
    return EXIT_BOUND if violated else EXIT_OK


def cmd_verify(args) -> int:
    reports = verify.run_suites(args.suite, quick=args.quick)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.trials} checks, {r.failures} failures, worst margin {r.worst_margin:.3g}")
    if not failed:
        return EXIT_OK
    dump = [{"name": r.name, "failures": r.failures, "counterexample": r.counterexample} for r in failed]
    text = json.dumps(dump, indent=2, default=_json_default)
    print("counterexamples:\n" + text)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify_counterexamples.json").write_text(text + "\n", encoding="utf-8")
    return EXIT_VERIFY


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


PLOT_SCRIPT = '''"""Plot the {mode} tables written next to this script (requires matplotlib)."""
import csv
import math
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
FILES = {files!r}

fig, ax = plt.subplots()
for name in FILES:
    with open(HERE / name, newline="") as fh:
        rows = list(csv.DictReader(fh))
    xcol = next(iter(rows[0]))
    for col in list(rows[0])[1:]:
        if col == "gamma":
            continue
        pts = [(float(r[xcol]), float(r[col])) for r in rows if r[col] not in ("", "inf")]
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, label=f"{{name[:-4]}} {{col}}")
ax.set_xlabel(xcol)
ax.legend(fontsize="small")
fig.savefig(HERE / "{mode}.png", dpi=150)
'''


def cmd_figures(args) -> int:
    if args.tau_grid is not None:
        _check_taus(args.tau_grid)
    if args.tau is not None:
        _check_taus(args.tau)
    tables = sim.figure_curves(
        args.mode, gammas=args.gamma, taus=args.tau, tau_grid=args.tau_grid,
        inv_gamma_grid=args.inv_gamma_grid, sigma2=args.sigma2,
    )
    out = Path(args.out)
    names = []
    for table in tables:
        print(write_csv(out / f"{table.name}.csv", table.header, table.rows))
        names.append(f"{table.name}.csv")
    if args.format == "csv+plotscript":
        script = out / f"plot_{args.mode}.py"
        script.write_text(PLOT_SCRIPT.format(mode=args.mode, files=names), encoding="utf-8")
        print(script)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(defaults: bool) -> argparse.ArgumentParser:
    """Global options; accepted before or after the subcommand."""
    sup = argparse.SUPPRESS
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", default="out" if defaults else sup, help="output directory (default ./out)")
    p.add_argument("--format", choices=("csv", "csv+plotscript"), default="csv" if defaults else sup)
    p.add_argument("--threads", type=int, default=1 if defaults else sup, help="simulation threads, 0 = auto")
    p.add_argument("--seed", type=int, default=0 if defaults else sup, help=f"master seed ({SEED_ENV} overrides)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="overfit-bounds",
        description="Lower bounds on the excess loss of overfitted linear models.",
        parents=[_common(True)],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(False)

    p = sub.add_parser("curve", parents=[common], help="analytic curves, one CSV per gamma")
    p.add_argument("--gamma", type=parse_grid, required=True, help="aspect ratios n/p")
    p.add_argument("--tau", type=parse_grid, default=parse_grid("0:1:101"))
    p.add_argument("--sigma2", type=float, default=1.0)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("bounds", parents=[common], help="finite-sample bounds for given n, p")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--tau", type=parse_grid, default=parse_grid("0:1:11"))
    p.add_argument("--sigma2", type=float, default=1.0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo excess loss")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--tau", type=parse_grid, default=(0.25,))
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--features", choices=("gaussian_iid", "gaussian_covariance"), default="gaussian_iid")
    p.add_argument("--covariance", default=None, help="ar1:<rho>, diag:<lo>:<hi> or a .npy/.csv file")
    p.add_argument("--noise", choices=("gaussian", "student_t", "rademacher_scaled"), default="gaussian")
    p.add_argument("--dof", type=float, default=5.0, help="student_t degrees of freedom (> 4.5)")
    p.add_argument("--beta-star", choices=("zero", "unit_sphere_random"), default="zero")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", parents=[common], help="run property suites")
    p.add_argument("--suite", choices=verify.SUITES + ("all",), default="all")
    p.add_argument("--quick", action="store_true", help="smaller sample counts")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("figures", parents=[common], help="figure tables")
    p.add_argument("--mode", choices=("fig1a", "fig1b", "fig2"), required=True)
    p.add_argument("--gamma", type=parse_grid, default=None, help="fixed gammas (fig1a, fig2)")
    p.add_argument("--tau", type=parse_grid, default=None, help="fixed taus (fig1b)")
    p.add_argument("--tau-grid", type=parse_grid, default=None)
    p.add_argument("--inv-gamma-grid", type=parse_grid, default=None)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.set_defaults(func=cmd_figures)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "sigma2", 1.0) <= 0.0:
            raise UsageError("sigma2 must be positive")
        if args.threads < 0:
            raise UsageError("--threads must be >= 0")
        args.seed = resolve_seed(args.seed)
        return args.func(args)
    except (UsageError, DomainError) as exc:
        parser.print_usage(sys.stderr)
        print(f"overfit-bounds: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
