"""Command line interface: simulate, check, classify, demo, validate.

Exit codes: 0 success, 1 usage/config error, 2 hypothesis validation
failure, 3 numerical failure, 4 internal invariant breach.
"""

from __future__ import annotations

import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from . import __version__
from .config import ConfigError, RunConfig, builtin_config, load_config
from .criteria import CriteriaError, CriterionReport, check_theorem_1, check_theorem_2
from .expr import ExpressionError
from .model import BUILTIN_NAMES, InitialCondition, ModelError, ProblemSpec, builtin, validate
from .oscillation import classify_trajectory, lemma_check
from .pca import ScheduleError
from .quadrature import QuadratureError
from .solver import InvariantError, SolverError, Trajectory, assert_invariants, integrate

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 1, 2, 3, 4

DEFAULT_HORIZON = {"example1": 26.0, "example2": 10.0, "criterion2-demo": 80.0}
DEMO_THEOREM = {"example1": 1, "example2": 1, "criterion2-demo": 2}


class ValidationFailed(Exception):
    pass


# --- helpers -------------------------------------------------------------------


def _fmt(value) -> str:
    return "%.17g" % value


def _load(config_path, builtin_name, alpha) -> RunConfig:
    if config_path and builtin_name:
        raise click.UsageError("give either --config or --builtin, not both")
    if builtin_name:
        spec, ic = builtin(builtin_name, alpha)
        cfg = builtin_config(builtin_name, spec, ic)
        cfg.sections["simulation"] = {"horizon": DEFAULT_HORIZON[builtin_name]}
        cfg.sections["criteria"] = {"theorem": DEMO_THEOREM[builtin_name]}
        return cfg
    if not config_path:
        raise click.UsageError("a problem is required: pass --config FILE or --builtin NAME")
    if alpha is not None:
        raise click.UsageError("--alpha only applies to --builtin")
    return load_config(config_path)


def _out_dir(cfg: RunConfig, out_dir) -> Path | None:
    path = out_dir or cfg.get("output", "dir")
    if path is None:
        return None
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _validate_or_fail(spec: ProblemSpec) -> None:
    report = validate(spec, spec.tau + 3.0, 32)
    if not report.passed:
        click.echo(report.render(), err=True)
        raise ValidationFailed("standing hypotheses violated; rerun with --no-validate to override")


def write_trajectory_csv(traj: Trajectory, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "dx", "interval", "gamma"])
        d = traj.dense
        for t, x, v, k, g in zip(d.t, d.x, d.v, d.k, d.gamma):
            w.writerow([_fmt(t), _fmt(x), _fmt(v), int(k), _fmt(g)])


def write_nodes_csv(traj: Trajectory, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t_k", "zeta_k", "x", "dx", "x_zeta", "fp_iters"])
        for n in traj.nodes:
            w.writerow([n.k, _fmt(n.t_k), _fmt(n.zeta), _fmt(n.x), _fmt(n.v),
                        _fmt(n.x_at_zeta), n.fp_iterations])


def write_verdict(report: CriterionReport, path: Path) -> None:
    text = report.render() + "\n\n[machine]\n" + "\n".join(report.machine_lines()) + "\n"
    path.write_text(text)


def _node_table(traj: Trajectory, limit: int | None = None) -> str:
    rows = traj.nodes if limit is None else traj.nodes[:limit]
    lines = [f"{'k':>4} {'t_k':>10} {'x(t_k)':>22} {'x_prime(t_k)':>22} {'x(zeta_k)':>22}"]
    for n in rows:
        lines.append(f"{n.k:>4} {n.t_k:>10.6g} {n.x:>22.15g} {n.v:>22.15g} {n.x_at_zeta:>22.15g}")
    if traj.end is not None and traj.completed and limit is None:
        e = traj.end
        lines.append(f"{e.k:>4} {e.t_k:>10.6g} {e.x:>22.15g} {e.v:>22.15g} {'':>22}")
    return "\n".join(lines)


def _summary(traj: Trajectory) -> str:
    tail = f" at t={traj.failure_t:g} ({traj.message})" if traj.failure_t is not None else ""
    last = traj.end or (traj.nodes[-1] if traj.nodes else None)
    where = f", last state t={last.t_k:g} x={last.x:.6g} x'={last.v:.6g}" if last else ""
    return f"{traj.label}: {traj.status}{tail}; {len(traj.nodes)} intervals{where}"


def _simulate(cfg: RunConfig, horizon, solver_overrides) -> tuple[ProblemSpec, Trajectory]:
    spec = cfg.problem()
    ic = cfg.initial()
    h = horizon if horizon is not None else cfg.get("simulation", "horizon")
    if h is None:
        raise ConfigError(f"{cfg.source}: missing required key simulation.horizon (or --horizon)")
    opts = cfg.solver_options(**solver_overrides)
    traj = integrate(spec, ic, float(h), opts=opts)
    assert_invariants(traj)
    return spec, traj


def _check(spec: ProblemSpec, cfg: RunConfig, theorem, epsilon, n_max, crit_overrides) -> CriterionReport:
    theorem = theorem or cfg.get("criteria", "theorem", 1)
    opts = cfg.criteria_options(**crit_overrides)
    if theorem == 1:
        return check_theorem_1(spec, opts)
    if theorem == 2:
        eps = epsilon if epsilon is not None else cfg.get("criteria", "epsilon", 1.0)
        nm = n_max if n_max is not None else cfg.get("criteria", "n_max", 4096)
        return check_theorem_2(spec, float(eps), int(nm), opts)
    raise ConfigError(f"theorem must be 1 or 2, got {theorem}")


def _agreement(report: CriterionReport, outcome: str) -> str:
    if report.conclusion != "Oscillatory":
        return "no-claim"
    if outcome == "Oscillatory":
        return "agree"
    if outcome in ("EventuallyPositive", "EventuallyNegative"):
        return "DISAGREE"
    return "undetermined"


# --- click commands --------------------------------------------------------------

problem_opts = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML run config."),
    click.option("--builtin", "builtin_name", type=click.Choice(BUILTIN_NAMES), help="Use a builtin instance."),
    click.option("--alpha", type=float, default=None, help="Switch fraction override for --builtin."),
]
sim_opts = [
    click.option("--horizon", type=float, default=None),
    click.option("--dense-per-interval", type=int, default=None),
    click.option("--quad-tol", type=float, default=None),
    click.option("--fp-tol", type=float, default=None),
    click.option("--max-iter", type=int, default=None),
    click.option("--blowup-bound", type=float, default=None),
]
crit_opts = [
    click.option("--theorem", type=click.IntRange(1, 2), default=None),
    click.option("--epsilon", type=float, default=None),
    click.option("--n-max", type=int, default=None),
    click.option("--delta", type=float, default=None),
    click.option("--i-max", type=int, default=None),
    click.option("--divergence-threshold", type=float, default=None),
]
osc_opts = [
    click.option("--sign-tol", type=float, default=None),
    click.option("--min-witnesses", type=int, default=3, show_default=True),
]
out_opt = click.option("--out-dir", type=click.Path(file_okay=False), default=None)
novalidate_opt = click.option("--no-validate", is_flag=True, help="Skip the hypothesis sample check.")


def _apply(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return deco


def _solver_overrides(kw) -> dict:
    return {k: kw.pop(k) for k in ("dense_per_interval", "quad_tol", "fp_tol", "max_iter", "blowup_bound")}


def _crit_overrides(kw) -> dict:
    return {k: kw.pop(k) for k in ("delta", "i_max", "divergence_threshold")}


@click.group()
@click.version_option(__version__)
def cli():
    """Simulate and check oscillation of second-order equations with piecewise constant argument."""


@cli.command()
@_apply(problem_opts + sim_opts)
@out_opt
@novalidate_opt
def simulate(config_path, builtin_name, alpha, horizon, out_dir, no_validate, **kw):
    """Integrate by the method of steps and write trajectory/nodes CSVs."""
    cfg = _load(config_path, builtin_name, alpha)
    if not no_validate:
        _validate_or_fail(cfg.problem())
    spec, traj = _simulate(cfg, horizon, _solver_overrides(kw))
    out = _out_dir(cfg, out_dir)
    if out is not None:
        write_trajectory_csv(traj, out / cfg.get("output", "trajectory", "trajectory.csv"))
        write_nodes_csv(traj, out / cfg.get("output", "nodes", "nodes.csv"))
    click.echo(_summary(traj))
    if traj.status in ("FixedPointFailure", "QuadratureFailure"):
        return EXIT_NUMERICAL
    return EXIT_OK


@cli.command()
@_apply(problem_opts + crit_opts)
@out_opt
@novalidate_opt
def check(config_path, builtin_name, alpha, theorem, epsilon, n_max, out_dir, no_validate, **kw):
    """Evaluate the conditions of oscillation criterion 1 or 2."""
    cfg = _load(config_path, builtin_name, alpha)
    spec = cfg.problem()
    if not no_validate:
        _validate_or_fail(spec)
    report = _check(spec, cfg, theorem, epsilon, n_max, _crit_overrides(kw))
    click.echo(report.render())
    out = _out_dir(cfg, out_dir)
    if out is not None:
        write_verdict(report, out / cfg.get("output", "verdict", "verdict.txt"))
    return EXIT_OK


def _sweep_one(job):
    spec, x0, v0, horizon, opts, sign_tol, min_w = job
    try:
        traj = integrate(spec, InitialCondition(x0, v0), horizon, opts=opts)
    except (SolverError, QuadratureError) as exc:  # pragma: no cover - integrate reports failures itself
        return ("Error", "Undetermined", 0, str(exc))
    cls = classify_trajectory(traj, sign_tol, min_w)
    return (traj.status, cls.outcome, cls.count, "")


def _parse_axis(text: str) -> list[float]:
    lo, hi, n = text.split(":")
    n = int(n)
    if n < 1:
        raise ValueError("grid size must be positive")
    if n == 1:
        return [float(lo)]
    step = (float(hi) - float(lo)) / (n - 1)
    return [float(lo) + i * step for i in range(n)]


@cli.command()
@_apply(problem_opts + sim_opts + crit_opts + osc_opts)
@click.option("--sweep", default=None, metavar="X0LO:X0HI:NX,V0LO:V0HI:NV",
              help="Classify a grid of initial conditions instead of the configured one.")
@click.option("--workers", type=int, default=None, help="Worker processes for --sweep.")
@out_opt
@novalidate_opt
def classify(config_path, builtin_name, alpha, horizon, theorem, epsilon, n_max, sign_tol,
             min_witnesses, sweep, workers, out_dir, no_validate, **kw):
    """Simulate, classify the trajectory, and compare with the criterion verdict."""
    cfg = _load(config_path, builtin_name, alpha)
    spec = cfg.problem()
    if not no_validate:
        _validate_or_fail(spec)
    solver_kw, crit_kw = _solver_overrides(kw), _crit_overrides(kw)
    report = _check(spec, cfg, theorem, epsilon, n_max, crit_kw)
    click.echo(report.render())
    out = _out_dir(cfg, out_dir)

    if sweep:
        try:
            xs_text, vs_text = sweep.split(",")
            grid = [(x0, v0) for x0 in _parse_axis(xs_text) for v0 in _parse_axis(vs_text)]
        except ValueError:
            raise click.BadParameter("expected X0LO:X0HI:NX,V0LO:V0HI:NV", param_hint="--sweep")
        h = horizon if horizon is not None else cfg.get("simulation", "horizon")
        if h is None:
            raise ConfigError(f"{cfg.source}: missing required key simulation.horizon (or --horizon)")
        opts = cfg.solver_options(**solver_kw)
        jobs = [(spec, x0, v0, float(h), opts, sign_tol, min_witnesses) for x0, v0 in grid]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
        rows = []
        disagreements = 0
        for i, ((x0, v0), (status, outcome, count, _msg)) in enumerate(zip(grid, results)):
            agree = _agreement(report, outcome) if status == "Completed" else "incomplete"
            disagreements += agree == "DISAGREE"
            rows.append([i, _fmt(x0), _fmt(v0), status, outcome, count, agree])
        if out is not None:
            with (out / "sweep.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["index", "x0", "v0", "status", "classification", "witnesses", "agreement"])
                w.writerows(rows)
        for row in rows:
            click.echo("  " + " ".join(str(c) for c in row))
        click.echo(f"sweep: {len(rows)} runs, {disagreements} disagreement(s)")
        return EXIT_OK

    spec, traj = _simulate(cfg, horizon, solver_kw)
    cls = classify_trajectory(traj, sign_tol, min_witnesses)
    eq6 = report["Eq6"].verdict
    lemma = lemma_check(traj, eq6)
    click.echo(_summary(traj))
    click.echo(f"classification: {cls}")
    click.echo(f"lemma check: {lemma}")
    click.echo(f"cross-check: {_agreement(report, cls.outcome)}")
    if out is not None:
        write_trajectory_csv(traj, out / cfg.get("output", "trajectory", "trajectory.csv"))
        write_nodes_csv(traj, out / cfg.get("output", "nodes", "nodes.csv"))
        write_verdict(report, out / cfg.get("output", "verdict", "verdict.txt"))
    if traj.status in ("FixedPointFailure", "QuadratureFailure"):
        return EXIT_NUMERICAL
    return EXIT_OK


@cli.command()
@click.argument("name", type=click.Choice(BUILTIN_NAMES))
@click.option("--horizon", type=float, default=None)
@out_opt
def demo(name, horizon, out_dir):
    """Run one of the worked examples end to end."""
    spec, ic = builtin(name)
    report_v = validate(spec, spec.tau + 3.0, 32)
    click.echo(f"== {name} ==")
    click.echo(report_v.render())
    h = horizon if horizon is not None else DEFAULT_HORIZON[name]
    traj = integrate(spec, ic, h)
    assert_invariants(traj)
    click.echo(_summary(traj))
    click.echo(_node_table(traj))
    theorem = DEMO_THEOREM[name]
    report = check_theorem_1(spec) if theorem == 1 else check_theorem_2(spec)
    click.echo(report.render())
    cls = classify_trajectory(traj)
    click.echo(f"classification: {cls}")
    click.echo(f"cross-check: {_agreement(report, cls.outcome)}")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(traj, out / "trajectory.csv")
        write_nodes_csv(traj, out / "nodes.csv")
        write_verdict(report, out / "verdict.txt")
    return EXIT_OK


@cli.command("validate")
@_apply(problem_opts)
@click.option("--t-max", type=float, default=None, help="Right end of the sample window (default tau+3).")
@click.option("--grid", type=int, default=32, show_default=True)
@click.option("--x-range", type=float, default=10.0, show_default=True)
def validate_cmd(config_path, builtin_name, alpha, t_max, grid, x_range):
    """Sample-check the standing hypotheses only."""
    cfg = _load(config_path, builtin_name, alpha)
    spec = cfg.problem()
    report = validate(spec, t_max if t_max is not None else spec.tau + 3.0, grid, x_range)
    click.echo(report.render())
    return EXIT_OK if report.passed else EXIT_VALIDATION


def run(argv=None) -> int:
    """Entry point returning the process exit code."""
    try:
        rv = cli.main(args=argv, prog_name="depcag", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (ConfigError, ModelError, ScheduleError, ExpressionError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except ValidationFailed as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VALIDATION
    except InvariantError as exc:
        click.echo(f"internal invariant breach: {exc}", err=True)
        return EXIT_INVARIANT
    except (SolverError, QuadratureError, CriteriaError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    return rv if isinstance(rv, int) else EXIT_OK


def main() -> None:
    sys.exit(run())
