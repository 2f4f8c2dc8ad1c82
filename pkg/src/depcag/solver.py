"""Method of steps for (r(t) x'(t))' + f(t, x(gamma(t))) = 0.

On each interval I_k = [t_k, t_{k+1}) the deviating argument is frozen at
c_k = x(zeta_k), and the equation integrates in closed form up to two
quadratures:

    r(t) v(t) = r(t_k) v_k - ∫_{t_k}^t f(s, c_k) ds
    x(t)      = x_k + ∫_{t_k}^t v(s) ds

When zeta_k > t_k the frozen value lies ahead of t_k, so c_k solves the
scalar fixed-point problem c = X(zeta_k; c).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .expr import Expression, NonFiniteError
from .model import InitialCondition, ProblemSpec
from .pca import ArgumentSchedule
from .quadrature import QuadratureError, cumulative_integral

__all__ = [
    "SolverOptions",
    "SolverError",
    "FixedPointFailure",
    "BlowupError",
    "CoefficientError",
    "NodeState",
    "DenseSamples",
    "Trajectory",
    "frozen_solution",
    "resolve_advanced",
    "linear_step_exact",
    "step",
    "integrate",
    "InvariantError",
    "assert_invariants",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    quad_tol: float = 1e-10
    fp_tol: float = 1e-12
    max_iter: int = 100
    blowup_bound: float = 1e12
    dense_per_interval: int = 8
    use_exact_linear: bool = True


class SolverError(ArithmeticError):
    pass


class FixedPointFailure(SolverError):
    def __init__(self, k: int, iterations: int, residual: float):
        self.k = k
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"fixed point for interval {k} not found after {iterations} iterations "
            f"(residual {residual:.3g}); the step map is not contractive here"
        )


class BlowupError(SolverError):
    def __init__(self, t: float, message: str = ""):
        self.t = t
        super().__init__(message or f"solution left the blowup bound near t={t}")


class CoefficientError(SolverError):
    pass


@dataclass(frozen=True)
class NodeState:
    k: int
    t_k: float
    x: float
    v: float
    zeta: float = math.nan
    x_at_zeta: float = math.nan
    fp_iterations: int = 0


@dataclass(frozen=True)
class DenseSamples:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    k: np.ndarray
    gamma: np.ndarray

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class Trajectory:
    label: str
    nodes: list[NodeState]
    dense: DenseSamples
    status: str  # Completed | Blowup | FixedPointFailure | QuadratureFailure
    horizon: float
    options: SolverOptions
    end: NodeState | None = None
    failure_t: float | None = None
    failure_k: int | None = None
    message: str = ""

    @property
    def completed(self) -> bool:
        return self.status == "Completed"

    @property
    def node_times(self) -> np.ndarray:
        return np.array([n.t_k for n in self.nodes])

    @property
    def node_x(self) -> np.ndarray:
        return np.array([n.x for n in self.nodes])

    @property
    def node_v(self) -> np.ndarray:
        return np.array([n.v for n in self.nodes])


# --- within-interval machinery ---------------------------------------------------


def _vec(expr: Expression, shape, **bindings) -> np.ndarray:
    return np.broadcast_to(expr(**bindings), shape)


class _Frozen:
    """Frozen-argument solution on one interval, started at (t0, x0, v0)."""

    def __init__(self, spec: ProblemSpec, t0: float, x0: float, v0: float, c: float, tol: float):
        self.spec, self.t0, self.x0, self.v0, self.c = spec, t0, x0, v0, c
        # absolute tolerance follows the state size below 1 so the step map stays homogeneous
        self.tol = tol
        self.atol = tol * min(1.0, max(abs(x0), abs(v0), abs(c)))
        self.r0 = float(spec.r(t=t0))
        if not self.r0 > 0:
            raise CoefficientError(f"r(t) <= 0 at t={t0}")
        self.m0 = self.r0 * v0

    def force(self, s: np.ndarray) -> np.ndarray:
        return _vec(self.spec.f, s.shape, t=s, x=self.c)

    def velocity(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        r = _vec(self.spec.r, s.shape, t=s)
        if np.any(r <= 0):
            raise CoefficientError(f"r(t) <= 0 near t={float(s[np.argmax(r <= 0)])}")
        big_f = cumulative_integral(self.force, self.t0, s, self.atol, self.tol)
        return (self.m0 - big_f) / r

    def position(self, t: np.ndarray) -> np.ndarray:
        return self.x0 + cumulative_integral(self.velocity, self.t0, t, self.atol, self.tol)


def frozen_solution(spec: ProblemSpec, k: int, x_k: float, v_k: float, c: float, t,
                    *, t_start: float | None = None, quad_tol: float = 1e-10):
    """``(x(t), x'(t))`` on interval ``k`` with the argument frozen at ``c``.

    The solution starts from ``(x_k, v_k)`` at ``t_start`` (default: the node
    ``t_k``).  ``t`` may be a scalar or an array.
    """
    t0 = spec.schedule.node(k) if t_start is None else t_start
    sol = _Frozen(spec, t0, x_k, v_k, c, quad_tol)
    tt = np.asarray(t, dtype=float)
    x = sol.position(tt.reshape(-1)).reshape(tt.shape)
    v = sol.velocity(tt.reshape(-1)).reshape(tt.shape)
    if tt.ndim == 0:
        return float(x), float(v)
    return x, v


def resolve_advanced(spec: ProblemSpec, k: int, x_k: float, v_k: float,
                     *, t_start: float | None = None, fp_tol: float = 1e-12,
                     max_iter: int = 100, quad_tol: float = 1e-10) -> tuple[float, int]:
    """Solve ``c = X(zeta_k; c)`` by damped fixed-point iteration.

    The damping factor starts at 1 and is halved whenever the residual fails
    to shrink, and after each accepted step it is re-tuned from the secant
    slope of the residual (never above 1).

    Returns ``(c, iterations)``; iterations counts evaluations of the step map.
    """
    t0 = spec.schedule.node(k) if t_start is None else t_start
    zeta = spec.schedule.switch_point(k)
    if zeta == t0:
        return x_k, 0

    def phi(c: float) -> float:
        return float(_Frozen(spec, t0, x_k, v_k, c, quad_tol).position(np.array([zeta]))[0])

    c = x_k + v_k * (zeta - t0)
    image = phi(c)
    res = image - c
    iterations = 1
    lam = 1.0
    # fp_tol * (|c| + scale) <= fp_tol * (1 + |c|); the state scale keeps small solutions relative
    scale = min(1.0, max(abs(x_k), abs(v_k)))
    while abs(res) > fp_tol * (abs(c) + scale):
        if iterations >= max_iter:
            raise FixedPointFailure(k, iterations, abs(res))
        trial = (1.0 - lam) * c + lam * image
        trial_image = phi(trial)
        iterations += 1
        trial_res = trial_image - trial
        # secant slope of the residual; for an affine map -1/d is the exact relaxation
        d = (trial_res - res) / (trial - c) if trial != c else 0.0
        secant = min(1.0, max(-1.0 / d, 1e-12)) if d < 0 else None
        if abs(trial_res) >= abs(res):
            # no progress (growth, or a 2-cycle when the map has slope -1): damp
            lam = 0.5 * lam if secant is None else min(0.5 * lam, secant)
            continue
        if secant is not None:
            lam = secant  # re-tune the damping from the observed slope
        c, image, res = trial, trial_image, trial_res
    return c, iterations


def linear_step_exact(kappa: float, schedule: ArgumentSchedule, k: int, x_k: float, v_k: float,
                      *, t_start: float | None = None) -> tuple[float, float, float]:
    """Closed-form step of x'' + kappa x(gamma(t)) = 0 across interval ``k``.

    Returns ``(x_{k+1}, v_{k+1}, c_k)``.
    """
    t_k, zeta, t_next = schedule.interval(k)
    t0 = t_k if t_start is None else t_start
    delta = zeta - t0
    h = t_next - t0
    denom = 1.0 + kappa * delta * delta / 2.0
    if denom == 0.0:
        raise SolverError(f"singular linear step on interval {k}")
    c = (x_k + v_k * delta) / denom
    x_next = x_k + v_k * h - (kappa * c / 2.0) * h * h
    v_next = v_k - kappa * c * h
    return x_next, v_next, c


def _linear_dense(kappa, t0, x0, v0, c, ts):
    s = ts - t0
    return x0 + v0 * s - 0.5 * kappa * c * s * s, v0 - kappa * c * s


def _solve_interval(spec: ProblemSpec, k: int, t0: float, x0: float, v0: float,
                    opts: SolverOptions, dense_t: np.ndarray | None = None):
    """Resolve c_k and carry the state to t_{k+1}; optionally sample inside."""
    t_next = spec.schedule.node(k + 1)
    exact = spec.linear_kappa is not None and opts.use_exact_linear
    if exact:
        x1, v1, c = linear_step_exact(spec.linear_kappa, spec.schedule, k, x0, v0, t_start=t0)
        iters = 0
        if dense_t is not None:
            dx, dv = _linear_dense(spec.linear_kappa, t0, x0, v0, c, dense_t)
    else:
        c, iters = resolve_advanced(spec, k, x0, v0, t_start=t0, fp_tol=opts.fp_tol,
                                    max_iter=opts.max_iter, quad_tol=opts.quad_tol)
        sol = _Frozen(spec, t0, x0, v0, c, opts.quad_tol)
        pts = np.array([t_next]) if dense_t is None else np.append(dense_t, t_next)
        xs, vs = sol.position(pts), sol.velocity(pts)
        x1, v1 = float(xs[-1]), float(vs[-1])
        if dense_t is not None:
            dx, dv = xs[:-1], vs[:-1]
    if dense_t is None:
        return c, iters, x1, v1, None, None
    return c, iters, x1, v1, dx, dv


def step(spec: ProblemSpec, state: NodeState, opts: SolverOptions = SolverOptions()) -> NodeState:
    """Advance one interval: resolve the frozen value, then carry (x, x') to the next node.

    ``state.t_k`` may lie inside interval ``state.k`` (a clipped first step).
    """
    c, iters, x1, v1, _, _ = _solve_interval(spec, state.k, state.t_k, state.x, state.v, opts)
    t_next = spec.schedule.node(state.k + 1)
    if not (math.isfinite(x1) and math.isfinite(v1)) or max(abs(x1), abs(v1)) > opts.blowup_bound:
        raise BlowupError(t_next)
    return NodeState(state.k + 1, t_next, x1, v1, spec.schedule.switch_point(state.k + 1))


def integrate(spec: ProblemSpec, ic: InitialCondition, horizon: float,
              dense_per_interval: int | None = None,
              opts: SolverOptions = SolverOptions()) -> Trajectory:
    """Run the method of steps from ``(tau, x0, v0)`` through the last node before ``horizon``.

    Failures end the run early; the returned trajectory then carries the
    failure status and every state computed before it.
    """
    dpi = opts.dense_per_interval if dense_per_interval is None else dense_per_interval
    if not horizon > spec.tau:
        raise ValueError("horizon must exceed tau")
    if dpi < 2:
        raise ValueError("dense_per_interval must be at least 2")
    opts = replace(opts, dense_per_interval=dpi)
    sched = spec.schedule

    k = sched.interval_index(spec.tau)
    t0, x, v = spec.tau, ic.x0, ic.v0
    nodes: list[NodeState] = []
    ts, xs, vs, ks, gs = [], [], [], [], []
    status, fail_t, fail_k, message = "Completed", None, None, ""
    end = None

    while t0 < horizon:
        t_next = sched.node(k + 1)
        zeta = sched.switch_point(k)
        grid = t0 + (t_next - t0) * np.arange(dpi) / dpi
        try:
            c, iters, x1, v1, dx, dv = _solve_interval(spec, k, t0, x, v, opts, grid)
            if not (math.isfinite(x1) and math.isfinite(v1)) or max(abs(x1), abs(v1)) > opts.blowup_bound:
                raise BlowupError(t_next)
        except (BlowupError, NonFiniteError) as exc:
            status, fail_t, fail_k, message = "Blowup", getattr(exc, "t", t0), k, str(exc)
            break
        except FixedPointFailure as exc:
            status, fail_t, fail_k, message = "FixedPointFailure", t0, k, str(exc)
            break
        except (QuadratureError, CoefficientError) as exc:
            status, fail_t, fail_k, message = "QuadratureFailure", t0, k, str(exc)
            break
        nodes.append(NodeState(k, t0, x, v, zeta, c, iters))
        ts.append(grid)
        xs.append(dx)
        vs.append(dv)
        ks.append(np.full(dpi, k))
        gs.append(np.full(dpi, zeta))
        k, t0, x, v = k + 1, t_next, x1, v1
        end = NodeState(k, t0, x, v)

    if end is not None and status == "Completed":
        ts.append([end.t_k])
        xs.append([end.x])
        vs.append([end.v])
        ks.append([end.k])
        gs.append([sched.switch_point(end.k)])
    if status != "Completed":
        log.info("%s: %s", spec.label, message)

    cat = (lambda parts, dtype=float: np.concatenate(parts).astype(dtype) if parts
           else np.zeros(0, dtype=dtype))
    dense = DenseSamples(cat(ts), cat(xs), cat(vs), cat(ks, int), cat(gs))
    return Trajectory(spec.label, nodes, dense, status, horizon, opts, end, fail_t, fail_k, message)


class InvariantError(AssertionError):
    pass


def assert_invariants(traj: Trajectory) -> None:
    """Structural checks every trajectory must pass; raises InvariantError."""
    t = traj.dense.t
    if t.size > 1 and not np.all(np.diff(t) > 0):
        raise InvariantError("dense sample times are not strictly increasing")
    ks = [n.k for n in traj.nodes]
    if any(b != a + 1 for a, b in zip(ks, ks[1:])):
        raise InvariantError("node indices are not consecutive")
    for n in traj.nodes:
        if not (math.isfinite(n.x) and math.isfinite(n.v) and math.isfinite(n.x_at_zeta)):
            raise InvariantError(f"non-finite state recorded at node {n.k}")
