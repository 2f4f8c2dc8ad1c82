import numpy as np
import pytest
from scipy import integrate as sp_integrate

from depcag.model import InitialCondition, ProblemSpec, builtin
from depcag.pca import Uniform
from depcag.quadrature import cumulative_integral, gauss_kronrod
from depcag.solver import (
    FixedPointFailure, NodeState, SolverOptions, assert_invariants, frozen_solution, integrate,
    linear_step_exact, resolve_advanced, step,
)

QUAD = SolverOptions(use_exact_linear=False)


def make(r="1", f="2*x", p="2", phi="u", tau=0.0, sched=Uniform(1, 0), **kw):
    return ProblemSpec.from_text(r, f, p, phi, tau, sched, **kw)


# --- quadrature ----------------------------------------------------------------

@pytest.mark.parametrize("fn, a, b", [
    (np.exp, 0.0, 1.0), (np.sin, 0.0, 10.0), (lambda s: 1 / (1 + s * s), -5.0, 5.0),
    (lambda s: np.sqrt(s), 0.0, 2.0), (lambda s: np.exp(-s * s), 3.0, -1.0),
])
def test_gauss_kronrod_vs_scipy(fn, a, b):
    value, err = gauss_kronrod(fn, a, b, 1e-12, 1e-12)
    ref, _ = sp_integrate.quad(fn, a, b, epsabs=1e-13, epsrel=1e-13)
    assert value == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_cumulative_integral_both_sides():
    pts = np.array([-1.0, 0.5, 2.0, 1.0])
    got = cumulative_integral(lambda s: s * s, 1.0, pts)
    assert got == pytest.approx((pts ** 3 - 1) / 3, abs=1e-13)


# --- frozen solution and fixed point ------------------------------------------

def test_frozen_solution_quadratic():
    x, v = frozen_solution(make(), 0, 1.0, 0.0, 1.0, 1.0)
    assert x == pytest.approx(0.0, abs=1e-13) and v == pytest.approx(-2.0, abs=1e-13)


def test_free_motion_conserves_momentum():
    spec = make(r="2+sin(t)", f="0*x", p="0")
    ts = np.linspace(0, 1, 9)
    _, v = frozen_solution(spec, 0, 1.0, 0.7, 0.3, ts)
    r = 2 + np.sin(ts)
    assert r * v == pytest.approx(np.full_like(ts, 2 * 0.7), rel=1e-12)


def test_zero_frozen_value():
    spec = make(r="1+t", f="x*exp(t)", p="1")
    ts = np.linspace(0, 1, 5)
    x, v = frozen_solution(spec, 0, 2.0, 1.0, 0.0, ts)
    assert (1 + ts) * v == pytest.approx(np.ones_like(ts), rel=1e-12)
    assert x == pytest.approx(2 + np.log1p(ts), rel=1e-12)


def test_fixed_point_degenerate_and_linear():
    assert resolve_advanced(make(), 3, 1.7, 0.2) == (1.7, 0)
    spec = make(sched=Uniform(1, 0.5))
    c, iters = resolve_advanced(spec, 0, 1.0, 0.0)
    assert c == pytest.approx(0.8, abs=1e-12) and iters >= 1


@pytest.mark.parametrize("kappa, delta, x0, v0", [(2, 0.5, 1, 0), (0.5, 0.3, -2, 1), (4, 0.9, 0.3, -0.7)])
def test_fixed_point_matches_formula(kappa, delta, x0, v0):
    spec = make(f=f"{kappa}*x", p=str(kappa), sched=Uniform(1, delta))
    c, _ = resolve_advanced(spec, 0, x0, v0)
    assert c == pytest.approx((x0 + v0 * delta) / (1 + kappa * delta ** 2 / 2), abs=1e-12 * (1 + abs(c)))


def test_fixed_point_failure_reported():
    spec = make(f="x+5*x^3", p="1", sched=Uniform(2, 1.0))
    with pytest.raises(FixedPointFailure) as info:
        resolve_advanced(spec, 0, 3.0, 0.0, max_iter=3)
    assert info.value.k == 0 and info.value.iterations == 3
    traj = integrate(spec, InitialCondition(3, 0), 20, opts=SolverOptions(max_iter=3))
    assert traj.status == "FixedPointFailure" and traj.failure_k == 0 and traj.nodes == []


def test_fixed_point_steep_negative_slope():
    # slope of the step map near -3: plain iteration diverges, damping must still converge
    spec = make(r="2+cos(t)", f="5.9*x", p="5.9", sched=Uniform(1.5, 0.72))
    c, iters = resolve_advanced(spec, 2, -0.2, 0.5)
    x_z, _ = frozen_solution(spec, 2, -0.2, 0.5, c, spec.schedule.switch_point(2))
    assert abs(x_z - c) <= 1e-12 * (1 + abs(c)) and iters < 100


# --- steps ---------------------------------------------------------------------

def test_linear_step_exact_examples():
    g = Uniform(1, 0)
    assert linear_step_exact(2, g, 0, 1, 0) == (0, -2, 1)
    assert linear_step_exact(2, g, 1, 0, -2) == (-2, -2, 0)
    x1, _, _ = linear_step_exact(3.3, g, 0, 0.4, 1.1)
    assert x1 == pytest.approx(0.4 * (1 - 3.3 / 2) + 1.1)


def test_step_examples():
    spec = make()
    s1 = step(spec, NodeState(0, 0.0, 1.0, 0.0), QUAD)
    assert (s1.x, s1.v) == pytest.approx((0, -2), abs=1e-12)
    s2 = step(spec, s1, QUAD)
    assert (s2.x, s2.v) == pytest.approx((-2, -2), abs=1e-12)
    free = step(make(f="0*x", p="0"), NodeState(0, 0.0, 1.5, 0.25), QUAD)
    assert (free.x, free.v) == pytest.approx((1.75, 0.25), abs=1e-13)


def test_example1_node_values():
    spec, ic = builtin("example1")
    for opts in (SolverOptions(), QUAD):
        traj = integrate(spec, ic, 8, opts=opts)
        assert traj.completed
        assert traj.node_x == pytest.approx([1, 0, -2, -2, 2, 6, 2, -10], abs=1e-9)


def test_equilibrium():
    traj = integrate(make(f="0*x", p="0"), InitialCondition(1, 0), 6, opts=QUAD)
    assert np.all(traj.dense.x == 1.0)


def test_example2_blows_up_with_prefix():
    spec, ic = builtin("example2")
    traj = integrate(spec, ic, 10)
    assert traj.status == "Blowup" and traj.failure_t < 10
    assert len(traj.nodes) >= 1 and traj.nodes[0].x == 1.0
    assert_invariants(traj)


def test_mid_interval_start():
    spec = make(tau=0.3, sched=Uniform(1, 0.5), f="x", p="1")
    traj = integrate(spec, InitialCondition(1, 0), 5, opts=QUAD)
    assert traj.nodes[0].t_k == 0.3 and traj.nodes[1].t_k == 1.0
    # first frozen value solves the fixed point from tau: (x0 + v0 d)/(1 + d^2/2), d = 0.2
    assert traj.nodes[0].x_at_zeta == pytest.approx(1 / (1 + 0.02), abs=1e-11)
    exact = make(tau=0.3, sched=Uniform(1, 0.5), f="x", p="1", linear_kappa=1.0)
    ref = integrate(exact, InitialCondition(1, 0), 5)
    assert traj.node_x == pytest.approx(ref.node_x, rel=1e-9)


def test_backward_switch_point_before_tau():
    # tau in the delayed part: zeta_0 = 0.2 < tau = 0.6
    spec = make(tau=0.6, sched=Uniform(1, 0.2), f="x", p="1")
    traj = integrate(spec, InitialCondition(1, 0.5), 4, opts=QUAD)
    exact = make(tau=0.6, sched=Uniform(1, 0.2), f="x", p="1", linear_kappa=1.0)
    ref = integrate(exact, InitialCondition(1, 0.5), 4)
    assert traj.node_x == pytest.approx(ref.node_x, rel=1e-9)


def test_dense_per_interval_validated():
    with pytest.raises(ValueError):
        integrate(make(), InitialCondition(1, 0), 3, dense_per_interval=1)
    with pytest.raises(ValueError):
        integrate(make(), InitialCondition(1, 0), 0)


# --- invariants ------------------------------------------------------------------

NONLINEAR = [
    make(r="2+cos(t)", f="x+x^3", p="1", sched=Uniform(1, 0.5)),
    make(r="1+0.5*sin(t)", f="x*exp(-0.1*t)", p="exp(-0.1*t)", sched=Uniform(1.5, 0.3)),
    make(r="exp(0.05*t)", f="2*x", p="2", sched=Uniform(1, 0.8)),
]


def _residuals(spec, traj, probes=5):
    worst = 0.0
    for n, nxt in zip(traj.nodes, traj.nodes[1:] + [traj.end]):
        t0, t1 = n.t_k, nxt.t_k
        r0 = float(spec.r(t=t0))
        for t in np.linspace(t0, t1, probes + 2)[1:-1]:
            _, v = frozen_solution(spec, n.k, n.x, n.v, n.x_at_zeta, t, t_start=t0)
            force, _ = sp_integrate.quad(lambda s: spec.f(t=s, x=n.x_at_zeta), t0, t,
                                         epsabs=1e-13, epsrel=1e-13)
            res = abs(float(spec.r(t=t)) * v - r0 * n.v + force)
            worst = max(worst, res / (10 * traj.options.quad_tol * (1 + abs(r0 * n.v))))
    return worst


@pytest.mark.parametrize("spec", NONLINEAR)
def test_integrated_residual_against_scipy(spec):
    traj = integrate(spec, InitialCondition(0.8, -0.3), 8, opts=QUAD)
    assert traj.completed
    assert _residuals(spec, traj) <= 1.0


@pytest.mark.parametrize("spec", NONLINEAR)
def test_fixed_point_postcondition(spec):
    traj = integrate(spec, InitialCondition(0.8, -0.3), 10, opts=QUAD)
    tol = traj.options.fp_tol
    for n in traj.nodes:
        x_z, _ = frozen_solution(spec, n.k, n.x, n.v, n.x_at_zeta, n.zeta, t_start=n.t_k)
        assert abs(n.x_at_zeta - x_z) <= 10 * tol * (1 + abs(n.x_at_zeta)) + 1e-13


@pytest.mark.parametrize("spec", NONLINEAR)
def test_node_continuity(spec):
    traj = integrate(spec, InitialCondition(0.8, -0.3), 10, dense_per_interval=64, opts=QUAD)
    assert_invariants(traj)
    d = traj.dense
    for n in traj.nodes[1:]:
        i = int(np.searchsorted(d.t, n.t_k))
        assert d.t[i] == n.t_k and d.x[i] == n.x and d.v[i] == n.v
        h = d.t[i] - d.t[i - 1]
        accel = abs(float(spec.f(t=n.t_k, x=traj.nodes[n.k - 1 - traj.nodes[0].k].x_at_zeta)))
        rv = abs(float(spec.r(t=n.t_k)))
        bound = 10 * h * (abs(n.v) + accel / rv + abs(n.v))
        assert abs(d.x[i] - d.x[i - 1]) <= bound
        assert abs(d.v[i] - d.v[i - 1]) <= 10 * h * (abs(n.v) + accel / rv) + 10 * h * abs(n.v) + 1e-12


@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0, 4.0])
@pytest.mark.parametrize("sched", [Uniform(1, 0), Uniform(1, 0.5), Uniform(2, 0.5)])
def test_oracle_equivalence(kappa, sched):
    spec = make(f=f"{kappa}*x", p=str(kappa), sched=sched, linear_kappa=kappa)
    ic = InitialCondition(1.0, 0.0)
    h = 25 * sched.m
    big = SolverOptions(blowup_bound=1e300)
    quad = integrate(spec, ic, h, opts=SolverOptions(use_exact_linear=False, blowup_bound=1e300))
    exact = integrate(spec, ic, h, opts=big)
    assert quad.completed and exact.completed and len(quad.nodes) == 25
    assert quad.node_x == pytest.approx(exact.node_x, rel=1e-8, abs=1e-8)


@pytest.mark.parametrize("s", [3.0, -0.5, 1e-3])
def test_scaling_equivariance(s):
    spec = make(r="1+0.5*sin(t)", f="1.5*x", p="1.5", sched=Uniform(1, 0.4))
    a = integrate(spec, InitialCondition(0.7, 0.2), 12, opts=QUAD)
    b = integrate(spec, InitialCondition(0.7 * s, 0.2 * s), 12, opts=QUAD)
    assert b.node_x == pytest.approx(s * a.node_x, rel=1e-10, abs=1e-12 * abs(s))
    assert b.node_v == pytest.approx(s * a.node_v, rel=1e-10, abs=1e-12 * abs(s))


def test_nonpositive_r_is_reported():
    traj = integrate(make(r="2-t", f="x", p="1"), InitialCondition(1, 0), 5, opts=QUAD)
    assert traj.status == "QuadratureFailure"
