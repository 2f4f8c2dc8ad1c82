import pytest
from hypothesis import given, strategies as st

from depcag.model import (
    BUILTIN_NAMES, InitialCondition, ModelError, ProblemSpec, TailHint, builtin, validate,
)
from depcag.pca import Uniform


def spec_with(**kw):
    base = dict(r="1", f="2*x", p="2", phi="u", tau=0.0, schedule=Uniform(1, 0))
    base.update(kw)
    return ProblemSpec.from_text(**base)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_pass_validation(name):
    spec, ic = builtin(name)
    report = validate(spec, spec.tau + 3, 32)
    assert report.passed, report.render()
    assert "no violation found" in report.render()
    assert "verified" not in report.render()


def test_builtin_contents():
    s1, ic1 = builtin("example1")
    assert s1.linear_kappa == 2 and s1.schedule == Uniform(1, 0) and ic1 == InitialCondition(1, 0)
    s2, ic2 = builtin("example2")
    assert s2.r.source == "exp(-t)" and s2.p.source == "exp(t^2)" and ic2 == InitialCondition(1, 0)
    s3, _ = builtin("criterion2-demo")
    assert s3.tau == 1 and s3.schedule == Uniform(1, 0.5) and s3.phi.source == "u^3"
    with pytest.raises(ModelError):
        builtin("example3")


def test_sign_violation_has_witness():
    spec = spec_with(f="-x", p="0")
    report = validate(spec, 3, 32)
    h2 = report["H2"]
    assert not h2.passed
    t, x = h2.witness
    assert 0 <= t <= 3 and x * -x <= 0


def test_each_hypothesis_can_fail():
    assert not validate(spec_with(r="t-1"), 3)["H1"].passed
    assert not validate(spec_with(p="t-1"), 3)["H3"].passed
    assert not validate(spec_with(phi="-u", p="0"), 3)["H4"].passed
    assert not validate(spec_with(p="3"), 3)["H5"].passed


def test_h5_is_exact_on_boundary():
    # f == p*phi exactly must pass
    assert validate(spec_with(f="2*x", p="2", phi="u"), 3)["H5"].passed


def test_linear_kappa_checked():
    with pytest.raises(ModelError):
        spec_with(linear_kappa=3.0)
    with pytest.raises(ModelError):
        spec_with(r="2", f="2*x", linear_kappa=2.0)
    assert spec_with(linear_kappa=2.0).linear_kappa == 2.0


def test_tau_before_first_node():
    with pytest.raises(ModelError):
        spec_with(tau=-1.0)


def test_initial_condition_finite():
    with pytest.raises(ModelError):
        InitialCondition(float("nan"), 0)


def test_evaluation_error_names_point():
    with pytest.raises(ModelError, match="t="):
        validate(spec_with(p="ln(t-1)"), 3)


def test_tail_hint_parse():
    assert TailHint.parse("power:-2") == TailHint("power", -2.0)
    assert TailHint.parse("exponential:-1") == TailHint("exp", -1.0)
    assert TailHint("power", -1.5).integrable and not TailHint("power", -1).integrable
    with pytest.raises(ValueError):
        TailHint.parse("log:1")


@given(st.integers(8, 20), st.floats(0.5, 3.0))
def test_validation_monotone_in_grid(g, c):
    # p = c fails H5 for f = 2x once c > 2; refinement keeps the witness points
    spec = spec_with(p=repr(c))
    coarse = validate(spec, 3, g)
    fine = validate(spec, 3, 2 * g - 1)
    for a, b in zip(coarse.results, fine.results):
        if not a.passed:
            assert not b.passed
