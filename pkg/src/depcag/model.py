"""Problem instances ``(r(t) x'(t))' + f(t, x(gamma(t))) = 0`` and their standing hypotheses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .expr import EvaluationError, Expression, parse
from .pca import ArgumentSchedule, Uniform

__all__ = [
    "TailHint",
    "ProblemSpec",
    "InitialCondition",
    "HypothesisResult",
    "ValidationReport",
    "ModelError",
    "validate",
    "builtin",
    "BUILTIN_NAMES",
]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class TailHint:
    """Declared asymptotic class of an integrand: ``C t^rate`` or ``C e^(rate t)``."""

    kind: str  # "power" | "exp"
    rate: float

    def __post_init__(self):
        if self.kind not in ("power", "exp"):
            raise ValueError(f"unknown tail hint kind {self.kind!r}")
        if not math.isfinite(self.rate):
            raise ValueError("tail hint rate must be finite")

    @classmethod
    def parse(cls, text: str) -> "TailHint":
        kind, sep, rate = text.partition(":")
        if not sep:
            raise ValueError(f"tail hint must look like 'power:-2' or 'exp:-1', got {text!r}")
        kind = kind.strip().lower()
        if kind == "exponential":
            kind = "exp"
        return cls(kind, float(rate))

    @property
    def integrable(self) -> bool:
        return self.rate < -1 if self.kind == "power" else self.rate < 0

    def __str__(self) -> str:
        return f"{self.kind}:{self.rate!r}"


@dataclass(frozen=True)
class ProblemSpec:
    r: Expression
    f: Expression
    p: Expression
    phi: Expression
    tau: float
    schedule: ArgumentSchedule
    linear_kappa: float | None = None
    label: str = "problem"
    # asymptotic hints for the criteria engine, keyed r_inv / p / phi_inv / series
    hints: Mapping[str, TailHint] = field(default_factory=dict)

    def __post_init__(self):
        first = self.schedule.node(self.schedule.index_origin)
        if self.tau < first:
            raise ModelError(f"tau={self.tau} precedes the first schedule node {first}")
        if self.linear_kappa is not None:
            _check_linear(self)

    @classmethod
    def from_text(cls, r: str, f: str, p: str, phi: str, tau: float,
                  schedule: ArgumentSchedule, **kwargs) -> "ProblemSpec":
        return cls(parse(r), parse(f), parse(p), parse(phi), float(tau), schedule, **kwargs)

    def with_(self, **changes) -> "ProblemSpec":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class InitialCondition:
    x0: float
    v0: float

    def __post_init__(self):
        if not (math.isfinite(self.x0) and math.isfinite(self.v0)):
            raise ModelError("initial condition must be finite")


def _check_linear(spec: ProblemSpec) -> None:
    kappa = spec.linear_kappa
    t = np.linspace(spec.tau, spec.tau + 10.0, 32)
    x = np.linspace(-10.0, 10.0, 32)
    tt, xx = np.meshgrid(t, x)
    try:
        fv = spec.f(t=tt.ravel(), x=xx.ravel())
        rv = np.broadcast_to(spec.r(t=t), t.shape)
    except EvaluationError as exc:
        raise ModelError(f"cannot check linear_kappa: {exc}") from exc
    ref = kappa * xx.ravel()
    if np.any(np.abs(fv - ref) > 1e-12 * np.maximum(np.abs(ref), 1e-300) + 1e-300):
        raise ModelError(f"f does not equal {kappa}*x on the sample grid")
    if np.any(rv != 1.0):
        raise ModelError("linear_kappa requires r == 1")


# --- hypothesis validation -----------------------------------------------------


@dataclass(frozen=True)
class HypothesisResult:
    name: str
    description: str
    passed: bool
    witness: tuple | None = None
    detail: str = ""

    def __str__(self) -> str:
        state = "no violation found" if self.passed else f"VIOLATED at {self.witness}"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{self.name} {self.description}: {state}{extra}"


@dataclass(frozen=True)
class ValidationReport:
    results: tuple[HypothesisResult, ...]
    t_range: tuple[float, float]
    x_range: float
    grid: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name: str) -> HypothesisResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def render(self) -> str:
        lines = [
            f"hypotheses sampled on t in [{self.t_range[0]:g}, {self.t_range[1]:g}], "
            f"|x| <= {self.x_range:g}, grid {self.grid}x{self.grid}"
        ]
        lines += [f"  {r}" for r in self.results]
        return "\n".join(lines)


def _first(mask: np.ndarray, *coords: np.ndarray) -> tuple | None:
    idx = np.flatnonzero(mask.ravel())
    if idx.size == 0:
        return None
    i = idx[0]
    return tuple(float(c.ravel()[i]) for c in coords)


def _eval_grid(expr: Expression, name: str, **bindings):
    try:
        out = expr(**bindings)
    except EvaluationError as exc:
        # locate the offending point by scalar re-evaluation
        keys = list(bindings)
        arrays = [np.ravel(bindings[k]) for k in keys]
        for point in zip(*np.broadcast_arrays(*arrays)):
            try:
                expr(**dict(zip(keys, point)))
            except EvaluationError as inner:
                where = ", ".join(f"{k}={float(v):g}" for k, v in zip(keys, point))
                raise ModelError(f"{name} failed at {where}: {inner}") from inner
        raise ModelError(f"{name} failed: {exc}") from exc
    shape = np.broadcast(*bindings.values()).shape
    return np.broadcast_to(out, shape)


def validate(spec: ProblemSpec, t_max: float, grid: int = 32, x_range: float = 10.0) -> ValidationReport:
    """Sample-check the standing hypotheses on ``[tau, t_max] x ([-X, X] minus 0)``.

    Sampling can only fail to find a violation; a passing report is evidence,
    not proof.
    """
    if not t_max > spec.tau:
        raise ModelError("t_max must exceed tau")
    if grid < 8:
        raise ModelError("grid must be at least 8")
    t = np.linspace(spec.tau, t_max, grid)
    x = np.linspace(-x_range, x_range, grid)
    x = x[x != 0.0]
    tt, xx = np.meshgrid(t, x, indexing="ij")

    r = _eval_grid(spec.r, "r", t=t)
    f = _eval_grid(spec.f, "f", t=tt, x=xx)
    p = _eval_grid(spec.p, "p", t=t)
    u = np.sort(np.concatenate([x, [0.0]]))
    phi = _eval_grid(spec.phi, "phi", u=u)
    phi_x = _eval_grid(spec.phi, "phi", u=xx)
    pp = np.broadcast_to(p[:, None], tt.shape)

    results = []

    bad = ~(r > 0)
    results.append(HypothesisResult("H1", "r(t) > 0", not bad.any(), _first(bad, t)))

    bad = ~(xx * f > 0)
    results.append(HypothesisResult("H2", "x f(t,x) > 0", not bad.any(), _first(bad, tt, xx)))

    bad = ~(p >= 0)
    results.append(HypothesisResult("H3", "p(t) >= 0", not bad.any(), _first(bad, t)))

    drop = phi[1:] < phi[:-1] - 1e-12
    nonzero = u != 0
    sign_bad = nonzero & ~(u * phi > 0)
    if drop.any():
        h4 = HypothesisResult("H4", "phi nondecreasing, u phi(u) > 0", False,
                              _first(drop, u[1:]), "phi decreases")
    elif sign_bad.any():
        h4 = HypothesisResult("H4", "phi nondecreasing, u phi(u) > 0", False,
                              _first(sign_bad, u), "u phi(u) <= 0")
    else:
        h4 = HypothesisResult("H4", "phi nondecreasing, u phi(u) > 0", True)
    results.append(h4)

    # sign-aware minorant: f/phi(x) >= p, i.e. x*(f - p*phi) >= 0 up to roundoff
    slack = 1e-12 * (1.0 + np.abs(f))
    gap = f - pp * phi_x
    bad = np.where(xx > 0, gap < -slack, gap > slack)
    results.append(HypothesisResult("H5", "f(t,x)/phi(x) >= p(t)", not bad.any(), _first(bad, tt, xx)))

    return ValidationReport(tuple(results), (spec.tau, t_max), x_range, grid)


# --- builtin instances ---------------------------------------------------------

BUILTIN_NAMES = ("example1", "example2", "criterion2-demo")


def builtin(name: str, alpha: float | None = None) -> tuple[ProblemSpec, InitialCondition]:
    """The worked examples: x'' + 2x([t]) = 0, the exp(-t)/exp(t^2) problem, and a
    cubic instance where the second criterion applies.

    ``alpha`` overrides the switch fraction of the uniform schedule.
    """
    if name == "example1":
        sched = Uniform(1.0, 0.0 if alpha is None else alpha)
        spec = ProblemSpec.from_text(
            "1", "2*x", "2", "u", 0.0, sched, linear_kappa=2.0, label="example1",
        )
        return spec, InitialCondition(1.0, 0.0)
    if name == "example2":
        sched = Uniform(1.0, 0.0 if alpha is None else alpha)
        spec = ProblemSpec.from_text(
            "exp(-t)", "x*exp(t^2+x^2)", "exp(t^2)", "u", 0.0, sched, label="example2",
        )
        return spec, InitialCondition(1.0, 0.0)
    if name == "criterion2-demo":
        sched = Uniform(1.0, 0.5 if alpha is None else alpha)
        hints = {
            "r_inv": TailHint("power", 0.0),
            "p": TailHint("power", -2.0),
            "phi_inv": TailHint("power", -3.0),
        }
        spec = ProblemSpec.from_text(
            "1", "x^3/t^2", "1/t^2", "u^3", 1.0, sched, label="criterion2-demo", hints=hints,
        )
        return spec, InitialCondition(1.0, 0.0)
    raise ModelError(f"unknown builtin {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
