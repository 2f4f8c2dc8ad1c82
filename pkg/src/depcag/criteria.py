"""Divergence tests for improper integrals and series, and the two oscillation criteria.

Verdicts are three-valued. Numerics alone never establish convergence or
divergence of an improper integral, so a decisive verdict needs either a
declared tail class (``TailHint``) or one of the conservative heuristics:

* a partial value beyond ``divergence_threshold`` (or an overflow)  -> Diverges
* ``slow_window`` consecutive panel increments, positive and nondecreasing -> Diverges
* ``decay_window`` consecutive increment ratios <= ``decay_ratio``  -> Converges

Checkpoints are geometric, ``T_i = lower + 2^i * delta``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np

from .expr import (DomainError, EvaluationError, Expression, NonFiniteError, Var, negated,
                   reciprocal, substitute)
from .model import ProblemSpec, TailHint
from .quadrature import QuadratureError, gauss_kronrod, integrate_segments

__all__ = [
    "CriteriaOptions",
    "CriteriaError",
    "Checkpoint",
    "DivergenceVerdict",
    "ConditionResult",
    "CriterionReport",
    "improper_integral",
    "classify_series",
    "phi_tails",
    "p_tail",
    "check_theorem_1",
    "check_theorem_2",
    "DIVERGES",
    "CONVERGES",
    "INCONCLUSIVE",
]

log = logging.getLogger(__name__)

DIVERGES = "Diverges"
CONVERGES = "Converges"
INCONCLUSIVE = "Inconclusive"


class CriteriaError(ValueError):
    pass


@dataclass(frozen=True)
class CriteriaOptions:
    delta: float = 1.0
    i_max: int = 40
    divergence_threshold: float = 1e12
    quad_tol: float = 1e-10
    slow_window: int = 6
    decay_window: int = 4
    decay_ratio: float = 0.5
    hint_min_checkpoints: int = 5
    hint_rtol: float = 1e-12


@dataclass(frozen=True)
class Checkpoint:
    T: float
    partial: float
    increment: float
    error: float


@dataclass(frozen=True)
class DivergenceVerdict:
    outcome: str
    method: str  # hinted | heuristic | short_circuit
    evidence: tuple[Checkpoint, ...] = ()
    value: float | None = None
    err_bound: float | None = None
    note: str = ""

    @property
    def decisive(self) -> bool:
        return self.outcome != INCONCLUSIVE

    def __str__(self) -> str:
        if self.outcome == CONVERGES:
            head = f"Converges({self.value:.12g}, err<={self.err_bound:.3g})"
        else:
            head = self.outcome
        last = self.evidence[-1] if self.evidence else None
        tail = f" after T={last.T:g}, partial={last.partial:.6g}" if last else ""
        note = f"; {self.note}" if self.note else ""
        return f"{head} [{self.method}{tail}{note}]"


# --- generic engine ----------------------------------------------------------------


def _tail_estimate(hint: TailHint, T: float, g_T: float) -> float:
    if hint.kind == "power":
        return g_T * T / (-hint.rate - 1.0)
    return g_T / (-hint.rate)


def _nondecreasing(incs: list[float], errs: list[float]) -> bool:
    return all(b >= a - (ea + eb) for a, b, ea, eb in zip(incs, incs[1:], errs, errs[1:]))


def _decide(
    stream: Iterator[tuple[float, float, float, float]],
    hint: TailHint | None,
    opts: CriteriaOptions,
) -> DivergenceVerdict:
    """Consume ``(T, increment, error, g(T))`` tuples and classify the running sum.

    ``g(T)`` is the integrand (or last series term) at the checkpoint, used for
    hinted tail estimates and the eventual-positivity check.
    """
    evidence: list[Checkpoint] = []
    incs: list[float] = []
    errs: list[float] = []
    gs: list[float] = []
    partial = 0.0
    err_total = 0.0
    prev_estimate = None
    try:
        for T, inc, err, g_T in stream:
            partial += inc
            err_total += err
            incs.append(inc)
            errs.append(err)
            gs.append(g_T)
            evidence.append(Checkpoint(T, partial, inc, err))

            if abs(partial) > opts.divergence_threshold:
                return DivergenceVerdict(DIVERGES, "short_circuit", tuple(evidence),
                                         note=f"partial exceeded {opts.divergence_threshold:g}")

            if hint is not None:
                if not hint.integrable:
                    if len(incs) >= opts.hint_min_checkpoints and all(g > 0 for g in gs[-3:]):
                        return DivergenceVerdict(DIVERGES, "hinted", tuple(evidence),
                                                 note=f"tail class {hint} is not integrable")
                    continue
                estimate = partial + _tail_estimate(hint, T, g_T)
                if prev_estimate is not None:
                    diff = abs(estimate - prev_estimate)
                    if diff <= max(opts.quad_tol, opts.hint_rtol * abs(estimate)):
                        return DivergenceVerdict(CONVERGES, "hinted", tuple(evidence), estimate,
                                                 diff + err_total, note=f"tail class {hint}")
                prev_estimate = estimate
                continue

            w = opts.slow_window
            if len(incs) >= w:
                window = incs[-w:]
                if all(v > 0 for v in window) and _nondecreasing(window, errs[-w:]):
                    return DivergenceVerdict(DIVERGES, "heuristic", tuple(evidence),
                                             note=f"{w} nondecreasing positive increments")
            d = opts.decay_window
            if len(incs) >= d + 1:
                window = [abs(v) for v in incs[-(d + 1):]]
                ratios = [(b / a if a > 0 else (0.0 if b == 0 else math.inf))
                          for a, b in zip(window, window[1:])]
                if all(q <= opts.decay_ratio for q in ratios):
                    q = max(ratios)
                    bound = window[-1] * q / (1.0 - q) if q < 1 else math.inf
                    return DivergenceVerdict(CONVERGES, "heuristic", tuple(evidence), partial,
                                             bound + err_total,
                                             note=f"geometric decay, ratio <= {q:.3g}")
    except NonFiniteError as exc:
        if exc.sign != 0:
            return DivergenceVerdict(DIVERGES, "short_circuit", tuple(evidence),
                                     note="integrand overflowed")
        raise CriteriaError(f"integrand became non-finite: {exc}") from exc

    if hint is not None and hint.integrable and prev_estimate is not None:
        # the hint alone establishes finiteness; report the best estimate
        last_diff = abs(partial - evidence[-2].partial) if len(evidence) > 1 else math.inf
        return DivergenceVerdict(CONVERGES, "hinted", tuple(evidence), prev_estimate,
                                 last_diff + err_total, note=f"tail class {hint}; estimate not stabilized")
    return DivergenceVerdict(INCONCLUSIVE, "hinted" if hint else "heuristic", tuple(evidence))


# --- improper integrals -------------------------------------------------------------


def _single_variable(expr: Expression) -> str | None:
    names = expr.variables
    if len(names) > 1:
        raise CriteriaError(f"integrand {expr.source!r} depends on several variables {sorted(names)}")
    return next(iter(names), None)


def _scalar_fn(expr: Expression) -> Callable[[np.ndarray], np.ndarray]:
    var = _single_variable(expr)

    def g(s):
        s = np.asarray(s, dtype=float)
        if var is None:
            return np.broadcast_to(expr(), s.shape)
        return np.broadcast_to(expr(**{var: s}), s.shape)

    return g


def improper_integral(integrand: Expression, lower: float, hint: TailHint | None = None,
                      opts: CriteriaOptions = CriteriaOptions()) -> DivergenceVerdict:
    """Decide whether ``∫_lower^∞ integrand`` converges."""
    g = _scalar_fn(integrand)
    try:
        g(np.array([lower]))
    except DomainError as exc:
        raise CriteriaError(f"integrand undefined at lower limit {lower}: {exc}") from exc
    except NonFiniteError as exc:
        raise CriteriaError(f"integrand not finite at lower limit {lower}") from exc

    def stream():
        prev = lower
        for i in range(opts.i_max + 1):
            T = lower + (2.0 ** i) * opts.delta
            try:
                inc, err = gauss_kronrod(g, prev, T, opts.quad_tol, opts.quad_tol)
            except DomainError as exc:
                raise CriteriaError(f"integrand undefined on [{prev:g}, {T:g}]: {exc}") from exc
            except QuadratureError as exc:
                raise CriteriaError(f"quadrature failed on [{prev:g}, {T:g}]: {exc}") from exc
            yield T, inc, err, float(g(np.array([T]))[0])
            prev = T

    return _decide(stream(), hint, opts)


def classify_series(terms: np.ndarray, hint: TailHint | None = None,
                    opts: CriteriaOptions = CriteriaOptions(), first_index: int = 0) -> DivergenceVerdict:
    """Apply the same rules to partial sums of ``terms`` at 1, 2, 4, ... terms.

    Checkpoint ``T`` is the index of the last term included.
    """
    terms = np.asarray(terms, dtype=float)
    n = len(terms)
    if n == 0:
        raise CriteriaError("empty series")
    if not np.all(np.isfinite(terms)):
        raise CriteriaError("series has non-finite terms")

    def stream():
        prev = 0
        i = 0
        while prev < n:
            upto = min(2 ** i, n)
            block = float(math.fsum(terms[prev:upto]))
            yield float(first_index + upto - 1), block, 0.0, float(terms[upto - 1])
            prev = upto
            i += 1

    return _decide(stream(), hint, opts)


def phi_tails(phi: Expression, eps: float, hint: TailHint | None = None,
              opts: CriteriaOptions = CriteriaOptions()) -> tuple[DivergenceVerdict, DivergenceVerdict]:
    """Verdicts for ``∫_eps^∞ du/phi(u)`` and ``∫_{-eps}^{-∞} du/phi(u)``.

    The negative tail is rewritten as ``∫_eps^∞ -1/phi(-v) dv`` so both
    integrands are eventually positive.
    """
    if not eps > 0:
        raise CriteriaError("epsilon must be positive")
    var = _single_variable(phi) or "u"
    probe = eps * 2.0 ** np.arange(0, 41)
    for u in np.concatenate([probe, -probe]):
        try:
            val = phi(**{var: float(u)})
        except EvaluationError:
            continue
        if val == 0.0:
            raise CriteriaError(f"phi vanishes at u={u:g} with |u| >= epsilon")
    positive = reciprocal(phi)
    negative = negated(reciprocal(substitute(phi, var, negated(Expression(Var(var))))))
    return improper_integral(positive, eps, hint, opts), improper_integral(negative, eps, hint, opts)


def _p_tail_verdict(p: Expression, t: float, hint: TailHint | None, opts: CriteriaOptions) -> DivergenceVerdict:
    verdict = improper_integral(p, t, hint, opts)
    if verdict.outcome == DIVERGES:
        raise CriteriaError(f"∫ p diverges from t={t:g}; no tail to evaluate")
    return verdict


def p_tail(p: Expression, t: float, hint: TailHint | None = None,
           opts: CriteriaOptions = CriteriaOptions()) -> float:
    """``∫_t^∞ p(u) du``.

    Accurate to the quadrature tolerance when a tail class is declared. Without
    a hint, the heuristic value is returned; if no bound could be established
    the last partial integral is returned and a warning is logged.
    """
    verdict = _p_tail_verdict(p, t, hint, opts)
    if verdict.outcome == CONVERGES:
        return float(verdict.value)
    log.warning("no tail bound for ∫ p from %g; returning last partial integral", t)
    return float(verdict.evidence[-1].partial)


# --- criteria ------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionResult:
    label: str
    description: str
    required: str
    verdict: DivergenceVerdict

    @property
    def satisfied(self) -> bool:
        return self.verdict.outcome == self.required

    @property
    def failed(self) -> bool:
        return self.verdict.decisive and not self.satisfied


@dataclass(frozen=True)
class CriterionReport:
    theorem: int
    conditions: tuple[ConditionResult, ...]
    conclusion: str  # Oscillatory | NotApplicable | Inconclusive
    narrative: str
    warnings: tuple[str, ...] = ()
    series_terms: np.ndarray | None = field(default=None, compare=False)
    series_first_index: int | None = None

    def __getitem__(self, label: str) -> ConditionResult:
        for c in self.conditions:
            if c.label == label:
                return c
        raise KeyError(label)

    def render(self) -> str:
        lines = [f"Theorem {self.theorem}: {self.conclusion}"]
        width = max(len(c.label) for c in self.conditions)
        for c in self.conditions:
            mark = "ok" if c.satisfied else ("FAIL" if c.failed else "??")
            lines.append(f"  {c.label:<{width}}  {c.description:<34} need {c.required:<10} "
                         f"got {c.verdict}  [{mark}]")
        for w in self.warnings:
            lines.append(f"  warning: {w}")
        lines.append(f"  {self.narrative}")
        return "\n".join(lines)

    def machine_lines(self) -> list[str]:
        out = [f"theorem={self.theorem}", f"conclusion={self.conclusion}"]
        out += [f"{c.label}={c.verdict.outcome}" for c in self.conditions]
        out += [f"warning={w}" for w in self.warnings]
        return out


def _conclude(theorem: int, conditions: list[ConditionResult], warnings: list[str],
              **extra) -> CriterionReport:
    if all(c.satisfied for c in conditions):
        conclusion = "Oscillatory"
        narrative = "every condition holds, so every solution is oscillatory"
    elif any(c.failed for c in conditions):
        conclusion = "NotApplicable"
        failed = ", ".join(c.label for c in conditions if c.failed)
        narrative = f"condition(s) {failed} decisively fail; the criterion says nothing here"
    else:
        conclusion = "Inconclusive"
        open_ = ", ".join(c.label for c in conditions if not c.verdict.decisive)
        narrative = f"could not decide {open_}; declare tail hints or extend the horizon"
    return CriterionReport(theorem, tuple(conditions), conclusion, narrative, tuple(warnings), **extra)


def _hint(spec: ProblemSpec, key: str, hints: Mapping[str, TailHint] | None) -> TailHint | None:
    if hints is not None and key in hints:
        return hints[key]
    return spec.hints.get(key)


def check_theorem_1(spec: ProblemSpec, opts: CriteriaOptions = CriteriaOptions(),
                    hints: Mapping[str, TailHint] | None = None) -> CriterionReport:
    """∫ 1/r = ∞ and ∫ p = ∞ imply oscillation."""
    eq6 = improper_integral(reciprocal(spec.r), spec.tau, _hint(spec, "r_inv", hints), opts)
    eq11 = improper_integral(spec.p, spec.tau, _hint(spec, "p", hints), opts)
    conditions = [
        ConditionResult("Eq6", "∫_tau^∞ 1/r(s) ds = ∞", DIVERGES, eq6),
        ConditionResult("Eq11", "∫_tau^∞ p(s) ds = ∞", DIVERGES, eq11),
    ]
    return _conclude(1, conditions, [])


def check_theorem_2(spec: ProblemSpec, eps: float = 1.0, n_max: int = 4096,
                    opts: CriteriaOptions = CriteriaOptions(),
                    hints: Mapping[str, TailHint] | None = None) -> CriterionReport:
    """∫ 1/r = ∞, integrable 1/phi tails, ∫ p < ∞ and a divergent advanced-interval series."""
    if n_max < 16:
        raise CriteriaError("n_max must be at least 16")
    sched = spec.schedule
    warnings: list[str] = []

    eq6 = improper_integral(reciprocal(spec.r), spec.tau, _hint(spec, "r_inv", hints), opts)
    pos, neg = phi_tails(spec.phi, eps, _hint(spec, "phi_inv", hints), opts)
    p_hint = _hint(spec, "p", hints)
    eq13a = improper_integral(spec.p, spec.tau, p_hint, opts)

    k0 = sched.interval_index(spec.tau)
    if n_max < k0:
        raise CriteriaError(f"n_max={n_max} is below the first index k(tau)={k0}")
    terms = None
    if eq13a.outcome == CONVERGES:
        terms = _advanced_series_terms(spec, k0, n_max, p_hint, opts)
        if np.all(terms == 0.0):
            warnings.append(
                "degenerate schedule: zeta_j = t_j for every sampled j, so every series term "
                "vanishes and Eq13b cannot diverge"
            )
            eq13b = DivergenceVerdict(CONVERGES, "short_circuit", (), 0.0, 0.0,
                                      note="all advanced subintervals are empty")
        else:
            eq13b = classify_series(terms, _hint(spec, "series", hints), opts, first_index=k0)
    else:
        eq13b = DivergenceVerdict(INCONCLUSIVE, "short_circuit",
                                  note="skipped: ∫ p is not known to converge")

    conditions = [
        ConditionResult("Eq6", "∫_tau^∞ 1/r(s) ds = ∞", DIVERGES, eq6),
        ConditionResult("Eq12+", "∫_eps^∞ 1/phi(u) du < ∞", CONVERGES, pos),
        ConditionResult("Eq12-", "∫_-eps^-∞ 1/phi(u) du < ∞", CONVERGES, neg),
        ConditionResult("Eq13a", "∫_tau^∞ p(u) du < ∞", CONVERGES, eq13a),
        ConditionResult("Eq13b", "Σ_j ∫_{t_j}^{ζ_j} P(t_{j+1})/r = ∞", DIVERGES, eq13b),
    ]
    return _conclude(2, conditions, warnings, series_terms=terms,
                     series_first_index=k0 if terms is not None else None)


def _advanced_series_terms(spec: ProblemSpec, k0: int, n_max: int, p_hint: TailHint | None,
                           opts: CriteriaOptions) -> np.ndarray:
    """a_j = P(t_{j+1}) ∫_{t_j}^{ζ_j} ds / r(s) for j = k0..n_max, with P(t) = ∫_t^∞ p."""
    sched = spec.schedule
    idx = np.arange(k0, n_max + 2)
    nodes = np.array([sched.node(int(j)) for j in idx], dtype=float)
    zetas = np.array([sched.switch_point(int(j)) for j in idx[:-1]], dtype=float)
    starts = nodes[:-1].copy()
    starts[0] = max(starts[0], spec.tau)
    zetas[0] = max(zetas[0], spec.tau)

    inv_r = _scalar_fn(reciprocal(spec.r))
    pg = _scalar_fn(spec.p)
    try:
        edges = np.empty(2 * len(starts))
        edges[0::2], edges[1::2] = starts, zetas
        seg, _ = integrate_segments(inv_r, edges, opts.quad_tol, opts.quad_tol)
        r_parts = seg[0::2]

        # P(t_{j+1}) for j = k0..n_max, anchored at the far end and summed backwards
        far = _p_tail_verdict(spec.p, float(nodes[-1]), p_hint, opts)
        p_far = float(far.value) if far.outcome == CONVERGES else float(far.evidence[-1].partial)
        blocks, _ = integrate_segments(pg, nodes[1:], opts.quad_tol, opts.quad_tol)
    except (EvaluationError, QuadratureError) as exc:
        raise CriteriaError(f"series terms could not be evaluated: {exc}") from exc
    tails = p_far + np.concatenate([np.cumsum(blocks[::-1])[::-1], [0.0]])
    return tails * r_parts
