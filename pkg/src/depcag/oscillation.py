"""Finite-horizon oscillation classification and the nonnegative-solution lemma check.

A function is oscillatory when it never settles to a strictly positive or
strictly negative tail.  From finitely many samples we can only gather
evidence: sign changes seen so far, or a sign that has held over a trailing
window.  Every outcome is relative to the examined horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .criteria import DIVERGES, DivergenceVerdict
from .solver import Trajectory

__all__ = [
    "Classification",
    "LemmaReport",
    "classify_samples",
    "classify_trajectory",
    "lemma_check",
    "default_sign_tol",
]


@dataclass(frozen=True)
class Classification:
    outcome: str  # Oscillatory | EventuallyPositive | EventuallyNegative | Undetermined
    horizon: float
    sign_tol: float
    witnesses: tuple[tuple[float, float], ...] = ()
    sign_changes: int = 0
    from_t: float | None = None

    @property
    def count(self) -> int:
        return len(self.witnesses)

    def __str__(self) -> str:
        if self.outcome == "Oscillatory":
            detail = f"{self.count} witness pairs"
        elif self.from_t is not None:
            detail = f"from t={self.from_t:g}"
        else:
            detail = "not enough evidence"
        return f"{self.outcome} ({detail}; relative to horizon t={self.horizon:g})"


def default_sign_tol(x) -> float:
    x = np.asarray(x, dtype=float)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    return 1e-9 * max(1.0, peak)


def classify_samples(t, x, *, margin: float, sign_tol: float | None = None,
                     min_witnesses: int = 3) -> Classification:
    """Classify sampled values ``x(t)`` (``t`` increasing).

    Witness pairs ``(a, b)`` satisfy ``x(a) <= tol`` and ``x(b) >= -tol``; one is
    recorded per strict sign change, bracketing it at sample resolution.  A
    sign that holds strictly from ``from_t <= horizon - margin`` onward wins
    over earlier sign changes.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if t.shape != x.shape or t.ndim != 1:
        raise ValueError("t and x must be 1-D arrays of equal length")
    tol = default_sign_tol(x) if sign_tol is None else sign_tol
    if t.size == 0:
        return Classification("Undetermined", float("nan"), tol)
    horizon = float(t[-1])
    sign = np.where(x > tol, 1, np.where(x < -tol, -1, 0))

    # trailing run of one exact sign; a decaying tail below tol keeps its sign
    exact = np.sign(x)
    last = exact[-1]
    if last != 0:
        breaks = np.flatnonzero((exact != last) | (sign == -last))
        start = 0 if breaks.size == 0 else breaks[-1] + 1
        if t[start] <= horizon - margin and np.any(sign[start:] == last):
            outcome = "EventuallyPositive" if last > 0 else "EventuallyNegative"
            return Classification(outcome, horizon, tol, from_t=float(t[start]))

    nz = np.flatnonzero(sign != 0)
    witnesses = []
    changes = 0
    for i, j in zip(nz, nz[1:]):
        if sign[i] != sign[j]:
            changes += 1
            neg, pos = (i, j) if sign[i] < 0 else (j, i)
            witnesses.append((float(t[neg]), float(t[pos])))

    if changes >= min_witnesses:
        return Classification("Oscillatory", horizon, tol, tuple(witnesses), changes)

    # an identically zero tail satisfies x(a) <= 0 <= x(b) with a = b
    zero_tail = np.flatnonzero(sign != 0)
    tail_start = 0 if zero_tail.size == 0 else zero_tail[-1] + 1
    if tail_start < len(t) and t[tail_start] <= horizon - margin:
        zeros = tuple((float(s), float(s)) for s in t[tail_start:])
        if len(zeros) >= min_witnesses:
            return Classification("Oscillatory", horizon, tol, tuple(witnesses) + zeros, changes)
    return Classification("Undetermined", horizon, tol, tuple(witnesses), changes)


def _trajectory_samples(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    t, x = traj.dense.t, traj.dense.x
    if t.size:
        return t, x
    return traj.node_times, traj.node_x


def classify_trajectory(traj: Trajectory, sign_tol: float | None = None, min_witnesses: int = 3,
                        margin_intervals: int = 5, margin_fraction: float = 0.5) -> Classification:
    """Classify a computed solution; needs at least 10 intervals of data.

    A settled sign must hold over the last ``margin_intervals`` intervals and
    over the last ``margin_fraction`` of the computed span, whichever is
    longer.  Slowly oscillating solutions would otherwise be mislabeled.
    """
    t, x = _trajectory_samples(traj)
    if len(traj.nodes) < 10:
        horizon = float(t[-1]) if t.size else traj.horizon
        return Classification("Undetermined", horizon, default_sign_tol(x) if sign_tol is None else sign_tol)
    times = traj.node_times
    end_t = traj.end.t_k if traj.end is not None else float(t[-1])
    margin = end_t - times[-margin_intervals] if len(times) >= margin_intervals else end_t - times[0]
    margin = max(margin, margin_fraction * (end_t - float(t[0])))
    return classify_samples(t, x, margin=margin, sign_tol=sign_tol, min_witnesses=min_witnesses)


@dataclass(frozen=True)
class LemmaReport:
    outcome: str  # Holds | Violated | NotApplicable
    first_nonnegative_node: int | None = None  # M
    derivative_node: int | None = None  # N
    counterexample: tuple[int, float, float] | None = None  # (k, t_k, x'(t_k))
    reason: str = ""

    def __str__(self) -> str:
        if self.outcome == "Holds":
            return f"Holds: x >= 0 from node {self.first_nonnegative_node}, x'(t_k) >= 0 from node {self.derivative_node}"
        if self.outcome == "Violated":
            k, tk, v = self.counterexample
            return f"Violated: x'(t_{k}) = {v:.6g} < 0 at t={tk:g}"
        return f"NotApplicable: {self.reason}"


def lemma_check(traj: Trajectory, eq6: DivergenceVerdict, deriv_tol: float | None = None,
                min_nodes: int = 10) -> LemmaReport:
    """Check that an eventually nonnegative solution has x'(t_k) >= 0 at late nodes.

    Only meaningful when ∫ 1/r diverges (``eq6``).  ``M`` is the earliest node
    after which every sample is >= -tol; the lemma is then tested on the nodes
    from ``M`` to the horizon.
    """
    nodes = list(traj.nodes)
    if traj.end is not None and traj.completed:
        nodes.append(traj.end)
    if not nodes:
        return LemmaReport("NotApplicable", reason="empty trajectory")
    t, x = _trajectory_samples(traj)
    node_v = np.array([n.v for n in nodes])
    tol = deriv_tol if deriv_tol is not None else 1e-9 * max(1.0, float(np.max(np.abs(x))),
                                                               float(np.max(np.abs(node_v))))

    negative = np.flatnonzero(x < -tol)
    if negative.size == 0:
        m_index = 0
    else:
        last_bad = t[negative[-1]]
        later = [i for i, n in enumerate(nodes) if n.t_k > last_bad]
        if not later:
            return LemmaReport("NotApplicable", reason="solution is not eventually nonnegative")
        m_index = later[0]
    if len(nodes) - 1 - m_index < min_nodes:
        return LemmaReport("NotApplicable", first_nonnegative_node=nodes[m_index].k,
                           reason=f"fewer than {min_nodes} nodes after the solution turns nonnegative")
    if eq6.outcome != DIVERGES:
        return LemmaReport("NotApplicable", first_nonnegative_node=nodes[m_index].k,
                           reason="∫ 1/r is not known to diverge")

    tail = node_v[m_index:]
    bad = np.flatnonzero(tail < -tol)
    if bad.size == 0:
        return LemmaReport("Holds", nodes[m_index].k, nodes[m_index].k)
    if bad[-1] + 1 < len(tail):
        n_index = m_index + bad[-1] + 1
        return LemmaReport("Holds", nodes[m_index].k, nodes[n_index].k)
    worst = nodes[m_index + bad[-1]]
    return LemmaReport("Violated", nodes[m_index].k, counterexample=(worst.k, worst.t_k, worst.v),
                       reason="x'(t_k) < 0 at the last node of the horizon")
