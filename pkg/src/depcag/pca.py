"""Generalized piecewise constant arguments.

A schedule is a strictly increasing node sequence ``t_n`` together with switch
points ``zeta_n`` in ``[t_n, t_{n+1}]``.  The argument function is

    gamma(t) = zeta_k   for t in [t_k, t_{k+1}),

so each interval splits into an advanced part ``[t_k, zeta_k]`` (where
``t <= gamma(t)``) and a delayed part ``[zeta_k, t_{k+1})``.
"""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field

from .expr import Expression, EvaluationError, parse

__all__ = [
    "ScheduleError",
    "Position",
    "ArgumentSchedule",
    "Uniform",
    "Custom",
]


class ScheduleError(ValueError):
    pass


class Position(enum.Enum):
    ADVANCED = "Advanced"
    DELAYED = "Delayed"
    AT_SWITCH = "AtSwitch"


class ArgumentSchedule:
    """Common interval machinery; subclasses supply ``node`` and ``switch_point``."""

    index_origin: int = 0

    def node(self, n: int) -> float:
        raise NotImplementedError

    def switch_point(self, n: int) -> float:
        raise NotImplementedError

    def _check_index(self, n: int) -> None:
        if n < self.index_origin:
            raise ScheduleError(f"index {n} below index origin {self.index_origin}")

    def interval(self, n: int) -> tuple[float, float, float]:
        """``(t_n, zeta_n, t_{n+1})``."""
        return self.node(n), self.switch_point(n), self.node(n + 1)

    def interval_index(self, t: float) -> int:
        first = self.node(self.index_origin)
        if t < first:
            raise ScheduleError(f"t={t} lies below the first node {first}")
        return self._locate(t)

    def _locate(self, t: float) -> int:
        # exponential search then bisection on the monotone node sequence
        lo = self.index_origin
        step = 1
        hi = lo + step
        while self.node(hi) <= t:
            lo = hi
            step *= 2
            hi = lo + step
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.node(mid) <= t:
                lo = mid
            else:
                hi = mid
        return lo

    def gamma(self, t: float) -> float:
        return self.switch_point(self.interval_index(t))

    def classify(self, t: float) -> Position:
        zeta = self.gamma(t)
        if t < zeta:
            return Position.ADVANCED
        if t > zeta:
            return Position.DELAYED
        return Position.AT_SWITCH

    def advanced_fraction(self, n: int) -> float:
        t0, z, t1 = self.interval(n)
        return (z - t0) / (t1 - t0)


@dataclass(frozen=True)
class Uniform(ArgumentSchedule):
    """``t_n = n*m``, ``zeta_n = (n + alpha)*m``, i.e. gamma(t) = [t/m]m + alpha*m."""

    m: float
    alpha: float
    index_origin: int = 0

    def __post_init__(self):
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "alpha", float(self.alpha))
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ScheduleError(f"uniform schedule needs m > 0, got {self.m}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ScheduleError(f"uniform schedule needs alpha in [0, 1], got {self.alpha}")

    def node(self, n: int) -> float:
        self._check_index(n)
        return n * self.m

    def switch_point(self, n: int) -> float:
        self._check_index(n)
        if self.alpha == 0.0:
            return n * self.m
        if self.alpha == 1.0:
            return (n + 1) * self.m
        return (n + self.alpha) * self.m

    def _locate(self, t: float) -> int:
        k = math.floor(t / self.m)
        # guard the division against rounding on either side of a node
        if k * self.m > t:
            k -= 1
        elif (k + 1) * self.m <= t:
            k += 1
        return max(k, self.index_origin)


@dataclass(frozen=True, eq=False)
class Custom(ArgumentSchedule):
    """Nodes and switch fractions given as expressions in ``n``.

    ``zeta_n = t_n + theta_n (t_{n+1} - t_n)`` with ``theta_n`` from
    ``switch_fraction``.  Values are memoized; monotonicity is checked lazily
    for every consecutive pair up to the largest index touched.
    """

    node_rule: Expression
    switch_fraction: Expression
    index_origin: int = 0
    _memo: dict = field(default_factory=dict, repr=False, compare=False)
    _validated: list = field(default_factory=lambda: [None], repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def from_text(cls, node_rule: str, switch_fraction: str, index_origin: int = 0) -> "Custom":
        return cls(parse(node_rule), parse(switch_fraction), index_origin)

    def __reduce__(self):
        return (Custom, (self.node_rule, self.switch_fraction, self.index_origin))

    def _raw_node(self, n: int) -> float:
        try:
            value = self.node_rule(n=float(n))
        except EvaluationError as exc:
            raise ScheduleError(f"node rule failed at n={n}: {exc}") from exc
        return value

    def _validate_upto(self, n: int) -> None:
        with self._lock:
            last = self._validated[0]
            start = self.index_origin if last is None else last
            if last is not None and n <= last:
                return
            prev = self._memo.get(start)
            if prev is None:
                prev = self._raw_node(start)
                self._memo[start] = prev
            for j in range(start + 1, n + 1):
                cur = self._memo.get(j)
                if cur is None:
                    cur = self._raw_node(j)
                    self._memo[j] = cur
                if not cur > prev:
                    raise ScheduleError(
                        f"node sequence not increasing: t_{j - 1}={prev}, t_{j}={cur}"
                    )
                prev = cur
            self._validated[0] = n

    def node(self, n: int) -> float:
        self._check_index(n)
        self._validate_upto(n)
        return self._memo[n]

    def switch_point(self, n: int) -> float:
        t0, t1 = self.node(n), self.node(n + 1)
        try:
            theta = self.switch_fraction(n=float(n))
        except EvaluationError as exc:
            raise ScheduleError(f"switch fraction failed at n={n}: {exc}") from exc
        if not 0.0 <= theta <= 1.0:
            raise ScheduleError(f"switch point outside interval {n}: theta={theta}")
        return t0 + theta * (t1 - t0)

    def __eq__(self, other):
        return (
            isinstance(other, Custom)
            and self.node_rule == other.node_rule
            and self.switch_fraction == other.switch_fraction
            and self.index_origin == other.index_origin
        )

    def __hash__(self):
        return hash((self.node_rule, self.switch_fraction, self.index_origin))
