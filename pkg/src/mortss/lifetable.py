"""Abridged period life tables and life expectancy from grouped death rates.

Tables follow the standard recursions: the death probability over an
n-year band converts the central rate via q = n m / (1 + n (1 - a) m)
with averaging fraction a = 0.5 by default, survivorship starts at a
radix of 100,000, and the top band is closed (no open-ended group), so
life expectancy at birth is bounded by the total span of the grouping.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .data import AgeGroup


def _f(x) -> str:
    """Full-precision CSV field for a float-like value."""
    return repr(float(x))


@dataclass
class LifeTable:
    """Columns of an abridged life table, one entry per age group."""

    groups: tuple[AgeGroup, ...]
    q: np.ndarray        # death probability within the band
    l: np.ndarray        # survivors attaining the band's start age
    d: np.ndarray        # deaths within the band
    L: np.ndarray        # person-years lived in the band
    Tlived: np.ndarray   # person-years lived at and above the band
    e: np.ndarray        # period life expectancy at the band's start age
    a_frac: float
    radix: float

    def expectancy_at(self, age: int) -> float:
        for g, e in zip(self.groups, self.e):
            if g.start == age:
                return float(e)
        raise ValueError(f"age {age} is not a group boundary of this table")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("age_start,n,q,l,d,L,T,e\n")
        for i, g in enumerate(self.groups):
            buf.write(f"{g.start},{g.width},{_f(self.q[i])},{_f(self.l[i])},"
                      f"{_f(self.d[i])},{_f(self.L[i])},{_f(self.Tlived[i])},{_f(self.e[i])}\n")
        return buf.getvalue()


def death_probability(m, n, a: float = 0.5):
    """Death probability over an n-year band from a central rate m.

    q = n m / (1 + n (1 - a) m), clamped into [0, 1].
    """
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise ValueError("death rates must be non-negative")
    if np.any(np.asarray(n) < 1):
        raise ValueError("band width must be >= 1 year")
    if not 0 <= a <= 1:
        raise ValueError("averaging fraction must lie in [0, 1]")
    q = n * m / (1.0 + n * (1.0 - a) * m)
    return np.clip(q, 0.0, 1.0)


def build_table(rates, groups, a: float = 0.5, radix: float = 100_000.0) -> LifeTable:
    """Abridged life table from one year's death-rate schedule.

    rates : length-p vector of central death rates, aligned with groups
    """
    rates = np.asarray(rates, dtype=float)
    groups = tuple(groups)
    p = len(groups)
    if rates.shape != (p,):
        raise ValueError(f"expected {p} rates, got shape {rates.shape}")
    widths = np.array([g.width for g in groups], dtype=float)

    q = death_probability(rates, widths, a)
    l = np.empty(p)
    d = np.empty(p)
    l[0] = radix
    for i in range(p - 1):
        l[i + 1] = l[i] * (1.0 - q[i])
    l_next = np.append(l[1:], l[-1] * (1.0 - q[-1]))
    d = l - l_next
    L = widths * (l_next + a * d)
    Tlived = np.cumsum(L[::-1])[::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(l > 0, Tlived / l, 0.0)
    return LifeTable(groups=groups, q=q, l=l, d=d, L=L, Tlived=Tlived, e=e,
                     a_frac=a, radix=radix)


def life_expectancy_fan(fan, ages, groups=None, a: float = 0.5,
                        radix: float = 100_000.0) -> dict[int, np.ndarray]:
    """Life expectancy samples at the requested ages from a forecast fan.

    Builds one abridged table per (draw, horizon) from exp(log-rate)
    schedules.  Returns {age: (L, K) array}.
    """
    if groups is None:
        groups = [AgeGroup(g[0], g[1], g[2]) if isinstance(g, (list, tuple)) else g
                  for g in fan.groups]
    groups = tuple(groups)
    starts = {g.start: i for i, g in enumerate(groups)}
    for age in ages:
        if age not in starts:
            raise ValueError(f"age {age} is not a group boundary")

    L_draws, K, p = fan.samples.shape
    if p != len(groups):
        raise ValueError("fan and grouping disagree on the number of age groups")
    out = {age: np.empty((L_draws, K)) for age in ages}
    for ell in range(L_draws):
        for k in range(K):
            table = build_table(np.exp(fan.samples[ell, k]), groups, a=a, radix=radix)
            for age in ages:
                out[age][ell, k] = table.e[starts[age]]
    return out
