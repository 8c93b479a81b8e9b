"""Mortality data ingestion: age groups, rate panels, CSV loading.

The single ingest format is a UTF-8 CSV with header
``year,age_start,age_width,rate[,deaths,exposure]``, one row per
(year, age group), rows in any order.  Panels hold log crude death
rates on a rectangular age-group x year grid with no missing cells.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent mortality input data."""


@dataclass(frozen=True)
class AgeGroup:
    """One age band [start, start + width) of a grouped life table."""

    start: int
    width: int
    label: str = ""

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"age group width must be >= 1, got {self.width}")
        if not self.label:
            object.__setattr__(self, "label", self._default_label())

    def _default_label(self) -> str:
        if self.width == 1:
            return str(self.start)
        return f"{self.start}-{self.start + self.width - 1}"


def default_grouping() -> tuple[AgeGroup, ...]:
    """The 21-group abridged scheme 0, 1-4, 5-9, ..., 95-99."""
    groups = [AgeGroup(0, 1), AgeGroup(1, 4)]
    groups += [AgeGroup(a, 5) for a in range(5, 100, 5)]
    return tuple(groups)


def _check_grouping(groups) -> tuple[AgeGroup, ...]:
    groups = tuple(groups)
    if not groups:
        raise ValueError("grouping must contain at least one age group")
    for g0, g1 in zip(groups, groups[1:]):
        if g1.start != g0.start + g0.width:
            raise ValueError(
                f"age groups must be contiguous and ascending: "
                f"{g0.label} followed by {g1.label}"
            )
    return groups


@dataclass
class MortalityPanel:
    """Rectangular panel of log crude death rates by age group and year.

    Attributes
    ----------
    groups : tuple of AgeGroup, length p
    years : int array, length T, consecutive
    y : (p, T) array of log crude death rates
    deaths, exposures : optional (p, T) count matrices
    """

    groups: tuple[AgeGroup, ...]
    years: np.ndarray
    y: np.ndarray
    deaths: np.ndarray | None = None
    exposures: np.ndarray | None = None

    def __post_init__(self):
        self.groups = _check_grouping(self.groups)
        self.years = np.asarray(self.years, dtype=int)
        self.y = np.asarray(self.y, dtype=float)
        p, T = len(self.groups), len(self.years)
        if self.y.shape != (p, T):
            raise ValueError(f"y has shape {self.y.shape}, expected ({p}, {T})")
        if T > 1 and not np.all(np.diff(self.years) == 1):
            raise DataError("years must be strictly increasing by 1")
        if not np.all(np.isfinite(self.y)):
            raise DataError("panel contains non-finite log rates")
        for name in ("deaths", "exposures"):
            m = getattr(self, name)
            if m is not None:
                m = np.asarray(m, dtype=float)
                if m.shape != (p, T):
                    raise ValueError(f"{name} has shape {m.shape}, expected ({p}, {T})")
                if np.any(m < 0):
                    raise DataError(f"{name} contains negative counts")
                setattr(self, name, m)
        if self.exposures is not None and np.any(self.exposures <= 0):
            raise DataError("exposures must be strictly positive")

    @property
    def p(self) -> int:
        return len(self.groups)

    @property
    def T(self) -> int:
        return len(self.years)

    def to_json(self) -> str:
        obj = {
            "groups": [[g.start, g.width, g.label] for g in self.groups],
            "years": self.years.tolist(),
            "log_rates": self.y.ravel().tolist(),
        }
        if self.deaths is not None:
            obj["deaths"] = self.deaths.ravel().tolist()
        if self.exposures is not None:
            obj["exposures"] = self.exposures.ravel().tolist()
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MortalityPanel":
        obj = json.loads(text)
        groups = tuple(AgeGroup(s, w, lbl) for s, w, lbl in obj["groups"])
        years = np.asarray(obj["years"], dtype=int)
        p, T = len(groups), len(years)
        y = np.asarray(obj["log_rates"], dtype=float).reshape(p, T)
        deaths = exposures = None
        if "deaths" in obj:
            deaths = np.asarray(obj["deaths"], dtype=float).reshape(p, T)
        if "exposures" in obj:
            exposures = np.asarray(obj["exposures"], dtype=float).reshape(p, T)
        return cls(groups, years, y, deaths, exposures)


def crude_rates(deaths, exposures, zero_policy="error"):
    """Crude death rates D/E per cell.

    zero_policy is ``"error"`` (reject zero-death cells) or a non-negative
    float epsilon, in which case zero-death cells use (D + eps)/E.
    """
    D = np.asarray(deaths, dtype=float)
    E = np.asarray(exposures, dtype=float)
    if D.shape != E.shape:
        raise ValueError("deaths and exposures must have the same shape")
    if np.any(E <= 0):
        idx = np.argwhere(E <= 0)[0]
        raise DataError(f"non-positive exposure at cell {tuple(idx)}")
    if zero_policy == "error":
        if np.any(D == 0):
            idx = np.argwhere(D == 0)[0]
            raise DataError(f"zero deaths at cell {tuple(idx)} under zero_policy='error'")
        return D / E
    eps = float(zero_policy)
    if eps < 0:
        raise ValueError("epsilon must be non-negative")
    Dadj = np.where(D == 0, D + eps, D)
    return Dadj / E


def log_rates(rates):
    """Elementwise natural log of a strictly positive rate matrix."""
    r = np.asarray(rates, dtype=float)
    if np.any(r <= 0):
        idx = np.argwhere(r <= 0)[0]
        raise DataError(f"non-positive rate at cell {tuple(idx)}")
    return np.log(r)


def load_panel(path, grouping, year_range) -> MortalityPanel:
    """Load a rate CSV into a validated panel.

    Rows outside the requested year range or grouping are dropped; every
    cell of the requested (group, year) rectangle must be present exactly
    once.  Rates are converted to natural logs.

    Parameters
    ----------
    path : CSV file with header ``year,age_start,age_width,rate[,deaths,exposure]``
    grouping : sequence of AgeGroup defining the panel rows
    year_range : inclusive (first_year, last_year) pair
    """
    groups = _check_grouping(grouping)
    y0, y1 = int(year_range[0]), int(year_range[1])
    if y1 < y0:
        raise ValueError("year_range must be (first, last) with first <= last")
    years = np.arange(y0, y1 + 1)
    p, T = len(groups), len(years)
    group_index = {(g.start, g.width): i for i, g in enumerate(groups)}

    rates = np.full((p, T), np.nan)
    deaths = np.full((p, T), np.nan)
    exposures = np.full((p, T), np.nan)
    have_counts = False

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip().lower() for h in header]
        base = ["year", "age_start", "age_width", "rate"]
        if header[: len(base)] != base:
            raise DataError(f"{path}: unexpected header {header!r}")
        has_count_cols = header[len(base):] == ["deaths", "exposure"]
        if len(header) > len(base) and not has_count_cols:
            raise DataError(f"{path}: unexpected trailing columns {header[len(base):]!r}")

        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                year = int(row[0])
                start = int(row[1])
                width = int(row[2])
                rate = float(row[3])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row: {exc}") from None
            if not (y0 <= year <= y1):
                continue
            gi = group_index.get((start, width))
            if gi is None:
                continue
            ti = year - y0
            if not np.isnan(rates[gi, ti]):
                raise DataError(
                    f"{path}:{lineno}: duplicate cell (group {groups[gi].label}, year {year})"
                )
            rates[gi, ti] = rate
            if has_count_cols and len(row) >= 6 and row[4].strip() and row[5].strip():
                try:
                    deaths[gi, ti] = float(row[4])
                    exposures[gi, ti] = float(row[5])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: malformed counts: {exc}") from None
                have_counts = True

    missing = np.argwhere(np.isnan(rates))
    if missing.size:
        gi, ti = missing[0]
        raise DataError(
            f"{path}: missing cell (group {groups[gi].label}, year {years[ti]})"
        )

    kwargs = {}
    if have_counts:
        if np.any(np.isnan(deaths)) or np.any(np.isnan(exposures)):
            raise DataError(f"{path}: deaths/exposure given for some cells but not all")
        kwargs = {"deaths": deaths, "exposures": exposures}
    return MortalityPanel(groups, years, log_rates(rates), **kwargs)
