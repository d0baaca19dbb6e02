"""Demand panels, donation-equivalent conversion, and monthly targets.

Hospital demand arrives as two components per month and blood group: red-cell
concentrate units and plasma pools. One donation yields one red-cell unit and
one fifth of a pool, so the binding requirement in donation units is
max(ce, 5 * cpp). Targets for a future month come from the empirical quantile
of that month's history, with a linear trend removed first when it tests
significant, or from a carry-forward copy of last year's value.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import InsufficientDataError, InvalidInputError
from .model import BloodGroup, PlanningMonth

POOL_DONATIONS = 5  # donations needed per plasma pool


class Component(Enum):
    CE = "ce"    # red-cell concentrate units
    CPP = "cpp"  # plasma pools


@dataclass(frozen=True)
class QuantileConfig:
    alpha: float = 0.8
    trend_significance: float = 0.10
    min_history_years: int = 3

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError(f"alpha out of (0, 1): {self.alpha}")
        if not 0.0 < self.trend_significance < 1.0:
            raise InvalidInputError(
                f"trend significance out of (0, 1): {self.trend_significance}"
            )
        if self.min_history_years < 3:
            raise InvalidInputError("need at least 3 history years")


@dataclass(frozen=True)
class DemandTarget:
    """Target and residual demand for one (month, blood group) class."""

    month: PlanningMonth
    blood_group: BloodGroup
    target: float
    residual: float


class DemandPanel:
    """Monthly demand components keyed by (year, month, group, component)."""

    def __init__(
        self,
        units: Mapping[tuple[int, int, BloodGroup, Component], float],
    ) -> None:
        for key, value in units.items():
            year, month, group, comp = key
            if not 1 <= month <= 12:
                raise InvalidInputError(f"panel month out of range: {key}")
            if value < 0:
                raise InvalidInputError(f"negative demand units at {key}")
        self.units = dict(units)

    def __len__(self) -> int:
        return len(self.units)

    def component(
        self, year: int, month: int, group: BloodGroup, comp: Component
    ) -> float:
        return self.units.get((year, month, group, comp), 0.0)

    def years(self) -> list[int]:
        return sorted({k[0] for k in self.units})

    def equivalent(self, year: int, month: int, group: BloodGroup) -> float:
        """Donation-equivalent demand for one cell of the panel."""
        return donation_equivalent(
            self.component(year, month, group, Component.CE),
            self.component(year, month, group, Component.CPP),
        )

    def month_history(
        self, month: int, group: BloodGroup, before_year: int
    ) -> list[tuple[int, float]]:
        """Same-calendar-month donation equivalents for years < before_year.

        Only years where the panel has at least one component for the cell
        are included.
        """
        out = []
        for year in self.years():
            if year >= before_year:
                continue
            has_cell = any(
                (year, month, group, comp) in self.units for comp in Component
            )
            if has_cell:
                out.append((year, self.equivalent(year, month, group)))
        return out


def donation_equivalent(ce: float, cpp: float) -> float:
    """Donations needed to cover ce red-cell units and cpp plasma pools."""
    if ce < 0 or cpp < 0:
        raise InvalidInputError(
            f"demand components must be nonnegative, got ce={ce} cpp={cpp}"
        )
    return max(ce, POOL_DONATIONS * cpp)


def _slope_is_significant(
    years: np.ndarray, values: np.ndarray, threshold: float
) -> tuple[bool, float, float]:
    """Two-sided t-test on the OLS slope of values over years.

    Returns (significant, slope, intercept). A nan p-value (constant input)
    counts as not significant.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        fit = stats.linregress(years, values)
    significant = bool(fit.pvalue < threshold) if not math.isnan(fit.pvalue) else False
    return significant, float(fit.slope), float(fit.intercept)


def quantile_target(
    history: Sequence[tuple[int, float]],
    cfg: QuantileConfig,
    target_year: Optional[int] = None,
) -> float:
    """Quantile-of-history demand target with selective trend correction.

    history holds (year, value) observations of one calendar month for one
    blood group, all from years strictly before the target year. When the
    fitted linear trend over years is significant (slope t-test p below
    cfg.trend_significance) the residuals around the trend are quantiled and
    the trend is extrapolated to the target year; otherwise the raw values
    are quantiled. The result is clamped at zero last.
    """
    if len(history) < cfg.min_history_years:
        raise InsufficientDataError(
            f"need {cfg.min_history_years} history years, got {len(history)}"
        )
    years = np.array([y for y, _ in history], dtype=float)
    values = np.array([v for _, v in history], dtype=float)
    if len(set(years.tolist())) != len(years):
        raise InvalidInputError("duplicate years in demand history")
    if target_year is None:
        target_year = int(years.max()) + 1
    if years.max() >= target_year:
        raise InvalidInputError(
            "history must lie strictly before the target year"
        )
    significant, slope, intercept = _slope_is_significant(
        years, values, cfg.trend_significance
    )
    if significant:
        fitted = intercept + slope * years
        level = float(np.quantile(values - fitted, cfg.alpha))
        target = level + intercept + slope * target_year
    else:
        target = float(np.quantile(values, cfg.alpha))
    return max(0.0, target)


def carry_forward_target(
    values: Mapping[tuple[int, int], float], target: PlanningMonth
) -> float:
    """Copy the same month of the previous year as the target."""
    key = (target.year - 1, target.month)
    if key not in values:
        raise InsufficientDataError(
            f"no value for {key[0]:04d}-{key[1]:02d} to carry forward"
        )
    return values[key]


def residual_demand(target: float, organic: float) -> float:
    """Demand left for invitations after expected organic supply."""
    if target < 0 or organic < 0:
        raise InvalidInputError("target and organic supply must be nonnegative")
    return max(0.0, target - organic)
