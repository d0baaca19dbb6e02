"""First-time donor forecasting and organic supply estimation.

Four monthly forecasters (Holt-Winters additive, seasonal naive, k-year
same-month mean, OLS trend plus month dummies), a leave-one-year-out
backtest that scores them without look-ahead, blood-group share allocation
for aggregate forecasts, and pluggable providers that turn donor histories
into expected organic attendance per month, blood group, and session.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .errors import DegenerateFitError, InsufficientDataError, InvalidInputError
from .geo import GeoPoint, haversine_km
from .model import BloodGroup, Donor, PlanningMonth, Registry, donations_in_year_before

PERIOD = 12

# Share of first-time donors by blood group (national distribution).
FIRST_TIME_GROUP_SHARES: dict[BloodGroup, float] = {
    BloodGroup.A_POS: 0.379,
    BloodGroup.O_POS: 0.350,
    BloodGroup.B_POS: 0.079,
    BloodGroup.O_NEG: 0.075,
    BloodGroup.A_NEG: 0.062,
    BloodGroup.AB_POS: 0.036,
    BloodGroup.B_NEG: 0.014,
    BloodGroup.AB_NEG: 0.005,
}


@dataclass(frozen=True)
class MonthlySeries:
    """A gapless monthly series of (year, month, value) observations."""

    entries: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise InvalidInputError("empty monthly series")
        prev = None
        for year, month, _ in self.entries:
            if not 1 <= month <= 12:
                raise InvalidInputError(f"month out of range: {year}-{month}")
            if prev is not None:
                expected = PlanningMonth(prev[0], prev[1]).plus(1)
                if (year, month) != (expected.year, expected.month):
                    raise InvalidInputError(
                        f"series has a gap between {prev} and {(year, month)}"
                    )
            prev = (year, month)

    @classmethod
    def from_values(
        cls, start: PlanningMonth, values: Sequence[float]
    ) -> "MonthlySeries":
        entries = []
        m = start
        for v in values:
            entries.append((m.year, m.month, float(v)))
            m = m.plus(1)
        return cls(tuple(entries))

    def __len__(self) -> int:
        return len(self.entries)

    def values(self) -> np.ndarray:
        return np.array([v for _, _, v in self.entries], dtype=float)

    def month_at(self, index: int) -> PlanningMonth:
        year, month, _ = self.entries[index]
        return PlanningMonth(year, month)

    def last_month(self) -> PlanningMonth:
        return self.month_at(len(self.entries) - 1)

    def prefix_through(self, month: PlanningMonth) -> "MonthlySeries":
        """The sub-series of entries up to and including the given month."""
        kept = tuple(
            e for e in self.entries if PlanningMonth(e[0], e[1]) <= month
        )
        if not kept:
            raise InsufficientDataError(f"no entries at or before {month}")
        return MonthlySeries(kept)

    def value_for(self, month: PlanningMonth) -> float:
        for year, mo, v in self.entries:
            if (year, mo) == (month.year, month.month):
                return v
        raise KeyError(str(month))


@dataclass(frozen=True)
class HWParams:
    level: float
    trend: float
    seasonal: float

    def __post_init__(self) -> None:
        for name in ("level", "trend", "seasonal"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} smoothing weight out of [0, 1]")


def _hw_run(
    values: np.ndarray, a: float, b: float, g: float, period: int
) -> tuple[float, float, dict[int, float], float]:
    """Run the additive recursion; return final state and one-step MAE.

    Initialization: level is the first season's mean, trend the average
    first-vs-second-season difference divided by the period, seasonal the
    first season's deviations from its own mean. Seasonal state is keyed by
    absolute time index mod period.
    """
    first = values[:period]
    level = float(first.mean())
    trend = float((values[period : 2 * period] - first).mean() / period)
    seas = {i: float(values[i] - first.mean()) for i in range(period)}
    abs_errs = []
    for t in range(period, len(values)):
        slot = t % period
        s = seas[slot]
        abs_errs.append(abs(values[t] - (level + trend + s)))
        new_level = a * (values[t] - s) + (1.0 - a) * (level + trend)
        trend = b * (new_level - level) + (1.0 - b) * trend
        seas[slot] = g * (values[t] - new_level) + (1.0 - g) * s
        level = new_level
    mae = float(np.mean(abs_errs)) if abs_errs else float("inf")
    return level, trend, seas, mae


GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))


def select_hw_params(
    series: MonthlySeries, period: int = PERIOD
) -> tuple[HWParams, float]:
    """Grid-search smoothing weights over {0.1, ..., 0.9}^3.

    Minimizes in-sample one-step mean absolute error; ties keep the first
    candidate in (level, trend, seasonal) lexicographic order. Returns the
    chosen weights and their MAE.
    """
    values = series.values()
    if len(values) < 2 * period:
        raise InsufficientDataError(
            f"need at least {2 * period} observations, got {len(values)}"
        )
    best = None
    best_mae = float("inf")
    for a, b, g in itertools.product(GRID, GRID, GRID):
        _, _, _, mae = _hw_run(values, a, b, g, period)
        if mae < best_mae:
            best_mae = mae
            best = (a, b, g)
    return HWParams(*best), best_mae


def holt_winters_additive(
    series: MonthlySeries,
    horizon: int,
    params: Optional[HWParams] = None,
    period: int = PERIOD,
) -> np.ndarray:
    """Additive Holt-Winters forecast for the next `horizon` months.

    When params is None the smoothing weights are chosen by grid search over
    {0.1, ..., 0.9}^3, minimizing in-sample one-step mean absolute error
    (ties resolved by the first grid point in (level, trend, seasonal)
    lexicographic order).
    """
    if horizon < 1:
        raise InvalidInputError("horizon must be positive")
    values = series.values()
    if len(values) < 2 * period:
        raise InsufficientDataError(
            f"need at least {2 * period} observations, got {len(values)}"
        )
    if params is None:
        params, _ = select_hw_params(series, period)
    level, trend, seas, _ = _hw_run(
        values, params.level, params.trend, params.seasonal, period
    )
    n = len(values)
    out = np.empty(horizon)
    for h in range(1, horizon + 1):
        out[h - 1] = level + h * trend + seas[(n - 1 + h) % period]
    return out


def seasonal_naive(series: MonthlySeries, horizon: int) -> np.ndarray:
    """Repeat the value observed twelve months before each forecast month."""
    if horizon < 1:
        raise InvalidInputError("horizon must be positive")
    values = series.values()
    if len(values) < PERIOD:
        raise InsufficientDataError("need at least 12 observations")
    n = len(values)
    return np.array(
        [values[n - PERIOD + ((h - 1) % PERIOD)] for h in range(1, horizon + 1)]
    )


def same_month_mean(
    series: MonthlySeries, horizon: int, k_years: int = 3
) -> np.ndarray:
    """Mean of the k most recent observations of each forecast month."""
    if horizon < 1:
        raise InvalidInputError("horizon must be positive")
    if k_years < 1:
        raise InvalidInputError("k_years must be positive")
    last = series.last_month()
    out = np.empty(horizon)
    for h in range(1, horizon + 1):
        target = last.plus(h)
        same = [v for y, m, v in series.entries if m == target.month]
        if len(same) < k_years:
            raise InsufficientDataError(
                f"month {target.month} has {len(same)} observations, "
                f"need {k_years}"
            )
        out[h - 1] = float(np.mean(same[-k_years:]))
    return out


def ols_trend_seasonal(series: MonthlySeries, horizon: int) -> np.ndarray:
    """Least-squares fit of intercept + linear trend + 11 month dummies."""
    if horizon < 1:
        raise InvalidInputError("horizon must be positive")
    values = series.values()
    n = len(values)
    if n < 2 * PERIOD:
        raise InsufficientDataError("need at least 24 observations")

    def design(time_index: np.ndarray, months: np.ndarray) -> np.ndarray:
        cols = [np.ones_like(time_index, dtype=float), time_index.astype(float)]
        for m in range(2, 13):
            cols.append((months == m).astype(float))
        return np.column_stack(cols)

    months = np.array([m for _, m, _ in series.entries])
    X = design(np.arange(n), months)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DegenerateFitError("trend + month-dummy design is rank deficient")
    coef, *_ = np.linalg.lstsq(X, values, rcond=None)
    last = series.last_month()
    fut_months = np.array([last.plus(h).month for h in range(1, horizon + 1)])
    Xf = design(np.arange(n, n + horizon), fut_months)
    return Xf @ coef


@dataclass(frozen=True)
class BacktestCell:
    """Score of one method on one held-out year."""

    mae: Optional[float]
    n_months: int
    error: Optional[str] = None


@dataclass
class BacktestReport:
    """Per-year and pooled scores of the leave-one-year-out backtest."""

    cells: dict[tuple[str, int], BacktestCell]
    pooled_mae: dict[str, float]
    relative_mae: dict[str, float]

    def mae_for(self, method: str, year: int) -> Optional[float]:
        return self.cells[(method, year)].mae


ForecastFn = Callable[[MonthlySeries, int], Sequence[float]]


def backtest_loyo(
    series: MonthlySeries,
    methods: Mapping[str, ForecastFn],
    years: Sequence[int],
) -> BacktestReport:
    """Leave-one-year-out backtest with expanding training windows.

    For each held-out year the training series ends in December of the prior
    year; forecasts cover the held-out months actually present in the
    series. A method failing on a year gets an error-marked cell instead of
    aborting the run. Pooled MAE weights every evaluated month equally;
    relative MAE divides by the mean actual over the same months.
    """
    report_cells: dict[tuple[str, int], BacktestCell] = {}
    abs_errors: dict[str, list[float]] = {name: [] for name in methods}
    actuals_used: dict[str, list[float]] = {name: [] for name in methods}
    for year in years:
        target_months = [
            (i, PlanningMonth(y, m))
            for i, (y, m, _) in enumerate(series.entries)
            if y == year
        ]
        cutoff = PlanningMonth(year - 1, 12)
        for name, fn in methods.items():
            if not target_months:
                report_cells[(name, year)] = BacktestCell(
                    None, 0, "no observations in held-out year"
                )
                continue
            try:
                prefix = series.prefix_through(cutoff)
                if prefix.last_month() != cutoff:
                    raise InsufficientDataError(
                        f"training series does not reach {cutoff}"
                    )
                horizon = max(
                    _months_between(cutoff, m) for _, m in target_months
                )
                preds = np.asarray(fn(prefix, horizon), dtype=float)
                errs = []
                acts = []
                for idx, m in target_months:
                    actual = series.entries[idx][2]
                    pred = preds[_months_between(cutoff, m) - 1]
                    errs.append(abs(actual - pred))
                    acts.append(actual)
                report_cells[(name, year)] = BacktestCell(
                    float(np.mean(errs)), len(errs)
                )
                abs_errors[name].extend(errs)
                actuals_used[name].extend(acts)
            except Exception as exc:  # error isolation per cell
                report_cells[(name, year)] = BacktestCell(
                    None, 0, f"{type(exc).__name__}: {exc}"
                )
    pooled = {}
    relative = {}
    for name in methods:
        if abs_errors[name]:
            pooled[name] = float(np.mean(abs_errors[name]))
            mean_actual = float(np.mean(actuals_used[name]))
            relative[name] = (
                pooled[name] / mean_actual if mean_actual else float("inf")
            )
        else:
            pooled[name] = float("nan")
            relative[name] = float("nan")
    return BacktestReport(report_cells, pooled, relative)


def _months_between(a: PlanningMonth, b: PlanningMonth) -> int:
    return (b.year - a.year) * 12 + (b.month - a.month)


def allocate_by_blood_shares(
    total: float, shares: Mapping[BloodGroup, float]
) -> dict[BloodGroup, float]:
    """Split an aggregate count across blood groups proportionally.

    Shares must be nonnegative and sum to 1 within 1e-6; the output is
    renormalized by the actual sum so it adds up to `total` to float
    precision.
    """
    if total < 0:
        raise InvalidInputError("total must be nonnegative")
    ssum = sum(shares.values())
    if abs(ssum - 1.0) > 1e-6:
        raise InvalidInputError(f"shares sum to {ssum}, expected 1")
    out = {}
    for group in BloodGroup:
        share = shares.get(group, 0.0)
        if share < 0:
            raise InvalidInputError(f"negative share for {group}")
        out[group] = total * share / ssum
    return out


class OrganicProvider(Protocol):
    """Predicts per-donor monthly attendance probabilities."""

    def monthly_probabilities(
        self, registry: Registry, months: Sequence[PlanningMonth]
    ) -> Mapping[tuple[str, PlanningMonth], float]:
        """Probabilities keyed by (donor id, month); missing keys mean zero."""
        ...


@dataclass(frozen=True)
class ConstantProbabilityProvider:
    """Every qualifying donor attends each month with a fixed probability."""

    probability: float
    active_only: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise InvalidInputError("probability out of [0, 1]")

    def monthly_probabilities(
        self, registry: Registry, months: Sequence[PlanningMonth]
    ) -> dict[tuple[str, PlanningMonth], float]:
        out = {}
        for donor in registry.donors:
            if self.active_only:
                n = donations_in_year_before(
                    donor.donation_history, registry.as_of
                )
                if n == 0:
                    continue
            for m in months:
                out[(donor.id, m)] = self.probability
        return out


@dataclass(frozen=True)
class HistoricalShareProvider:
    """Probability = share of recent years the donor gave in that month.

    For forecast month m, looks at the `lookback_years` calendar years before
    the registry's as_of year and uses the fraction of them in which the
    donor has at least one donation in calendar month m.
    """

    lookback_years: int = 3

    def monthly_probabilities(
        self, registry: Registry, months: Sequence[PlanningMonth]
    ) -> dict[tuple[str, PlanningMonth], float]:
        years = [
            registry.as_of.year - k for k in range(1, self.lookback_years + 1)
        ]
        out = {}
        for donor in registry.donors:
            by_year_month = {(d.year, d.month) for d in donor.donation_history}
            for m in months:
                hits = sum(1 for y in years if (y, m.month) in by_year_month)
                if hits:
                    out[(donor.id, m)] = hits / self.lookback_years
        return out


@dataclass
class OrganicSupplyEstimate:
    """Expected organic attendance by demand class and by session."""

    group_totals: dict[tuple[PlanningMonth, BloodGroup], float]
    session_totals: dict[str, float]
    donor_probabilities: dict[tuple[str, PlanningMonth], float] = field(
        default_factory=dict
    )


def _modal_site(donor: Donor) -> Optional[str]:
    if not donor.donation_sites:
        return None
    counts = Counter(donor.donation_sites.values())
    top = max(counts.values())
    return min(s for s, c in counts.items() if c == top)


def organic_estimate(
    provider: OrganicProvider,
    registry: Registry,
    months: Sequence[PlanningMonth],
    first_time_forecast: Optional[Mapping[PlanningMonth, float]] = None,
    first_time_shares: Optional[Mapping[BloodGroup, float]] = None,
    site_locations: Optional[Mapping[str, GeoPoint]] = None,
) -> OrganicSupplyEstimate:
    """Combine returning-donor predictions with a first-time forecast.

    Returning donors contribute their predicted probability to their blood
    group's month total and to the sessions of their modal historical site
    (remapped to the nearest active site when the modal site is not in the
    schedule and its location is resolvable; spread proportionally to session
    capacity otherwise). First-time forecasts are split across groups by
    share and across a month's sessions by capacity.
    """
    months = sorted(months)
    shares = dict(first_time_shares or FIRST_TIME_GROUP_SHARES)
    group_totals = {(m, g): 0.0 for m in months for g in BloodGroup}
    session_totals = {s.id: 0.0 for s in registry.sessions}

    month_sessions: dict[PlanningMonth, list] = {m: [] for m in months}
    site_month: dict[tuple[str, PlanningMonth], list] = {}
    active_locations: dict[str, GeoPoint] = {}
    for s in registry.sessions:
        if s.month in month_sessions:
            month_sessions[s.month].append(s)
            site_month.setdefault((s.site_id, s.month), []).append(s)
        active_locations.setdefault(s.site_id, s.location)
    lookup = dict(site_locations or {})
    lookup.update(active_locations)

    def spread_proportional(month: PlanningMonth, amount: float) -> None:
        sessions = month_sessions.get(month, [])
        if not sessions:
            return
        total_cap = sum(s.capacity for s in sessions)
        for s in sessions:
            weight = (
                s.capacity / total_cap if total_cap > 0 else 1.0 / len(sessions)
            )
            session_totals[s.id] += amount * weight

    def place_at_site(site: str, month: PlanningMonth, amount: float) -> None:
        sessions = site_month.get((site, month))
        if not sessions:
            # Site holds no session that month; counts only in group totals.
            return
        for s in sessions:
            session_totals[s.id] += amount / len(sessions)

    remap_cache: dict[str, Optional[str]] = {}

    def resolve_site(modal: str) -> Optional[str]:
        if modal in active_locations:
            return modal
        if modal not in remap_cache:
            loc = lookup.get(modal)
            if loc is None:
                remap_cache[modal] = None
            else:
                remap_cache[modal] = min(
                    active_locations,
                    key=lambda sid: (haversine_km(loc, active_locations[sid]), sid),
                ) if active_locations else None
        return remap_cache[modal]

    probs = provider.monthly_probabilities(registry, months)
    for donor in registry.donors:
        modal = _modal_site(donor)
        target_site = resolve_site(modal) if modal is not None else None
        for m in months:
            p = probs.get((donor.id, m), 0.0)
            if p <= 0.0:
                continue
            group_totals[(m, donor.blood_group)] += p
            if target_site is not None:
                place_at_site(target_site, m, p)
            else:
                spread_proportional(m, p)

    if first_time_forecast:
        for m in months:
            total = float(first_time_forecast.get(m, 0.0))
            if total <= 0.0:
                continue
            for g, amount in allocate_by_blood_shares(total, shares).items():
                group_totals[(m, g)] += amount
            spread_proportional(m, total)

    return OrganicSupplyEstimate(
        group_totals=group_totals,
        session_totals=session_totals,
        donor_probabilities=dict(probs),
    )
