"""Scarcity-first greedy construction of invitation plans.

Demand classes are served in increasing order of scarcity (feasible pairs
per unit of residual demand); within a class, non-adverse donors come first,
then nearer ones, with ids breaking ties. A pair is accepted only if session
capacity, the pairwise window gap, the rolling annual limit, and the
invitation budget all remain satisfied, and the class closes as soon as its
probability-weighted fulfillment reaches the residual.

Acceptance uses the same window-level gap rule and end-date-anchored annual
rule as the exact model's rows, so every greedy plan is feasible for the
exact solver and can seed it as a warm start.
"""

from __future__ import annotations

import datetime as dt
import math
import time
from typing import Mapping, Sequence

from .bilp import ModelConfig
from .eligibility import FeasiblePair
from .model import (
    BloodGroup,
    PlanningMonth,
    Registry,
    YEAR_DAYS,
    annual_limit,
    donations_in_year_before,
    is_high_frequency,
)
from .plan_eval import (
    InvitationPlan,
    PlanEntry,
    earliest_feasible_date,
    objective_breakdown,
    peak_memory_mb,
)

CAP_TOL = 1e-9


def scarcity_order(
    classes: Mapping[tuple[PlanningMonth, BloodGroup], tuple[int, float]],
) -> list[tuple[PlanningMonth, BloodGroup]]:
    """Class keys sorted scarcest first.

    classes maps (month, group) to (feasible pair count, residual demand);
    scarcity is count / residual, with ties going to the earlier month and
    then the canonical group order.
    """
    keys = []
    for cls, (count, residual) in classes.items():
        if residual <= 0:
            continue
        keys.append((count / residual, cls[0], cls[1].order_index, cls))
    keys.sort(key=lambda t: t[:3])
    return [t[3] for t in keys]


def greedy_assign(
    pairs: Mapping[tuple[PlanningMonth, BloodGroup], Sequence[FeasiblePair]],
    residuals: Mapping[tuple[PlanningMonth, BloodGroup], float],
    registry: Registry,
    cfg: ModelConfig,
    chosen_radius_km: float | None = None,
) -> InvitationPlan:
    """Build a plan greedily; unmet demand becomes reported slack.

    Deterministic for identical inputs: iteration follows the scarcity order
    and the in-class sort, and every acceptance check is rule-based.
    """
    t0 = time.perf_counter()
    stats = {
        cls: (len(pairs.get(cls, ())), residuals.get(cls, 0.0))
        for cls in set(pairs) | set(residuals)
    }
    order = scarcity_order(stats)

    capacity_left: dict[str, float] = {
        s.id: s.capacity for s in registry.sessions
    }
    fulfilled: dict[tuple[PlanningMonth, BloodGroup], float] = {}
    planned_dates: dict[str, list[dt.date]] = {}
    accepted_windows: dict[str, list] = {}
    invite_count: dict[str, int] = {}
    entries: list[PlanEntry] = []

    def window_gap_ok(donor_id: str, session) -> bool:
        for other in accepted_windows.get(donor_id, []):
            earlier, later = sorted(
                (other, session), key=lambda s: (s.start_date, s.id)
            )
            if (later.start_date - earlier.end_date).days < cfg.min_gap_days:
                return False
        return True

    def annual_ok(donor, session) -> bool:
        limit = annual_limit(donor)
        ends = [s.end_date for s in accepted_windows.get(donor.id, [])]
        ends.append(session.end_date)
        for anchor in ends:
            lo = anchor - dt.timedelta(days=YEAR_DAYS)
            invited = sum(1 for e in ends if lo < e <= anchor)
            hist = donations_in_year_before(donor.donation_history, anchor)
            if invited > max(0, limit - hist):
                return False
        return True

    for cls in order:
        residual = residuals[cls]
        ranked = sorted(
            pairs.get(cls, ()),
            key=lambda p: (p.adverse, p.distance_km, p.donor_id, p.session_id),
        )
        for pair in ranked:
            if fulfilled.get(cls, 0.0) >= residual - CAP_TOL:
                break
            donor = registry.donor(pair.donor_id)
            session = registry.session(pair.session_id)
            if capacity_left[session.id] + CAP_TOL < pair.probability:
                continue
            if cfg.invite_cap_per_year is not None:
                sent = donations_in_year_before(
                    donor.invitations_sent, registry.as_of
                )
                budget = max(0, cfg.invite_cap_per_year - sent)
                if invite_count.get(donor.id, 0) >= budget:
                    continue
            if not window_gap_ok(donor.id, session):
                continue
            if not annual_ok(donor, session):
                continue
            blocked = list(donor.donation_history) + planned_dates.get(
                donor.id, []
            )
            planned = earliest_feasible_date(session, blocked, cfg.min_gap_days)
            if planned is None:
                continue
            capacity_left[session.id] -= pair.probability
            fulfilled[cls] = fulfilled.get(cls, 0.0) + pair.probability
            planned_dates.setdefault(donor.id, []).append(planned)
            accepted_windows.setdefault(donor.id, []).append(session)
            invite_count[donor.id] = invite_count.get(donor.id, 0) + 1
            entries.append(
                PlanEntry(
                    donor_id=pair.donor_id,
                    session_id=pair.session_id,
                    planned_date=planned,
                    month=pair.month,
                    blood_group=pair.blood_group,
                    distance_km=pair.distance_km,
                    probability=pair.probability,
                    adverse=pair.adverse,
                )
            )

    entries.sort(key=lambda e: (e.donor_id, e.session_id))
    entry_tuple = tuple(entries)

    per_class: dict[tuple[PlanningMonth, BloodGroup], list[float]] = {}
    for e in entry_tuple:
        per_class.setdefault((e.month, e.blood_group), []).append(e.probability)
    slacks = {}
    for cls, residual in residuals.items():
        if residual > 0:
            got = math.fsum(per_class.get(cls, []))
            slacks[cls] = max(0.0, residual - got)

    multi = 0
    y_values: dict[str, int] = {}
    for donor_id, count in sorted(invite_count.items()):
        if count >= 2 and not is_high_frequency(
            registry.donor(donor_id), registry.as_of
        ):
            multi += 1
            y_values[donor_id] = 1
    terms = objective_breakdown(entry_tuple, slacks, multi, cfg)

    return InvitationPlan(
        entries=entry_tuple,
        demand_mode=cfg.demand_mode,
        slacks=slacks,
        objective_terms=terms,
        solver="greedy",
        y_values=y_values,
        runtime_s=time.perf_counter() - t0,
        peak_memory_mb=peak_memory_mb(),
        chosen_radius_km=chosen_radius_km,
    )
