"""Static eligibility rules and feasible donor-session pair generation.

A pair (donor, session) is feasible when the donor is of eligible age at the
session start, not suspended on the session start date, far enough past their
most recent donation for every admissible date of the window, and within the
invitation radius of the session site. Capacity is not a static rule; the
solvers enforce it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import MissingAnchorError
from .geo import donor_session_distance
from .model import BloodGroup, Donor, PlanningMonth, Registry, SessionWindow, age_at

log = logging.getLogger(__name__)

MIN_GAP_DAYS = 60


@dataclass(frozen=True)
class EligibilityConfig:
    radius_km: float = 3.0
    min_gap_days: int = MIN_GAP_DAYS
    min_age: int = 18


@dataclass(frozen=True)
class FeasiblePair:
    """A donor-session assignment candidate with its planning attributes."""

    donor_id: str
    session_id: str
    month: PlanningMonth
    blood_group: BloodGroup
    distance_km: float
    probability: float
    adverse: bool


def static_checks(
    donor: Donor, session: SessionWindow, cfg: EligibilityConfig
) -> bool:
    """Evaluate the four static rules for one donor-session pair.

    Raises MissingAnchorError when the donor has no anchor at all; otherwise
    returns whether the pair passes age, suspension, donation-gap, and radius
    rules.
    """
    age = age_at(donor, session.start_date)
    if age < cfg.min_age or age > donor.max_eligible_age:
        return False
    if donor.is_suspended_on(session.start_date):
        return False
    last = donor.last_donation()
    if last is not None:
        # Earliest admissible date gates the whole window: dates are sorted,
        # so if it clears the gap every later date does too.
        if (session.admissible_dates[0] - last).days < cfg.min_gap_days:
            return False
    if donor_session_distance(donor, session) > cfg.radius_km:
        return False
    return True


def build_feasible_pairs(
    registry: Registry, cfg: EligibilityConfig
) -> dict[tuple[PlanningMonth, BloodGroup], list[FeasiblePair]]:
    """All feasible pairs, grouped by (session month, donor blood group).

    Groups are keyed in sorted (month, group) order; within a group pairs are
    ordered by (session id, donor id). Donors with no anchor are skipped with
    a logged count.
    """
    groups: dict[tuple[PlanningMonth, BloodGroup], list[FeasiblePair]] = {}
    skipped_no_anchor = 0
    for session in registry.sessions:
        for donor in registry.donors:
            if donor.home_anchor is None and donor.last_brigade_anchor is None:
                skipped_no_anchor += 1
                continue
            if not static_checks(donor, session, cfg):
                continue
            pair = FeasiblePair(
                donor_id=donor.id,
                session_id=session.id,
                month=session.month,
                blood_group=donor.blood_group,
                distance_km=donor_session_distance(donor, session),
                probability=donor.attendance_probability,
                adverse=donor.adverse_reaction,
            )
            groups.setdefault((session.month, donor.blood_group), []).append(pair)
    if skipped_no_anchor:
        log.warning(
            "skipped %d donor-session pairs with no donor anchor",
            skipped_no_anchor,
        )
    ordered: dict[tuple[PlanningMonth, BloodGroup], list[FeasiblePair]] = {}
    for key in sorted(groups, key=lambda k: (k[0], k[1].order_index)):
        ordered[key] = sorted(
            groups[key], key=lambda p: (p.session_id, p.donor_id)
        )
    return ordered
