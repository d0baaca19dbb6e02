"""Invitation plans, the independent constraint validator, and metrics.

The validator re-derives every constraint family from raw registry data and
the plan itself; it shares no state with the solvers. Violations are tagged
with the family of the rule they break so tests can assert that an injected
defect is detected as exactly that defect.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Mapping, Optional

from .bilp import BilpModel, ModelConfig, VarKind, VariableRef
from .eligibility import EligibilityConfig, static_checks
from .errors import DonorPlanError
from .model import (
    BloodGroup,
    PlanningMonth,
    Registry,
    YEAR_DAYS,
    annual_limit,
    donations_in_year_before,
    is_high_frequency,
)

CAP_TOL = 1e-9
DEM_TOL = 1e-9


@dataclass(frozen=True)
class PlanEntry:
    """One accepted invitation: who, which session, on which planned day."""

    donor_id: str
    session_id: str
    planned_date: dt.date
    month: PlanningMonth
    blood_group: BloodGroup
    distance_km: float
    probability: float
    adverse: bool


@dataclass
class InvitationPlan:
    """A complete plan with the bookkeeping needed to validate and report it."""

    entries: tuple[PlanEntry, ...]
    demand_mode: str
    slacks: dict[tuple[PlanningMonth, BloodGroup], float]
    objective_terms: dict[str, float]
    solver: str
    y_values: Optional[dict[str, int]] = None
    runtime_s: Optional[float] = None
    peak_memory_mb: Optional[float] = None
    chosen_radius_km: Optional[float] = None

    @property
    def objective_total(self) -> float:
        return math.fsum(self.objective_terms.values())

    def fulfilled_by_class(
        self,
    ) -> dict[tuple[PlanningMonth, BloodGroup], float]:
        """Probability-weighted units delivered per (month, group) class."""
        sums: dict[tuple[PlanningMonth, BloodGroup], list[float]] = {}
        for e in self.entries:
            sums.setdefault((e.month, e.blood_group), []).append(e.probability)
        return {k: math.fsum(v) for k, v in sums.items()}


@dataclass(frozen=True)
class Violation:
    family: str
    subject: str
    detail: str


@dataclass(frozen=True)
class PlanMetrics:
    fulfillment_rate: float
    adverse_invited: int
    avg_distance_km: float
    avg_invites_per_non_hf: float
    runtime_s: Optional[float]
    peak_memory_mb: Optional[float]


def peak_memory_mb() -> Optional[float]:
    """Process peak RSS in MB where the platform reports it, else None."""
    try:
        import resource
        import sys

        peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        if sys.platform == "darwin":
            return peak / 1e6
        return peak / 1024.0
    except Exception:
        return None


def objective_breakdown(
    entries: tuple[PlanEntry, ...],
    slacks: Mapping[tuple[PlanningMonth, BloodGroup], float],
    multi_invited: int,
    cfg: ModelConfig,
) -> dict[str, float]:
    """Split a plan's objective into its four weighted components."""
    return {
        "distance": cfg.w_dist * math.fsum(e.distance_km for e in entries),
        "adverse": cfg.w_adv * sum(1 for e in entries if e.adverse),
        "invite_penalty": cfg.w_inv * multi_invited,
        "slack": (
            cfg.w_dem * math.fsum(slacks.values())
            if cfg.demand_mode == "soft"
            else 0.0
        ),
    }


def assemble_plan(
    model: BilpModel,
    assignment: Mapping[VariableRef, float],
    registry: Registry,
    solver: str,
    runtime_s: Optional[float] = None,
    chosen_radius_km: Optional[float] = None,
) -> InvitationPlan:
    """Turn a solver assignment into a dated plan.

    Planned attendance dates are the earliest admissible date of each
    accepted window that keeps the minimum gap to the donor's history and
    their other planned dates; the model's pairwise gap rows guarantee such
    a date exists, so failure here means the assignment was not feasible.
    """
    per_donor: dict[str, list] = {}
    for var, value in assignment.items():
        if var.kind is VarKind.ASSIGN and value > 0.5:
            pair = model.pair_for[var]
            per_donor.setdefault(pair.donor_id, []).append(pair)
    entries = []
    for donor_id in sorted(per_donor):
        donor = registry.donor(donor_id)
        blocked = list(donor.donation_history)
        pairs = sorted(
            per_donor[donor_id],
            key=lambda p: (registry.session(p.session_id).start_date, p.session_id),
        )
        for pair in pairs:
            session = registry.session(pair.session_id)
            planned = earliest_feasible_date(
                session, blocked, model.config.min_gap_days
            )
            if planned is None:
                raise DonorPlanError(
                    f"no gap-respecting date for donor {donor_id} in session "
                    f"{pair.session_id}; assignment is not schedulable"
                )
            blocked.append(planned)
            entries.append(
                PlanEntry(
                    donor_id=donor_id,
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

    slacks = {
        (t.month, t.blood_group): 0.0 for t in model.targets if t.residual > 0
    }
    y_values: dict[str, int] = {}
    for var, value in assignment.items():
        if var.kind is VarKind.SLACK:
            slacks[(var.month, var.blood_group)] = float(value)
        elif var.kind is VarKind.MULTI_INVITE:
            y_values[var.donor_id] = int(round(value))
    terms = objective_breakdown(
        tuple(entries), slacks, sum(y_values.values()), model.config
    )
    return InvitationPlan(
        entries=tuple(entries),
        demand_mode=model.config.demand_mode,
        slacks=slacks,
        objective_terms=terms,
        solver=solver,
        y_values=y_values,
        runtime_s=runtime_s,
        peak_memory_mb=peak_memory_mb(),
        chosen_radius_km=chosen_radius_km,
    )


def earliest_feasible_date(
    session, blocked_dates, min_gap_days: int
) -> Optional[dt.date]:
    """Earliest admissible date at least min_gap_days from every blocked date."""
    for d in session.admissible_dates:
        if all(abs((d - b).days) >= min_gap_days for b in blocked_dates):
            return d
    return None


def plan_to_assignment(
    plan: InvitationPlan, model: BilpModel
) -> dict[VariableRef, float]:
    """Express a plan as a full variable assignment of the model.

    Assignment variables mirror the plan's entries, multi-invite indicators
    come from the plan's y values, and slack variables carry the recorded
    per-class slack. Used to seed the exact solver with a greedy incumbent.
    """
    out: dict[VariableRef, float] = {}
    chosen = {(e.donor_id, e.session_id) for e in plan.entries}
    for var in model.variables:
        if var.kind is VarKind.ASSIGN:
            pair = model.pair_for[var]
            out[var] = 1.0 if (pair.donor_id, pair.session_id) in chosen else 0.0
        elif var.kind is VarKind.MULTI_INVITE:
            out[var] = float((plan.y_values or {}).get(var.donor_id, 0))
        else:
            out[var] = float(plan.slacks.get((var.month, var.blood_group), 0.0))
    return out


def validate_plan(
    plan: InvitationPlan,
    registry: Registry,
    targets: Mapping[tuple[PlanningMonth, BloodGroup], float],
    model_cfg: ModelConfig,
    elig_cfg: EligibilityConfig,
) -> list[Violation]:
    """Re-check every constraint family from raw data; return all violations.

    targets maps each demand class to its residual requirement. Demand is
    checked under the plan's declared mode: hard requires the fulfilled mass
    to cover the residual, soft requires fulfilled plus the recorded slack
    to cover it. An empty list means the plan is clean.
    """
    violations: list[Violation] = []
    ok_entries: list[PlanEntry] = []
    seen_pairs: set[tuple[str, str]] = set()
    for e in plan.entries:
        if not registry.has_donor(e.donor_id):
            violations.append(
                Violation("structural", e.donor_id, "unknown donor id")
            )
            continue
        if not registry.has_session(e.session_id):
            violations.append(
                Violation("structural", e.session_id, "unknown session id")
            )
            continue
        session = registry.session(e.session_id)
        key = (e.donor_id, e.session_id)
        if key in seen_pairs:
            violations.append(
                Violation(
                    "structural",
                    f"{e.donor_id}/{e.session_id}",
                    "duplicate invitation for the same pair",
                )
            )
            continue
        seen_pairs.add(key)
        if e.planned_date not in session.admissible_dates:
            violations.append(
                Violation(
                    "structural",
                    f"{e.donor_id}/{e.session_id}",
                    f"planned date {e.planned_date} not admissible",
                )
            )
            continue
        ok_entries.append(e)

    for e in ok_entries:
        donor = registry.donor(e.donor_id)
        session = registry.session(e.session_id)
        if not static_checks(donor, session, elig_cfg):
            violations.append(
                Violation(
                    "static",
                    f"{e.donor_id}/{e.session_id}",
                    "pair fails static eligibility rules",
                )
            )

    loads: dict[str, list[float]] = {}
    for e in ok_entries:
        loads.setdefault(e.session_id, []).append(e.probability)
    for session_id in sorted(loads):
        total = math.fsum(loads[session_id])
        cap = registry.session(session_id).capacity
        if total > cap + CAP_TOL:
            violations.append(
                Violation(
                    "capacity",
                    session_id,
                    f"expected load {total:.6f} exceeds capacity {cap:.6f}",
                )
            )

    fulfilled: dict[tuple[PlanningMonth, BloodGroup], list[float]] = {}
    for e in ok_entries:
        fulfilled.setdefault((e.month, e.blood_group), []).append(e.probability)
    for cls in sorted(targets, key=lambda k: (k[0], k[1].order_index)):
        residual = targets[cls]
        if residual <= 0:
            continue
        got = math.fsum(fulfilled.get(cls, []))
        if plan.demand_mode == "hard":
            if got < residual - DEM_TOL:
                violations.append(
                    Violation(
                        "demand_hard",
                        f"{cls[0]}/{cls[1]}",
                        f"fulfilled {got:.6f} below residual {residual:.6f}",
                    )
                )
        else:
            slack = plan.slacks.get(cls, 0.0)
            if got + slack < residual - DEM_TOL:
                violations.append(
                    Violation(
                        "demand_soft",
                        f"{cls[0]}/{cls[1]}",
                        f"fulfilled {got:.6f} + slack {slack:.6f} below "
                        f"residual {residual:.6f}",
                    )
                )

    by_donor: dict[str, list[PlanEntry]] = {}
    for e in ok_entries:
        by_donor.setdefault(e.donor_id, []).append(e)

    for donor_id in sorted(by_donor):
        donor = registry.donor(donor_id)
        entries = sorted(by_donor[donor_id], key=lambda e: e.planned_date)
        dates = [e.planned_date for e in entries]
        for i in range(len(dates)):
            for j in range(i + 1, len(dates)):
                if abs((dates[j] - dates[i]).days) < elig_cfg.min_gap_days:
                    violations.append(
                        Violation(
                            "gap_pair",
                            donor_id,
                            f"planned dates {dates[i]} and {dates[j]} closer "
                            f"than {elig_cfg.min_gap_days} days",
                        )
                    )
        for d in dates:
            for h in donor.donation_history:
                if abs((d - h).days) < elig_cfg.min_gap_days:
                    violations.append(
                        Violation(
                            "gap_pair",
                            donor_id,
                            f"planned date {d} within "
                            f"{elig_cfg.min_gap_days} days of donation {h}",
                        )
                    )

        limit = annual_limit(donor)
        ends = sorted(
            registry.session(e.session_id).end_date for e in entries
        )
        for anchor in ends:
            lo = anchor - dt.timedelta(days=YEAR_DAYS)
            invited = sum(1 for d in ends if lo < d <= anchor)
            hist = donations_in_year_before(donor.donation_history, anchor)
            if invited > max(0, limit - hist):
                violations.append(
                    Violation(
                        "annual_limit",
                        donor_id,
                        f"{invited} invited ends in the year up to {anchor} "
                        f"with {hist} historical donations exceeds limit "
                        f"{limit}",
                    )
                )
                break

        if model_cfg.invite_cap_per_year is not None:
            sent = donations_in_year_before(
                donor.invitations_sent, registry.as_of
            )
            remaining = max(0, model_cfg.invite_cap_per_year - sent)
            if len(entries) > remaining:
                violations.append(
                    Violation(
                        "invite_cap",
                        donor_id,
                        f"{len(entries)} invitations exceed remaining budget "
                        f"{remaining}",
                    )
                )

        if plan.y_values is not None and len(entries) >= 2:
            if not is_high_frequency(donor, registry.as_of):
                if plan.y_values.get(donor_id, 0) < 1:
                    violations.append(
                        Violation(
                            "multi_invite_link",
                            donor_id,
                            f"{len(entries)} invitations without the "
                            f"multi-invite indicator set",
                        )
                    )

    return violations


def compute_metrics(
    plan: InvitationPlan,
    targets: Mapping[tuple[PlanningMonth, BloodGroup], float],
    registry: Registry,
) -> PlanMetrics:
    """The six reporting metrics for one plan.

    Fulfillment is the capped coverage ratio over classes with positive
    residual (1.0 when no class needs anything); adverse counts distinct
    invited donors flagged for adverse reactions; averages are plain means.
    Metrics depend only on the multiset of entries, not their order.
    """
    fulfilled = plan.fulfilled_by_class()
    total_required = math.fsum(r for r in targets.values() if r > 0)
    if total_required > 0:
        covered = math.fsum(
            min(fulfilled.get(cls, 0.0), r)
            for cls, r in targets.items()
            if r > 0
        )
        rate = covered / total_required
    else:
        rate = 1.0

    adverse_donors = {e.donor_id for e in plan.entries if e.adverse}
    distances = [e.distance_km for e in plan.entries]
    avg_dist = math.fsum(distances) / len(distances) if distances else 0.0

    non_hf_counts: dict[str, int] = {}
    for e in plan.entries:
        donor = registry.donor(e.donor_id)
        if not is_high_frequency(donor, registry.as_of):
            non_hf_counts[e.donor_id] = non_hf_counts.get(e.donor_id, 0) + 1
    if non_hf_counts:
        avg_invites = sum(non_hf_counts.values()) / len(non_hf_counts)
    else:
        avg_invites = 0.0

    return PlanMetrics(
        fulfillment_rate=rate,
        adverse_invited=len(adverse_donors),
        avg_distance_km=avg_dist,
        avg_invites_per_non_hf=avg_invites,
        runtime_s=plan.runtime_s,
        peak_memory_mb=plan.peak_memory_mb,
    )
