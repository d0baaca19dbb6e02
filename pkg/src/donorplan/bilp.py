"""Binary integer model for invitation planning, plus MPS serialization.

Variables: one binary x per feasible donor-session pair, one binary y per
non-high-frequency donor with two or more candidate sessions (multi-invite
indicator), and in soft mode one continuous slack s per unmet demand class.
The objective charges weighted travel distance and adverse-reaction risk per
invitation, a flat penalty per multi-invited non-HF donor, and a dominant
penalty per unit of unmet demand when demand is soft.

Constraint families, tagged for the validator and the tests:
  capacity          sum of attendance probabilities per session <= capacity
  demand_hard/soft  probability mass per (month, group) covers the residual
  multi_invite_link sum_j x_ij - 1 <= (n_i - 1) y_i
  gap_pair          close session pairs of one donor are mutually exclusive
  annual_limit      rolling 365-day windows anchored on session end dates
  invite_cap        invitations per rolling year, remaining budget
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .demand import DemandTarget
from .eligibility import FeasiblePair, MIN_GAP_DAYS
from .errors import InvalidInputError, ModelConstructionError
from .model import (
    BloodGroup,
    PlanningMonth,
    Registry,
    YEAR_DAYS,
    annual_limit,
    donations_in_year_before,
    is_high_frequency,
)

import datetime as dt


class VarKind(Enum):
    ASSIGN = "x"
    MULTI_INVITE = "y"
    SLACK = "s"


@dataclass(frozen=True)
class VariableRef:
    kind: VarKind
    donor_id: Optional[str] = None
    session_id: Optional[str] = None
    month: Optional[PlanningMonth] = None
    blood_group: Optional[BloodGroup] = None

    @property
    def name(self) -> str:
        if self.kind is VarKind.ASSIGN:
            return f"x_{self.donor_id}_{self.session_id}"
        if self.kind is VarKind.MULTI_INVITE:
            return f"y_{self.donor_id}"
        return f"s_{self.month.key()}_{self.blood_group.value}"


def assign_var(donor_id: str, session_id: str) -> VariableRef:
    return VariableRef(VarKind.ASSIGN, donor_id=donor_id, session_id=session_id)


def invite_var(donor_id: str) -> VariableRef:
    return VariableRef(VarKind.MULTI_INVITE, donor_id=donor_id)


def slack_var(month: PlanningMonth, group: BloodGroup) -> VariableRef:
    return VariableRef(VarKind.SLACK, month=month, blood_group=group)


@dataclass(frozen=True)
class Constraint:
    name: str
    family: str
    terms: tuple[tuple[VariableRef, float], ...]
    sense: str  # "<=" or ">="
    rhs: float

    def __post_init__(self) -> None:
        if self.sense not in ("<=", ">="):
            raise InvalidInputError(f"bad constraint sense {self.sense!r}")


@dataclass(frozen=True)
class ModelConfig:
    w_dist: float = 1.0
    w_inv: float = 1.0
    w_adv: float = 10.0
    w_dem: float = 1e4
    demand_mode: str = "soft"  # "hard" or "soft"
    invite_cap_per_year: Optional[int] = 5
    min_gap_days: int = MIN_GAP_DAYS
    prune_annual_rows: bool = True

    def __post_init__(self) -> None:
        if self.demand_mode not in ("hard", "soft"):
            raise InvalidInputError(f"bad demand mode {self.demand_mode!r}")
        for name in ("w_dist", "w_inv", "w_adv", "w_dem"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be nonnegative")
        if self.invite_cap_per_year is not None and self.invite_cap_per_year < 0:
            raise InvalidInputError("invite cap must be nonnegative")


@dataclass
class BilpModel:
    """An assembled model: variables in order, objective, tagged rows."""

    variables: tuple[VariableRef, ...]
    objective: dict[VariableRef, float]
    constraints: tuple[Constraint, ...]
    pair_for: dict[VariableRef, FeasiblePair]
    targets: tuple[DemandTarget, ...]
    config: ModelConfig

    def __post_init__(self) -> None:
        self.index = {v: i for i, v in enumerate(self.variables)}
        if len(self.index) != len(self.variables):
            raise ModelConstructionError("duplicate variables in model")

    @property
    def binaries(self) -> list[VariableRef]:
        return [v for v in self.variables if v.kind is not VarKind.SLACK]

    @property
    def n_binary(self) -> int:
        return sum(1 for v in self.variables if v.kind is not VarKind.SLACK)

    def violated_constraints(
        self, assignment: Mapping[VariableRef, float], tol: float = 1e-6
    ) -> list[str]:
        """Names of constraints an assignment violates beyond tol."""
        out = []
        for con in self.constraints:
            lhs = sum(coef * assignment.get(var, 0.0) for var, coef in con.terms)
            if con.sense == "<=" and lhs > con.rhs + tol:
                out.append(con.name)
            elif con.sense == ">=" and lhs < con.rhs - tol:
                out.append(con.name)
        return out


def evaluate_objective(
    model: BilpModel, assignment: Mapping[VariableRef, float]
) -> float:
    """Objective value of an assignment; unknown model variables error."""
    for var in model.objective:
        if var not in model.index:
            raise InvalidInputError(f"objective variable {var.name} not in model")
    missing = [v.name for v in model.variables if v not in assignment]
    if missing:
        raise InvalidInputError(
            f"assignment missing {len(missing)} variables, first {missing[0]}"
        )
    return sum(coef * assignment[var] for var, coef in model.objective.items())


def build_model(
    pairs: Mapping[tuple[PlanningMonth, BloodGroup], Sequence[FeasiblePair]],
    targets: Iterable[DemandTarget],
    registry: Registry,
    cfg: ModelConfig,
) -> BilpModel:
    """Assemble the invitation model from feasible pairs and residual demand.

    Rows are emitted in a fixed order (capacity, demand, linking, gap,
    annual, invite cap), each family internally sorted, so identical inputs
    produce identical models. Hard mode emits a demand row even for a class
    with no feasible pairs (the model is then infeasible, which the radius
    sweep relies on). Annual rows whose window and rhs are dominated by
    another row are pruned unless cfg.prune_annual_rows is False; an rhs is
    clamped at zero when history alone already saturates the window.
    """
    target_list = sorted(
        targets, key=lambda t: (t.month, t.blood_group.order_index)
    )
    flat_pairs: list[FeasiblePair] = []
    for key in sorted(pairs, key=lambda k: (k[0], k[1].order_index)):
        for p in pairs[key]:
            if (p.month, p.blood_group) != key:
                raise ModelConstructionError(
                    f"pair {p.donor_id}/{p.session_id} filed under wrong class"
                )
            flat_pairs.append(p)

    if cfg.demand_mode == "soft" and flat_pairs:
        worst = max(
            cfg.w_dist * p.distance_km + (cfg.w_adv if p.adverse else 0.0)
            for p in flat_pairs
        )
        if cfg.w_dem <= worst + cfg.w_inv:
            raise ModelConstructionError(
                f"w_dem={cfg.w_dem} does not dominate the largest per-pair "
                f"objective contribution {worst + cfg.w_inv:.3f}"
            )

    x_of: dict[VariableRef, FeasiblePair] = {}
    donor_pairs: dict[str, list[FeasiblePair]] = {}
    session_pairs: dict[str, list[FeasiblePair]] = {}
    class_pairs: dict[tuple[PlanningMonth, BloodGroup], list[FeasiblePair]] = {}
    variables: list[VariableRef] = []
    objective: dict[VariableRef, float] = {}
    for p in flat_pairs:
        var = assign_var(p.donor_id, p.session_id)
        if var in x_of:
            raise ModelConstructionError(f"duplicate pair {var.name}")
        x_of[var] = p
        variables.append(var)
        objective[var] = cfg.w_dist * p.distance_km + (
            cfg.w_adv if p.adverse else 0.0
        )
        donor_pairs.setdefault(p.donor_id, []).append(p)
        session_pairs.setdefault(p.session_id, []).append(p)
        class_pairs.setdefault((p.month, p.blood_group), []).append(p)

    y_vars: dict[str, VariableRef] = {}
    for donor_id in sorted(donor_pairs):
        donor = registry.donor(donor_id)
        if len(donor_pairs[donor_id]) >= 2 and not is_high_frequency(
            donor, registry.as_of
        ):
            var = invite_var(donor_id)
            y_vars[donor_id] = var
            variables.append(var)
            objective[var] = cfg.w_inv

    constraints: list[Constraint] = []

    for session_id in sorted(session_pairs):
        session = registry.session(session_id)
        terms = tuple(
            (assign_var(p.donor_id, p.session_id), p.probability)
            for p in session_pairs[session_id]
        )
        constraints.append(
            Constraint(
                name=f"capacity_{session_id}",
                family="capacity",
                terms=terms,
                sense="<=",
                rhs=session.capacity,
            )
        )

    slack_vars: list[VariableRef] = []
    for t in target_list:
        if t.residual <= 0.0:
            continue
        cls = class_pairs.get((t.month, t.blood_group), [])
        terms = [
            (assign_var(p.donor_id, p.session_id), p.probability) for p in cls
        ]
        name = f"demand_{t.month.key()}_{t.blood_group.value}"
        if cfg.demand_mode == "soft":
            svar = slack_var(t.month, t.blood_group)
            slack_vars.append(svar)
            objective[svar] = cfg.w_dem
            terms.append((svar, 1.0))
            family = "demand_soft"
        else:
            family = "demand_hard"
        constraints.append(
            Constraint(
                name=name,
                family=family,
                terms=tuple(terms),
                sense=">=",
                rhs=t.residual,
            )
        )
    variables.extend(slack_vars)

    for donor_id in sorted(y_vars):
        plist = donor_pairs[donor_id]
        n = len(plist)
        terms = [
            (assign_var(p.donor_id, p.session_id), 1.0)
            for p in sorted(plist, key=lambda p: p.session_id)
        ]
        terms.append((y_vars[donor_id], -(n - 1.0)))
        constraints.append(
            Constraint(
                name=f"link_{donor_id}",
                family="multi_invite_link",
                terms=tuple(terms),
                sense="<=",
                rhs=1.0,
            )
        )

    for donor_id in sorted(donor_pairs):
        sessions = sorted(
            {p.session_id for p in donor_pairs[donor_id]},
        )
        windows = [registry.session(s) for s in sessions]
        ordered = sorted(windows, key=lambda s: (s.start_date, s.id))
        for i in range(len(ordered)):
            for j in range(i + 1, len(ordered)):
                earlier, later = ordered[i], ordered[j]
                if (later.start_date - earlier.end_date).days < cfg.min_gap_days:
                    constraints.append(
                        Constraint(
                            name=f"gap_{donor_id}_{earlier.id}_{later.id}",
                            family="gap_pair",
                            terms=(
                                (assign_var(donor_id, earlier.id), 1.0),
                                (assign_var(donor_id, later.id), 1.0),
                            ),
                            sense="<=",
                            rhs=1.0,
                        )
                    )

    for donor_id in sorted(donor_pairs):
        donor = registry.donor(donor_id)
        limit = annual_limit(donor)
        windows = sorted(
            {
                (registry.session(p.session_id).end_date, p.session_id)
                for p in donor_pairs[donor_id]
            }
        )
        rows = []
        for anchor_end, anchor_id in windows:
            lo = anchor_end - dt.timedelta(days=YEAR_DAYS)
            members = tuple(
                sid
                for end, sid in windows
                if lo < end <= anchor_end
            )
            hist = donations_in_year_before(donor.donation_history, anchor_end)
            rhs = max(0.0, float(limit - hist))
            rows.append((anchor_id, frozenset(members), members, rhs))
        if cfg.prune_annual_rows:
            kept = []
            for a in rows:
                dominated = any(
                    b is not a and a[1] <= b[1] and b[3] <= a[3]
                    and not (a[1] == b[1] and b[3] == a[3] and b[0] > a[0])
                    for b in rows
                )
                if not dominated:
                    kept.append(a)
            rows = kept
        for anchor_id, _, members, rhs in rows:
            constraints.append(
                Constraint(
                    name=f"annual_{donor_id}_{anchor_id}",
                    family="annual_limit",
                    terms=tuple(
                        (assign_var(donor_id, sid), 1.0) for sid in members
                    ),
                    sense="<=",
                    rhs=rhs,
                )
            )

    if cfg.invite_cap_per_year is not None:
        for donor_id in sorted(donor_pairs):
            donor = registry.donor(donor_id)
            sent = donations_in_year_before(
                donor.invitations_sent, registry.as_of
            )
            remaining = max(0.0, float(cfg.invite_cap_per_year - sent))
            terms = tuple(
                (assign_var(p.donor_id, p.session_id), 1.0)
                for p in sorted(
                    donor_pairs[donor_id], key=lambda p: p.session_id
                )
            )
            constraints.append(
                Constraint(
                    name=f"invcap_{donor_id}",
                    family="invite_cap",
                    terms=terms,
                    sense="<=",
                    rhs=remaining,
                )
            )

    return BilpModel(
        variables=tuple(variables),
        objective=objective,
        constraints=tuple(constraints),
        pair_for=x_of,
        targets=tuple(target_list),
        config=cfg,
    )


# --- MPS serialization ---------------------------------------------------

OBJ_ROW = "COST"


def export_mps(model: BilpModel, name: str = "DONORPLAN") -> str:
    """Serialize the model as deterministic fixed-layout MPS text.

    Binary variables sit between INTORG/INTEND markers with explicit [0, 1]
    bounds; slack variables use the default continuous [0, inf) bounds.
    Identical models produce byte-identical text.
    """
    w = max(
        [len(v.name) for v in model.variables]
        + [len(c.name) for c in model.constraints]
        + [len(OBJ_ROW)]
    )

    def pad(s: str) -> str:
        return s.ljust(w + 2)

    lines = [f"NAME          {name}", "ROWS", f" N  {OBJ_ROW}"]
    for con in model.constraints:
        tag = "L" if con.sense == "<=" else "G"
        lines.append(f" {tag}  {con.name}")

    by_var: dict[VariableRef, list[tuple[str, float]]] = {
        v: [] for v in model.variables
    }
    for con in model.constraints:
        for var, coef in con.terms:
            by_var[var].append((con.name, coef))

    lines.append("COLUMNS")
    in_int = False
    marker = 0
    for var in model.variables:
        want_int = var.kind is not VarKind.SLACK
        if want_int and not in_int:
            lines.append(
                f"    MARKER{marker:04d}  'MARKER'  'INTORG'"
            )
            marker += 1
            in_int = True
        elif not want_int and in_int:
            lines.append(
                f"    MARKER{marker:04d}  'MARKER'  'INTEND'"
            )
            marker += 1
            in_int = False
        obj = model.objective.get(var, 0.0)
        if obj != 0.0:
            lines.append(f"    {pad(var.name)}{pad(OBJ_ROW)}{obj!r}")
        for row_name, coef in by_var[var]:
            lines.append(f"    {pad(var.name)}{pad(row_name)}{coef!r}")
    if in_int:
        lines.append(f"    MARKER{marker:04d}  'MARKER'  'INTEND'")

    lines.append("RHS")
    for con in model.constraints:
        if con.rhs != 0.0:
            lines.append(f"    {pad('RHS')}{pad(con.name)}{con.rhs!r}")

    lines.append("BOUNDS")
    for var in model.variables:
        if var.kind is not VarKind.SLACK:
            lines.append(f" UP {pad('BND')}{pad(var.name)}{1.0!r}")

    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


@dataclass
class ParsedMps:
    """Whitespace-parsed MPS content, for round-trip verification."""

    name: str
    objective: dict[str, float]
    rows: dict[str, str]          # row name -> sense tag (L/G/E)
    coefficients: dict[str, dict[str, float]]  # row -> {column: coef}
    rhs: dict[str, float]
    integers: set[str]
    upper_bounds: dict[str, float]
    row_order: list[str] = field(default_factory=list)
    column_order: list[str] = field(default_factory=list)


def parse_mps(text: str) -> ParsedMps:
    """Parse the subset of MPS this package emits (whitespace delimited)."""
    parsed = ParsedMps(
        name="",
        objective={},
        rows={},
        coefficients={},
        rhs={},
        integers=set(),
        upper_bounds={},
    )
    section = None
    obj_row = None
    in_int = False
    seen_cols: set[str] = set()
    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw.startswith(" "):
            head = raw.split()
            section = head[0]
            if section == "NAME" and len(head) > 1:
                parsed.name = head[1]
            if section == "ENDATA":
                break
            continue
        fields = raw.split()
        if section == "ROWS":
            tag, row = fields[0], fields[1]
            if tag == "N":
                obj_row = row
            else:
                parsed.rows[row] = tag
                parsed.row_order.append(row)
                parsed.coefficients[row] = {}
        elif section == "COLUMNS":
            if len(fields) >= 3 and fields[1] == "'MARKER'":
                in_int = fields[2] == "'INTORG'"
                continue
            col, row, value = fields[0], fields[1], float(fields[2])
            if col not in seen_cols:
                seen_cols.add(col)
                parsed.column_order.append(col)
                if in_int:
                    parsed.integers.add(col)
            if row == obj_row:
                parsed.objective[col] = value
            else:
                parsed.coefficients[row][col] = value
        elif section == "RHS":
            parsed.rhs[fields[1]] = float(fields[2])
        elif section == "BOUNDS":
            kind, col, value = fields[0], fields[2], float(fields[3])
            if kind == "UP":
                parsed.upper_bounds[col] = value
    return parsed
