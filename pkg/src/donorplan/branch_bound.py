"""Exact solver: branch and bound over a continuous relaxation.

Bounding solves the LP relaxation of the model (HiGHS via
scipy.optimize.linprog); branching fixes the most fractional binary (ties
broken by smallest variable name), exploring the round-up child first.
Node order is depth-first with a best-bound restart every 1,000 nodes.
The search is sequential and rule-driven, so identical models with
identical limits return identical results.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .bilp import BilpModel, VarKind, VariableRef, evaluate_objective
from .errors import DonorPlanError, InvalidInputError

INT_TOL = 1e-6
RESTART_EVERY = 1000


@dataclass(frozen=True)
class SolveLimits:
    time_limit_s: Optional[float] = None
    node_limit: Optional[int] = None
    gap_tolerance: float = 1e-6


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | bound_limit | time_limit
    objective: Optional[float]
    bound: float
    assignment: Optional[dict[VariableRef, float]]
    nodes_explored: int
    wall_time_s: float

    @property
    def gap(self) -> float:
        if self.objective is None:
            return float("inf")
        return self.objective - self.bound


class _Matrices:
    """The model as LP arrays: min c x s.t. A x <= b, lb <= x <= ub."""

    def __init__(self, model: BilpModel) -> None:
        n = len(model.variables)
        self.n = n
        self.c = np.zeros(n)
        for var, coef in model.objective.items():
            self.c[model.index[var]] = coef
        rows, cols, vals, rhs = [], [], [], []
        for r, con in enumerate(model.constraints):
            sign = 1.0 if con.sense == "<=" else -1.0
            for var, coef in con.terms:
                rows.append(r)
                cols.append(model.index[var])
                vals.append(sign * coef)
            rhs.append(sign * con.rhs)
        self.A = sparse.csr_matrix(
            (vals, (rows, cols)), shape=(len(model.constraints), n)
        )
        self.b = np.array(rhs)
        self.lb = np.zeros(n)
        self.ub = np.array(
            [
                1.0 if v.kind is not VarKind.SLACK else np.inf
                for v in model.variables
            ]
        )
        self.binary_idx = [
            i for i, v in enumerate(model.variables) if v.kind is not VarKind.SLACK
        ]
        self.assign_idx = [
            i for i, v in enumerate(model.variables) if v.kind is VarKind.ASSIGN
        ]


def _solve_lp(mat: _Matrices, lb: np.ndarray, ub: np.ndarray):
    """LP relaxation under node bounds; returns (objective, x) or None."""
    res = linprog(
        mat.c,
        A_ub=mat.A,
        b_ub=mat.b,
        bounds=np.column_stack([lb, ub]),
        method="highs",
    )
    if res.status == 2:  # infeasible
        return None
    if res.status != 0:
        raise DonorPlanError(f"LP relaxation failed with status {res.status}")
    return float(res.fun), res.x


def _branch_variable(
    model: BilpModel, mat: _Matrices, x: np.ndarray
) -> Optional[int]:
    """Most fractional binary; assignment variables preferred, ties by name."""
    best = None
    for pool in (mat.assign_idx, mat.binary_idx):
        for i in pool:
            frac = abs(x[i] - round(x[i]))
            if frac <= INT_TOL:
                continue
            key = (-frac, model.variables[i].name)
            if best is None or key < best[0]:
                best = (key, i)
        if best is not None:
            return best[1]
    return None


def _complete_assignment(
    model: BilpModel, mat: _Matrices, x: np.ndarray
) -> dict[VariableRef, float]:
    """Round binaries and recompute minimal slacks for the fixed binaries."""
    out: dict[VariableRef, float] = {}
    for i, var in enumerate(model.variables):
        if var.kind is VarKind.SLACK:
            out[var] = 0.0
        else:
            out[var] = float(round(x[i]))
    for con in model.constraints:
        if con.family != "demand_soft":
            continue
        slack_ref = None
        covered = 0.0
        for var, coef in con.terms:
            if var.kind is VarKind.SLACK:
                slack_ref = var
            else:
                covered += coef * out[var]
        if slack_ref is not None:
            out[slack_ref] = max(0.0, con.rhs - covered)
    return out


def solve_exact(
    model: BilpModel,
    limits: Optional[SolveLimits] = None,
    warm_start: Optional[Mapping[VariableRef, float]] = None,
) -> SolveResult:
    """Solve the binary model to proven optimality within the gap tolerance.

    An optional warm start (any feasible assignment, e.g. the greedy plan)
    becomes the initial incumbent, so the returned incumbent is never worse
    than it. Statuses: optimal (gap closed), infeasible (no feasible
    assignment exists), bound_limit (node limit hit), time_limit.
    """
    limits = limits or SolveLimits()
    t0 = time.perf_counter()

    if not model.variables:
        empty_ok = not any(
            (c.sense == ">=" and c.rhs > 0) or (c.sense == "<=" and c.rhs < 0)
            for c in model.constraints
        )
        status = "optimal" if empty_ok else "infeasible"
        return SolveResult(
            status=status,
            objective=0.0 if empty_ok else None,
            bound=0.0 if empty_ok else float("inf"),
            assignment={} if empty_ok else None,
            nodes_explored=0,
            wall_time_s=time.perf_counter() - t0,
        )

    mat = _Matrices(model)
    best_obj = float("inf")
    best_assignment: Optional[dict[VariableRef, float]] = None
    if warm_start is not None:
        candidate = dict(warm_start)
        for var in model.variables:
            candidate.setdefault(var, 0.0)
        bad = model.violated_constraints(candidate, tol=1e-6)
        if bad:
            raise InvalidInputError(
                f"warm start violates {len(bad)} constraints, first {bad[0]}"
            )
        best_obj = evaluate_objective(model, candidate)
        best_assignment = candidate

    # Open nodes: (parent LP bound, lb array, ub array).
    open_nodes: list[tuple[float, np.ndarray, np.ndarray]] = [
        (-float("inf"), mat.lb.copy(), mat.ub.copy())
    ]
    closed_bounds: list[float] = []
    nodes = 0
    hit_limit: Optional[str] = None
    gap_tol = limits.gap_tolerance

    while open_nodes:
        if limits.time_limit_s is not None and (
            time.perf_counter() - t0 > limits.time_limit_s
        ):
            hit_limit = "time_limit"
            break
        if limits.node_limit is not None and nodes >= limits.node_limit:
            hit_limit = "bound_limit"
            break
        nodes += 1
        if nodes % RESTART_EVERY == 0:
            pick = min(range(len(open_nodes)), key=lambda i: open_nodes[i][0])
        else:
            pick = len(open_nodes) - 1
        node_bound, lb, ub = open_nodes.pop(pick)
        if node_bound >= best_obj - gap_tol:
            closed_bounds.append(node_bound)
            continue
        lp = _solve_lp(mat, lb, ub)
        if lp is None:
            closed_bounds.append(float("inf"))
            continue
        lp_obj, x = lp
        if lp_obj >= best_obj - gap_tol:
            closed_bounds.append(lp_obj)
            continue
        branch_i = _branch_variable(model, mat, x)
        if branch_i is None:
            candidate = _complete_assignment(model, mat, x)
            if model.violated_constraints(candidate, tol=1e-6):
                # Rounding broke feasibility; force branching on the least
                # settled unfixed binary to split the node further.
                unfixed = [i for i in mat.binary_idx if lb[i] < ub[i]]
                if not unfixed:
                    closed_bounds.append(lp_obj)
                    continue
                branch_i = min(
                    unfixed,
                    key=lambda i: (
                        -abs(x[i] - round(x[i])),
                        model.variables[i].name,
                    ),
                )
            else:
                cand_obj = evaluate_objective(model, candidate)
                if cand_obj < best_obj:
                    best_obj = cand_obj
                    best_assignment = candidate
                closed_bounds.append(lp_obj)
                continue
        lb0, ub0 = lb.copy(), ub.copy()
        ub0[branch_i] = 0.0
        lb1, ub1 = lb, ub
        lb1[branch_i] = 1.0
        # Round-up child explored first under depth-first order.
        open_nodes.append((lp_obj, lb0, ub0))
        open_nodes.append((lp_obj, lb1, ub1))

    wall = time.perf_counter() - t0
    open_bounds = [n[0] for n in open_nodes]
    if hit_limit is None:
        if best_assignment is None:
            return SolveResult(
                status="infeasible",
                objective=None,
                bound=float("inf"),
                assignment=None,
                nodes_explored=nodes,
                wall_time_s=wall,
            )
        bound = min(closed_bounds) if closed_bounds else best_obj
        return SolveResult(
            status="optimal",
            objective=best_obj,
            bound=min(bound, best_obj),
            assignment=best_assignment,
            nodes_explored=nodes,
            wall_time_s=wall,
        )
    bound = min(
        closed_bounds + open_bounds, default=-float("inf")
    )
    return SolveResult(
        status=hit_limit,
        objective=None if best_assignment is None else best_obj,
        bound=bound,
        assignment=best_assignment,
        nodes_explored=nodes,
        wall_time_s=wall,
    )
