"""Exact solver against exhaustive enumeration on small instances."""

import datetime as dt

import numpy as np
import pytest

from donorplan import (
    BloodGroup,
    DemandTarget,
    EligibilityConfig,
    GeoPoint,
    InvalidInputError,
    ModelConfig,
    PlanningMonth,
    Sex,
    SolveLimits,
    build_feasible_pairs,
    build_model,
    evaluate_objective,
    solve_exact,
)
from .conftest import HOME, mkdonor, mkregistry, mksession
from .oracles import enumerate_bilp

D = dt.date
ECFG = EligibilityConfig()

GROUPS = [BloodGroup.O_POS, BloodGroup.A_POS, BloodGroup.B_NEG]


def random_instance(seed, demand_mode="soft"):
    """A small random planning scene, at most 15 assignment variables."""
    rng = np.random.default_rng(seed)
    n_donors = int(rng.integers(3, 6))
    n_sessions = int(rng.integers(2, 4))
    donors = []
    for i in range(n_donors):
        hist = ()
        if rng.random() < 0.4:
            hist = (D(2019, int(rng.integers(1, 13)), int(rng.integers(1, 28))),)
        donors.append(
            mkdonor(
                f"d{i}",
                sex=Sex.FEMALE if rng.random() < 0.5 else Sex.MALE,
                group=GROUPS[int(rng.integers(0, len(GROUPS)))],
                prob=float(rng.uniform(0.3, 1.0)),
                adverse=bool(rng.random() < 0.2),
                history=hist,
                home=GeoPoint(
                    HOME.lat + float(rng.uniform(-0.02, 0.02)),
                    HOME.lon + float(rng.uniform(-0.02, 0.02)),
                ),
            )
        )
    sessions = []
    day = D(2020, 2, 1)
    for j in range(n_sessions):
        day = day + dt.timedelta(days=int(rng.integers(10, 80)))
        sessions.append(
            mksession(
                f"s{j}",
                start=day,
                days=int(rng.integers(0, 4)),
                capacity=float(rng.integers(1, 4)),
            )
        )
    reg = mkregistry(donors, sessions)
    pairs = build_feasible_pairs(reg, ECFG)
    targets = []
    for (month, group), plist in pairs.items():
        if rng.random() < 0.7:
            residual = float(rng.uniform(0.2, 1.5))
            targets.append(DemandTarget(month, group, residual, residual))
    cfg = ModelConfig(demand_mode=demand_mode)
    return reg, build_model(pairs, targets, reg, cfg)


class TestAgainstEnumeration:
    @pytest.mark.parametrize("seed", range(25))
    def test_soft_mode_optimum_matches(self, seed):
        _, model = random_instance(seed)
        want_obj, _ = enumerate_bilp(model)
        assert want_obj is not None  # slack keeps soft mode feasible
        res = solve_exact(model)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(want_obj, abs=1e-6)
        assert not model.violated_constraints(res.assignment)

    @pytest.mark.parametrize("seed", range(25, 40))
    def test_hard_mode_matches_including_infeasibility(self, seed):
        _, model = random_instance(seed, demand_mode="hard")
        want_obj, _ = enumerate_bilp(model)
        res = solve_exact(model)
        if want_obj is None:
            assert res.status == "infeasible"
            assert res.objective is None
        else:
            assert res.status == "optimal"
            assert res.objective == pytest.approx(want_obj, abs=1e-6)


class TestBoundsAndStatus:
    def test_bound_never_exceeds_incumbent(self):
        for seed in range(10):
            _, model = random_instance(seed)
            res = solve_exact(model)
            assert res.bound <= res.objective + 1e-9
            assert res.gap <= 1e-6

    def test_empty_model_is_trivially_optimal(self):
        reg = mkregistry([mkdonor("d1")], [])
        model = build_model({}, [], reg, ModelConfig())
        res = solve_exact(model)
        assert res.status == "optimal"
        assert res.objective == 0.0
        assert res.assignment == {}

    def test_node_limit_reports_honest_bound(self):
        _, model = random_instance(2)
        res = solve_exact(model, SolveLimits(node_limit=1))
        assert res.status in ("bound_limit", "optimal")
        if res.status == "bound_limit":
            want_obj, _ = enumerate_bilp(model)
            assert res.bound <= want_obj + 1e-9

    def test_time_limit_status(self):
        _, model = random_instance(5)
        res = solve_exact(model, SolveLimits(time_limit_s=0.0))
        assert res.status in ("time_limit", "optimal")


class TestWarmStart:
    def test_warm_start_is_kept_when_already_optimal(self):
        _, model = random_instance(1)
        cold = solve_exact(model)
        warm = solve_exact(model, warm_start=cold.assignment)
        assert warm.status == "optimal"
        assert warm.objective == pytest.approx(cold.objective, abs=1e-9)

    def test_infeasible_warm_start_rejected(self):
        _, model = random_instance(1)
        bad = {v: 1.0 for v in model.variables}
        if not model.violated_constraints(bad):
            pytest.skip("degenerate instance accepts the all-ones point")
        with pytest.raises(InvalidInputError):
            solve_exact(model, warm_start=bad)

    def test_warm_start_upper_bounds_search(self):
        _, model = random_instance(7)
        base = solve_exact(model)
        res = solve_exact(
            model,
            SolveLimits(node_limit=1),
            warm_start=base.assignment,
        )
        # with the optimum in hand the solver may stop early, never worse
        assert res.objective == pytest.approx(base.objective, abs=1e-9)


class TestDeterminism:
    def test_identical_runs(self):
        _, m1 = random_instance(9)
        _, m2 = random_instance(9)
        r1, r2 = solve_exact(m1), solve_exact(m2)
        assert r1.objective == r2.objective
        a1 = {v.name: x for v, x in r1.assignment.items()}
        a2 = {v.name: x for v, x in r2.assignment.items()}
        assert a1 == a2
