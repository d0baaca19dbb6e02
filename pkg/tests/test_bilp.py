"""Invitation model assembly checked row by row against brute-force rebuilds."""

import datetime as dt
import itertools

import pytest

from donorplan import (
    BloodGroup,
    DemandTarget,
    EligibilityConfig,
    ModelConfig,
    ModelConstructionError,
    PlanningMonth,
    Sex,
    assign_var,
    build_feasible_pairs,
    build_model,
    evaluate_objective,
    export_mps,
    invite_var,
    parse_mps,
    slack_var,
)
from .conftest import mkdonor, mkregistry, mksession
from .oracles import annual_windows_reference, gap_pairs_reference

D = dt.date
ECFG = EligibilityConfig()
MCFG = ModelConfig()


def rich_registry():
    donors = [
        mkdonor("d1", prob=0.8),
        mkdonor("d2", prob=0.5, adverse=True),
        mkdonor(
            "d3",
            sex=Sex.FEMALE,
            group=BloodGroup.A_NEG,
            prob=0.9,
            history=(D(2019, 9, 1), D(2019, 12, 15)),
        ),
        mkdonor("d4", prob=0.6, invitations=tuple(
            D(2019, 3, 1 + k) for k in range(5)
        )),
    ]
    sessions = [
        mksession("s1", start=D(2020, 3, 10), capacity=5.0),
        mksession("s2", start=D(2020, 4, 20), capacity=3.0),
        mksession("s3", start=D(2020, 7, 1), capacity=4.0),
    ]
    return mkregistry(donors, sessions)


def rich_model(cfg=MCFG):
    reg = rich_registry()
    pairs = build_feasible_pairs(reg, ECFG)
    targets = [
        DemandTarget(PlanningMonth(2020, 3), BloodGroup.O_POS, 10.0, 2.0),
        DemandTarget(PlanningMonth(2020, 3), BloodGroup.A_NEG, 5.0, 1.0),
        DemandTarget(PlanningMonth(2020, 4), BloodGroup.O_POS, 5.0, 0.0),
        DemandTarget(PlanningMonth(2020, 7), BloodGroup.O_POS, 5.0, 1.0),
    ]
    return reg, pairs, build_model(pairs, targets, reg, cfg)


def rows_of(model, family):
    return [c for c in model.constraints if c.family == family]


def as_tuple(con):
    return (
        con.sense,
        con.rhs,
        frozenset((v.name, coef) for v, coef in con.terms),
    )


class TestVariables:
    def test_names(self):
        assert assign_var("d1", "s2").name == "x_d1_s2"
        assert invite_var("d7").name == "y_d7"
        assert (
            slack_var(PlanningMonth(2020, 3), BloodGroup.O_POS).name
            == "s_202003_O+"
        )

    def test_variable_population(self):
        _, pairs, model = rich_model()
        names = {v.name for v in model.variables}
        n_pairs = sum(len(ps) for ps in pairs.values())
        # every donor reaches every session: 4 donors x 3 sessions
        assert n_pairs == 12
        assert "x_d1_s1" in names and "x_d4_s3" in names
        # d3 is high frequency (two donations in the year, female threshold)
        assert "y_d1" in names and "y_d3" not in names
        # only positive residual classes get slack
        assert "s_202003_O+" in names
        assert "s_202004_O+" not in names

    def test_objective_coefficients(self):
        _, _, model = rich_model()
        by_name = {v.name: c for v, c in model.objective.items()}
        assert by_name["x_d1_s1"] == 0.0  # zero distance, no adverse
        assert by_name["x_d2_s1"] == 10.0  # adverse penalty at default weight
        assert by_name["y_d1"] == 1.0
        assert by_name["s_202003_O+"] == 1e4


class TestCapacityRows:
    def test_one_row_per_session_with_probabilities(self):
        reg, pairs, model = rich_model()
        rows = rows_of(model, "capacity")
        assert [r.name for r in rows] == [
            "capacity_s1",
            "capacity_s2",
            "capacity_s3",
        ]
        want_terms = {
            (f"x_d{k}_s1", p)
            for k, p in [(1, 0.8), (2, 0.5), (3, 0.9), (4, 0.6)]
        }
        assert as_tuple(rows[0]) == ("<=", 5.0, frozenset(want_terms))


class TestDemandRows:
    def test_soft_rows_only_for_positive_residual(self):
        _, _, model = rich_model()
        rows = rows_of(model, "demand_soft")
        assert [r.name for r in rows] == [
            "demand_202003_A-",
            "demand_202003_O+",
            "demand_202007_O+",
        ]
        march_o = next(r for r in rows if r.name == "demand_202003_O+")
        want = {
            ("x_d1_s1", 0.8),
            ("x_d2_s1", 0.5),
            ("x_d4_s1", 0.6),
            ("s_202003_O+", 1.0),
        }
        assert as_tuple(march_o) == (">=", 2.0, frozenset(want))

    def test_hard_mode_has_no_slack(self):
        _, _, model = rich_model(
            ModelConfig(demand_mode="hard")
        )
        rows = rows_of(model, "demand_hard")
        assert len(rows) == 3
        for r in rows:
            assert all(v.name.startswith("x_") for v, _ in r.terms)
        assert not rows_of(model, "demand_soft")

    def test_hard_mode_emits_unservable_class_row(self):
        reg = mkregistry([mkdonor("d1")], [mksession("s1")])
        pairs = build_feasible_pairs(reg, ECFG)
        targets = [
            DemandTarget(PlanningMonth(2020, 3), BloodGroup.AB_NEG, 3.0, 3.0)
        ]
        model = build_model(pairs, targets, reg, ModelConfig(demand_mode="hard"))
        row = rows_of(model, "demand_hard")[0]
        assert row.terms == ()
        assert row.rhs == 3.0  # 0 >= 3: infeasible by construction

    def test_soft_weight_must_dominate(self):
        reg = rich_registry()
        pairs = build_feasible_pairs(reg, ECFG)
        targets = [
            DemandTarget(PlanningMonth(2020, 3), BloodGroup.O_POS, 2.0, 2.0)
        ]
        with pytest.raises(ModelConstructionError):
            build_model(pairs, targets, reg, ModelConfig(w_dem=5.0))


class TestLinkingRows:
    def test_rows_for_non_hf_multi_pair_donors(self):
        _, _, model = rich_model()
        rows = {r.name: r for r in rows_of(model, "multi_invite_link")}
        assert set(rows) == {"link_d1", "link_d2", "link_d4"}
        want = {
            ("x_d1_s1", 1.0),
            ("x_d1_s2", 1.0),
            ("x_d1_s3", 1.0),
            ("y_d1", -2.0),
        }
        assert as_tuple(rows["link_d1"]) == ("<=", 1.0, frozenset(want))

    def test_no_row_for_single_pair_donor(self):
        reg = mkregistry([mkdonor("d1")], [mksession("s1")])
        pairs = build_feasible_pairs(reg, ECFG)
        model = build_model(pairs, [], reg, MCFG)
        assert not rows_of(model, "multi_invite_link")
        assert all(v.kind.name != "MULTI_INVITE" for v in model.variables)


class TestGapRows:
    def test_rows_match_quadratic_scan(self):
        reg, _, model = rich_model()
        want = gap_pairs_reference(reg.sessions, 60)
        assert want == {("s1", "s2")}
        got = {
            tuple(r.name.split("_")[2:4]) for r in rows_of(model, "gap_pair")
        }
        # every donor reaches every session, one row per donor
        assert got == want
        assert len(rows_of(model, "gap_pair")) == 4

    def test_equal_start_windows_get_a_row(self):
        reg = mkregistry(
            [mkdonor("d1")],
            [
                mksession("sa", start=D(2020, 3, 10)),
                mksession("sb", start=D(2020, 3, 10)),
            ],
        )
        pairs = build_feasible_pairs(reg, ECFG)
        model = build_model(pairs, [], reg, MCFG)
        (row,) = rows_of(model, "gap_pair")
        assert row.name == "gap_d1_sa_sb"

    def test_windows_spanning_the_threshold(self):
        # end of the 5-day earlier window to start of the later: 59 vs 60 days
        reg = mkregistry(
            [mkdonor("d1")],
            [
                mksession("sa", start=D(2020, 3, 1), days=5),
                mksession("sb", start=D(2020, 5, 4)),
                mksession("sc", start=D(2020, 5, 5)),
            ],
        )
        pairs = build_feasible_pairs(reg, ECFG)
        model = build_model(pairs, [], reg, MCFG)
        got = {r.name for r in rows_of(model, "gap_pair")}
        want = {
            f"gap_d1_{a}_{b}"
            for a, b in gap_pairs_reference(reg.sessions, 60)
        }
        assert got == want
        assert "gap_d1_sa_sb" in got  # 59 days, forbidden
        assert "gap_d1_sa_sc" not in got  # exactly 60, allowed
        assert "gap_d1_sb_sc" in got  # adjacent days


class TestAnnualRows:
    def test_unpruned_rows_match_brute_force(self):
        reg, _, model_raw = rich_model(
            ModelConfig(prune_annual_rows=False)
        )
        session_ends = [(s.id, s.end_date) for s in reg.sessions]
        d3 = reg.donor("d3")
        want = annual_windows_reference(d3.donation_history, session_ends, 3)
        got = {
            r.name.split("_")[2]: (
                tuple(sorted(v.name.split("_")[2] for v, _ in r.terms)),
                r.rhs,
            )
            for r in rows_of(model_raw, "annual_limit")
            if r.name.startswith("annual_d3_")
        }
        for anchor, (members, rhs) in want.items():
            assert got[anchor] == (tuple(sorted(members)), rhs)

    def test_history_reduces_rhs(self):
        _, _, model = rich_model(ModelConfig(prune_annual_rows=False))
        rows = {
            r.name: r
            for r in rows_of(model, "annual_limit")
            if r.name.startswith("annual_d3_")
        }
        # both 2019 donations fall in every anchor window here: 3 - 2 = 1
        assert rows["annual_d3_s1"].rhs == 1.0
        assert rows["annual_d3_s3"].rhs == 1.0
        # male donor without history keeps the full limit
        rows_d1 = {
            r.name: r
            for r in rows_of(model, "annual_limit")
            if r.name.startswith("annual_d1_")
        }
        assert rows_d1["annual_d1_s3"].rhs == 4.0

    def test_rhs_clamped_at_zero(self):
        hist = tuple(D(2019, 3, 1) + dt.timedelta(days=70 * k) for k in range(4))
        reg = mkregistry(
            [mkdonor("d1", history=hist)],
            [mksession("s1", start=D(2020, 1, 20))],
            as_of=D(2020, 1, 1),
        )
        pairs = build_feasible_pairs(reg, ECFG)
        model = build_model(pairs, [], reg, ModelConfig(prune_annual_rows=False))
        (row,) = rows_of(model, "annual_limit")
        # donor already used the whole allowance: nothing clamps below zero
        assert row.rhs == 0.0

    def test_pruning_preserves_feasible_set(self):
        sessions = [
            mksession(f"s{k}", start=D(2020, 1, 15) + dt.timedelta(days=80 * k))
            for k in range(5)
        ]
        reg = mkregistry(
            [mkdonor("d1", history=(D(2019, 9, 1),))], sessions
        )
        pairs = build_feasible_pairs(reg, ECFG)
        pruned = build_model(pairs, [], reg, ModelConfig())
        full = build_model(pairs, [], reg, ModelConfig(prune_annual_rows=False))
        p_rows = rows_of(pruned, "annual_limit")
        f_rows = rows_of(full, "annual_limit")
        assert len(p_rows) <= len(f_rows)
        xs = [assign_var("d1", s.id) for s in sessions]
        for bits in itertools.product((0.0, 1.0), repeat=len(xs)):
            a = dict(zip(xs, bits))

            def ok(rows):
                return all(
                    sum(c * a[v] for v, c in r.terms) <= r.rhs + 1e-9
                    for r in rows
                )

            assert ok(p_rows) == ok(f_rows)


class TestInviteCapRows:
    def test_rhs_is_remaining_budget(self):
        _, _, model = rich_model()
        rows = {r.name: r for r in rows_of(model, "invite_cap")}
        assert rows["invcap_d1"].rhs == 5.0
        assert rows["invcap_d4"].rhs == 0.0  # five invitations already sent
        assert as_tuple(rows["invcap_d1"])[2] == frozenset(
            {("x_d1_s1", 1.0), ("x_d1_s2", 1.0), ("x_d1_s3", 1.0)}
        )

    def test_cap_can_be_disabled(self):
        reg = rich_registry()
        pairs = build_feasible_pairs(reg, ECFG)
        model = build_model(
            pairs, [], reg, ModelConfig(invite_cap_per_year=None)
        )
        assert not rows_of(model, "invite_cap")

    def test_only_last_years_invitations_count(self):
        reg = mkregistry(
            [mkdonor("d1", invitations=(D(2018, 5, 1), D(2019, 5, 1)))],
            [mksession("s1")],
        )
        pairs = build_feasible_pairs(reg, ECFG)
        model = build_model(pairs, [], reg, MCFG)
        (row,) = rows_of(model, "invite_cap")
        assert row.rhs == 4.0


class TestModelEvaluation:
    def test_evaluate_objective(self):
        _, _, model = rich_model()
        assignment = {v: 0.0 for v in model.variables}
        assignment[assign_var("d2", "s1")] = 1.0
        assignment[slack_var(PlanningMonth(2020, 3), BloodGroup.O_POS)] = 1.5
        got = evaluate_objective(model, assignment)
        assert got == pytest.approx(10.0 + 1.5e4)

    def test_violated_constraints(self):
        _, _, model = rich_model()
        assignment = {v: 0.0 for v in model.variables}
        # overrun s2: d1 + d4 invited with a 3.0 capacity is fine, so force
        # the gap pair instead
        assignment[assign_var("d1", "s1")] = 1.0
        assignment[assign_var("d1", "s2")] = 1.0
        bad = set(model.violated_constraints(assignment))
        assert "gap_d1_s1_s2" in bad
        # demand rows unmet without slack are violations too
        assert "demand_202003_A-" in bad


class TestDeterminism:
    def test_same_inputs_same_bytes(self):
        _, _, m1 = rich_model()
        _, _, m2 = rich_model()
        assert export_mps(m1) == export_mps(m2)


class TestMps:
    def test_round_trip(self):
        _, _, model = rich_model()
        text = export_mps(model)
        parsed = parse_mps(text)
        assert parsed.name == "DONORPLAN"
        assert parsed.row_order == [c.name for c in model.constraints]
        assert parsed.column_order == [v.name for v in model.variables]
        for con in model.constraints:
            assert parsed.rows[con.name] == ("L" if con.sense == "<=" else "G")
            want = {v.name: c for v, c in con.terms}
            assert parsed.coefficients[con.name] == want
            assert parsed.rhs.get(con.name, 0.0) == con.rhs
        want_obj = {
            v.name: c for v, c in model.objective.items() if c != 0.0
        }
        assert parsed.objective == want_obj
        binaries = {v.name for v in model.binaries}
        assert parsed.integers == binaries
        assert set(parsed.upper_bounds) == binaries
        assert all(ub == 1.0 for ub in parsed.upper_bounds.values())

    def test_float_coefficients_survive_exactly(self):
        reg = mkregistry([mkdonor("d1", prob=1 / 3)], [mksession("s1")])
        pairs = build_feasible_pairs(reg, ECFG)
        model = build_model(pairs, [], reg, MCFG)
        parsed = parse_mps(export_mps(model))
        assert parsed.coefficients["capacity_s1"]["x_d1_s1"] == 1 / 3

    def test_hand_written_fixture(self):
        text = """NAME          TINY
ROWS
 N  COST
 L  cap
 G  need
COLUMNS
    MARKER0000  'MARKER'  'INTORG'
    x_a_b  COST  2.5
    x_a_b  cap  1.0
    x_a_b  need  0.75
    MARKER0001  'MARKER'  'INTEND'
    s_x  need  1.0
RHS
    RHS  cap  1.0
    RHS  need  3.0
BOUNDS
 UP BND  x_a_b  1.0
ENDATA
"""
        parsed = parse_mps(text)
        assert parsed.name == "TINY"
        assert parsed.rows == {"cap": "L", "need": "G"}
        assert parsed.objective == {"x_a_b": 2.5}
        assert parsed.coefficients["need"] == {"x_a_b": 0.75, "s_x": 1.0}
        assert parsed.integers == {"x_a_b"}
        assert parsed.rhs == {"cap": 1.0, "need": 3.0}


class TestConfigValidation:
    def test_demand_mode_checked(self):
        with pytest.raises(Exception):
            ModelConfig(demand_mode="fuzzy")
