"""Static feasibility rules and pair generation vs a brute-force rescan."""

import datetime as dt

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from donorplan import (
    BloodGroup,
    EligibilityConfig,
    GeoPoint,
    MissingAnchorError,
    Sex,
    build_feasible_pairs,
    static_checks,
)
from .conftest import HOME, mkdonor, mkinterval, mkregistry, mksession
from .oracles import haversine_reference_km

D = dt.date
CFG = EligibilityConfig()


def far_point(km_east):
    # 1 degree of longitude at this latitude is about 83.2 km
    return GeoPoint(HOME.lat, HOME.lon + km_east / 83.2)


class TestStaticChecks:
    def test_age_floor_is_birthday_exact(self):
        s = mksession(start=D(2020, 3, 10))
        assert static_checks(mkdonor(birth=D(2002, 3, 10)), s, CFG)
        assert not static_checks(mkdonor(birth=D(2002, 3, 11)), s, CFG)

    def test_age_ceiling_inclusive(self):
        s = mksession(start=D(2020, 3, 10))
        at_cap = mkdonor(birth=D(1955, 3, 10), max_age=65)
        past_cap = mkdonor(birth=D(1954, 3, 10), max_age=65)
        assert static_checks(at_cap, s, CFG)
        assert not static_checks(past_cap, s, CFG)

    def test_suspension_checked_at_window_start(self):
        s = mksession(start=D(2020, 3, 10), days=4)
        covering = mkdonor(
            suspensions=(mkinterval(D(2020, 3, 1), D(2020, 3, 10)),)
        )
        inside_only = mkdonor(
            suspensions=(mkinterval(D(2020, 3, 12), D(2020, 3, 14)),)
        )
        assert not static_checks(covering, s, CFG)
        # suspension that misses the start date does not block the pair
        assert static_checks(inside_only, s, CFG)

    def test_donation_gap_against_earliest_admissible(self):
        s = mksession(start=D(2020, 3, 10))
        at_gap = mkdonor(history=(D(2020, 1, 10),))  # exactly 60 days
        inside_gap = mkdonor(history=(D(2020, 1, 11),))  # 59 days
        assert static_checks(at_gap, s, CFG)
        assert not static_checks(inside_gap, s, CFG)

    def test_gap_uses_first_admissible_not_window_start(self):
        s = mksession(
            start=D(2020, 3, 10),
            days=5,
            admissible=(D(2020, 3, 14), D(2020, 3, 15)),
        )
        d = mkdonor(history=(D(2020, 1, 14),))
        # 60 days before Mar 14, but only 55 before the window start
        assert static_checks(d, s, CFG)

    def test_radius_boundary_inclusive(self):
        near = mksession(loc=far_point(2.99))
        edge_out = mksession(loc=far_point(3.2))
        d = mkdonor()
        assert static_checks(d, near, CFG)
        assert not static_checks(d, edge_out, CFG)

    def test_brigade_anchor_can_rescue_distance(self):
        s = mksession(loc=far_point(50.0))
        d = mkdonor(home=HOME, brigade=far_point(50.0))
        assert static_checks(d, s, CFG)

    def test_no_anchor_raises(self):
        d = mkdonor(home=None, brigade=None)
        with pytest.raises(MissingAnchorError):
            static_checks(d, mksession(), CFG)


class TestBuildPairs:
    def test_grouped_by_month_and_blood_group(self):
        donors = [
            mkdonor("d1", group=BloodGroup.O_POS),
            mkdonor("d2", group=BloodGroup.A_NEG),
        ]
        sessions = [
            mksession("s1", start=D(2020, 3, 10)),
            mksession("s2", start=D(2020, 4, 10)),
        ]
        pairs = build_feasible_pairs(mkregistry(donors, sessions), CFG)
        months = sorted({m for m, _ in pairs})
        assert [m.month for m in months] == [3, 4]
        for (month, group), plist in pairs.items():
            for p in plist:
                assert p.month == month
                assert p.blood_group == group

    def test_group_keys_sorted_and_pairs_ordered(self):
        donors = [
            mkdonor("d9", group=BloodGroup.O_NEG),
            mkdonor("d1", group=BloodGroup.O_NEG),
        ]
        sessions = [
            mksession("s2", start=D(2020, 3, 20)),
            mksession("s1", start=D(2020, 3, 5)),
        ]
        pairs = build_feasible_pairs(mkregistry(donors, sessions), CFG)
        key = next(iter(pairs))
        got = [(p.session_id, p.donor_id) for p in pairs[key]]
        assert got == sorted(got)

    def test_anchorless_donor_skipped_not_fatal(self):
        donors = [mkdonor("d1"), mkdonor("d2", home=None, brigade=None)]
        pairs = build_feasible_pairs(mkregistry(donors, [mksession()]), CFG)
        all_donors = {p.donor_id for ps in pairs.values() for p in ps}
        assert all_donors == {"d1"}

    def test_pair_carries_donor_attributes(self):
        d = mkdonor("d1", prob=0.7, adverse=True)
        pairs = build_feasible_pairs(mkregistry([d], [mksession()]), CFG)
        (p,) = [p for ps in pairs.values() for p in ps]
        assert p.probability == 0.7
        assert p.adverse is True
        assert p.distance_km == 0.0

    @given(
        st.lists(
            st.tuples(
                st.floats(41.0, 42.0),  # donor lat
                st.floats(-1.5, -0.5),  # donor lon
                st.dates(D(1960, 1, 1), D(2003, 1, 1)),  # birth
                st.booleans(),  # has recent donation
            ),
            min_size=1,
            max_size=8,
        ),
        st.lists(
            st.tuples(
                st.floats(41.0, 42.0),
                st.floats(-1.5, -0.5),
                st.integers(0, 80),  # start day offset
            ),
            min_size=1,
            max_size=4,
        ),
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, donor_rows, session_rows):
        donors = []
        for i, (lat, lon, birth, recent) in enumerate(donor_rows):
            hist = (D(2019, 12, 20),) if recent else (D(2019, 6, 1),)
            donors.append(
                mkdonor(
                    f"d{i}",
                    birth=birth,
                    home=GeoPoint(lat, lon),
                    history=hist,
                )
            )
        sessions = []
        for j, (lat, lon, off) in enumerate(session_rows):
            sessions.append(
                mksession(
                    f"s{j}",
                    loc=GeoPoint(lat, lon),
                    start=D(2020, 2, 1) + dt.timedelta(days=off),
                )
            )
        reg = mkregistry(donors, sessions)
        pairs = build_feasible_pairs(reg, CFG)
        got = {(p.donor_id, p.session_id) for ps in pairs.values() for p in ps}

        # independent rescan of every rule
        want = set()
        for d in donors:
            for s in sessions:
                years = s.start_date.year - d.birth_date.year
                if (s.start_date.month, s.start_date.day) < (
                    d.birth_date.month,
                    d.birth_date.day,
                ):
                    years -= 1
                if not (18 <= years <= d.max_eligible_age):
                    continue
                last = d.donation_history[-1]
                if (s.admissible_dates[0] - last).days < 60:
                    continue
                dist = haversine_reference_km(
                    d.home_anchor.lat, d.home_anchor.lon, s.location.lat, s.location.lon
                )
                if dist > 3.0 + 1e-9:
                    continue
                want.add((d.id, s.id))
        assert got == want
