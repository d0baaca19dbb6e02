"""Shared builders and fixtures for the test suite."""

from __future__ import annotations

import datetime as dt

import pytest

from donorplan import (
    BloodGroup,
    DateInterval,
    DemandPanel,
    Donor,
    GeoPoint,
    Registry,
    SessionWindow,
    Sex,
)

AS_OF = dt.date(2020, 1, 1)
HOME = GeoPoint(41.65, -0.88)


def mkdonor(
    donor_id="d1",
    sex=Sex.MALE,
    birth=dt.date(1985, 6, 15),
    group=BloodGroup.O_POS,
    prob=1.0,
    adverse=False,
    history=(),
    suspensions=(),
    sites=None,
    home=HOME,
    brigade=None,
    invitations=(),
    max_age=65,
):
    return Donor(
        id=donor_id,
        sex=sex,
        birth_date=birth,
        max_eligible_age=max_age,
        blood_group=group,
        attendance_probability=prob,
        adverse_reaction=adverse,
        suspensions=tuple(suspensions),
        donation_history=tuple(history),
        donation_sites=dict(sites or {}),
        home_anchor=home,
        last_brigade_anchor=brigade,
        invitations_sent=tuple(invitations),
    )


def mksession(
    session_id="s1",
    site="site1",
    loc=HOME,
    start=dt.date(2020, 3, 10),
    days=0,
    admissible=None,
    capacity=10.0,
):
    end = start + dt.timedelta(days=days)
    if admissible is None:
        admissible = tuple(
            start + dt.timedelta(days=k) for k in range(days + 1)
        )
    return SessionWindow(
        id=session_id,
        site_id=site,
        location=loc,
        start_date=start,
        end_date=end,
        admissible_dates=tuple(admissible),
        capacity=capacity,
    )


def mkregistry(donors, sessions, as_of=AS_OF):
    return Registry(
        donors=tuple(donors), sessions=tuple(sessions), as_of=as_of
    )


def mkinterval(start, end):
    return DateInterval(start=start, end=end)


@pytest.fixture
def small_registry():
    """Two donors, two disjoint far-apart sessions, permissive history."""
    donors = [
        mkdonor("d1", history=(dt.date(2019, 6, 1),)),
        mkdonor(
            "d2",
            sex=Sex.FEMALE,
            group=BloodGroup.A_POS,
            birth=dt.date(1990, 2, 2),
        ),
    ]
    sessions = [
        mksession("s1", start=dt.date(2020, 3, 10)),
        mksession("s2", start=dt.date(2020, 6, 10)),
    ]
    return mkregistry(donors, sessions)


def panel_from_rows(rows):
    """rows: iterable of (year, month, group, component, units)."""
    units = {}
    for year, month, group, comp, value in rows:
        units[(year, month, group, comp)] = value
    return DemandPanel(units)
