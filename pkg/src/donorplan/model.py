"""Core domain types: blood groups, donors, session windows, and the registry.

All temporal rules in the package use calendar days, with "a year" fixed at
365 days. High-frequency classification, annual donation limits, and ages are
computed here so that every other module shares a single implementation.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

from .errors import InvalidInputError
from .geo import GeoPoint

YEAR_DAYS = 365
MAX_WINDOW_SPAN_DAYS = 14

# Donations per rolling 365 days needed to classify as high frequency.
HF_THRESHOLD = {"male": 3, "female": 2}
# Maximum donations allowed in any rolling 365-day window.
ANNUAL_LIMIT = {"male": 4, "female": 3}


class Sex(Enum):
    MALE = "male"
    FEMALE = "female"


class BloodGroup(Enum):
    """The eight ABO/Rh groups, in the package's canonical order."""

    A_POS = "A+"
    A_NEG = "A-"
    B_POS = "B+"
    B_NEG = "B-"
    AB_POS = "AB+"
    AB_NEG = "AB-"
    O_POS = "O+"
    O_NEG = "O-"

    @property
    def abo(self) -> str:
        return self.value[:-1]

    @property
    def rh(self) -> str:
        return self.value[-1]

    @property
    def order_index(self) -> int:
        return _GROUP_ORDER[self]

    @classmethod
    def parse(cls, text: str) -> "BloodGroup":
        try:
            return cls(text.strip())
        except ValueError:
            raise InvalidInputError(f"unknown blood group {text!r}") from None

    def __lt__(self, other: "BloodGroup") -> bool:
        if not isinstance(other, BloodGroup):
            return NotImplemented
        return self.order_index < other.order_index

    def __str__(self) -> str:
        return self.value


_GROUP_ORDER = {g: i for i, g in enumerate(BloodGroup)}


@dataclass(frozen=True, order=True)
class PlanningMonth:
    """A calendar month used as a demand / planning bucket."""

    year: int
    month: int

    def __post_init__(self) -> None:
        if not 1 <= self.month <= 12:
            raise InvalidInputError(f"month out of range: {self.month}")

    @classmethod
    def from_date(cls, d: dt.date) -> "PlanningMonth":
        return cls(d.year, d.month)

    def first_day(self) -> dt.date:
        return dt.date(self.year, self.month, 1)

    def plus(self, months: int) -> "PlanningMonth":
        idx = self.year * 12 + (self.month - 1) + months
        return PlanningMonth(idx // 12, idx % 12 + 1)

    def key(self) -> str:
        return f"{self.year:04d}{self.month:02d}"

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


@dataclass(frozen=True)
class DateInterval:
    """Closed calendar interval [start, end]."""

    start: dt.date
    end: dt.date

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise InvalidInputError(f"interval ends before it starts: {self}")

    def contains(self, d: dt.date) -> bool:
        return self.start <= d <= self.end


@dataclass(frozen=True)
class Donor:
    """A registered donor with history, anchors, and invitation state.

    donation_history is strictly increasing; donation_sites optionally maps a
    history date to the site id where that donation took place. Suspension
    intervals are closed; a donor is unavailable on any date inside one.
    """

    id: str
    sex: Sex
    birth_date: dt.date
    max_eligible_age: int
    blood_group: BloodGroup
    attendance_probability: float
    adverse_reaction: bool = False
    suspensions: tuple[DateInterval, ...] = ()
    donation_history: tuple[dt.date, ...] = ()
    donation_sites: Mapping[dt.date, str] = field(default_factory=dict)
    home_anchor: Optional[GeoPoint] = None
    last_brigade_anchor: Optional[GeoPoint] = None
    invitations_sent: tuple[dt.date, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 < self.attendance_probability <= 1.0:
            raise InvalidInputError(
                f"donor {self.id}: attendance probability must be in (0, 1], "
                f"got {self.attendance_probability}"
            )
        if self.max_eligible_age < 18:
            raise InvalidInputError(
                f"donor {self.id}: max eligible age below 18"
            )
        for a, b in zip(self.donation_history, self.donation_history[1:]):
            if b <= a:
                raise InvalidInputError(
                    f"donor {self.id}: donation history not strictly increasing"
                )
        for d in self.donation_sites:
            if d not in self.donation_history:
                raise InvalidInputError(
                    f"donor {self.id}: site recorded for unknown donation date {d}"
                )

    def last_donation(self) -> Optional[dt.date]:
        return self.donation_history[-1] if self.donation_history else None

    def is_suspended_on(self, d: dt.date) -> bool:
        return any(iv.contains(d) for iv in self.suspensions)


@dataclass(frozen=True)
class SessionWindow:
    """A collection session: a site, a date window, and a capacity.

    admissible_dates are the concrete days a donor could attend; they must be
    a nonempty sorted subset of [start_date, end_date], and the window spans
    at most 14 days.
    """

    id: str
    site_id: str
    location: GeoPoint
    start_date: dt.date
    end_date: dt.date
    admissible_dates: tuple[dt.date, ...]
    capacity: float

    def __post_init__(self) -> None:
        if self.end_date < self.start_date:
            raise InvalidInputError(f"session {self.id}: end before start")
        if (self.end_date - self.start_date).days > MAX_WINDOW_SPAN_DAYS:
            raise InvalidInputError(
                f"session {self.id}: window longer than "
                f"{MAX_WINDOW_SPAN_DAYS} days"
            )
        if not self.admissible_dates:
            raise InvalidInputError(f"session {self.id}: no admissible dates")
        prev = None
        for d in self.admissible_dates:
            if not self.start_date <= d <= self.end_date:
                raise InvalidInputError(
                    f"session {self.id}: admissible date {d} outside window"
                )
            if prev is not None and d <= prev:
                raise InvalidInputError(
                    f"session {self.id}: admissible dates not sorted"
                )
            prev = d
        if self.capacity < 0:
            raise InvalidInputError(f"session {self.id}: negative capacity")

    @property
    def month(self) -> PlanningMonth:
        # A session belongs to the planning month of its start date.
        return PlanningMonth.from_date(self.start_date)


@dataclass
class Registry:
    """The planning population: donors, scheduled sessions, and a clock.

    Donors and sessions are stored sorted by id so iteration order is a
    function of content only. Donation and invitation histories may not
    extend past as_of.
    """

    donors: tuple[Donor, ...]
    sessions: tuple[SessionWindow, ...]
    as_of: dt.date

    def __post_init__(self) -> None:
        self.donors = tuple(sorted(self.donors, key=lambda d: d.id))
        self.sessions = tuple(sorted(self.sessions, key=lambda s: s.id))
        seen: set[str] = set()
        for d in self.donors:
            if d.id in seen:
                raise InvalidInputError(f"duplicate donor id {d.id!r}")
            seen.add(d.id)
            if d.donation_history and d.donation_history[-1] > self.as_of:
                raise InvalidInputError(
                    f"donor {d.id}: donation after registry as_of"
                )
            if d.invitations_sent and max(d.invitations_sent) > self.as_of:
                raise InvalidInputError(
                    f"donor {d.id}: invitation after registry as_of"
                )
        seen.clear()
        for s in self.sessions:
            if s.id in seen:
                raise InvalidInputError(f"duplicate session id {s.id!r}")
            seen.add(s.id)
        self._donor_index = {d.id: d for d in self.donors}
        self._session_index = {s.id: s for s in self.sessions}

    def donor(self, donor_id: str) -> Donor:
        return self._donor_index[donor_id]

    def session(self, session_id: str) -> SessionWindow:
        return self._session_index[session_id]

    def has_donor(self, donor_id: str) -> bool:
        return donor_id in self._donor_index

    def has_session(self, session_id: str) -> bool:
        return session_id in self._session_index


def age_at(donor: Donor, on: dt.date) -> int:
    """Completed years of age on a date (birthday-exact floor)."""
    if on < donor.birth_date:
        raise InvalidInputError(
            f"donor {donor.id}: age requested before birth date"
        )
    b = donor.birth_date
    had_birthday = (on.month, on.day) >= (b.month, b.day)
    return on.year - b.year - (0 if had_birthday else 1)


def donations_in_year_before(dates: Iterable[dt.date], as_of: dt.date) -> int:
    """Count donation dates in the window (as_of - 365 days, as_of]."""
    lo = as_of - dt.timedelta(days=YEAR_DAYS)
    return sum(1 for d in dates if lo < d <= as_of)


def is_high_frequency(donor: Donor, as_of: dt.date) -> bool:
    """Whether the donor meets the sex-specific high-frequency threshold.

    Counts donations in (as_of - 365 days, as_of]; thresholds are 3 for male
    donors and 2 for female donors.
    """
    n = donations_in_year_before(donor.donation_history, as_of)
    return n >= HF_THRESHOLD[donor.sex.value]


def annual_limit(donor: Donor) -> int:
    """Maximum donations in any rolling 365-day window (4 male, 3 female)."""
    return ANNUAL_LIMIT[donor.sex.value]
