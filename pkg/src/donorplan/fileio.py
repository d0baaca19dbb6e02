"""Delimited-text ingestion and serialization for every planning artifact.

All files are comma-separated UTF-8 with a mandatory header row and
ISO-8601 dates. Schemas:

  donors.csv        donor_id, sex, birth_date, max_eligible_age,
                    blood_group, attendance_probability, adverse_reaction,
                    home_postal_code, brigade_lat, brigade_lon
  donations.csv     donor_id, donation_date, site_id (site may be blank)
  suspensions.csv   donor_id, start_date, end_date
  sessions.csv      session_id, site_id, lat, lon, start_date, end_date,
                    admissible_dates (semicolon-joined), capacity
  demand_panel.csv  year, month, blood_group, component (ce|cpp), units
  first_time.csv    year, month, count (gapless months; may be empty)
  postal_codes.csv  postal_code, lat, lon
  invitations.csv   donor_id, sent_date
  plan.csv          donor_id, session_id, planned_date, distance_km, p_i,
                    adverse
  report.csv        scope, metric, value

Sex is male|female, blood groups use +/- suffixes (A+, O-, ...), flags
are 0|1, and blank means absent for optional fields. Malformed rows are
rejected one at a time with their line number and reason; files whose
header or encoding is broken abort ingestion with an error naming the
position. Donors that resolve no location anchor at all are rejected,
matching the pair builder which can never place them.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Sequence

from .demand import Component, DemandPanel
from .errors import InvalidInputError
from .forecast import MonthlySeries
from .geo import GeoPoint, PostalCodeTable
from .model import (
    BloodGroup,
    DateInterval,
    Donor,
    PlanningMonth,
    Registry,
    SessionWindow,
    Sex,
)
from .plan_eval import InvitationPlan, PlanEntry

DONORS_HEADER = [
    "donor_id", "sex", "birth_date", "max_eligible_age", "blood_group",
    "attendance_probability", "adverse_reaction", "home_postal_code",
    "brigade_lat", "brigade_lon",
]
DONATIONS_HEADER = ["donor_id", "donation_date", "site_id"]
SUSPENSIONS_HEADER = ["donor_id", "start_date", "end_date"]
SESSIONS_HEADER = [
    "session_id", "site_id", "lat", "lon", "start_date", "end_date",
    "admissible_dates", "capacity",
]
DEMAND_HEADER = ["year", "month", "blood_group", "component", "units"]
FIRST_TIME_HEADER = ["year", "month", "count"]
POSTAL_HEADER = ["postal_code", "lat", "lon"]
INVITATIONS_HEADER = ["donor_id", "sent_date"]
PLAN_HEADER = [
    "donor_id", "session_id", "planned_date", "distance_km", "p_i", "adverse",
]
REPORT_HEADER = ["scope", "metric", "value"]


@dataclass(frozen=True)
class RejectedRow:
    file: str
    line: int
    reason: str


@dataclass
class IngestionReport:
    """Per-file accounting for one ingestion run."""

    accepted: dict[str, int] = field(default_factory=dict)
    rejected: dict[str, int] = field(default_factory=dict)
    rejects: list[RejectedRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    checksums: dict[str, str] = field(default_factory=dict)

    def reject(self, file: str, line: int, reason: str) -> None:
        self.rejects.append(RejectedRow(file, line, reason))
        self.rejected[file] = self.rejected.get(file, 0) + 1

    def accept(self, file: str, n: int = 1) -> None:
        self.accepted[file] = self.accepted.get(file, 0) + n


@dataclass
class IngestResult:
    registry: Registry
    panel: DemandPanel
    first_time: Optional[MonthlySeries]
    postal_codes: PostalCodeTable
    report: IngestionReport


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _read_rows(
    path: str, header: Sequence[str], key: str, report: IngestionReport
) -> Iterator[tuple[int, list[str]]]:
    """Yield (line_number, fields) for well-shaped data rows.

    Header or encoding problems abort; rows with the wrong field count
    are rejected individually.
    """
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                got = next(reader, None)
            except csv.Error as exc:
                raise InvalidInputError(f"{path}: line 1: {exc}") from exc
            if got is None:
                raise InvalidInputError(f"{path}: line 1: missing header row")
            if got != list(header):
                col = next(
                    (
                        i + 1
                        for i, (a, b) in enumerate(zip(header, got))
                        if a != b
                    ),
                    min(len(header), len(got)) + 1,
                )
                raise InvalidInputError(
                    f"{path}: line 1, column {col}: header mismatch, "
                    f"expected {list(header)}, got {got}"
                )
            while True:
                try:
                    row = next(reader)
                except StopIteration:
                    return
                except csv.Error as exc:
                    raise InvalidInputError(
                        f"{path}: line {reader.line_num}: {exc}"
                    ) from exc
                if not row:
                    continue
                if len(row) != len(header):
                    report.reject(
                        key,
                        reader.line_num,
                        f"expected {len(header)} fields, got {len(row)}",
                    )
                    continue
                yield reader.line_num, row
    except UnicodeDecodeError as exc:
        raise InvalidInputError(f"{path}: not valid UTF-8: {exc}") from exc


def _date(text: str) -> dt.date:
    return dt.date.fromisoformat(text)


def _flag(text: str) -> bool:
    if text == "0":
        return False
    if text == "1":
        return True
    raise ValueError(f"flag must be 0 or 1, got {text!r}")


def _finite(text: str, what: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"{what} must be finite")
    return v


@dataclass(frozen=True)
class IngestPaths:
    donors: str
    sessions: str
    demand_panel: str
    postal_codes: str
    donations: Optional[str] = None
    suspensions: Optional[str] = None
    first_time: Optional[str] = None
    invitations: Optional[str] = None


def _read_postal(path: str, report: IngestionReport) -> PostalCodeTable:
    points: dict[str, GeoPoint] = {}
    for line, row in _read_rows(path, POSTAL_HEADER, "postal_codes", report):
        code, lat, lon = row
        try:
            if not code:
                raise ValueError("empty postal code")
            if code in points:
                raise ValueError(f"duplicate postal code {code!r}")
            point = GeoPoint(_finite(lat, "lat"), _finite(lon, "lon"))
            if not (-90 <= point.lat <= 90 and -180 <= point.lon <= 180):
                raise ValueError("coordinates out of range")
        except ValueError as exc:
            report.reject("postal_codes", line, str(exc))
            continue
        points[code] = point
        report.accept("postal_codes")
    return PostalCodeTable(points)


def _read_sessions(
    path: str, report: IngestionReport
) -> tuple[SessionWindow, ...]:
    sessions: dict[str, SessionWindow] = {}
    for line, row in _read_rows(path, SESSIONS_HEADER, "sessions", report):
        sid, site, lat, lon, start, end, dates, cap = row
        try:
            if not sid:
                raise ValueError("empty session_id")
            if sid in sessions:
                raise ValueError(f"duplicate session_id {sid!r}")
            if not site:
                raise ValueError("empty site_id")
            admissible = tuple(_date(p) for p in dates.split(";") if p)
            session = SessionWindow(
                id=sid,
                site_id=site,
                location=GeoPoint(_finite(lat, "lat"), _finite(lon, "lon")),
                start_date=_date(start),
                end_date=_date(end),
                admissible_dates=admissible,
                capacity=_finite(cap, "capacity"),
            )
        except (ValueError, InvalidInputError) as exc:
            report.reject("sessions", line, str(exc))
            continue
        sessions[sid] = session
        report.accept("sessions")
    return tuple(sessions.values())


@dataclass
class _DonorRow:
    line: int
    sex: Sex
    birth_date: dt.date
    max_eligible_age: int
    blood_group: BloodGroup
    probability: float
    adverse: bool
    postal_code: str
    brigade: Optional[GeoPoint]


def _read_donor_rows(
    path: str, report: IngestionReport
) -> dict[str, _DonorRow]:
    rows: dict[str, _DonorRow] = {}
    for line, row in _read_rows(path, DONORS_HEADER, "donors", report):
        (donor_id, sex, birth, age, group, prob, adverse, code,
         blat, blon) = row
        try:
            if not donor_id:
                raise ValueError("empty donor_id")
            if donor_id in rows:
                raise ValueError(f"duplicate donor_id {donor_id!r}")
            if sex not in ("male", "female"):
                raise ValueError(f"sex must be male or female, got {sex!r}")
            p = _finite(prob, "attendance_probability")
            if not 0.0 <= p <= 1.0:
                raise ValueError("attendance_probability outside [0, 1]")
            max_age = int(age)
            if max_age <= 0:
                raise ValueError("max_eligible_age must be positive")
            if (blat == "") != (blon == ""):
                raise ValueError("brigade_lat and brigade_lon must pair")
            brigade = None
            if blat:
                brigade = GeoPoint(
                    _finite(blat, "brigade_lat"), _finite(blon, "brigade_lon")
                )
            rows[donor_id] = _DonorRow(
                line=line,
                sex=Sex(sex),
                birth_date=_date(birth),
                max_eligible_age=max_age,
                blood_group=BloodGroup.parse(group),
                probability=p,
                adverse=_flag(adverse),
                postal_code=code,
                brigade=brigade,
            )
        except (ValueError, InvalidInputError) as exc:
            report.reject("donors", line, str(exc))
    return rows


def _read_demand(path: str, report: IngestionReport) -> DemandPanel:
    units: dict[tuple[int, int, BloodGroup, Component], float] = {}
    for line, row in _read_rows(path, DEMAND_HEADER, "demand_panel", report):
        year, month, group, comp, value = row
        try:
            key = (
                int(year),
                int(month),
                BloodGroup.parse(group),
                Component(comp),
            )
            if not 1 <= key[1] <= 12:
                raise ValueError(f"month out of range: {month}")
            v = _finite(value, "units")
            if v < 0:
                raise ValueError("units must be >= 0")
            if key in units:
                raise ValueError("duplicate demand cell")
        except (ValueError, InvalidInputError) as exc:
            report.reject("demand_panel", line, str(exc))
            continue
        units[key] = v
        report.accept("demand_panel")
    return DemandPanel(units)


def _read_first_time(
    path: str, report: IngestionReport
) -> Optional[MonthlySeries]:
    cells: dict[tuple[int, int], float] = {}
    for line, row in _read_rows(path, FIRST_TIME_HEADER, "first_time", report):
        year, month, count = row
        try:
            key = (int(year), int(month))
            if not 1 <= key[1] <= 12:
                raise ValueError(f"month out of range: {month}")
            v = _finite(count, "count")
            if v < 0:
                raise ValueError("count must be >= 0")
            if key in cells:
                raise ValueError("duplicate month")
        except ValueError as exc:
            report.reject("first_time", line, str(exc))
            continue
        cells[key] = v
        report.accept("first_time")
    if not cells:
        return None
    entries = tuple(
        (y, m, cells[(y, m)]) for (y, m) in sorted(cells)
    )
    try:
        return MonthlySeries(entries)
    except InvalidInputError as exc:
        raise InvalidInputError(
            f"{path}: first-time series is not gapless: {exc}"
        ) from exc


def read_first_time(
    path: str,
) -> tuple[Optional[MonthlySeries], IngestionReport]:
    """Read a standalone first-time series file; None when it is empty."""
    report = IngestionReport()
    report.checksums["first_time"] = sha256_file(path)
    return _read_first_time(path, report), report


def ingest(paths: IngestPaths, as_of: dt.date) -> IngestResult:
    """Read and validate one input bundle into the in-memory model.

    Malformed rows are rejected individually and reported; donors whose
    referenced rows were rejected lose those rows, not their record,
    except when no location anchor survives at all.
    """
    report = IngestionReport()
    for key in (
        "donors", "sessions", "demand_panel", "postal_codes", "donations",
        "suspensions", "first_time", "invitations",
    ):
        path = getattr(paths, key)
        if path is not None:
            report.checksums[key] = sha256_file(path)
            report.accepted.setdefault(key, 0)
            report.rejected.setdefault(key, 0)

    postal = _read_postal(paths.postal_codes, report)
    sessions = _read_sessions(paths.sessions, report)
    donor_rows = _read_donor_rows(paths.donors, report)
    panel = _read_demand(paths.demand_panel, report)
    first_time = (
        _read_first_time(paths.first_time, report)
        if paths.first_time is not None
        else None
    )

    donations: dict[str, dict[dt.date, str]] = {}
    if paths.donations is not None:
        for line, row in _read_rows(
            paths.donations, DONATIONS_HEADER, "donations", report
        ):
            donor_id, date_text, site = row
            try:
                if donor_id not in donor_rows:
                    raise ValueError(f"unknown donor {donor_id!r}")
                date = _date(date_text)
                if date > as_of:
                    raise ValueError("donation after the planning clock")
                if date in donations.get(donor_id, {}):
                    raise ValueError("duplicate donation date")
            except ValueError as exc:
                report.reject("donations", line, str(exc))
                continue
            donations.setdefault(donor_id, {})[date] = site
            report.accept("donations")

    suspensions: dict[str, list[DateInterval]] = {}
    if paths.suspensions is not None:
        for line, row in _read_rows(
            paths.suspensions, SUSPENSIONS_HEADER, "suspensions", report
        ):
            donor_id, start, end = row
            try:
                if donor_id not in donor_rows:
                    raise ValueError(f"unknown donor {donor_id!r}")
                interval = DateInterval(_date(start), _date(end))
            except (ValueError, InvalidInputError) as exc:
                report.reject("suspensions", line, str(exc))
                continue
            suspensions.setdefault(donor_id, []).append(interval)
            report.accept("suspensions")

    invitations: dict[str, list[dt.date]] = {}
    if paths.invitations is not None:
        for line, row in _read_rows(
            paths.invitations, INVITATIONS_HEADER, "invitations", report
        ):
            donor_id, sent = row
            try:
                if donor_id not in donor_rows:
                    raise ValueError(f"unknown donor {donor_id!r}")
                date = _date(sent)
                if date > as_of:
                    raise ValueError("invitation after the planning clock")
            except ValueError as exc:
                report.reject("invitations", line, str(exc))
                continue
            invitations.setdefault(donor_id, []).append(date)
            report.accept("invitations")

    donors = []
    for donor_id in sorted(donor_rows):
        row = donor_rows[donor_id]
        home = None
        if row.postal_code:
            home = postal.lookup(row.postal_code)
            if home is None:
                report.warnings.append(
                    f"donor {donor_id}: postal code {row.postal_code!r} "
                    "not in table"
                )
        else:
            report.warnings.append(f"donor {donor_id}: no home postal code")
        if home is None and row.brigade is None:
            report.reject(
                "donors", row.line, "no resolvable location anchor"
            )
            continue
        history = tuple(sorted(donations.get(donor_id, {})))
        sites = {
            d: s for d, s in donations.get(donor_id, {}).items() if s
        }
        donors.append(
            Donor(
                id=donor_id,
                sex=row.sex,
                birth_date=row.birth_date,
                max_eligible_age=row.max_eligible_age,
                blood_group=row.blood_group,
                attendance_probability=row.probability,
                adverse_reaction=row.adverse,
                suspensions=tuple(
                    sorted(
                        suspensions.get(donor_id, []),
                        key=lambda i: (i.start, i.end),
                    )
                ),
                donation_history=history,
                donation_sites=sites,
                home_anchor=home,
                last_brigade_anchor=row.brigade,
                invitations_sent=tuple(sorted(invitations.get(donor_id, []))),
            )
        )
        report.accept("donors")

    registry = Registry(tuple(donors), sessions, as_of)
    return IngestResult(registry, panel, first_time, postal, report)


# ---------------------------------------------------------------------------
# writers

def _write(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v: float) -> str:
    # shortest decimal text that parses back to the same float
    return repr(float(v))


def write_postal_codes(path: str, table: PostalCodeTable) -> None:
    _write(
        path,
        POSTAL_HEADER,
        (
            [code, _fmt(p.lat), _fmt(p.lon)]
            for code, p in sorted(table.points.items())
        ),
    )


def write_sessions(path: str, sessions: Sequence[SessionWindow]) -> None:
    _write(
        path,
        SESSIONS_HEADER,
        (
            [
                s.id,
                s.site_id,
                _fmt(s.location.lat),
                _fmt(s.location.lon),
                s.start_date.isoformat(),
                s.end_date.isoformat(),
                ";".join(d.isoformat() for d in s.admissible_dates),
                _fmt(s.capacity),
            ]
            for s in sorted(sessions, key=lambda s: s.id)
        ),
    )


def write_donors(
    path: str, registry: Registry, postal_by_donor: Mapping[str, str]
) -> None:
    rows = []
    for d in registry.donors:
        rows.append(
            [
                d.id,
                d.sex.value,
                d.birth_date.isoformat(),
                str(d.max_eligible_age),
                d.blood_group.value,
                _fmt(d.attendance_probability),
                "1" if d.adverse_reaction else "0",
                postal_by_donor.get(d.id, ""),
                "" if d.last_brigade_anchor is None
                else _fmt(d.last_brigade_anchor.lat),
                "" if d.last_brigade_anchor is None
                else _fmt(d.last_brigade_anchor.lon),
            ]
        )
    _write(path, DONORS_HEADER, rows)


def write_donations(path: str, registry: Registry) -> None:
    rows = []
    for d in registry.donors:
        for date in d.donation_history:
            rows.append(
                [d.id, date.isoformat(), d.donation_sites.get(date, "")]
            )
    _write(path, DONATIONS_HEADER, rows)


def write_suspensions(path: str, registry: Registry) -> None:
    rows = []
    for d in registry.donors:
        for s in d.suspensions:
            rows.append([d.id, s.start.isoformat(), s.end.isoformat()])
    _write(path, SUSPENSIONS_HEADER, rows)


def write_invitations(path: str, registry: Registry) -> None:
    rows = []
    for d in registry.donors:
        for sent in d.invitations_sent:
            rows.append([d.id, sent.isoformat()])
    _write(path, INVITATIONS_HEADER, rows)


def write_demand_panel(path: str, panel: DemandPanel) -> None:
    keys = sorted(
        panel.units,
        key=lambda k: (k[0], k[1], k[2].order_index, k[3].value),
    )
    _write(
        path,
        DEMAND_HEADER,
        (
            [
                str(y), str(m), g.value, c.value,
                _fmt(panel.units[(y, m, g, c)]),
            ]
            for (y, m, g, c) in keys
        ),
    )


def write_first_time(path: str, series: Optional[MonthlySeries]) -> None:
    entries = () if series is None else series.entries
    _write(
        path,
        FIRST_TIME_HEADER,
        ([str(y), str(m), _fmt(v)] for (y, m, v) in entries),
    )


def write_plan(path: str, plan: InvitationPlan) -> None:
    _write(
        path,
        PLAN_HEADER,
        (
            [
                e.donor_id,
                e.session_id,
                e.planned_date.isoformat(),
                _fmt(e.distance_km),
                _fmt(e.probability),
                "1" if e.adverse else "0",
            ]
            for e in plan.entries
        ),
    )


def read_plan(
    path: str,
    registry: Registry,
    targets: Mapping[tuple[PlanningMonth, BloodGroup], float],
    demand_mode: str,
) -> InvitationPlan:
    """Rebuild a plan from its serialized rows.

    Month and blood group come from the registry; slack is recomputed
    from the targets, so the validator judges exactly what the file says
    about who is invited where and when.
    """
    report = IngestionReport()
    entries = []
    for line, row in _read_rows(path, PLAN_HEADER, "plan", report):
        donor_id, session_id, planned, distance, p, adverse = row
        try:
            donor = registry.donor(donor_id)
            session = registry.session(session_id)
        except KeyError as exc:
            raise InvalidInputError(
                f"{path}: line {line}: unknown id {exc.args[0]!r}"
            ) from exc
        entries.append(
            PlanEntry(
                donor_id=donor_id,
                session_id=session_id,
                planned_date=_date(planned),
                month=session.month,
                blood_group=donor.blood_group,
                distance_km=_finite(distance, "distance_km"),
                probability=_finite(p, "p_i"),
                adverse=_flag(adverse),
            )
        )
    if report.rejects:
        first = report.rejects[0]
        raise InvalidInputError(
            f"{path}: line {first.line}: {first.reason}"
        )
    entries.sort(key=lambda e: (e.donor_id, e.session_id))
    fulfilled: dict[tuple[PlanningMonth, BloodGroup], float] = {}
    for e in entries:
        key = (e.month, e.blood_group)
        fulfilled[key] = fulfilled.get(key, 0.0) + e.probability
    slacks = {
        key: max(0.0, residual - fulfilled.get(key, 0.0))
        for key, residual in targets.items()
        if residual > 0
    }
    return InvitationPlan(
        entries=tuple(entries),
        demand_mode=demand_mode,
        slacks=slacks,
        objective_terms={},
        solver="file",
    )


def write_report(
    path: str, rows: Sequence[tuple[str, str, object]]
) -> None:
    def text(v) -> str:
        if isinstance(v, bool):
            return "1" if v else "0"
        if isinstance(v, float):
            return _fmt(v)
        return str(v)

    _write(
        path,
        REPORT_HEADER,
        ([scope, metric, text(value)] for scope, metric, value in rows),
    )


def write_manifest(path: str, payload: Mapping[str, object]) -> None:
    """Reproducibility record: config echo, input checksums, versions.

    Deliberately carries no timestamp so reruns of a seeded command
    produce identical bytes.
    """
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
