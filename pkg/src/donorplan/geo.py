"""Great-circle distances, geographic points, and postal-code geocoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .errors import InvalidInputError, MissingAnchorError

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 coordinate in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidInputError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidInputError(f"longitude out of range: {self.lon}")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km on a 6371 km sphere.

    h = sin^2(dphi/2) + cos(phi1) cos(phi2) sin^2(dlambda/2), with angles in
    radians; distance = 2 R asin(sqrt(h)). Exactly symmetric in its arguments.
    """
    dphi = math.radians(b.lat - a.lat)
    dlmb = math.radians(b.lon - a.lon)
    h = (
        math.sin(dphi / 2.0) ** 2
        + math.cos(math.radians(a.lat))
        * math.cos(math.radians(b.lat))
        * math.sin(dlmb / 2.0) ** 2
    )
    # Guard against rounding pushing h a hair above 1 for near-antipodes.
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(h, 1.0)))


@dataclass
class PostalCodeTable:
    """Postal code -> coordinate lookup used to resolve donor home anchors."""

    points: Mapping[str, GeoPoint] = field(default_factory=dict)

    def lookup(self, code: str) -> Optional[GeoPoint]:
        return self.points.get(code)

    def __len__(self) -> int:
        return len(self.points)

    def __contains__(self, code: str) -> bool:
        return code in self.points


def donor_session_distance(donor, session) -> float:
    """Distance from a donor to a session: min over the donor's anchors.

    A donor has up to two anchors (home postal geocode, last brigade
    location). Raises MissingAnchorError when neither is present.
    """
    anchors = [
        p for p in (donor.home_anchor, donor.last_brigade_anchor) if p is not None
    ]
    if not anchors:
        raise MissingAnchorError(f"donor {donor.id} has no geographic anchor")
    return min(haversine_km(p, session.location) for p in anchors)
