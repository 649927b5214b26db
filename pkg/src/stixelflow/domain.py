"""Core value types: observations, points, the rectangular run domain.

All types are immutable after construction and safe to share across
concurrent tasks. Validation happens once, up front, through
``validate_observation``; everything downstream can assume the invariants
hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

WEEKS_PER_YEAR = 52


class StixelflowError(Exception):
    """Base class for all package errors."""


class ValidationError(StixelflowError, ValueError):
    """An input record violates a domain invariant."""


class PointOutOfDomainError(ValidationError):
    """Latitude/longitude outside the configured domain box."""


class WeekOutOfRangeError(ValidationError):
    """Week index outside 1..52."""


class NonPositiveEffortError(ValidationError):
    """Search effort must be a positive number of hours."""


class NegativeCountError(ValidationError):
    """Observed individual counts cannot be negative."""


class EnvLengthMismatchError(ValidationError):
    """Environment vector length differs from the configured dimension."""


class NonFiniteEnvError(ValidationError):
    """Environment vector contains NaN or infinity."""


class InvalidSpeciesError(ValidationError):
    """Species identifier is empty."""


class DuplicateObservationIdError(ValidationError):
    """Two observations in one dataset share an id."""


@dataclass(frozen=True)
class DomainBox:
    """Rectangular lat/lon study area; weeks are always 1..52."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self) -> None:
        for name, v in (("lat_min", self.lat_min), ("lat_max", self.lat_max),
                        ("lon_min", self.lon_min), ("lon_max", self.lon_max)):
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite, got {v!r}")
        if not self.lat_min < self.lat_max:
            raise ValidationError(
                f"lat_min must be < lat_max ({self.lat_min} >= {self.lat_max})")
        if not self.lon_min < self.lon_max:
            raise ValidationError(
                f"lon_min must be < lon_max ({self.lon_min} >= {self.lon_max})")

    @property
    def lat_extent(self) -> float:
        return self.lat_max - self.lat_min

    @property
    def lon_extent(self) -> float:
        return self.lon_max - self.lon_min

    def contains(self, lat: float, lon: float) -> bool:
        """Closed box containment; edges belong to the domain."""
        return (self.lat_min <= lat <= self.lat_max
                and self.lon_min <= lon <= self.lon_max)


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude pair in degrees.

    Domain membership is checked wherever a point meets a DomainBox
    (observation validation, coverage queries), not here: a bare point has
    no domain to validate against.
    """

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValidationError(f"non-finite coordinates ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class Observation:
    """One search record: where, when, how long, what was counted.

    ``presence`` is derived from count, never stored; ``env`` length equals
    the run's covariate dimension.
    """

    id: int
    point: GeoPoint
    week: int
    effort_hours: float
    species: str
    count: int
    env: tuple[float, ...]

    @property
    def presence(self) -> bool:
        return self.count > 0


def validate_observation(
    *,
    id: int,
    lat: float,
    lon: float,
    week: int,
    effort_hours: float,
    species: str,
    count: int,
    env: tuple[float, ...] | list[float],
    domain: DomainBox,
    dim: int,
) -> Observation:
    """Build an Observation, rejecting anything that violates an invariant.

    Each failure mode raises its own exception type so callers (and the
    CSV reader) can report precisely what was wrong.
    """
    if not domain.contains(lat, lon):
        raise PointOutOfDomainError(
            f"observation {id}: point ({lat}, {lon}) outside domain "
            f"[{domain.lat_min}, {domain.lat_max}] x [{domain.lon_min}, {domain.lon_max}]")
    if not 1 <= week <= WEEKS_PER_YEAR:
        raise WeekOutOfRangeError(f"observation {id}: week out of range: {week}")
    if not (math.isfinite(effort_hours) and effort_hours > 0):
        raise NonPositiveEffortError(
            f"observation {id}: effort_hours must be > 0, got {effort_hours}")
    if count < 0:
        raise NegativeCountError(f"observation {id}: negative count: {count}")
    if not species:
        raise InvalidSpeciesError(f"observation {id}: empty species identifier")
    env = tuple(float(v) for v in env)
    if len(env) != dim:
        raise EnvLengthMismatchError(
            f"observation {id}: env length mismatch: expected {dim}, got {len(env)}")
    if not all(math.isfinite(v) for v in env):
        raise NonFiniteEnvError(f"observation {id}: env contains non-finite values")
    return Observation(
        id=int(id),
        point=GeoPoint(float(lat), float(lon)),
        week=int(week),
        effort_hours=float(effort_hours),
        species=species,
        count=int(count),
        env=env,
    )


def check_unique_ids(observations: list[Observation]) -> None:
    """Dataset-level invariant: observation ids are unique."""
    seen: set[int] = set()
    for obs in observations:
        if obs.id in seen:
            raise DuplicateObservationIdError(f"duplicate observation id {obs.id}")
        seen.add(obs.id)


def obs_csv_header(dim: int) -> list[str]:
    """Column names of the observation CSV for a given covariate dimension."""
    return (["id", "lat", "lon", "week", "effort_hours", "species", "count"]
            + [f"env_{i}" for i in range(dim)])
