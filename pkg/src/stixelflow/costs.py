"""Deployment cost engine: rate profiles, comparisons, Amdahl calculator.

Each deployment option is a rate structure: a compute rate on a per-core-
hour or per-instance-hour basis, an optional orchestration fee per
instance-hour, an optional software fee per core-hour, and an optional
headline override for totals that published rates cannot reproduce.
Currency arithmetic is integer cents internally; dollars with two decimals
at the edges.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources

from .domain import StixelflowError, ValidationError

PER_CORE_HOUR = "per-core-hour"
PER_INSTANCE_HOUR = "per-instance-hour"

# workload anchor: core-hours consumed by one species fit at production scale
DEFAULT_CORE_HOURS = 1600.0
# catalog size: number of species on record
DEFAULT_N_SPECIES = 10313


class MissingCoresError(ValidationError):
    """Per-instance-hour pricing needs cores_per_instance."""


class RegionCountError(ValidationError):
    """Region comparison needs at least two regions."""


def to_cents(usd: float) -> int:
    """Round dollars to integer cents, half away from zero."""
    if usd < 0:
        return -to_cents(-usd)
    return int(math.floor(usd * 100.0 + 0.5))


def cents_to_usd(cents: int) -> float:
    return cents / 100.0


def format_usd(cents: int) -> str:
    return f"{cents / 100.0:.2f}"


@dataclass(frozen=True)
class DeploymentProfile:
    name: str
    region: str
    rate_basis: str                     # PER_CORE_HOUR or PER_INSTANCE_HOUR
    compute_rate: float                 # USD per basis unit
    cores_per_instance: int | None = None
    orchestration_fee: float = 0.0      # USD per instance-hour
    software_fee: float = 0.0           # USD per core-hour
    headline_cost_override: float | None = None  # USD per species

    def __post_init__(self) -> None:
        if self.rate_basis not in (PER_CORE_HOUR, PER_INSTANCE_HOUR):
            raise ValidationError(f"unknown rate basis {self.rate_basis!r}")
        for label, rate in (("compute_rate", self.compute_rate),
                            ("orchestration_fee", self.orchestration_fee),
                            ("software_fee", self.software_fee)):
            if rate < 0:
                raise ValidationError(f"{label} must be >= 0, got {rate}")
        if self.rate_basis == PER_INSTANCE_HOUR:
            if self.cores_per_instance is None:
                raise MissingCoresError(
                    f"profile {self.name!r}: per-instance-hour pricing "
                    f"requires cores_per_instance")
            if self.cores_per_instance < 1:
                raise ValidationError("cores_per_instance must be >= 1")
        if self.headline_cost_override is not None and self.headline_cost_override < 0:
            raise ValidationError("headline_cost_override must be >= 0")


def profile_cost(profile: DeploymentProfile, core_hours: float) -> float:
    """USD per species for one deployment option, exact to the cent.

    The headline override, when set, wins outright; otherwise the cost is
    linear in core-hours on the profile's rate basis.
    """
    if core_hours <= 0:
        raise ValidationError(f"core_hours must be > 0, got {core_hours}")
    if profile.headline_cost_override is not None:
        return cents_to_usd(to_cents(profile.headline_cost_override))
    if profile.rate_basis == PER_CORE_HOUR:
        usd = (profile.compute_rate + profile.software_fee) * core_hours
    else:
        instance_hours = core_hours / profile.cores_per_instance
        usd = (instance_hours * (profile.compute_rate + profile.orchestration_fee)
               + profile.software_fee * core_hours)
    return cents_to_usd(to_cents(usd))


def emr_fraction(compute_rate_per_instance_hour: float,
                 orchestration_fee: float) -> float:
    """Share of the hourly bill going to the orchestration service."""
    if compute_rate_per_instance_hour < 0 or orchestration_fee < 0:
        raise ValidationError("rates must be >= 0")
    total = compute_rate_per_instance_hour + orchestration_fee
    if total == 0:
        raise ValidationError("compute rate and fee cannot both be zero")
    return orchestration_fee / total


def spot_discount(spot_rate: float, ondemand_rate: float) -> float:
    """Fractional saving of spot over on-demand pricing."""
    if spot_rate < 0 or ondemand_rate < 0:
        raise ValidationError("rates must be >= 0")
    if ondemand_rate == 0:
        raise ValidationError("on-demand rate must be > 0")
    return 1.0 - spot_rate / ondemand_rate


def amdahl(improved_fraction: float, factor: float) -> float:
    """Overall improvement when a fraction p of the work speeds up by s."""
    p, s = improved_fraction, factor
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"improved fraction must be in [0, 1], got {p}")
    if s <= 0:
        raise ValidationError(f"improvement factor must be > 0, got {s}")
    return 1.0 / ((1.0 - p) + p / s)


@dataclass(frozen=True)
class CostRow:
    name: str
    per_species_cents: int
    per_catalog_cents: int
    ratio: float  # vs the cheapest row

    @property
    def per_species_usd(self) -> float:
        return cents_to_usd(self.per_species_cents)

    @property
    def per_catalog_usd(self) -> float:
        return cents_to_usd(self.per_catalog_cents)


@dataclass(frozen=True)
class CostReport:
    rows: tuple[CostRow, ...]  # sorted by descending per-species cost
    core_hours: float
    n_species: int

    @property
    def cheapest(self) -> CostRow:
        return min(self.rows, key=lambda r: (r.per_species_cents, r.name))

    def row(self, name: str) -> CostRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def _build_report(named_cents: list[tuple[str, int]], core_hours: float,
                  n_species: int) -> CostReport:
    cheapest_cents = min(c for _, c in named_cents)
    rows = [
        CostRow(
            name=name,
            per_species_cents=cents,
            per_catalog_cents=cents * n_species,
            ratio=cents / cheapest_cents,
        )
        for name, cents in named_cents
    ]
    rows.sort(key=lambda r: (-r.per_species_cents, r.name))
    return CostReport(rows=tuple(rows), core_hours=core_hours,
                      n_species=n_species)


def compare_profiles(profiles: list[DeploymentProfile], core_hours: float,
                     n_species: int = 1) -> CostReport:
    """Per-species and per-catalog costs for each option, dearest first."""
    if not profiles:
        raise ValidationError("need at least one profile")
    if n_species < 1:
        raise ValidationError(f"n_species must be >= 1, got {n_species}")
    named = [(p.name, to_cents(profile_cost(p, core_hours))) for p in profiles]
    return _build_report(named, core_hours, n_species)


def compare_regions(profiles: list[DeploymentProfile],
                    core_hours: float) -> CostReport:
    """Cheapest option per region, compared across regions.

    Ties between regions break lexicographically by region name (the
    report's `cheapest` accessor applies the same rule).
    """
    by_region: dict[str, int] = {}
    for p in profiles:
        cents = to_cents(profile_cost(p, core_hours))
        if p.region not in by_region or cents < by_region[p.region]:
            by_region[p.region] = cents
    if len(by_region) < 2:
        raise RegionCountError(
            f"need >= 2 regions, got {sorted(by_region)}")
    named = sorted(by_region.items())
    return _build_report(named, core_hours, n_species=1)


# ---------------------------------------------------------------------------
# profile and report CSVs

PROFILES_HEADER = ["name", "region", "rate_basis", "compute_rate",
                   "cores_per_instance", "orchestration_fee", "software_fee",
                   "headline_cost_override"]
REPORT_HEADER = ["name", "per_species_usd", "per_catalog_usd", "ratio"]


def read_profiles(path) -> list[DeploymentProfile]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return parse_profiles(fh)


def parse_profiles(fh) -> list[DeploymentProfile]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != PROFILES_HEADER:
        raise ValidationError(f"profiles CSV header mismatch: {header}")
    out = []
    for line_no, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(PROFILES_HEADER):
            raise ValidationError(
                f"profiles CSV line {line_no}: expected {len(PROFILES_HEADER)} fields")
        try:
            out.append(DeploymentProfile(
                name=rec[0],
                region=rec[1],
                rate_basis=rec[2],
                compute_rate=float(rec[3]),
                cores_per_instance=int(rec[4]) if rec[4] else None,
                orchestration_fee=float(rec[5]) if rec[5] else 0.0,
                software_fee=float(rec[6]) if rec[6] else 0.0,
                headline_cost_override=float(rec[7]) if rec[7] else None,
            ))
        except (ValueError, ValidationError) as exc:
            raise ValidationError(f"profiles CSV line {line_no}: {exc}") from exc
    if not out:
        raise ValidationError("profiles CSV has no data rows")
    return out


def write_profiles(profiles: list[DeploymentProfile], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROFILES_HEADER)
        for p in profiles:
            writer.writerow([
                p.name, p.region, p.rate_basis, repr(float(p.compute_rate)),
                p.cores_per_instance if p.cores_per_instance is not None else "",
                repr(float(p.orchestration_fee)), repr(float(p.software_fee)),
                "" if p.headline_cost_override is None
                else repr(float(p.headline_cost_override)),
            ])


def default_profiles() -> list[DeploymentProfile]:
    """The five shipped deployment options (see data/paper_profiles.csv)."""
    ref = resources.files("stixelflow.data").joinpath("paper_profiles.csv")
    with ref.open("r", encoding="utf-8", newline="") as fh:
        return parse_profiles(fh)


def write_report(report: CostReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for row in report.rows:
            writer.writerow([row.name, format_usd(row.per_species_cents),
                             format_usd(row.per_catalog_cents),
                             f"{row.ratio:.4f}"])


def render_report_table(report: CostReport) -> str:
    """Fixed-width table for terminal output."""
    name_w = max(len("option"), *(len(r.name) for r in report.rows))
    lines = [
        f"workload: {report.core_hours:g} core-hours/species, "
        f"{report.n_species} species",
        f"{'option':<{name_w}}  {'per-species':>12}  {'per-catalog':>16}  {'ratio':>7}",
    ]
    for row in report.rows:
        lines.append(
            f"{row.name:<{name_w}}  {format_usd(row.per_species_cents):>12}  "
            f"{format_usd(row.per_catalog_cents):>16}  {row.ratio:>7.2f}")
    lines.append(f"cheapest: {report.cheapest.name}")
    return "\n".join(lines)
