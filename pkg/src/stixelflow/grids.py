"""Stixel grids: K randomly offset complete tilings of space x weeks.

Each layer tiles the domain with rectangular cells crossed with week
windows, so within a layer every in-domain (point, week) lands in exactly
one stixel. Layers 1..K-1 are shifted by a per-layer offset strictly
smaller than one cell in each dimension, which guarantees every query is
covered by exactly K stixels overall. Layer 0 is never shifted.

Cell membership uses half-open intervals [low, high); the domain's top
edges are closed (a point exactly on lat_max/lon_max belongs to the last
cell). Offsets come from the package PRNG seeded by the run seed, so grids
are reproducible cross-platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .domain import (
    WEEKS_PER_YEAR,
    DomainBox,
    GeoPoint,
    Observation,
    PointOutOfDomainError,
    ValidationError,
)
from .rng import SplitMix64, derive_seed


class CellExceedsDomainError(ValidationError):
    """Configured cell size is larger than the domain extent."""


@dataclass(frozen=True)
class StixelConfig:
    """Grid geometry and training threshold for one run."""

    cell_width_deg: float    # lon extent of a cell
    cell_height_deg: float   # lat extent of a cell
    window_weeks: int
    layers: int
    min_train: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.cell_width_deg <= 0 or self.cell_height_deg <= 0:
            raise ValidationError("cell sizes must be positive")
        if not 1 <= self.window_weeks <= WEEKS_PER_YEAR:
            raise ValidationError(
                f"window_weeks must be in 1..{WEEKS_PER_YEAR}, got {self.window_weeks}")
        if self.layers < 1:
            raise ValidationError(f"layers must be >= 1, got {self.layers}")
        if self.min_train < 1:
            raise ValidationError(f"min_train must be >= 1, got {self.min_train}")


@dataclass(frozen=True)
class Stixel:
    """One spatiotemporal block: a lat/lon cell crossed with a week window.

    The box is clipped to the domain; week_start/week_end are inclusive.
    """

    layer: int
    row: int
    col: int
    block: int
    week_start: int
    week_end: int
    lat_lo: float
    lat_hi: float
    lon_lo: float
    lon_hi: float

    @property
    def id(self) -> str:
        return f"{self.layer}-{self.row}-{self.col}-{self.block}"

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.layer, self.row, self.col, self.block)


def parse_stixel_id(sid: str) -> tuple[int, int, int, int]:
    parts = sid.split("-")
    if len(parts) != 4:
        raise ValidationError(f"malformed stixel id {sid!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


@dataclass(frozen=True)
class StixelGridSet:
    """K offset tilings of one domain; offsets fixed at construction."""

    config: StixelConfig
    domain: DomainBox
    # one (lat_offset, lon_offset, week_offset) per layer; layer 0 is (0, 0, 0)
    offsets: tuple[tuple[float, float, int], ...]

    def layer_shape(self, layer: int) -> tuple[int, int, int]:
        """(n_rows, n_cols, n_blocks) of one layer's tiling."""
        lat_off, lon_off, week_off = self.offsets[layer]
        cfg = self.config
        n_rows = math.ceil((self.domain.lat_extent + lat_off) / cfg.cell_height_deg)
        n_cols = math.ceil((self.domain.lon_extent + lon_off) / cfg.cell_width_deg)
        n_blocks = (WEEKS_PER_YEAR + week_off + cfg.window_weeks - 1) // cfg.window_weeks
        return n_rows, n_cols, n_blocks

    def stixel_at(self, layer: int, row: int, col: int, block: int) -> Stixel:
        lat_off, lon_off, week_off = self.offsets[layer]
        cfg = self.config
        dom = self.domain
        lat_origin = dom.lat_min - lat_off
        lon_origin = dom.lon_min - lon_off
        week_origin = 1 - week_off
        return Stixel(
            layer=layer,
            row=row,
            col=col,
            block=block,
            week_start=max(1, week_origin + block * cfg.window_weeks),
            week_end=min(WEEKS_PER_YEAR,
                         week_origin + (block + 1) * cfg.window_weeks - 1),
            lat_lo=max(dom.lat_min, lat_origin + row * cfg.cell_height_deg),
            lat_hi=min(dom.lat_max, lat_origin + (row + 1) * cfg.cell_height_deg),
            lon_lo=max(dom.lon_min, lon_origin + col * cfg.cell_width_deg),
            lon_hi=min(dom.lon_max, lon_origin + (col + 1) * cfg.cell_width_deg),
        )

    def by_id(self, sid: str) -> Stixel:
        layer, row, col, block = parse_stixel_id(sid)
        n_rows, n_cols, n_blocks = self.layer_shape(layer)
        if not (0 <= layer < self.config.layers and 0 <= row < n_rows
                and 0 <= col < n_cols and 0 <= block < n_blocks):
            raise ValidationError(f"stixel id {sid!r} not in this grid set")
        return self.stixel_at(layer, row, col, block)

    def covering(self, point: GeoPoint, week: int) -> list[Stixel]:
        """The K stixels containing (point, week), one per layer, layer order."""
        if not self.domain.contains(point.lat, point.lon):
            raise PointOutOfDomainError(
                f"point ({point.lat}, {point.lon}) outside domain")
        if not 1 <= week <= WEEKS_PER_YEAR:
            raise ValidationError(f"week out of range: {week}")
        cfg = self.config
        out = []
        for layer in range(cfg.layers):
            lat_off, lon_off, week_off = self.offsets[layer]
            n_rows, n_cols, _ = self.layer_shape(layer)
            row = math.floor((point.lat - self.domain.lat_min + lat_off)
                             / cfg.cell_height_deg)
            col = math.floor((point.lon - self.domain.lon_min + lon_off)
                             / cfg.cell_width_deg)
            # closed top edge: lat_max/lon_max fold into the last cell
            row = min(max(row, 0), n_rows - 1)
            col = min(max(col, 0), n_cols - 1)
            block = (week - 1 + week_off) // cfg.window_weeks
            out.append(self.stixel_at(layer, row, col, block))
        return out

    def all_stixels(self):
        """Every stixel, ordered by (layer, row, col, block)."""
        for layer in range(self.config.layers):
            n_rows, n_cols, n_blocks = self.layer_shape(layer)
            for row in range(n_rows):
                for col in range(n_cols):
                    for block in range(n_blocks):
                        yield self.stixel_at(layer, row, col, block)

    def n_stixels(self) -> int:
        total = 0
        for layer in range(self.config.layers):
            n_rows, n_cols, n_blocks = self.layer_shape(layer)
            total += n_rows * n_cols * n_blocks
        return total


def build_grids(config: StixelConfig, domain: DomainBox) -> StixelGridSet:
    """Lay out K tilings; layer 0 unshifted, others offset from the seed."""
    if config.cell_height_deg > domain.lat_extent:
        raise CellExceedsDomainError(
            f"cell height {config.cell_height_deg} exceeds domain lat extent "
            f"{domain.lat_extent}")
    if config.cell_width_deg > domain.lon_extent:
        raise CellExceedsDomainError(
            f"cell width {config.cell_width_deg} exceeds domain lon extent "
            f"{domain.lon_extent}")
    rng = SplitMix64(derive_seed(config.seed, "grid-offsets"))
    offsets: list[tuple[float, float, int]] = [(0.0, 0.0, 0)]
    for _ in range(1, config.layers):
        lat_off = rng.uniform(0.0, config.cell_height_deg)
        lon_off = rng.uniform(0.0, config.cell_width_deg)
        week_off = rng.randint(0, config.window_weeks - 1)
        offsets.append((lat_off, lon_off, week_off))
    return StixelGridSet(config=config, domain=domain, offsets=tuple(offsets))


def stixels_covering(grids: StixelGridSet, point: GeoPoint, week: int) -> list[str]:
    """Ids of the stixels containing (point, week); exactly one per layer."""
    return [s.id for s in grids.covering(point, week)]


def assign_observations(
    observations: list[Observation], grids: StixelGridSet,
) -> dict[str, list[int]]:
    """Partition observations into stixels, once per layer.

    Returns only non-empty stixels. Each observation id appears exactly
    once per layer, so per-layer totals each equal len(observations).
    """
    assignment: dict[str, list[int]] = {}
    for obs in observations:
        if not grids.domain.contains(obs.point.lat, obs.point.lon):
            raise PointOutOfDomainError(
                f"observation {obs.id} outside domain at "
                f"({obs.point.lat}, {obs.point.lon})")
        for stixel in grids.covering(obs.point, obs.week):
            assignment.setdefault(stixel.id, []).append(obs.id)
    return assignment
