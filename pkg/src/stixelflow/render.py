"""Grayscale occurrence maps as plain (P2) PGM images.

Gray level is round-half-up of occurrence x 255; cells with no prediction
render as 0. Rows run north to south (descending latitude), columns west
to east (ascending longitude).
"""

from __future__ import annotations

import math

from .domain import StixelflowError
from .ensemble import GridPrediction


class WeekNotInPredictionsError(StixelflowError):
    """The requested week does not appear in the prediction table."""


def gray_level(occurrence: float | None) -> int:
    if occurrence is None:
        return 0
    return int(math.floor(occurrence * 255.0 + 0.5))


def rasterize_week(rows: list[GridPrediction], week: int) -> list[list[int]]:
    """Pixel grid for one week, reconstructed from the prediction table."""
    week_rows = [r for r in rows if r.week == week]
    if not week_rows:
        raise WeekNotInPredictionsError(f"week {week} absent from predictions")
    lats = sorted({r.lat for r in week_rows}, reverse=True)  # north first
    lons = sorted({r.lon for r in week_rows})
    by_coord = {(r.lat, r.lon): r.prediction.occurrence for r in week_rows}
    return [[gray_level(by_coord.get((lat, lon))) for lon in lons]
            for lat in lats]


def pgm_bytes(pixels: list[list[int]]) -> bytes:
    height = len(pixels)
    width = len(pixels[0]) if height else 0
    lines = [f"P2\n{width} {height}\n255\n"]
    for row in pixels:
        lines.append(" ".join(str(v) for v in row) + "\n")
    return "".join(lines).encode("ascii")


def write_pgm(pixels: list[list[int]], path) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(pixels))


def render_predictions(rows: list[GridPrediction], week: int, path) -> None:
    write_pgm(rasterize_week(rows, week), path)
