"""Step 2 and 3 of the pipeline: per-stixel models and prediction averaging.

A fitted ensemble is the grid geometry plus one trained model per stixel
that had enough data. Predicting at a (point, week) means averaging the
occurrence probabilities and mean counts of the covering stixels' models;
stixels without a model simply do not contribute. Fitting is a pure
function of (observations, config, domain, learner), so repeated runs are
bit-identical.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .domain import (
    DomainBox,
    GeoPoint,
    Observation,
    StixelflowError,
    ValidationError,
    check_unique_ids,
)
from .grids import StixelConfig, StixelGridSet, assign_observations, build_grids
from .learner import LogisticGD, default_learner
from .rng import derive_seed


class MixedSpeciesError(ValidationError):
    """fit_species runs one species at a time."""


class AbsentPredictionError(StixelflowError):
    """Occurrence/abundance requested from a prediction with no contributors."""


@dataclass(frozen=True)
class StixelModel:
    """Trained weights plus the abundance summary for one stixel."""

    stixel_id: str
    weights: tuple[float, ...]  # bias first, then one weight per covariate
    n_train: int
    mean_count: float


@dataclass(frozen=True)
class EnsemblePrediction:
    """Averaged occurrence/abundance; absent when nothing covered the query."""

    occurrence: float | None
    abundance: float | None
    n_contributing: int

    def __post_init__(self) -> None:
        if self.n_contributing == 0 and not (
                self.occurrence is None and self.abundance is None):
            raise ValidationError(
                "prediction with zero contributors must be flagged absent")

    @property
    def is_absent(self) -> bool:
        return self.n_contributing == 0


ABSENT_PREDICTION = EnsemblePrediction(None, None, 0)


@dataclass(frozen=True)
class FittedEnsemble:
    grids: StixelGridSet
    models: dict[str, StixelModel]
    species: str

    def __post_init__(self) -> None:
        for sid in self.models:
            self.grids.by_id(sid)  # raises if an id does not resolve


@dataclass(frozen=True)
class GridPrediction:
    """One output row of predict_grid."""

    lat: float
    lon: float
    week: int
    prediction: EnsemblePrediction


def train_stixel(
    subset: list[Observation],
    learner: LogisticGD,
    seed: int,
    *,
    stixel_id: str,
    min_train: int,
) -> StixelModel | None:
    """Train one stixel's model, or return None when data is insufficient.

    The subset is order-normalized by observation id before training, so
    results do not depend on assignment order.
    """
    if len(subset) < min_train:
        return None
    ordered = sorted(subset, key=lambda o: o.id)
    X = np.asarray([o.env for o in ordered], dtype=np.float64)
    y = np.asarray([1.0 if o.presence else 0.0 for o in ordered], dtype=np.float64)
    weights = learner.train(X, y, seed)
    mean_count = float(sum(o.count for o in ordered)) / len(ordered)
    return StixelModel(
        stixel_id=stixel_id,
        weights=weights,
        n_train=len(ordered),
        mean_count=mean_count,
    )


def predict_point(
    ensemble: FittedEnsemble,
    env,
    point: GeoPoint,
    week: int,
    learner: LogisticGD | None = None,
) -> EnsemblePrediction:
    """Average the covering stixels' model outputs at one (point, week)."""
    learner = learner or default_learner()
    occ_sum = 0.0
    abu_sum = 0.0
    n = 0
    for stixel in ensemble.grids.covering(point, week):
        model = ensemble.models.get(stixel.id)
        if model is None:
            continue
        occ_sum += learner.predict_probability(model.weights, env)
        abu_sum += model.mean_count
        n += 1
    if n == 0:
        return ABSENT_PREDICTION
    return EnsemblePrediction(occurrence=occ_sum / n, abundance=abu_sum / n,
                              n_contributing=n)


def species_of(observations: list[Observation]) -> str:
    """The single species in a dataset; 'unspecified' for an empty one."""
    names = {o.species for o in observations}
    if len(names) > 1:
        raise MixedSpeciesError(
            f"dataset mixes species {sorted(names)}; fit one at a time")
    return names.pop() if names else "unspecified"


def task_seed(config: StixelConfig, stixel_id: str) -> int:
    """Per-stixel training seed; stable across schedules and platforms."""
    return derive_seed(config.seed, f"train:{stixel_id}")


def fit_species(
    observations: list[Observation],
    config: StixelConfig,
    domain: DomainBox,
    learner: LogisticGD | None = None,
) -> FittedEnsemble:
    """Grid construction, assignment and per-stixel training in one pass.

    This is the serial reference: the execution engine must produce a
    bit-identical ensemble for any worker count or failure schedule.
    """
    learner = learner or default_learner()
    check_unique_ids(observations)
    species = species_of(observations)
    grids = build_grids(config, domain)
    assignment = assign_observations(observations, grids)
    by_id = {o.id: o for o in observations}
    models: dict[str, StixelModel] = {}
    for sid in sorted(assignment, key=lambda s: tuple(int(p) for p in s.split("-"))):
        subset = [by_id[i] for i in assignment[sid]]
        model = train_stixel(subset, learner, task_seed(config, sid),
                             stixel_id=sid, min_train=config.min_train)
        if model is not None:
            models[sid] = model
    return FittedEnsemble(grids=grids, models=models, species=species)


def predict_grid(
    ensemble: FittedEnsemble,
    points_with_env: list[tuple[GeoPoint, tuple[float, ...]]],
    weeks: list[int],
    learner: LogisticGD | None = None,
) -> list[GridPrediction]:
    """One prediction per (point, week), points outer, weeks inner."""
    learner = learner or default_learner()
    rows: list[GridPrediction] = []
    for point, env in points_with_env:
        for week in weeks:
            pred = predict_point(ensemble, env, point, week, learner)
            rows.append(GridPrediction(point.lat, point.lon, week, pred))
    return rows


# ---------------------------------------------------------------------------
# serialization

def ensemble_to_json(ensemble: FittedEnsemble) -> str:
    """Canonical JSON: sorted keys, fixed separators, round-trip floats."""
    payload = {
        "species": ensemble.species,
        "domain": {
            "lat_min": ensemble.grids.domain.lat_min,
            "lat_max": ensemble.grids.domain.lat_max,
            "lon_min": ensemble.grids.domain.lon_min,
            "lon_max": ensemble.grids.domain.lon_max,
        },
        "config": {
            "cell_width_deg": ensemble.grids.config.cell_width_deg,
            "cell_height_deg": ensemble.grids.config.cell_height_deg,
            "window_weeks": ensemble.grids.config.window_weeks,
            "layers": ensemble.grids.config.layers,
            "min_train": ensemble.grids.config.min_train,
            "seed": ensemble.grids.config.seed,
        },
        "offsets": [list(o) for o in ensemble.grids.offsets],
        "models": {
            sid: {
                "weights": list(m.weights),
                "n_train": m.n_train,
                "mean_count": m.mean_count,
            }
            for sid, m in ensemble.models.items()
        },
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def ensemble_from_json(text: str) -> FittedEnsemble:
    payload = json.loads(text)
    domain = DomainBox(**payload["domain"])
    config = StixelConfig(**payload["config"])
    offsets = tuple((float(a), float(b), int(c)) for a, b, c in payload["offsets"])
    grids = StixelGridSet(config=config, domain=domain, offsets=offsets)
    models = {
        sid: StixelModel(
            stixel_id=sid,
            weights=tuple(float(w) for w in m["weights"]),
            n_train=int(m["n_train"]),
            mean_count=float(m["mean_count"]),
        )
        for sid, m in payload["models"].items()
    }
    return FittedEnsemble(grids=grids, models=models, species=payload["species"])


def write_ensemble(ensemble: FittedEnsemble, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ensemble_to_json(ensemble))
        fh.write("\n")


def load_ensemble(path) -> FittedEnsemble:
    with open(path, "r", encoding="utf-8") as fh:
        return ensemble_from_json(fh.read())


PREDICTION_HEADER = ["lat", "lon", "week", "occurrence", "abundance",
                     "n_contributing"]


def prediction_csv_bytes(rows: list[GridPrediction]) -> bytes:
    """Prediction table CSV; absent rows have empty occurrence/abundance."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(PREDICTION_HEADER)
    for row in rows:
        p = row.prediction
        writer.writerow([
            repr(float(row.lat)),
            repr(float(row.lon)),
            row.week,
            "" if p.occurrence is None else repr(float(p.occurrence)),
            "" if p.abundance is None else repr(float(p.abundance)),
            p.n_contributing,
        ])
    return buf.getvalue().encode("utf-8")


def write_predictions(rows: list[GridPrediction], path) -> None:
    with open(path, "wb") as fh:
        fh.write(prediction_csv_bytes(rows))


def read_predictions(path) -> list[GridPrediction]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PREDICTION_HEADER:
            raise ValidationError(f"prediction CSV header mismatch: {header}")
        rows = []
        for rec in reader:
            lat, lon, week, occ, abu, n = rec
            pred = EnsemblePrediction(
                occurrence=float(occ) if occ else None,
                abundance=float(abu) if abu else None,
                n_contributing=int(n),
            )
            rows.append(GridPrediction(float(lat), float(lon), int(week), pred))
        return rows
