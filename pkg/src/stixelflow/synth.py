"""Synthetic ground truth: a world with known occurrence structure.

The world defines a deterministic, smooth environment field (a sum of
seeded Gaussian bumps per covariate dimension), a true logistic link from
environment to occurrence probability, and a seasonal cosine term peaking
at a configured week. Observations are sampled from it; predictions are
scored against fresh Bernoulli draws so the evaluation measures
generalization, not label recall.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .domain import (
    DomainBox,
    Observation,
    StixelflowError,
    ValidationError,
    check_unique_ids,
    obs_csv_header,
    validate_observation,
)
from .rng import SplitMix64, derive_seed

DEFAULT_EVAL_SEED = 20160927


class HeaderMismatchError(ValidationError):
    """Observation CSV header does not match the expected layout."""


class MalformedRowError(ValidationError):
    """A CSV row failed to parse or validate; carries its line number."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class DegenerateLabelsError(StixelflowError):
    """Evaluation drew only one label class; AUC is undefined."""


@dataclass(frozen=True)
class WorldParams:
    """Knobs of the synthetic generator; defaults give a learnable world
    whose occurrence probabilities spread well toward 0 and 1."""

    n_bumps: int = 16
    seasonal_amplitude: float = 1.5
    seasonal_phase: int = 26       # week of peak occurrence
    weight_scale: float = 5.0
    bias_scale: float = 0.5


@dataclass(frozen=True)
class EvalReport:
    auc: float
    brier: float
    n_points: int


@dataclass(frozen=True, eq=False)
class GroundTruthWorld:
    """Deterministic environment field plus the true occurrence link."""

    seed: int
    domain: DomainBox
    dim: int
    params: WorldParams
    bump_amps: np.ndarray    # (dim, n_bumps)
    bump_lats: np.ndarray
    bump_lons: np.ndarray
    bump_sigmas: np.ndarray
    true_weights: np.ndarray  # (dim + 1,), bias first

    def env_at(self, lats, lons) -> np.ndarray:
        """Environment matrix (n, dim) for coordinate arrays of length n."""
        lats = np.atleast_1d(np.asarray(lats, dtype=np.float64))
        lons = np.atleast_1d(np.asarray(lons, dtype=np.float64))
        d2 = ((lats[:, None, None] - self.bump_lats[None, :, :]) ** 2
              + (lons[:, None, None] - self.bump_lons[None, :, :]) ** 2)
        kernels = np.exp(-d2 / (2.0 * self.bump_sigmas[None, :, :] ** 2))
        return np.sum(self.bump_amps[None, :, :] * kernels, axis=2)

    def env_vector(self, lat: float, lon: float) -> tuple[float, ...]:
        return tuple(float(v) for v in self.env_at([lat], [lon])[0])

    def occurrence_probability(self, lats, lons, weeks) -> np.ndarray:
        """True p(point, week); strictly inside (0, 1) everywhere."""
        env = self.env_at(lats, lons)
        weeks = np.atleast_1d(np.asarray(weeks, dtype=np.float64))
        season = self.params.seasonal_amplitude * np.cos(
            2.0 * np.pi * (weeks - self.params.seasonal_phase) / 52.0)
        z = self.true_weights[0] + env @ self.true_weights[1:] + season
        return 1.0 / (1.0 + np.exp(-z))

    def probability_at(self, lat: float, lon: float, week: int) -> float:
        return float(self.occurrence_probability([lat], [lon], [week])[0])


def generate_world(
    seed: int,
    domain: DomainBox,
    dim: int,
    params: WorldParams = WorldParams(),
) -> GroundTruthWorld:
    """Draw the bump field and true weights; pure function of its inputs."""
    if dim < 1:
        raise ValidationError(f"covariate dimension must be >= 1, got {dim}")
    rng = SplitMix64(derive_seed(seed, "world"))
    pad_lat = 0.2 * domain.lat_extent
    pad_lon = 0.2 * domain.lon_extent
    sigma_lo = 0.08 * min(domain.lat_extent, domain.lon_extent)
    sigma_hi = 0.35 * min(domain.lat_extent, domain.lon_extent)
    amps = np.empty((dim, params.n_bumps))
    clats = np.empty((dim, params.n_bumps))
    clons = np.empty((dim, params.n_bumps))
    sigmas = np.empty((dim, params.n_bumps))
    for d in range(dim):
        for j in range(params.n_bumps):
            amps[d, j] = rng.uniform(-1.0, 1.0)
            clats[d, j] = rng.uniform(domain.lat_min - pad_lat, domain.lat_max + pad_lat)
            clons[d, j] = rng.uniform(domain.lon_min - pad_lon, domain.lon_max + pad_lon)
            sigmas[d, j] = rng.uniform(sigma_lo, sigma_hi)
    weights = np.empty(dim + 1)
    weights[0] = rng.uniform(-params.bias_scale, params.bias_scale)
    for d in range(dim):
        weights[d + 1] = rng.uniform(-params.weight_scale, params.weight_scale)
    return GroundTruthWorld(
        seed=seed, domain=domain, dim=dim, params=params,
        bump_amps=amps, bump_lats=clats, bump_lons=clons, bump_sigmas=sigmas,
        true_weights=weights,
    )


def sample_observations(
    world: GroundTruthWorld,
    n: int,
    seed: int,
    species: str = "sp-001",
    start_id: int = 0,
) -> list[Observation]:
    """n observations: uniform locations/weeks, log-uniform effort,
    Bernoulli(p) presence with a small integer count on top."""
    if n < 0:
        raise ValidationError(f"n must be >= 0, got {n}")
    rng = SplitMix64(derive_seed(seed, "sample-observations"))
    dom = world.domain
    lats = np.empty(n)
    lons = np.empty(n)
    weeks = np.empty(n, dtype=np.int64)
    efforts = np.empty(n)
    presence_u = np.empty(n)
    noise = np.empty(n, dtype=np.int64)
    log_lo, log_hi = math.log(0.1), math.log(6.0)
    for i in range(n):
        lats[i] = rng.uniform(dom.lat_min, dom.lat_max)
        lons[i] = rng.uniform(dom.lon_min, dom.lon_max)
        weeks[i] = rng.randint(1, 52)
        efforts[i] = math.exp(rng.uniform(log_lo, log_hi))
        presence_u[i] = rng.uniform()
        noise[i] = rng.randint(0, 2)
    if n == 0:
        return []
    env = world.env_at(lats, lons)
    p = world.occurrence_probability(lats, lons, weeks)
    present = presence_u < p
    counts = np.where(present, 1 + noise, 0)
    out = []
    for i in range(n):
        out.append(validate_observation(
            id=start_id + i,
            lat=float(lats[i]),
            lon=float(lons[i]),
            week=int(weeks[i]),
            effort_hours=float(efforts[i]),
            species=species,
            count=int(counts[i]),
            env=tuple(float(v) for v in env[i]),
            domain=dom,
            dim=world.dim,
        ))
    return out


# ---------------------------------------------------------------------------
# evaluation

def auc_midrank(scores, labels) -> float:
    """Rank-sum AUC with midranks for tied scores.

    Mathematically identical to the all-pairs count (ties at half credit);
    the brute-force pairwise version lives in the test suite as the oracle.
    """
    scores = list(map(float, scores))
    labels = list(map(int, labels))
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("need at least one positive and one negative label")
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        midrank = (i + j) / 2.0 + 1.0  # ranks are 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = midrank
        i = j + 1
    rank_sum_pos = sum(r for r, y in zip(ranks, labels) if y == 1)
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate_predictions(
    predictions,
    world: GroundTruthWorld,
    eval_seed: int = DEFAULT_EVAL_SEED,
) -> EvalReport:
    """Score (lat, lon, week, occurrence) rows against fresh label draws.

    Labels are re-drawn Bernoulli(true p) from the evaluation stream, not
    reused from training, so the score reflects unsampled places/times.
    """
    rows = [(float(lat), float(lon), int(week), float(occ))
            for lat, lon, week, occ in predictions]
    if not rows:
        raise DegenerateLabelsError("no scored predictions to evaluate")
    rng = SplitMix64(derive_seed(eval_seed, "evaluation-labels"))
    lats = np.asarray([r[0] for r in rows])
    lons = np.asarray([r[1] for r in rows])
    weeks = np.asarray([r[2] for r in rows])
    scores = [r[3] for r in rows]
    p = world.occurrence_probability(lats, lons, weeks)
    labels = [1 if rng.uniform() < p[i] else 0 for i in range(len(rows))]
    auc = auc_midrank(scores, labels)
    brier = float(np.mean((np.asarray(scores) - np.asarray(labels, dtype=float)) ** 2))
    return EvalReport(auc=auc, brier=brier, n_points=len(rows))


# ---------------------------------------------------------------------------
# observation CSV

def write_observations(observations: list[Observation], path, dim: int | None = None) -> None:
    """Observation CSV with full round-trip float precision."""
    if dim is None:
        if not observations:
            raise ValidationError("dim is required to write an empty observation CSV")
        dim = len(observations[0].env)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(obs_csv_header(dim))
        for o in observations:
            writer.writerow([
                o.id,
                repr(float(o.point.lat)),
                repr(float(o.point.lon)),
                o.week,
                repr(float(o.effort_hours)),
                o.species,
                o.count,
                *[repr(float(v)) for v in o.env],
            ])


def read_observations(path, domain: DomainBox) -> list[Observation]:
    """Parse and validate an observation CSV; errors carry line numbers."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise HeaderMismatchError("empty file: missing observation CSV header")
        if (len(header) < 8 or header[:7] != obs_csv_header(0)[:7]
                or header[7:] != [f"env_{i}" for i in range(len(header) - 7)]):
            raise HeaderMismatchError(f"unexpected observation CSV header: {header}")
        dim = len(header) - 7
        out: list[Observation] = []
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise MalformedRowError(line_no, f"expected {len(header)} fields, got {len(rec)}")
            try:
                out.append(validate_observation(
                    id=int(rec[0]),
                    lat=float(rec[1]),
                    lon=float(rec[2]),
                    week=int(rec[3]),
                    effort_hours=float(rec[4]),
                    species=rec[5],
                    count=int(rec[6]),
                    env=tuple(float(v) for v in rec[7:]),
                    domain=domain,
                    dim=dim,
                ))
            except (ValueError, ValidationError) as exc:
                raise MalformedRowError(line_no, str(exc)) from exc
        check_unique_ids(out)
        return out


# ---------------------------------------------------------------------------
# world.cfg persistence

def write_world_config(world: GroundTruthWorld, path) -> None:
    """Flat key=value file; enough to regenerate the world exactly."""
    items = [
        ("seed", world.seed),
        ("lat_min", repr(world.domain.lat_min)),
        ("lat_max", repr(world.domain.lat_max)),
        ("lon_min", repr(world.domain.lon_min)),
        ("lon_max", repr(world.domain.lon_max)),
        ("dim", world.dim),
        ("n_bumps", world.params.n_bumps),
        ("seasonal_amplitude", repr(world.params.seasonal_amplitude)),
        ("seasonal_phase", world.params.seasonal_phase),
        ("weight_scale", repr(world.params.weight_scale)),
        ("bias_scale", repr(world.params.bias_scale)),
    ]
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items:
            fh.write(f"{key}={value}\n")


def load_world(path) -> GroundTruthWorld:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"malformed world.cfg line: {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    try:
        domain = DomainBox(
            lat_min=float(values["lat_min"]), lat_max=float(values["lat_max"]),
            lon_min=float(values["lon_min"]), lon_max=float(values["lon_max"]),
        )
        params = WorldParams(
            n_bumps=int(values["n_bumps"]),
            seasonal_amplitude=float(values["seasonal_amplitude"]),
            seasonal_phase=int(values["seasonal_phase"]),
            weight_scale=float(values["weight_scale"]),
            bias_scale=float(values["bias_scale"]),
        )
        return generate_world(int(values["seed"]), domain, int(values["dim"]), params)
    except KeyError as exc:
        raise ValidationError(f"world.cfg missing key {exc}") from exc
