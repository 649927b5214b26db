from __future__ import annotations

import math
from dataclasses import replace

import pytest

from stixelflow.domain import DomainBox, GeoPoint, PointOutOfDomainError, ValidationError
from stixelflow.ensemble import (
    ABSENT_PREDICTION,
    EnsemblePrediction,
    FittedEnsemble,
    GridPrediction,
    StixelModel,
    ensemble_from_json,
    ensemble_to_json,
    fit_species,
    load_ensemble,
    predict_grid,
    predict_point,
    prediction_csv_bytes,
    read_predictions,
    train_stixel,
    write_ensemble,
    write_predictions,
)
from stixelflow.grids import StixelConfig, build_grids, stixels_covering
from stixelflow.learner import default_learner
from stixelflow.synth import generate_world, sample_observations

DOM = DomainBox(0.0, 100.0, 0.0, 100.0)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def constant_model(sid: str, p: float, mean_count: float = 1.0, dim: int = 2) -> StixelModel:
    """A model that predicts probability p for every environment."""
    return StixelModel(stixel_id=sid, weights=(logit(p),) + (0.0,) * dim,
                       n_train=10, mean_count=mean_count)


def two_layer_ensemble(p0: float, p1: float) -> FittedEnsemble:
    cfg = StixelConfig(100.0, 100.0, 52, 2, min_train=1, seed=1)
    grids = build_grids(cfg, DOM)
    ids = stixels_covering(grids, GeoPoint(50.0, 50.0), 10)
    models = {ids[0]: constant_model(ids[0], p0, mean_count=2.0),
              ids[1]: constant_model(ids[1], p1, mean_count=4.0)}
    return FittedEnsemble(grids=grids, models=models, species="sp")


def test_average_of_two_models():
    ens = two_layer_ensemble(0.2, 0.6)
    pred = predict_point(ens, (0.0, 0.0), GeoPoint(50.0, 50.0), 10)
    assert pred.n_contributing == 2
    assert pred.occurrence == pytest.approx(0.4, abs=1e-12)
    assert pred.abundance == pytest.approx(3.0, abs=1e-12)


def test_no_covering_model_gives_absent_flag():
    cfg = StixelConfig(100.0, 100.0, 52, 2, min_train=1, seed=1)
    grids = build_grids(cfg, DOM)
    ens = FittedEnsemble(grids=grids, models={}, species="sp")
    pred = predict_point(ens, (0.0, 0.0), GeoPoint(50.0, 50.0), 10)
    assert pred == ABSENT_PREDICTION
    assert pred.is_absent and pred.n_contributing == 0


def test_sparse_layer_is_excluded_from_the_mean():
    # K=3; one layer's stixel has no model; average over the other two
    cfg = StixelConfig(100.0, 100.0, 52, 3, min_train=1, seed=2)
    grids = build_grids(cfg, DOM)
    ids = stixels_covering(grids, GeoPoint(10.0, 10.0), 5)
    models = {ids[0]: constant_model(ids[0], 0.3),
              ids[2]: constant_model(ids[2], 0.9)}
    ens = FittedEnsemble(grids=grids, models=models, species="sp")
    pred = predict_point(ens, (0.0, 0.0), GeoPoint(10.0, 10.0), 5)
    assert pred.n_contributing == 2
    assert pred.occurrence == pytest.approx(0.6, abs=1e-12)


def test_prediction_invariant_absent_must_be_flagged():
    with pytest.raises(ValidationError):
        EnsemblePrediction(occurrence=0.5, abundance=None, n_contributing=0)


def test_train_stixel_below_threshold_returns_none(small_obs):
    subset = small_obs[:5]
    assert train_stixel(subset, default_learner(), 1, stixel_id="0-0-0-0",
                        min_train=10) is None


def test_train_stixel_mean_count_and_order_normalization(small_obs):
    subset = list(small_obs[:20])
    model = train_stixel(subset, default_learner(), 1, stixel_id="0-0-0-0",
                         min_train=10)
    shuffled = list(reversed(subset))
    model2 = train_stixel(shuffled, default_learner(), 1, stixel_id="0-0-0-0",
                          min_train=10)
    assert model == model2  # sorted by id before training
    assert model.n_train == 20
    assert model.mean_count == pytest.approx(
        sum(o.count for o in subset) / 20.0)


def test_fit_species_is_deterministic(small_obs, small_config, domain):
    a = fit_species(small_obs, small_config, domain)
    b = fit_species(small_obs, small_config, domain)
    assert ensemble_to_json(a) == ensemble_to_json(b)


def test_fit_species_zero_observations(domain):
    cfg = StixelConfig(25.0, 25.0, 13, 2, seed=3)
    ens = fit_species([], cfg, domain)
    assert ens.models == {}
    assert ens.grids.n_stixels() > 0
    assert ens.species == "unspecified"


def test_fit_species_min_train_is_respected(small_obs, small_config, domain):
    ens = fit_species(small_obs, small_config, domain)
    assert ens.models
    assert all(m.n_train >= small_config.min_train for m in ens.models.values())


def test_retraining_one_stixel_leaves_others_untouched(domain):
    """Perturbing data confined to one cell only changes that cell's model."""
    world = generate_world(21, domain, 2)
    obs = sample_observations(world, 600, 21)
    cfg = StixelConfig(25.0, 25.0, 52, 1, min_train=5, seed=21)
    base = fit_species(obs, cfg, domain)

    target_cell = next(iter(sorted(base.models)))
    grids = build_grids(cfg, domain)
    target = grids.by_id(target_cell)

    def in_target(o):
        return (target.lat_lo <= o.point.lat < target.lat_hi
                and target.lon_lo <= o.point.lon < target.lon_hi)

    changed = [replace(o, count=o.count + 1) if in_target(o) else o for o in obs]
    assert any(in_target(o) for o in obs)
    refit = fit_species(changed, cfg, domain)
    for sid, model in base.models.items():
        if sid == target_cell:
            assert refit.models[sid] != model
        else:
            assert refit.models[sid] == model


def test_predict_point_outside_domain_rejected(small_obs, small_config, domain):
    ens = fit_species(small_obs[:50], small_config, domain)
    with pytest.raises(PointOutOfDomainError):
        predict_point(ens, (0.0,) * 4, GeoPoint(-5.0, 5.0), 1)


def test_predict_grid_cardinality_and_order():
    ens = two_layer_ensemble(0.2, 0.6)
    env = (0.0, 0.0)
    points = [(GeoPoint(10.0, 10.0), env)]
    rows = predict_grid(ens, points, list(range(1, 53)))
    assert len(rows) == 52
    assert [r.week for r in rows] == list(range(1, 53))

    many = [(GeoPoint(10.0 * i + 5.0, 42.0), env) for i in range(9)]
    forward = predict_grid(ens, many, [1, 2])
    backward = predict_grid(ens, list(reversed(many)), [1, 2])
    assert forward == [
        backward[(8 - i) * 2 + k] for i in range(9) for k in range(2)]


def test_predict_grid_matches_per_point_loop(small_obs, small_config, domain, world):
    ens = fit_species(small_obs, small_config, domain)
    import numpy as np

    from stixelflow.rng import SplitMix64

    rng = SplitMix64(31)
    pts = [GeoPoint(rng.uniform(0.0, 100.0), rng.uniform(0.0, 100.0))
           for _ in range(1000)]
    env = world.env_at([p.lat for p in pts], [p.lon for p in pts])
    points_with_env = [(p, tuple(float(v) for v in env[i]))
                       for i, p in enumerate(pts)]
    weeks = list(range(1, 53))
    rows = predict_grid(ens, points_with_env, weeks)
    assert len(rows) == 52000
    # spot-check alignment against the per-point path
    idx = 0
    for p, e in points_with_env[:20]:
        for week in weeks:
            assert rows[idx].prediction == predict_point(ens, e, p, week)
            idx += 1
    # full-table equivalence on a strided sample
    for idx in range(0, len(rows), 997):
        row = rows[idx]
        p, e = points_with_env[idx // 52]
        assert row.prediction == predict_point(ens, e, p, row.week)


def test_occurrence_bounds_hold_everywhere(small_obs, small_config, domain, world):
    ens = fit_species(small_obs, small_config, domain)
    from stixelflow.rng import SplitMix64

    rng = SplitMix64(77)
    for _ in range(200):
        point = GeoPoint(rng.uniform(0.0, 100.0), rng.uniform(0.0, 100.0))
        env = world.env_vector(point.lat, point.lon)
        pred = predict_point(ens, env, point, rng.randint(1, 52))
        assert 0 <= pred.n_contributing <= small_config.layers
        if pred.n_contributing:
            assert 0.0 <= pred.occurrence <= 1.0
            assert pred.abundance >= 0.0


def test_all_members_agree_mean_equals_member():
    ens = two_layer_ensemble(0.35, 0.35)
    pred = predict_point(ens, (0.0, 0.0), GeoPoint(50.0, 50.0), 10)
    member = default_learner().predict_probability(
        next(iter(ens.models.values())).weights, (0.0, 0.0))
    assert pred.occurrence == pytest.approx(member, abs=1e-15)


def test_ensemble_json_round_trip(small_obs, small_config, domain, tmp_path):
    ens = fit_species(small_obs, small_config, domain)
    path = tmp_path / "ens.json"
    write_ensemble(ens, path)
    back = load_ensemble(path)
    assert ensemble_to_json(back) == ensemble_to_json(ens)
    assert back.models == ens.models
    assert back.grids == ens.grids


def test_ensemble_rejects_unresolvable_model_id(domain):
    cfg = StixelConfig(100.0, 100.0, 52, 1, seed=1)
    grids = build_grids(cfg, domain)
    with pytest.raises(ValidationError):
        FittedEnsemble(grids=grids,
                       models={"0-5-5-0": constant_model("0-5-5-0", 0.5)},
                       species="sp")


def test_prediction_csv_round_trip(tmp_path):
    rows = [
        GridPrediction(10.0, 20.0, 1, EnsemblePrediction(0.25, 1.5, 3)),
        GridPrediction(10.0, 30.0, 1, ABSENT_PREDICTION),
        GridPrediction(1 / 3, 2 / 3, 52, EnsemblePrediction(1 / 7, 22.25, 10)),
    ]
    path = tmp_path / "preds.csv"
    write_predictions(rows, path)
    back = read_predictions(path)
    assert back == rows
    text = prediction_csv_bytes(rows).decode()
    assert text.splitlines()[0] == "lat,lon,week,occurrence,abundance,n_contributing"
    assert ",,," not in text.splitlines()[1]
    assert text.splitlines()[2].endswith(",,,0")  # absent rendered empty
