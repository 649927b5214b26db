from __future__ import annotations

import os

import pytest

from stixelflow.domain import DomainBox
from stixelflow.engine import (
    CheckpointConflictError,
    DirectoryCheckpointStore,
    EngineFleet,
    InMemoryCheckpointStore,
    PipelineStalledError,
    RunRecord,
    TaskResult,
    TaskSpec,
    Worker,
    always_on_fleet,
    estimate_core_hours,
    fit_with_pipeline,
    fleet_with_outages,
    plan_tasks,
    run_pipeline,
    task_duration,
)
from stixelflow.ensemble import StixelModel, ensemble_to_json, fit_species
from stixelflow.grids import StixelConfig, build_grids
from stixelflow.learner import default_learner
from stixelflow.synth import generate_world, sample_observations

DOM = DomainBox(0.0, 100.0, 0.0, 100.0)


@pytest.fixture(scope="module")
def planned(small_obs, small_config, domain):
    tasks = plan_tasks(small_obs, small_config, domain)
    grids = build_grids(small_config, domain)
    by_id = {o.id: o for o in small_obs}
    reference = ensemble_to_json(fit_species(small_obs, small_config, domain))
    return tasks, grids, by_id, reference


def run(tasks, grids, by_id, fleet, store=None, sink=None):
    return run_pipeline(tasks, by_id, grids, default_learner(), fleet,
                        store if store is not None else InMemoryCheckpointStore(),
                        event_sink=sink)


# ---------------------------------------------------------------------------
# planning

def test_plan_single_stixel_grid(small_obs, domain):
    cfg = StixelConfig(100.0, 100.0, 52, 1, seed=1)
    tasks = plan_tasks(small_obs[:20], cfg, domain)
    assert len(tasks) == 1
    assert tasks[0].obs_ids == tuple(o.id for o in small_obs[:20])
    assert tasks[0].estimated_duration == task_duration(20)


def test_plan_empty_dataset(domain):
    cfg = StixelConfig(25.0, 25.0, 13, 2, seed=1)
    assert plan_tasks([], cfg, domain) == []


def test_plan_is_deterministically_ordered(planned, small_config):
    tasks, _, _, _ = planned
    keys = [tuple(int(p) for p in t.stixel_id.split("-")) for t in tasks]
    assert keys == sorted(keys)
    assert len({t.key for t in tasks}) == len(tasks)


def test_paper_analog_scale_plans_over_10k_stixels(domain):
    """A configuration yielding >10,000 non-empty stixels plans cleanly."""
    world = generate_world(1, domain, 2)
    obs = sample_observations(world, 20_000, 1)
    cfg = StixelConfig(cell_width_deg=5.0, cell_height_deg=5.0,
                       window_weeks=13, layers=8, min_train=10, seed=1)
    tasks = plan_tasks(obs, cfg, domain)
    assert len(tasks) > 10_000
    per_layer_refs = {}
    for t in tasks:
        layer = int(t.stixel_id.split("-")[0])
        per_layer_refs[layer] = per_layer_refs.get(layer, 0) + len(t.obs_ids)
    assert all(v == len(obs) for v in per_layer_refs.values())


# ---------------------------------------------------------------------------
# execution

def test_worker_counts_do_not_change_the_ensemble(planned):
    tasks, grids, by_id, reference = planned
    for n in (1, 8):
        ens, record = run(tasks, grids, by_id, always_on_fleet(n))
        assert ensemble_to_json(ens) == reference
        assert record.n_tasks == len(tasks)
        assert record.n_attempts == len(tasks)
        assert record.n_preemptions == 0


def test_more_workers_shrink_wall_clock_not_core_hours(planned):
    tasks, grids, by_id, _ = planned
    _, one = run(tasks, grids, by_id, always_on_fleet(1))
    _, eight = run(tasks, grids, by_id, always_on_fleet(8))
    assert eight.wall_seconds < one.wall_seconds
    assert eight.cpu_seconds_total == one.cpu_seconds_total
    assert one.wall_seconds == pytest.approx(one.cpu_seconds_total)


def test_no_failure_core_hours_equal_sum_of_durations(planned):
    tasks, grids, by_id, _ = planned
    _, record = run(tasks, grids, by_id, always_on_fleet(4))
    expected = sum(t.estimated_duration for t in tasks) / 3600.0
    assert estimate_core_hours(record) == pytest.approx(expected, rel=1e-12)


def test_killing_each_worker_once_keeps_results_and_costs_more(planned):
    tasks, grids, by_id, reference = planned
    _, clean = run(tasks, grids, by_id, always_on_fleet(4))
    total = sum(t.estimated_duration for t in tasks)
    mid = total / 4 / 2
    fleet = fleet_with_outages(
        4, {i: [(mid + 11.0 * i, mid + 11.0 * i + 40.0)] for i in range(4)})
    ens, record = run(tasks, grids, by_id, fleet)
    assert ensemble_to_json(ens) == reference
    assert record.n_preemptions == 4
    assert record.n_attempts > record.n_tasks
    assert record.cpu_seconds_total > clean.cpu_seconds_total


def test_interrupt_then_resume_skips_completed_tasks(planned, tmp_path):
    tasks, grids, by_id, reference = planned
    store = DirectoryCheckpointStore(tmp_path / "store")
    total = sum(t.estimated_duration for t in tasks)
    cutoff = total / 2  # one worker: roughly half the tasks finish
    dying = EngineFleet((Worker(0, "w0", ((0.0, cutoff),)),))
    with pytest.raises(PipelineStalledError) as stall:
        run(tasks, grids, by_id, dying, store=store)
    assert 0 < stall.value.completed < len(tasks)
    assert 0.0 < stall.value.completed_fraction < 1.0

    first_manifest = store.load_manifest()
    completed_keys = [t.key for t in tasks if store.has_result(t.key)]
    assert len(completed_keys) == stall.value.completed

    ens, record = run(tasks, grids, by_id, always_on_fleet(2), store=store)
    assert ensemble_to_json(ens) == reference
    final_manifest = store.load_manifest()
    for key in completed_keys:
        assert final_manifest[key][0] == 1  # never re-executed
        assert final_manifest[key] == first_manifest[key]


def test_store_contents_match_uninterrupted_run(planned, tmp_path):
    tasks, grids, by_id, _ = planned
    interrupted = DirectoryCheckpointStore(tmp_path / "a")
    total = sum(t.estimated_duration for t in tasks)
    dying = EngineFleet((Worker(0, "w0", ((0.0, total / 3),)),))
    with pytest.raises(PipelineStalledError):
        run(tasks, grids, by_id, dying, store=interrupted)
    run(tasks, grids, by_id, always_on_fleet(3), store=interrupted)

    clean = DirectoryCheckpointStore(tmp_path / "b")
    run(tasks, grids, by_id, always_on_fleet(1), store=clean)
    for t in tasks:
        assert interrupted.load_result(t.key) == clean.load_result(t.key)


def test_all_workers_dead_forever_raises_with_zero_progress(planned):
    tasks, grids, by_id, _ = planned
    fleet = EngineFleet((Worker(0, "w0", ()),))
    with pytest.raises(PipelineStalledError) as err:
        run(tasks, grids, by_id, fleet)
    assert err.value.completed == 0
    assert err.value.completed_fraction == 0.0


def test_monotone_cost_under_more_preemptions(planned):
    tasks, grids, by_id, _ = planned
    total = sum(t.estimated_duration for t in tasks)
    costs = []
    for n_outages in (0, 1, 3):
        outages = {0: [(total / 8 * (k + 1), total / 8 * (k + 1) + 25.0)
                       for k in range(n_outages)]}
        fleet = fleet_with_outages(2, outages)
        _, record = run(tasks, grids, by_id, fleet)
        costs.append(record.cpu_seconds_total)
    assert costs[0] <= costs[1] <= costs[2]
    assert costs[0] < costs[2]


def test_event_log_order_is_deterministic(planned):
    tasks, grids, by_id, _ = planned
    logs = []
    for _ in range(2):
        events = []
        run(tasks, grids, by_id, always_on_fleet(3),
            sink=lambda t, ev, inst, detail: events.append((t, ev, inst, detail)))
        logs.append(tuple(events))
    assert logs[0] == logs[1]
    kinds = {e[1] for e in logs[0]}
    assert {"run-start", "instance-up", "task-dispatch", "task-complete",
            "run-complete"} <= kinds


# ---------------------------------------------------------------------------
# accounting and stores

def test_estimate_core_hours_simple_arithmetic():
    record = RunRecord(species="sp", cpu_seconds_total=3600.0,
                       wall_seconds=1800.0, n_tasks=2, n_attempts=2,
                       n_preemptions=0)
    assert estimate_core_hours(record) == 1.0  # 2 attempts of 1800 s


def test_task_result_json_round_trip():
    model = StixelModel("0-0-0-0", (0.5, -1.25), 12, 0.75)
    result = TaskResult("sp", "0-0-0-0", model, 17.5)
    assert TaskResult.from_json(result.to_json()) == result
    empty = TaskResult("sp", "0-0-0-1", None, 2.0)
    assert TaskResult.from_json(empty.to_json()) == empty


def test_checkpoint_store_is_write_once(tmp_path):
    for store in (InMemoryCheckpointStore(),
                  DirectoryCheckpointStore(tmp_path / "s")):
        a = TaskResult("sp", "0-0-0-0", None, 2.0)
        conflicting = TaskResult("sp", "0-0-0-0", None, 3.0)
        store.commit_result(a)
        store.commit_result(a)  # idempotent re-commit is fine
        with pytest.raises(CheckpointConflictError):
            store.commit_result(conflicting)
        assert store.load_result(a.key) == a


def test_directory_store_layout(tmp_path):
    store = DirectoryCheckpointStore(tmp_path / "ckpt")
    result = TaskResult("sp one", "2-1-0-3", None, 2.0)
    store.commit_result(result)
    store.write_manifest({result.key: (1, 2.0)})
    assert (tmp_path / "ckpt" / "sp%20one" / "2-1-0-3.result").exists()
    manifest_text = (tmp_path / "ckpt" / "manifest.csv").read_text()
    assert manifest_text.splitlines()[0] == "task_id,attempts,cpu_seconds"
    assert "sp one/2-1-0-3,1,2.0" in manifest_text


def test_fit_with_pipeline_matches_fit_species(small_obs, small_config, domain):
    ens, record = fit_with_pipeline(small_obs, small_config, domain,
                                    fleet=always_on_fleet(5))
    assert ensemble_to_json(ens) == ensemble_to_json(
        fit_species(small_obs, small_config, domain))
    assert record.n_tasks > 0


def test_zero_tasks_run(domain):
    cfg = StixelConfig(25.0, 25.0, 13, 1, seed=1)
    ens, record = fit_with_pipeline([], cfg, domain)
    assert ens.models == {}
    assert record.n_tasks == 0
    assert record.wall_seconds == 0.0
