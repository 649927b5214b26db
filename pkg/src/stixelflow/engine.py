"""Execution engine: idempotent task sets on a preemptible worker fleet.

A species fit becomes one task per non-empty stixel. Workers are logical
executors driven by a deterministic discrete-event loop over simulated
time; each worker belongs to a group (an instance), and groups can be
taken away mid-run. In-flight work on a preempted worker is lost entirely
and the task is retried later with an unchanged seed, so the assembled
ensemble is bit-identical to a serial run for every schedule that lets the
workload finish.

Completed results are committed exactly once to a write-once checkpoint
store; interrupted runs resume by skipping every task that already has a
stored result.
"""

from __future__ import annotations

import collections
import csv
import heapq
import json
import math
import os
import urllib.parse
from dataclasses import dataclass, field

from .domain import DomainBox, Observation, StixelflowError, check_unique_ids
from .ensemble import (
    FittedEnsemble,
    StixelModel,
    species_of,
    task_seed,
    train_stixel,
)
from .grids import StixelConfig, StixelGridSet, assign_observations, build_grids
from .learner import LogisticGD, default_learner

# simulated task cost model: a fixed setup plus a per-observation term
DURATION_BASE_S = 2.0
DURATION_PER_OBS_S = 0.05


class CheckpointConflictError(StixelflowError):
    """A stored result would be overwritten with a different value."""


class PipelineStalledError(StixelflowError):
    """The workload cannot make progress (timeout); reports completion."""

    def __init__(self, completed: int, total: int) -> None:
        self.completed = completed
        self.total = total
        self.completed_fraction = completed / total if total else 1.0
        super().__init__(
            f"workload stalled: {completed}/{total} tasks complete "
            f"({self.completed_fraction:.1%})")


@dataclass(frozen=True)
class TaskSpec:
    """One unit of work: train one stixel of one species."""

    species: str
    stixel_id: str
    obs_ids: tuple[int, ...]
    seed: int
    estimated_duration: float  # simulated seconds

    @property
    def key(self) -> str:
        return f"{self.species}/{self.stixel_id}"


def task_duration(n_obs: int) -> float:
    return DURATION_BASE_S + DURATION_PER_OBS_S * n_obs


@dataclass(frozen=True)
class TaskResult:
    species: str
    stixel_id: str
    model: StixelModel | None  # None means "insufficient data"
    cpu_seconds: float

    @property
    def key(self) -> str:
        return f"{self.species}/{self.stixel_id}"

    def to_json(self) -> str:
        payload = {
            "species": self.species,
            "stixel_id": self.stixel_id,
            "cpu_seconds": self.cpu_seconds,
            "model": None if self.model is None else {
                "weights": list(self.model.weights),
                "n_train": self.model.n_train,
                "mean_count": self.model.mean_count,
            },
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "TaskResult":
        payload = json.loads(text)
        model = payload["model"]
        return TaskResult(
            species=payload["species"],
            stixel_id=payload["stixel_id"],
            cpu_seconds=float(payload["cpu_seconds"]),
            model=None if model is None else StixelModel(
                stixel_id=payload["stixel_id"],
                weights=tuple(float(w) for w in model["weights"]),
                n_train=int(model["n_train"]),
                mean_count=float(model["mean_count"]),
            ),
        )


@dataclass
class RunRecord:
    """Accounting for one species fit, waste from preemptions included."""

    species: str
    cpu_seconds_total: float   # all attempts ever recorded in the store
    wall_seconds: float        # simulated wall clock of this run
    n_tasks: int
    n_attempts: int
    n_preemptions: int

    @property
    def core_hours(self) -> float:
        return self.cpu_seconds_total / 3600.0

    @property
    def wall_hours(self) -> float:
        return self.wall_seconds / 3600.0


def estimate_core_hours(record: RunRecord) -> float:
    """Total core-hours: cpu-seconds over all attempts divided by 3600."""
    return record.cpu_seconds_total / 3600.0


# ---------------------------------------------------------------------------
# checkpoint stores

MANIFEST_HEADER = ["task_id", "attempts", "cpu_seconds"]


class InMemoryCheckpointStore:
    """Same contract as the directory store, nothing persisted."""

    def __init__(self) -> None:
        self._results: dict[str, str] = {}
        self._manifest: dict[str, tuple[int, float]] = {}

    def has_result(self, key: str) -> bool:
        return key in self._results

    def load_result(self, key: str) -> TaskResult:
        return TaskResult.from_json(self._results[key])

    def commit_result(self, result: TaskResult) -> None:
        text = result.to_json()
        existing = self._results.get(result.key)
        if existing is not None:
            if existing != text:
                raise CheckpointConflictError(
                    f"conflicting result for {result.key}")
            return
        self._results[result.key] = text

    def load_manifest(self) -> dict[str, tuple[int, float]]:
        return dict(self._manifest)

    def write_manifest(self, manifest: dict[str, tuple[int, float]]) -> None:
        self._manifest = dict(manifest)


class DirectoryCheckpointStore:
    """On-disk store: one `<species>/<stixel-id>.result` file per task plus
    a manifest.csv of attempt counts and cpu-seconds."""

    def __init__(self, root) -> None:
        self.root = str(root)
        os.makedirs(self.root, exist_ok=True)

    def _result_path(self, key: str) -> str:
        species, _, stixel_id = key.partition("/")
        safe_species = urllib.parse.quote(species, safe="")
        return os.path.join(self.root, safe_species, f"{stixel_id}.result")

    def has_result(self, key: str) -> bool:
        return os.path.exists(self._result_path(key))

    def load_result(self, key: str) -> TaskResult:
        with open(self._result_path(key), "r", encoding="utf-8") as fh:
            return TaskResult.from_json(fh.read())

    def commit_result(self, result: TaskResult) -> None:
        path = self._result_path(result.key)
        text = result.to_json()
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                if fh.read() != text:
                    raise CheckpointConflictError(
                        f"conflicting result for {result.key}")
            return
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)

    def _manifest_path(self) -> str:
        return os.path.join(self.root, "manifest.csv")

    def load_manifest(self) -> dict[str, tuple[int, float]]:
        path = self._manifest_path()
        if not os.path.exists(path):
            return {}
        out: dict[str, tuple[int, float]] = {}
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader, None)  # header
            for task_id, attempts, cpu in reader:
                out[task_id] = (int(attempts), float(cpu))
        return out

    def write_manifest(self, manifest: dict[str, tuple[int, float]]) -> None:
        with open(self._manifest_path(), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_HEADER)
            for task_id in sorted(manifest):
                attempts, cpu = manifest[task_id]
                writer.writerow([task_id, attempts, repr(float(cpu))])


# ---------------------------------------------------------------------------
# fleets

INFINITY = math.inf


def _normalize_intervals(intervals) -> tuple[tuple[float, float], ...]:
    """Sort and merge availability intervals; contiguous runs collapse."""
    spans = sorted((float(s), float(e)) for s, e in intervals if e > s)
    merged: list[tuple[float, float]] = []
    for s, e in spans:
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return tuple(merged)


@dataclass(frozen=True)
class Worker:
    """A single-core logical executor; group ties cores to one instance."""

    worker_id: int
    group: str
    availability: tuple[tuple[float, float], ...] = ((0.0, INFINITY),)

    def __post_init__(self) -> None:
        object.__setattr__(self, "availability",
                           _normalize_intervals(self.availability))


@dataclass(frozen=True)
class EngineFleet:
    workers: tuple[Worker, ...]

    def __post_init__(self) -> None:
        ids = [w.worker_id for w in self.workers]
        if len(ids) != len(set(ids)):
            raise StixelflowError("duplicate worker ids in fleet")


def always_on_fleet(n_workers: int) -> EngineFleet:
    """n independent never-failing single-core workers."""
    return EngineFleet(tuple(
        Worker(worker_id=i, group=f"w{i}", availability=((0.0, INFINITY),))
        for i in range(n_workers)))


def fleet_with_outages(n_workers: int, outages) -> EngineFleet:
    """Workers that are up except during their listed [down, back) windows.

    outages maps worker_id -> list of (down_t, back_t); back_t may be inf.
    """
    workers = []
    for i in range(n_workers):
        spans = [(0.0, INFINITY)]
        for down_t, back_t in sorted(outages.get(i, [])):
            new_spans = []
            for s, e in spans:
                if back_t <= s or down_t >= e:
                    new_spans.append((s, e))
                    continue
                if s < down_t:
                    new_spans.append((s, down_t))
                if back_t < e:
                    new_spans.append((back_t, e))
            spans = new_spans
        workers.append(Worker(worker_id=i, group=f"w{i}",
                              availability=tuple(spans)))
    return EngineFleet(tuple(workers))


# ---------------------------------------------------------------------------
# planning

def plan_tasks(
    observations: list[Observation],
    config: StixelConfig,
    domain: DomainBox,
) -> list[TaskSpec]:
    """One task per non-empty stixel, ordered by (layer, row, col, block)."""
    check_unique_ids(observations)
    species = species_of(observations)
    grids = build_grids(config, domain)
    assignment = assign_observations(observations, grids)
    tasks = []
    for sid in sorted(assignment, key=lambda s: tuple(int(p) for p in s.split("-"))):
        obs_ids = tuple(assignment[sid])
        tasks.append(TaskSpec(
            species=species,
            stixel_id=sid,
            obs_ids=obs_ids,
            seed=task_seed(config, sid),
            estimated_duration=task_duration(len(obs_ids)),
        ))
    return tasks


# ---------------------------------------------------------------------------
# the event loop

_EV_TASK_DONE = 0   # ties: completions land before preemptions
_EV_WORKER_DOWN = 1
_EV_WORKER_UP = 2


@dataclass
class _WorkerState:
    worker: Worker
    up: bool = False
    interval_end: float = 0.0
    task: TaskSpec | None = None
    task_start: float = 0.0
    generation: int = 0


def run_pipeline(
    tasks: list[TaskSpec],
    observations_by_id: dict[int, Observation],
    grids: StixelGridSet,
    learner: LogisticGD,
    fleet: EngineFleet,
    store,
    event_sink=None,
) -> tuple[FittedEnsemble, RunRecord]:
    """Execute tasks on the fleet; survive preemptions; assemble the ensemble.

    Results are invariant under worker count and failure schedule: the
    merge is keyed by task id, commits are write-once, and retries reuse
    the task seed. Raises PipelineStalledError when no schedule progress
    is possible before the workload completes.
    """
    species_set = {t.species for t in tasks}
    if len(species_set) > 1:
        raise StixelflowError(f"task list mixes species {sorted(species_set)}")
    species = species_set.pop() if species_set else "unspecified"

    emit = event_sink if event_sink is not None else (lambda t, ev, inst, detail: None)
    manifest = store.load_manifest()
    by_key = {t.key: t for t in tasks}

    done: set[str] = set()
    queue: collections.deque[TaskSpec] = collections.deque()
    for t in tasks:
        if store.has_result(t.key):
            done.add(t.key)
        else:
            queue.append(t)

    emit(0.0, "run-start", "", f"tasks={len(tasks)} pending={len(queue)}")

    states = {w.worker_id: _WorkerState(worker=w) for w in fleet.workers}
    worker_order = sorted(states)

    events: list[tuple[float, int, int, tuple]] = []
    seq = 0

    def push(t: float, kind: int, payload: tuple) -> None:
        nonlocal seq
        heapq.heappush(events, (t, kind, seq, payload))
        seq += 1

    for w in fleet.workers:
        for s, e in w.availability:
            push(s, _EV_WORKER_UP, (w.worker_id, e))
            if e != INFINITY:
                push(e, _EV_WORKER_DOWN, (w.worker_id,))

    n_preemptions = 0
    n_new_attempts = 0
    wall = 0.0
    seen_group_events: set[tuple[str, float, int]] = set()
    result_cache: dict[str, TaskResult] = {}

    def bump_manifest(key: str, cpu: float) -> None:
        attempts, total_cpu = manifest.get(key, (0, 0.0))
        manifest[key] = (attempts + 1, total_cpu + cpu)

    def execute(task: TaskSpec) -> TaskResult:
        if task.key not in result_cache:
            subset = [observations_by_id[i] for i in task.obs_ids]
            model = train_stixel(subset, learner, task.seed,
                                 stixel_id=task.stixel_id,
                                 min_train=grids.config.min_train)
            result_cache[task.key] = TaskResult(
                species=task.species, stixel_id=task.stixel_id,
                model=model, cpu_seconds=task.estimated_duration)
        return result_cache[task.key]

    def dispatch(now: float) -> None:
        for wid in worker_order:
            if not queue:
                return
            st = states[wid]
            if st.up and st.task is None and st.interval_end > now:
                task = queue.popleft()
                st.task = task
                st.task_start = now
                push(now + task.estimated_duration, _EV_TASK_DONE,
                     (wid, task, st.generation))
                emit(now, "task-dispatch", st.worker.group, task.key)

    while events and len(done) < len(tasks):
        t, kind, _seq, payload = heapq.heappop(events)
        if kind == _EV_WORKER_UP:
            wid, interval_end = payload
            st = states[wid]
            st.up = True
            st.interval_end = interval_end
            if (st.worker.group, t, _EV_WORKER_UP) not in seen_group_events:
                seen_group_events.add((st.worker.group, t, _EV_WORKER_UP))
                emit(t, "instance-up", st.worker.group, "")
        elif kind == _EV_WORKER_DOWN:
            (wid,) = payload
            st = states[wid]
            st.up = False
            if (st.worker.group, t, _EV_WORKER_DOWN) not in seen_group_events:
                seen_group_events.add((st.worker.group, t, _EV_WORKER_DOWN))
                n_preemptions += 1
                emit(t, "instance-preempt", st.worker.group, "")
            if st.task is not None:
                # in-flight work is lost entirely; retry with unchanged seed
                bump_manifest(st.task.key, t - st.task_start)
                n_new_attempts += 1
                queue.append(st.task)
                emit(t, "task-requeue", st.worker.group, st.task.key)
                st.task = None
                st.generation += 1
        elif kind == _EV_TASK_DONE:
            wid, task, generation = payload
            st = states[wid]
            if generation != st.generation:
                continue  # the worker was preempted under this completion
            result = execute(task)
            store.commit_result(result)
            bump_manifest(task.key, task.estimated_duration)
            n_new_attempts += 1
            done.add(task.key)
            st.task = None
            wall = t
            emit(t, "task-complete", st.worker.group, task.key)
        dispatch(t)

    if len(done) < len(tasks):
        store.write_manifest(manifest)
        raise PipelineStalledError(len(done), len(tasks))

    # carry forward manifest rows for results that predate this run
    for key in done:
        if key not in manifest:
            manifest[key] = (1, by_key[key].estimated_duration)
    store.write_manifest(manifest)

    models: dict[str, StixelModel] = {}
    for task in tasks:
        result = result_cache.get(task.key)
        if result is None:
            result = store.load_result(task.key)
        if result.model is not None:
            models[task.stixel_id] = result.model

    cpu_total = sum(manifest[t.key][1] for t in tasks)
    attempts_total = sum(manifest[t.key][0] for t in tasks)
    record = RunRecord(
        species=species,
        cpu_seconds_total=cpu_total,
        wall_seconds=wall,
        n_tasks=len(tasks),
        n_attempts=attempts_total,
        n_preemptions=n_preemptions,
    )
    emit(wall, "run-complete", "", f"completed={len(done)}")
    return (FittedEnsemble(grids=grids, models=models, species=species), record)


def fit_with_pipeline(
    observations: list[Observation],
    config: StixelConfig,
    domain: DomainBox,
    learner: LogisticGD | None = None,
    fleet: EngineFleet | None = None,
    store=None,
    event_sink=None,
) -> tuple[FittedEnsemble, RunRecord]:
    """Plan and execute a species fit; the engine-backed fit_species."""
    learner = learner or default_learner()
    fleet = fleet or always_on_fleet(1)
    store = store if store is not None else InMemoryCheckpointStore()
    tasks = plan_tasks(observations, config, domain)
    grids = build_grids(config, domain)
    by_id = {o.id: o for o in observations}
    return run_pipeline(tasks, by_id, grids, learner, fleet, store,
                        event_sink=event_sink)
