"""Spot-market simulation: prices, bids, preemption, hour-granular billing.

The market is a piecewise-constant price trace. A fleet bids once; spot
instances exist exactly while the market price is at or below the bid and
are killed instantly when it rises above (no notice period). Billing is
per instance-hour at the market price in effect at the hour start — you
pay the market, not your bid. An hour cut short by a market preemption is
free; an hour cut short because the workload finished is billed in full.
Dedicated instances bill the on-demand rate per started hour. The
orchestration fee, when present, is added per billed instance-hour.

Everything is a single deterministic timeline; identical inputs give
identical billing totals to the cent.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass

from .domain import StixelflowError, ValidationError
from .engine import (
    INFINITY,
    EngineFleet,
    InMemoryCheckpointStore,
    RunRecord,
    Worker,
    run_pipeline,
)
from .rng import SplitMix64, derive_seed

HOUR_S = 3600.0

# synthetic trace model constants (mean reversion in log-price, sparse spikes)
REVERSION = 0.2
SPIKE_FACTOR = 4.0
TRACE_STEP_S = 3600.0

MARKET_PREEMPTION = "market-preemption"
WORKLOAD_COMPLETE = "workload-complete"


class InconsistentLifecycleError(StixelflowError):
    """An instance segment lies in a market interval it could not survive."""


class TraceFormatError(ValidationError):
    """A price trace file violates the t_seconds,price contract."""


@dataclass(frozen=True)
class PricePoint:
    t: float       # simulated seconds from epoch
    price: float   # USD per instance-hour

    def __post_init__(self) -> None:
        if self.price <= 0:
            raise ValidationError(f"non-positive price {self.price} at t={self.t}")


@dataclass(frozen=True)
class PriceTrace:
    """Piecewise-constant market price; each point holds until the next."""

    instance_type: str
    cores: int
    points: tuple[PricePoint, ...]
    horizon_t: float | None = None  # None: the last price holds forever

    def __post_init__(self) -> None:
        if not self.points:
            raise ValidationError("price trace must be non-empty")
        if self.points[0].t != 0:
            raise ValidationError("price trace must start at t=0")
        for a, b in zip(self.points, self.points[1:]):
            if b.t <= a.t:
                raise ValidationError(
                    f"price trace not strictly increasing at t={b.t}")
        if self.horizon_t is not None and self.horizon_t <= self.points[-1].t:
            raise ValidationError("trace horizon precedes its last price point")

    def price_at(self, t: float) -> float:
        times = [p.t for p in self.points]
        idx = bisect.bisect_right(times, t) - 1
        if idx < 0:
            raise ValidationError(f"no price defined at t={t}")
        return self.points[idx].price


@dataclass(frozen=True)
class BidPolicy:
    """One static bid per run; no dynamic re-bidding."""

    bid: float

    def __post_init__(self) -> None:
        if self.bid <= 0:
            raise ValidationError(f"bid must be > 0, got {self.bid}")


def _bid_value(bid) -> float:
    value = bid.bid if isinstance(bid, BidPolicy) else float(bid)
    if value <= 0:
        raise ValidationError(f"bid must be > 0, got {value}")
    return value


@dataclass(frozen=True)
class FleetSpec:
    """Shape and rates of the simulated cluster."""

    n_spot_workers: int          # spot instances
    n_dedicated: int = 1         # non-preemptible coordinators; run no tasks
    cores_per_instance: int = 16
    on_demand_rate: float = 0.80   # USD per instance-hour
    orchestration_fee: float = 0.0  # USD per instance-hour; 0 = self-managed

    def __post_init__(self) -> None:
        if self.n_spot_workers < 0:
            raise ValidationError("n_spot_workers must be >= 0")
        if self.n_dedicated < 1:
            raise ValidationError("need at least one dedicated coordinator")
        if self.cores_per_instance < 1:
            raise ValidationError("cores_per_instance must be >= 1")
        if self.on_demand_rate < 0 or self.orchestration_fee < 0:
            raise ValidationError("rates must be >= 0")


@dataclass(frozen=True)
class LifecycleSegment:
    launch_t: float
    end_t: float
    end_reason: str  # MARKET_PREEMPTION or WORKLOAD_COMPLETE


@dataclass(frozen=True)
class InstanceLifecycle:
    instance_id: str
    kind: str  # "spot" | "dedicated"
    segments: tuple[LifecycleSegment, ...]


@dataclass(frozen=True)
class BilledHour:
    hour_start: float
    rate: float  # compute rate: market price at hour start, or on-demand rate
    fee: float   # orchestration fee for this hour


@dataclass(frozen=True)
class BillingRecord:
    instance_id: str
    hours: tuple[BilledHour, ...]

    @property
    def total(self) -> float:
        return sum(h.rate + h.fee for h in self.hours)


# ---------------------------------------------------------------------------
# traces

def gen_price_trace(
    seed: int,
    mean: float,
    volatility: float,
    spike_rate: float,
    horizon_s: float,
    instance_type: str = "m4.4xlarge",
    cores: int = 16,
) -> PriceTrace:
    """Synthetic hourly trace: mean-reverting log-price plus sparse spikes.

    The log price follows x' = x + REVERSION*(log mean - x) + volatility*z
    per hour; a spike multiplies one hour's price by SPIKE_FACTOR without
    touching the underlying state, so prices revert immediately after.
    """
    if mean <= 0:
        raise ValidationError(f"mean price must be > 0, got {mean}")
    if horizon_s <= 0:
        raise ValidationError(f"horizon must be > 0, got {horizon_s}")
    import math

    rng = SplitMix64(derive_seed(seed, "price-trace"))
    log_mean = math.log(mean)
    x = log_mean
    points: list[PricePoint] = []
    t = 0.0
    while t < horizon_s:
        z = rng.normal()
        spiked = rng.uniform() < spike_rate
        price = math.exp(x) * (SPIKE_FACTOR if spiked else 1.0)
        if not points or points[-1].price != price:
            points.append(PricePoint(t=t, price=price))
        x = x + REVERSION * (log_mean - x) + volatility * z
        t += TRACE_STEP_S
    return PriceTrace(instance_type=instance_type, cores=cores,
                      points=tuple(points), horizon_t=horizon_s)


TRACE_HEADER = ["t_seconds", "price"]


def load_price_trace(path, instance_type: str = "imported", cores: int = 16) -> PriceTrace:
    """Parse a `t_seconds,price` CSV; the last price holds forever."""
    points: list[PricePoint] = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError("empty price trace file")
        if header != TRACE_HEADER:
            raise TraceFormatError(f"expected header {TRACE_HEADER}, got {header}")
        last_t = None
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 2:
                raise TraceFormatError(f"line {line_no}: expected 2 fields")
            t, price = float(rec[0]), float(rec[1])
            if price <= 0:
                raise TraceFormatError(f"line {line_no}: non-positive price {price}")
            if last_t is not None and t <= last_t:
                raise TraceFormatError(f"line {line_no}: rows out of order at t={t}")
            last_t = t
            points.append(PricePoint(t=t, price=price))
    if not points:
        raise TraceFormatError("price trace has no data rows")
    return PriceTrace(instance_type=instance_type, cores=cores,
                      points=tuple(points), horizon_t=None)


def write_price_trace(trace: PriceTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for p in trace.points:
            writer.writerow([repr(float(p.t)), repr(float(p.price))])


def availability_intervals(trace: PriceTrace, bid) -> list[tuple[float, float]]:
    """Maximal [start, end) intervals where market price <= bid.

    The end of the last interval is the trace horizon, or infinity for an
    unbounded trace whose final price is affordable.
    """
    bid_v = _bid_value(bid)
    end_of_time = trace.horizon_t if trace.horizon_t is not None else INFINITY
    intervals: list[tuple[float, float]] = []
    open_start: float | None = None
    for i, point in enumerate(trace.points):
        next_t = trace.points[i + 1].t if i + 1 < len(trace.points) else end_of_time
        if point.price <= bid_v:
            if open_start is None:
                open_start = point.t
        else:
            if open_start is not None:
                intervals.append((open_start, point.t))
                open_start = None
        if next_t >= end_of_time:
            break
    if open_start is not None and open_start < end_of_time:
        intervals.append((open_start, end_of_time))
    return intervals


# ---------------------------------------------------------------------------
# billing

def bill_instance(
    lifecycle: InstanceLifecycle,
    trace: PriceTrace,
    fleet: FleetSpec,
    bid=None,
) -> BillingRecord:
    """Hour-by-hour charges for one instance's lifetime.

    Spot hours bill the market price at the hour start (second-price rule);
    a final partial hour is free after a market preemption and billed in
    full after workload completion. Dedicated instances bill the on-demand
    rate per started hour. When a bid is supplied, spot segments are
    checked against it (a live segment above the bid is inconsistent).
    """
    hours: list[BilledHour] = []
    bid_v = _bid_value(bid) if bid is not None else None
    for seg in lifecycle.segments:
        if seg.end_t < seg.launch_t:
            raise InconsistentLifecycleError(
                f"segment ends before it starts: {seg}")
        h = seg.launch_t
        while h < seg.end_t:
            if lifecycle.kind == "spot":
                rate = trace.price_at(h)
                if bid_v is not None and rate > bid_v:
                    raise InconsistentLifecycleError(
                        f"spot segment alive at t={h} with market {rate} > bid {bid_v}")
            else:
                rate = fleet.on_demand_rate
            full_hour = h + HOUR_S <= seg.end_t
            if full_hour or seg.end_reason == WORKLOAD_COMPLETE:
                hours.append(BilledHour(hour_start=h, rate=rate,
                                        fee=fleet.orchestration_fee))
            # a partial hour ended by market preemption is not billed
            h += HOUR_S
    return BillingRecord(instance_id=lifecycle.instance_id, hours=tuple(hours))


# ---------------------------------------------------------------------------
# cluster simulation

@dataclass(frozen=True)
class SimulationResult:
    ensemble: object            # FittedEnsemble
    record: RunRecord
    billing: tuple[BillingRecord, ...]
    lifecycles: tuple[InstanceLifecycle, ...]
    events: tuple[tuple[float, str, str, str], ...]

    @property
    def total_cost(self) -> float:
        return sum(b.total for b in self.billing)


def spot_fleet_workers(fleet: FleetSpec, intervals) -> EngineFleet:
    """One engine worker per spot core, grouped by instance."""
    workers = []
    wid = 0
    for i in range(fleet.n_spot_workers):
        for _ in range(fleet.cores_per_instance):
            workers.append(Worker(worker_id=wid, group=f"spot-{i}",
                                  availability=tuple(intervals)))
            wid += 1
    return EngineFleet(tuple(workers))


def simulate_cluster(
    trace: PriceTrace,
    bid,
    fleet: FleetSpec,
    tasks,
    observations_by_id,
    grids,
    learner,
    store=None,
) -> SimulationResult:
    """Run the workload on a spot fleet priced by the trace.

    Spot workers live exactly inside the bid's availability intervals and
    relaunch at the start of the next interval after a preemption. The
    final ensemble is identical to a serial no-market run; only cost and
    wall clock depend on the market.
    """
    store = store if store is not None else InMemoryCheckpointStore()
    intervals = availability_intervals(trace, bid)
    engine_fleet = spot_fleet_workers(fleet, intervals)
    events: list[tuple[float, str, str, str]] = []

    def sink(t: float, event: str, instance: str, detail: str) -> None:
        events.append((t, event, instance, detail))

    ensemble, record = run_pipeline(
        tasks, observations_by_id, grids, learner, engine_fleet, store,
        event_sink=sink)

    t_end = record.wall_seconds
    lifecycles: list[InstanceLifecycle] = []
    for i in range(fleet.n_spot_workers):
        segments = []
        for s, e in intervals:
            if s >= t_end:
                break
            if e < t_end:
                segments.append(LifecycleSegment(s, e, MARKET_PREEMPTION))
            else:
                segments.append(LifecycleSegment(s, t_end, WORKLOAD_COMPLETE))
        lifecycles.append(InstanceLifecycle(
            instance_id=f"spot-{i}", kind="spot", segments=tuple(segments)))
    for j in range(fleet.n_dedicated):
        segments = ()
        if t_end > 0:
            segments = (LifecycleSegment(0.0, t_end, WORKLOAD_COMPLETE),)
        lifecycles.append(InstanceLifecycle(
            instance_id=f"dedicated-{j}", kind="dedicated", segments=segments))

    billing = tuple(bill_instance(lc, trace, fleet, bid=bid)
                    for lc in lifecycles)
    return SimulationResult(
        ensemble=ensemble,
        record=record,
        billing=billing,
        lifecycles=tuple(lifecycles),
        events=tuple(events),
    )


# ---------------------------------------------------------------------------
# audit CSVs

EVENT_LOG_HEADER = ["t_seconds", "event", "instance_id", "detail"]
BILLING_HEADER = ["instance_id", "hour_start", "rate"]


def write_event_log(events, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_LOG_HEADER)
        for t, event, instance, detail in events:
            writer.writerow([repr(float(t)), event, instance, detail])


def write_billing(billing, path) -> None:
    """Billing CSV; the rate column is the full hourly charge (rate + fee)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BILLING_HEADER)
        for record in billing:
            for h in record.hours:
                writer.writerow([record.instance_id,
                                 repr(float(h.hour_start)),
                                 repr(float(h.rate + h.fee))])
