"""Time-sliced simulation loop.

Each slice: start queued jobs on free cores, share link bandwidth among the
active transfers and streams, advance transfers and jobs by one slice, then
retire finished jobs and record metrics. Jobs whose remaining work no longer
depends on the network are parked in a heap keyed by their completion slice
instead of being stepped slice by slice; the outcome is the same.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .metrics import DONE, FAILED, JobRecord, MetricsLog, record_slice
from .model import FileCatalog, Job, JobState, SiteId, Topology
from .params import (
    EfficiencyHistogram,
    PenaltyTable,
    SpeedTable,
    SweepConfig,
    max_speed_for,
    penalty_for,
    sample_efficiency,
)
from .scenarios import LOCAL, STAGE_IN, STREAM, NoReplicaError, PlacementPolicy, nearest_replica

DEFAULT_SLICE = 100.0
DEFAULT_MAX_ATTEMPTS = 3

PROGRESS = "progress"
COMPLETED = "completed"
FAILED_ATTEMPT = "failed_attempt"
EXHAUSTED = "exhausted"


class SimulationError(RuntimeError):
    pass


class DeadlockError(SimulationError):
    pass


@dataclass(eq=False)
class TransferTask:
    lfn: str
    size: float
    src: SiteId
    dst: SiteId
    kind: str  # STAGE_IN or STREAM
    owner: int
    quality: float = 1.0
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    bytes_done: float = 0.0
    allocated_rate: float = 0.0
    attempts: int = 0  # failed attempts so far
    finished_attempts: int = 0  # attempts that reached the full size
    sent: float = 0.0  # bytes moved over the link, all attempts included
    consumption: float = math.inf  # streams: rate at which the job reads
    tried: tuple[SiteId, ...] = ()
    logged: bool = False
    rng_key: str = ""

    def __post_init__(self):
        self.link = (self.src, self.dst)

    def draw(self) -> float:
        """Uniform [0, 1) keyed on (seed, job, file, source, attempt).

        Keyed draws make the outcome of an attempt independent of the order in
        which the engine happens to reach it, so sweep cells stay comparable.
        """
        key = f"{self.rng_key}/{self.finished_attempts}".encode()
        digest = hashlib.blake2b(key, digest_size=8).digest()
        return int.from_bytes(digest, "big") / 2.0**64


class Advance(NamedTuple):
    outcome: str
    moved: float
    elapsed: float  # seconds of the slice used, up to the end of the attempt


@dataclass(eq=False)
class Segment:
    lfn: str | None
    size: float
    cpu_share: float
    kind: str
    effective_efficiency: float
    wall_needed: float
    work_done: float = 0.0
    task: TransferTask | None = None


@dataclass(eq=False)
class RunningJob:
    job: Job
    base_efficiency: float
    segments: list[Segment]
    start_clock: float = 0.0
    pending: list[TransferTask] = field(default_factory=list)
    current: int = 0
    wall_done: float = 0.0
    stage_in_wait: float = 0.0  # time blocked on data: stage-in plus stream starvation
    lost: float = 0.0  # compute thrown away by failed stream reads
    failure: str | None = None

    def wall_clock(self) -> float:
        return self.stage_in_wait + math.fsum(s.wall_needed for s in self.segments) + self.lost

    def remaining(self) -> float:
        return sum(s.wall_needed - s.work_done for s in self.segments[self.current:])

    def streams_left(self) -> bool:
        return any(s.task is not None for s in self.segments[self.current:])


class SiteRuntime:
    __slots__ = ("id", "cores", "queue", "running", "done")

    def __init__(self, site_id: SiteId, cores: int):
        self.id = site_id
        self.cores = cores
        self.queue: deque[Job] = deque()
        self.running = 0
        self.done = 0


@dataclass(eq=False)
class SimulationState:
    topology: Topology
    catalog: FileCatalog
    jobs: list[Job]
    policy: PlacementPolicy
    histogram: EfficiencyHistogram
    penalty_table: PenaltyTable = field(default_factory=PenaltyTable)
    speed_table: SpeedTable = field(default_factory=SpeedTable)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    slice_length: float = DEFAULT_SLICE
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    efficiency_override: dict[int, float] | None = None
    scenario: str = ""

    def __post_init__(self):
        if not self.slice_length > 0:
            raise ValueError("slice_length must be positive")
        if not self.scenario:
            self.scenario = self.policy.name
        self.penalty = self.penalty_table.scaled(self.sweep.cpu_hit_factor)
        self.speed = self.speed_table.scaled(self.sweep.max_speed_factor)
        self.site_order = self.topology.site_names()
        self.sites = {n: SiteRuntime(n, self.topology.sites[n].cores) for n in self.site_order}
        for job in self.jobs:
            self.sites[job.site].queue.append(job)
        self.link_cap = {
            key: max_speed_for(self.speed, link.latency) for key, link in self.topology.links.items()
        }
        self.clock = 0.0
        self.slice_index = 0
        self.total_jobs = len(self.jobs)
        self.finished = 0
        self.job_state = {job.id: JobState.QUEUED for job in self.jobs}
        self.staging: list[RunningJob] = []
        self.streaming: list[RunningJob] = []
        self.parked: list[tuple[int, int, RunningJob]] = []
        self.slice_link_bytes: dict[tuple[SiteId, SiteId], float] = {}
        self.transfer_log: list[TransferTask] = []
        self.failures: dict[int, str] = {}
        self.log = MetricsLog(
            scenario=self.scenario,
            cpu_hit_factor=self.sweep.cpu_hit_factor,
            speed_factor=self.sweep.max_speed_factor,
            seed=self.sweep.rng_seed,
        )
        self.base_efficiency = self._sample_efficiencies()

    def _sample_efficiencies(self) -> dict[int, float]:
        # one stream in job-id order, so every scenario and sweep cell sees the same draws
        rng = np.random.default_rng(self.sweep.rng_seed)
        out = {}
        for job in sorted(self.jobs, key=lambda j: j.id):
            out[job.id] = sample_efficiency(self.histogram, job.cpu_seconds, rng)
        if self.efficiency_override:
            out.update(self.efficiency_override)
        return out

    def latency(self, src: SiteId, dst: SiteId) -> float:
        lat = self.topology.latency(src, dst)
        if lat is None:
            raise SimulationError(f"no link {src}->{dst}")
        return lat

    def _set_state(self, job_id: int, new: JobState) -> None:
        old = self.job_state[job_id]
        if not old.can_become(new):
            raise SimulationError(f"job {job_id}: illegal transition {old.value} -> {new.value}")
        self.job_state[job_id] = new


def _make_task(state: SimulationState, job: Job, lfn: str, size: float, src: SiteId, kind: str, tried=()) -> TransferTask:
    link = state.topology.links[(src, job.site)]
    return TransferTask(
        lfn=lfn,
        size=size,
        src=src,
        dst=job.site,
        kind=kind,
        owner=job.id,
        quality=link.quality,
        max_attempts=state.max_attempts,
        tried=tuple(tried),
        rng_key=f"{state.sweep.rng_seed}/{job.id}/{lfn}/{src}/{kind}",
    )


def start_job(state: SimulationState, job: Job) -> RunningJob:
    """Sample the job's efficiency, ask the policy how to reach each input, and build its segments."""
    eff = state.base_efficiency[job.id]
    rj = RunningJob(job=job, base_efficiency=eff, segments=[], start_clock=state.clock)
    if not job.inputs:
        rj.segments.append(Segment(None, 0.0, job.cpu_seconds, LOCAL, eff, job.cpu_seconds / eff))
        return rj
    try:
        plan = state.policy.plan(state.catalog, job)
    except NoReplicaError as exc:
        rj.failure = str(exc)
        return rj
    sizes = [state.catalog[lfn].size * job.read_fraction for lfn in job.inputs]
    total = sum(sizes)
    for lfn, size, access in zip(job.inputs, sizes, plan):
        share = job.cpu_seconds * size / total
        seg = Segment(lfn, size, share, access.kind, eff, share / eff)
        if access.kind == STREAM:
            _route_stream(state, rj, seg, access.src)
        elif access.kind == STAGE_IN:
            rj.pending.append(_make_task(state, job, lfn, size, access.src, STAGE_IN))
        rj.segments.append(seg)
    return rj


def _route_stream(state, rj: RunningJob, seg: Segment, src: SiteId, tried=()) -> None:
    penalty = penalty_for(state.penalty, state.latency(src, rj.job.site))
    seg.effective_efficiency = rj.base_efficiency * (1.0 - penalty)
    seg.wall_needed = seg.cpu_share / seg.effective_efficiency
    task = _make_task(state, rj.job, seg.lfn, seg.size, src, STREAM, tried)
    task.consumption = seg.size / seg.wall_needed
    seg.task = task


def allocate_bandwidth(state: SimulationState) -> list[TransferTask]:
    """Give every transfer active this slice a rate; returns the active tasks.

    Per directed link each task gets min(per-file cap, bandwidth / n_active);
    streams are further held to the rate at which their job reads.
    """
    groups: dict[tuple[SiteId, SiteId], list[TransferTask]] = {}
    for rj in state.staging:
        for task in rj.pending:
            groups.setdefault(task.link, []).append(task)
    length = state.slice_length
    for rj in state.streaming:
        segs = rj.segments
        seg = segs[rj.current]
        if seg.task is not None:
            groups.setdefault(seg.task.link, []).append(seg.task)
        budget = length - (seg.wall_needed - seg.work_done)
        i = rj.current + 1
        while budget > 0 and i < len(segs):
            seg = segs[i]
            if seg.task is not None:
                groups.setdefault(seg.task.link, []).append(seg.task)
            budget -= seg.wall_needed - seg.work_done
            i += 1
    active = []
    links = state.topology.links
    for key, tasks in groups.items():
        base = min(state.link_cap[key], links[key].bandwidth / len(tasks))
        for task in tasks:
            task.allocated_rate = min(base, task.consumption)
        active.extend(tasks)
    return active


def _finish_attempt(task: TransferTask) -> str:
    task.finished_attempts += 1
    if task.quality >= 1.0 or task.draw() < task.quality:
        return COMPLETED
    task.attempts += 1
    task.bytes_done = 0.0
    return EXHAUSTED if task.attempts >= task.max_attempts else FAILED_ATTEMPT


def advance_transfer(task: TransferTask, rate: float, slice_length: float) -> Advance:
    """Move a copy forward by one slice at `rate`.

    The success draw against the link quality happens when the last byte
    arrives; a failed attempt throws the whole file away and the rest of the
    slice is lost.
    """
    remaining = task.size - task.bytes_done
    capacity = rate * slice_length
    if capacity < remaining:
        task.bytes_done += capacity
        task.sent += capacity
        return Advance(PROGRESS, capacity, slice_length)
    task.bytes_done = task.size
    task.sent += remaining
    elapsed = remaining / rate if remaining > 0 else 0.0
    return Advance(_finish_attempt(task), remaining, elapsed)


def fallback_replica(state: SimulationState, task: TransferTask) -> SiteId | None:
    """Nearest other holder of the file, skipping every source that already gave up."""
    return nearest_replica(state.catalog, state.topology, task.lfn, task.dst, exclude=(*task.tried, task.src))


class JobStep(NamedTuple):
    outcome: str  # PROGRESS, COMPLETED or EXHAUSTED
    used: float  # seconds of the slice consumed
    task: TransferTask | None = None


def advance_job(
    running: RunningJob,
    slice_length: float,
    offset: float = 0.0,
    link_bytes: dict | None = None,
) -> JobStep:
    """Run the job's compute for the rest of the slice, starting `offset` seconds in.

    Segments are consumed in input order. A streamed segment proceeds at full
    speed only while its stream delivers at least the job's read rate; any
    shortfall is counted as data wait.
    """
    budget = slice_length - offset
    used = 0.0
    segs = running.segments
    while running.current < len(segs) and budget > 0:
        seg = segs[running.current]
        remaining = seg.wall_needed - seg.work_done
        task = seg.task
        if task is None:
            if remaining <= budget:
                seg.work_done = seg.wall_needed
                budget -= remaining
                used += remaining
                running.current += 1
            else:
                seg.work_done += budget
                used += budget
                budget = 0.0
            continue
        rate = task.allocated_rate
        speed = 1.0 if rate >= task.consumption else rate / task.consumption
        if speed <= 0:
            running.stage_in_wait += budget
            used += budget
            budget = 0.0
            break
        need = remaining / speed
        if need <= budget:
            moved = task.size - task.bytes_done
            stall = need - remaining
            seg.work_done = seg.wall_needed
            task.bytes_done = task.size
            t = need
        else:
            work = budget * speed
            moved = work * task.consumption
            stall = budget - work
            seg.work_done += work
            task.bytes_done = min(task.bytes_done + moved, task.size)
            t = budget
        task.sent += moved
        if link_bytes is not None:
            key = (task.src, task.dst)
            link_bytes[key] = link_bytes.get(key, 0.0) + moved
        running.stage_in_wait += stall
        budget -= t
        used += t
        if seg.work_done < seg.wall_needed:
            continue
        outcome = _finish_attempt(task)
        if outcome == COMPLETED:
            running.current += 1
            continue
        # the file has to be read again from the start
        running.lost += seg.wall_needed
        seg.work_done = 0.0
        if outcome == EXHAUSTED:
            running.stage_in_wait += budget
            used += budget
            running.wall_done += used
            return JobStep(EXHAUSTED, offset + used, task)
    running.wall_done += used
    if running.current >= len(segs):
        return JobStep(COMPLETED, offset + used)
    return JobStep(PROGRESS, offset + used)


def _park(state: SimulationState, rj: RunningJob, slice_index: int, offset: float) -> None:
    """Queue a job whose remaining work is pure compute for completion at a known slice."""
    remaining = rj.remaining()
    done_in = slice_index + max(math.ceil((offset + remaining) / state.slice_length), 1) - 1
    heapq.heappush(state.parked, (done_in, rj.job.id, rj))


def _log_task(state: SimulationState, task: TransferTask) -> None:
    if not task.logged:
        task.logged = True
        state.transfer_log.append(task)


def _finalize(state: SimulationState, rj: RunningJob) -> None:
    job = rj.job
    site = state.sites[job.site]
    site.running -= 1
    site.done += 1
    state.finished += 1
    state._set_state(job.id, JobState.DONE)
    state.policy.release(job.id)
    for seg in rj.segments:
        if seg.task is not None:
            _log_task(state, seg.task)
    if rj.failure is None:
        status, wall = DONE, rj.wall_clock()
    else:
        status, wall = FAILED, rj.wall_done
        state.failures[job.id] = rj.failure
    state.log.records.append(
        JobRecord(job.id, job.site, state.scenario, job.cpu_seconds, rj.base_efficiency, wall, rj.stage_in_wait, status)
    )


def _fail(state: SimulationState, rj: RunningJob, reason: str) -> None:
    rj.failure = reason
    for task in rj.pending:
        _log_task(state, task)
    rj.pending = []


def _fallback(state: SimulationState, rj: RunningJob, task: TransferTask) -> TransferTask | None:
    src = fallback_replica(state, task)
    if src is None:
        return None
    state.policy.pin(rj.job.id, src, task.lfn)
    return _make_task(state, rj.job, task.lfn, task.size, src, task.kind, (*task.tried, task.src))


def _after_compute(state, rj: RunningJob, step: JobStep, k: int, completed: list, still_streaming: list) -> None:
    if step.outcome == COMPLETED:
        completed.append(rj)
        return
    if step.outcome == EXHAUSTED:
        task = step.task
        _log_task(state, task)
        seg = rj.segments[rj.current]
        src = fallback_replica(state, task)
        if src is None:
            _fail(state, rj, f"all replicas of {task.lfn!r} exhausted")
            completed.append(rj)
            return
        state.policy.pin(rj.job.id, src, task.lfn)
        if src == rj.job.site:
            # a copy landed here meanwhile: read it locally at full efficiency
            seg.task = None
            seg.kind = LOCAL
            seg.effective_efficiency = rj.base_efficiency
            seg.wall_needed = seg.cpu_share / rj.base_efficiency
        else:
            _route_stream(state, rj, seg, src, (*task.tried, task.src))
    if rj.streams_left():
        still_streaming.append(rj)
    else:
        _park(state, rj, k + 1, 0.0)


def step(state: SimulationState) -> None:
    """Advance the simulation by one slice."""
    k = state.slice_index
    length = state.slice_length
    progressed = False
    completed: list[RunningJob] = []

    for name in state.site_order:
        site = state.sites[name]
        while site.running < site.cores and site.queue:
            job = site.queue.popleft()
            state._set_state(job.id, JobState.RUNNING)
            site.running += 1
            progressed = True
            rj = start_job(state, job)
            if rj.failure is not None:
                completed.append(rj)
            elif rj.pending:
                state.staging.append(rj)
            elif rj.streams_left():
                state.streaming.append(rj)
            else:
                _park(state, rj, k, 0.0)

    active = allocate_bandwidth(state)
    link_bytes: dict[tuple[SiteId, SiteId], float] = {}
    state.slice_link_bytes = link_bytes

    streaming, state.streaming = state.streaming, []
    staging, state.staging = state.staging, []
    for rj in staging:
        ready_at = 0.0
        for task in list(rj.pending):
            if task.allocated_rate <= 0:
                continue
            adv = advance_transfer(task, task.allocated_rate, length)
            if adv.moved:
                key = (task.src, task.dst)
                link_bytes[key] = link_bytes.get(key, 0.0) + adv.moved
            if adv.outcome == COMPLETED:
                rj.pending.remove(task)
                _log_task(state, task)
                ready_at = max(ready_at, adv.elapsed)
                state.policy.stage_in_done(state.catalog, rj.job.id, task.lfn, task.dst)
            elif adv.outcome == EXHAUSTED:
                rj.pending.remove(task)
                _log_task(state, task)
                if task.dst in state.catalog[task.lfn].locations:
                    # another job cached the file here meanwhile
                    ready_at = max(ready_at, adv.elapsed)
                    state.policy.stage_in_done(state.catalog, rj.job.id, task.lfn, task.dst)
                    continue
                new = _fallback(state, rj, task)
                if new is None:
                    _fail(state, rj, f"all replicas of {task.lfn!r} exhausted")
                    break
                rj.pending.append(new)
        if rj.failure is not None:
            rj.wall_done += length
            completed.append(rj)
        elif rj.pending:
            rj.stage_in_wait += length
            rj.wall_done += length
            state.staging.append(rj)
        else:
            rj.stage_in_wait += ready_at
            rj.wall_done += ready_at
            result = advance_job(rj, length, ready_at, link_bytes)
            _after_compute(state, rj, result, k, completed, state.streaming)
    still = state.streaming
    for rj in streaming:
        seg = rj.segments[rj.current]
        task = seg.task
        if (
            task is not None
            and task.allocated_rate >= task.consumption
            and seg.wall_needed - seg.work_done > length
        ):
            # common case: a stream that keeps up and does not end this slice
            moved = length * task.consumption
            seg.work_done += length
            task.bytes_done += moved
            task.sent += moved
            rj.wall_done += length
            link_bytes[task.link] = link_bytes.get(task.link, 0.0) + moved
            still.append(rj)
            continue
        result = advance_job(rj, length, 0.0, link_bytes)
        _after_compute(state, rj, result, k, completed, still)

    for task in active:
        task.allocated_rate = 0.0

    parked = state.parked
    while parked and parked[0][0] <= k:
        completed.append(heapq.heappop(parked)[2])
    if completed or link_bytes or staging or streaming or parked:
        progressed = True

    state.slice_index = k + 1
    state.clock = state.slice_index * length
    for rj in sorted(completed, key=lambda r: r.job.id):
        _finalize(state, rj)
    record_slice(state.log, state)
    if not progressed and state.finished < state.total_jobs:
        raise DeadlockError(
            f"no progress possible at clock {state.clock:g}s with "
            f"{state.total_jobs - state.finished} unfinished jobs"
        )


def run(state: SimulationState, observer: Callable[[SimulationState], None] | None = None) -> MetricsLog:
    """Run slices until every job is done; returns the metrics log."""
    record_slice(state.log, state)
    if observer is not None:
        observer(state)
    while state.finished < state.total_jobs:
        step(state)
        if observer is not None:
            observer(state)
    return state.log
