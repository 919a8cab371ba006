"""Acceptance suite: one test (or group) per criterion, reported by conftest."""

from __future__ import annotations

import filecmp
import math
import time
from dataclasses import dataclass

import pytest

from gridsim import synth
from gridsim.cli import main as cli_main
from gridsim.data import bundled_fixture
from gridsim.engine import run
from gridsim.ingest import FixtureSet, RunConfig, build_state, read_fixtures
from gridsim.metrics import summarize
from gridsim.params import (
    DEFAULT_PENALTY_ROWS,
    DEFAULT_SPEED_ROWS,
    PenaltyTable,
    SpeedTable,
    SweepConfig,
    max_speed_for,
    penalty_for,
)
from gridsim.scenarios import SCENARIOS, STREAM

from conftest import catalog_of, job, micro_state, two_sites

FACTORS = (0.5, 1.0, 2.0)
TIER1 = "FNAL"


@dataclass
class CellResult:
    total: float
    mean_eff: float
    offsite_streams: int
    min_cap_margin: float  # smallest cap / consumption over all streams, inf if none
    streams_over_wan: int
    tier2_storage_changed: bool
    tier2_to_tier2_bytes: float


def _run_cell(fx, scenario, cpu, speed):
    state = build_state(fx, RunConfig(scenario=scenario, sweep=SweepConfig(cpu, speed, 0)))
    tier2 = [s for s in state.site_order if s != TIER1]
    initial = {s: state.catalog.used(s) for s in tier2}
    changed = False

    def watch(st):
        nonlocal changed
        if any(st.catalog.used(s) != initial[s] for s in tier2):
            changed = True

    log = run(state, watch)
    streams = [t for t in state.transfer_log if t.kind == STREAM]
    margin = min((state.link_cap[t.link] / t.consumption for t in streams), default=math.inf)
    t2t2 = math.fsum(s.bytes for s in log.link_samples if TIER1 not in (s.src, s.dst))
    report = summarize(log.records)
    return CellResult(
        total=report.total_wall,
        mean_eff=report.mean_efficiency,
        offsite_streams=len(streams),
        min_cap_margin=margin,
        streams_over_wan=sum(1 for t in streams if state.latency(t.src, t.dst) >= 1),
        tier2_storage_changed=changed,
        tier2_to_tier2_bytes=t2t2,
    )


@pytest.fixture(scope="session")
def sweep():
    fx = read_fixtures(bundled_fixture())
    t0 = time.perf_counter()
    cells = {
        (sc, cpu, speed): _run_cell(fx, sc, cpu, speed)
        for cpu in FACTORS
        for speed in FACTORS
        for sc in SCENARIOS
    }
    elapsed = time.perf_counter() - t0
    print(f"\nbundled sweep: 27 runs in {elapsed:.1f}s")
    return cells, elapsed


def _sig3(x: float) -> str:
    return f"{x:.3g}"


# ---------------------------------------------------------------- 1


@pytest.mark.criterion(1, "scenario ordering preplaced <= copy <= remote, copy > +5%, remote gap > copy gap")
@pytest.mark.parametrize("cpu", FACTORS)
@pytest.mark.parametrize("speed", FACTORS)
def test_scenario_ordering(sweep, cpu, speed):
    cells, _ = sweep
    pre = cells["preplaced", cpu, speed].total
    copy = cells["copy", cpu, speed].total
    remote = cells["remote", cpu, speed].total
    assert pre <= copy <= remote
    assert copy > 1.05 * pre
    assert remote - pre > copy - pre


def test_full_sweep_fits_time_budget(sweep):
    _, elapsed = sweep
    assert elapsed < 60.0


# ---------------------------------------------------------------- 2


@pytest.mark.criterion(2, "preplaced and copy totals bit-identical across cpu_hit_factor")
@pytest.mark.parametrize("scenario", ["preplaced", "copy"])
@pytest.mark.parametrize("speed", FACTORS)
def test_cpu_hit_invariance(sweep, scenario, speed):
    cells, _ = sweep
    # the precondition: no off-site read in preplaced
    assert all(cells["preplaced", c, speed].offsite_streams == 0 for c in FACTORS)
    totals = {cells[scenario, c, speed].total for c in FACTORS}
    assert len(totals) == 1


# ---------------------------------------------------------------- 3


@pytest.mark.criterion(3, "remote totals agree to 3 significant figures across speed factors")
@pytest.mark.parametrize("cpu", FACTORS)
def test_max_speed_near_invariance(sweep, cpu):
    cells, _ = sweep
    # streams are job-rate limited in every cell: every cap exceeds the read rate
    assert all(cells["remote", cpu, s].min_cap_margin > 1.0 for s in FACTORS)
    assert len({_sig3(cells["remote", cpu, s].total) for s in FACTORS}) == 1


# ---------------------------------------------------------------- 4


@pytest.mark.criterion(4, "remote total strictly increasing in cpu_hit_factor")
@pytest.mark.parametrize("speed", FACTORS)
def test_remote_monotone_in_cpu_hit(sweep, speed):
    cells, _ = sweep
    totals = [cells["remote", c, speed].total for c in FACTORS]
    assert all(cells["remote", c, speed].streams_over_wan > 0 for c in FACTORS)
    assert totals[0] < totals[1] < totals[2]


# ---------------------------------------------------------------- 5


@pytest.mark.criterion(5, "mean efficiency preplaced > copy > remote at normal factors")
def test_efficiency_ordering(sweep):
    cells, _ = sweep
    effs = [cells[sc, 1.0, 1.0].mean_eff for sc in SCENARIOS]
    assert effs[0] > effs[1] > effs[2]


# ---------------------------------------------------------------- 6


def hand_trace_state():
    """Two sites with one core each, joined by 60 ms links in both directions.

    f1 (3 GB) lives at A, f2 (1 GB) at B, every job runs at efficiency 0.5.
      job 1 at A reads f1 locally: 100 cpu-s -> 200 s wall.
      job 2 at A streams f2 from B once job 1 frees the core:
        60 ms -> penalty 0.20, eff 0.4, 40 cpu-s -> 100 s, read at 1e7 B/s.
      job 3 at B streams f1 from A from the start:
        eff 0.4, 60 cpu-s -> 150 s, read at 2e7 B/s, well under the 1e8 cap.
    """
    sites, links = two_sites()
    catalog = catalog_of(("f1", 3 * 10**9, ["A"]), ("f2", 10**9, ["B"]))
    jobs = [job(1, "A", 100, "f1"), job(2, "A", 40, "f2"), job(3, "B", 60, "f1")]
    return micro_state(sites, links, catalog, jobs, efficiency={1: 0.5, 2: 0.5, 3: 0.5})


@pytest.mark.criterion(6, "two-site three-job hand trace matches engine output exactly")
def test_hand_simulation_oracle():
    state = hand_trace_state()
    log = run(state)
    # slice 0 [0,100): jobs 1 and 3 start; job 3 pulls 100 s x 2e7 over A->B
    # slice 1 [100,200): job 1 ends at 200; job 3 reads the last 50 s (1e9) and ends at 150
    # slice 2 [200,300): job 2 starts, streams 1e9 over B->A in exactly 100 s
    assert log.clocks == [0.0, 100.0, 200.0, 300.0]
    queues = [(q.clock, q.site, q.queued, q.running, q.done) for q in log.queue_samples]
    assert queues == [
        (0.0, "A", 2, 0, 0), (0.0, "B", 1, 0, 0),
        (100.0, "A", 1, 1, 0), (100.0, "B", 0, 1, 0),
        (200.0, "A", 1, 0, 1), (200.0, "B", 0, 0, 1),
        (300.0, "A", 0, 0, 2), (300.0, "B", 0, 0, 1),
    ]
    links = [(s.clock, s.src, s.dst, s.bytes) for s in log.link_samples]
    assert links == [
        (100.0, "A", "B", 2e9),
        (200.0, "A", "B", 1e9),
        (300.0, "B", "A", 1e9),
    ]
    walls = {r.job_id: (r.wall_clock, r.stage_in_wait, r.status) for r in log.records}
    assert walls == {1: (200.0, 0.0, "done"), 2: (100.0, 0.0, "done"), 3: (150.0, 0.0, "done")}


# ---------------------------------------------------------------- 7

PENALTY_BY_LATENCY = [(0, 0.0), (1, 0.05), (49, 0.05), (50, 0.20), (100, 0.20), (250, 0.20)]
SPEED_BY_LATENCY = [(0, 10000e6), (1, 1000e6), (49, 1000e6), (50, 100e6), (99, 100e6), (100, 50e6), (250, 50e6)]


@pytest.mark.criterion(7, "penalty_for and max_speed_for reproduce every penalty and speed table row at scale 1")
def test_table_fidelity():
    pen, spd = PenaltyTable(), SpeedTable()
    for threshold, value in DEFAULT_PENALTY_ROWS:
        assert penalty_for(pen, threshold) == value
    for threshold, value in DEFAULT_SPEED_ROWS:
        assert max_speed_for(spd, threshold) == value
    for latency, value in PENALTY_BY_LATENCY:
        assert penalty_for(pen, latency) == value
    for latency, value in SPEED_BY_LATENCY:
        assert max_speed_for(spd, latency) == value


# ---------------------------------------------------------------- 8


@pytest.fixture(scope="module")
def lossy_fixture(tmp_path_factory):
    # 5000 trace jobs, duplicated to 10^4; poor links force re-sends and fallbacks
    d = tmp_path_factory.mktemp("lossy")
    synth.write(d, n_jobs=5000, n_files=1000, seed=7, link_quality=0.6, remote_fraction=0.2)
    return read_fixtures(FixtureSet.from_dir(d))


@pytest.mark.criterion(8, "job, byte and core conservation over a 10^4-job randomized run")
@pytest.mark.parametrize("scenario", ["copy", "remote"])
def test_conservation(lossy_fixture, scenario):
    state = build_state(lossy_fixture, RunConfig(scenario=scenario, sweep=SweepConfig(1.0, 1.0, 3)))
    assert state.total_jobs == 10**4
    cores = {n: state.sites[n].cores for n in state.site_order}
    problems = []

    def check(st):
        total = 0
        for name in st.site_order:
            sr = st.sites[name]
            total += len(sr.queue) + sr.running + sr.done
            if not 0 <= sr.running <= cores[name]:
                problems.append(f"{name} running {sr.running} at {st.clock}")
        if total != st.total_jobs:
            problems.append(f"job count {total} at {st.clock}")

    log = run(state, check)
    assert problems == []
    assert sum(1 for r in log.records) == 10**4

    tasks = state.transfer_log
    per_link_sent: dict = {}
    for t in tasks:
        per_link_sent.setdefault(t.link, []).append(t.sent)
    totals = log.link_totals()
    assert set(totals) == {k for k, v in per_link_sent.items() if math.fsum(v) > 0}
    for key, moved in totals.items():
        assert math.isclose(moved, math.fsum(per_link_sent[key]), rel_tol=1e-9)

    # retried files are re-sent in full: every finished attempt moved the whole file
    retried = [t for t in tasks if t.finished_attempts > 1]
    assert retried
    for t in retried:
        if t.kind != STREAM and t.bytes_done == t.size:
            assert math.isclose(t.sent, t.size * t.finished_attempts, rel_tol=1e-9)


# ---------------------------------------------------------------- 9


@pytest.mark.criterion(9, "identical inputs and seed give byte-identical output files")
def test_determinism(tmp_path):
    fixture = synth.write(tmp_path / "fx", n_jobs=1500, n_files=400, seed=11, link_quality=0.8, remote_fraction=0.1)
    args = [
        "--sites", str(fixture / "sites.csv"),
        "--links", str(fixture / "links.csv"),
        "--catalog", str(fixture / "catalog.csv"),
        "--trace", str(fixture / "trace.csv"),
        "--scenario", "all", "--seed", "5",
    ]
    assert cli_main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--out", str(tmp_path / "b")]) == 0
    for sc in SCENARIOS:
        sub = f"{sc}_cpu1_speed1"
        names = ["jobs.csv", "queues.csv", "links.csv", "summary.csv"]
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / sub, tmp_path / "b" / sub, names, shallow=False)
        assert sorted(match) == sorted(names), (mismatch, errors)


# ---------------------------------------------------------------- 10


@pytest.mark.criterion(10, "remote: Tier-2 storage never changes and no Tier-2 to Tier-2 traffic")
@pytest.mark.parametrize("cpu", FACTORS)
@pytest.mark.parametrize("speed", FACTORS)
def test_remote_storage_claim(sweep, cpu, speed):
    cells, _ = sweep
    cell = cells["remote", cpu, speed]
    assert not cell.tier2_storage_changed
    assert cell.tier2_to_tier2_bytes == 0.0
