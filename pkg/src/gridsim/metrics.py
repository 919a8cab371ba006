"""Per-slice and per-job observables, summaries, and the CSV writers."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DONE = "done"
FAILED = "failed"

JOBS_HEADER = ["job_id", "site", "scenario", "cpu_s", "base_eff", "realized_eff", "wall_s", "stagein_s", "status"]
QUEUES_HEADER = ["clock_s", "site", "queued", "running", "done"]
LINKS_HEADER = ["clock_s", "src", "dst", "bytes"]
SUMMARY_HEADER = ["scenario", "cpu_hit_factor", "speed_factor", "seed", "total_wall_s", "mean_eff", "failed_jobs"]


@dataclass(frozen=True, slots=True)
class JobRecord:
    job_id: int
    site: str
    scenario: str
    cpu_seconds: float
    base_efficiency: float
    wall_clock: float
    stage_in_wait: float
    status: str = DONE

    @property
    def realized_efficiency(self) -> float:
        if self.status != DONE or self.wall_clock <= 0:
            return 0.0
        return self.cpu_seconds / self.wall_clock


@dataclass(frozen=True, slots=True)
class QueueSample:
    clock: float
    site: str
    queued: int
    running: int
    done: int


@dataclass(frozen=True, slots=True)
class LinkSample:
    clock: float
    src: str
    dst: str
    bytes: float


@dataclass
class MetricsLog:
    scenario: str = ""
    cpu_hit_factor: float = 1.0
    speed_factor: float = 1.0
    seed: int = 0
    queue_samples: list[QueueSample] = field(default_factory=list)
    link_samples: list[LinkSample] = field(default_factory=list)
    records: list[JobRecord] = field(default_factory=list)

    def record_slice(self, state) -> None:
        record_slice(self, state)

    @property
    def clocks(self) -> list[float]:
        seen = []
        for s in self.queue_samples:
            if not seen or seen[-1] != s.clock:
                seen.append(s.clock)
        return seen

    def sorted_records(self) -> list[JobRecord]:
        return sorted(self.records, key=lambda r: r.job_id)

    def link_totals(self) -> dict[tuple[str, str], float]:
        totals: dict[tuple[str, str], float] = {}
        for s in self.link_samples:
            key = (s.src, s.dst)
            totals[key] = totals.get(key, 0.0) + s.bytes
        return totals


def record_slice(log: MetricsLog, state) -> None:
    """Append one queue sample per site and one link sample per busy link."""
    clock = state.clock
    for name in state.site_order:
        sr = state.sites[name]
        log.queue_samples.append(QueueSample(clock, name, len(sr.queue), sr.running, sr.done))
    for (src, dst) in sorted(state.slice_link_bytes):
        moved = state.slice_link_bytes[(src, dst)]
        if moved > 0:
            log.link_samples.append(LinkSample(clock, src, dst, moved))


@dataclass
class SummaryReport:
    total_wall: float = 0.0
    mean_efficiency: float = 0.0
    done_jobs: int = 0
    failed_jobs: int = 0
    per_site_wall: dict[str, float] = field(default_factory=dict)
    efficiency_histogram: np.ndarray = field(default_factory=lambda: np.zeros(100, dtype=int))

    @property
    def total_wall_billions(self) -> float:
        return self.total_wall / 1e9


def summarize(records: list[JobRecord]) -> SummaryReport:
    done = sorted((r for r in records if r.status == DONE), key=lambda r: r.job_id)
    failed = sum(1 for r in records if r.status != DONE)
    if not done:
        return SummaryReport(failed_jobs=failed)
    per_site: dict[str, list[float]] = {}
    for r in done:
        per_site.setdefault(r.site, []).append(r.wall_clock)
    effs = [r.realized_efficiency for r in done]
    hist, _ = np.histogram(np.clip(effs, 0.0, 1.0 - 1e-12), bins=100, range=(0.0, 1.0))
    return SummaryReport(
        total_wall=math.fsum(r.wall_clock for r in done),
        mean_efficiency=math.fsum(effs) / len(effs),
        done_jobs=len(done),
        failed_jobs=failed,
        per_site_wall={s: math.fsum(v) for s, v in sorted(per_site.items())},
        efficiency_histogram=hist,
    )


def fmt_num(x) -> str:
    """Integers bare; other reals in shortest round-trip form."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 1e17:
        return str(int(x))
    return repr(x)


def fmt_frac(x: float) -> str:
    return f"{float(x):.6g}"


def summary_row(log: MetricsLog, report: SummaryReport) -> list[str]:
    return [
        log.scenario,
        fmt_frac(log.cpu_hit_factor),
        fmt_frac(log.speed_factor),
        str(log.seed),
        fmt_num(report.total_wall),
        fmt_frac(report.mean_efficiency),
        str(report.failed_jobs),
    ]


def _write(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_outputs(log: MetricsLog, directory: str | os.PathLike) -> SummaryReport:
    """Write jobs.csv, queues.csv, links.csv and summary.csv into `directory`."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    records = log.sorted_records()
    _write(
        out / "jobs.csv",
        JOBS_HEADER,
        (
            [
                r.job_id, r.site, r.scenario, fmt_num(r.cpu_seconds),
                fmt_frac(r.base_efficiency), fmt_frac(r.realized_efficiency),
                fmt_num(r.wall_clock), fmt_num(r.stage_in_wait), r.status,
            ]
            for r in records
        ),
    )
    _write(
        out / "queues.csv",
        QUEUES_HEADER,
        ([fmt_num(s.clock), s.site, s.queued, s.running, s.done] for s in log.queue_samples),
    )
    _write(
        out / "links.csv",
        LINKS_HEADER,
        ([fmt_num(s.clock), s.src, s.dst, fmt_num(s.bytes)] for s in log.link_samples),
    )
    report = summarize(records)
    _write(out / "summary.csv", SUMMARY_HEADER, [summary_row(log, report)])
    return report
