"""Fixture parsing, validation, trace transforms and initial-state assembly.

Four CSV fixtures describe a run:

    sites.csv    site,cores,disk_tb,internal_gbps
    links.csv    src,dst,bandwidth_gbps,latency_ms,quality
    catalog.csv  lfn,size_bytes,sites            (sites is ';'-separated)
    trace.csv    job_id,site,cpu_seconds,walltime_seconds,lfns[,lfn_sizes]

Link bandwidth is given in GB/s, site-internal bandwidth in Gbit/s, disk in
TB; all prefixes are decimal.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from pathlib import Path
from typing import Iterable

from .engine import DEFAULT_MAX_ATTEMPTS, DEFAULT_SLICE, SimulationState
from .model import (
    BANDWIDTH_MAX,
    BANDWIDTH_MIN,
    FileCatalog,
    FileRecord,
    Job,
    Link,
    Site,
    SiteId,
    Topology,
    validate_topology,
)
from .params import EfficiencyHistogram, PenaltyTable, SpeedTable, SweepConfig
from .scenarios import SCENARIOS, make_policy

SITES_HEADER = ["site", "cores", "disk_tb", "internal_gbps"]
LINKS_HEADER = ["src", "dst", "bandwidth_gbps", "latency_ms", "quality"]
CATALOG_HEADER = ["lfn", "size_bytes", "sites"]
TRACE_HEADER = ["job_id", "site", "cpu_seconds", "walltime_seconds", "lfns"]
TRACE_SIZES_COLUMN = "lfn_sizes"

TB = 10**12
GB = 10**9


class FixtureError(ValueError):
    """Bad fixture content; `problems` lists every violation found."""

    def __init__(self, problems: Iterable[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems) if self.problems else "invalid fixture")


class ParseError(FixtureError):
    pass


class ValidationError(FixtureError):
    pass


def clamp_bandwidth(raw: float) -> float:
    if not raw > 0:
        raise ValueError(f"bandwidth must be positive, got {raw}")
    return min(max(raw, BANDWIDTH_MIN), BANDWIDTH_MAX)


# Unit conversions go through Decimal so that writing a value back out and
# re-reading it gives the identical float.
def _scaled(text: str, factor: Decimal) -> float:
    with localcontext() as ctx:
        ctx.prec = 100
        return float(Decimal(text.strip()) * factor)


def _unscaled(value: float, factor: Decimal) -> str:
    with localcontext() as ctx:
        ctx.prec = 100
        d = (Decimal(value) / factor).normalize()
    return format(d, "f")


_TB = Decimal(TB)
_GB = Decimal(GB)
_GBIT = Decimal(GB) / 8


def _rows(text: str, header: list[str], what: str, optional: Iterable[str] = ()):
    """Yield (line number, row dict) after checking the header."""
    reader = csv.reader(io.StringIO(text.lstrip("\ufeff"), newline=""))
    head = None
    for row in reader:
        if not row or not any(c.strip() for c in row):
            continue
        cells = [c.strip() for c in row]
        if head is None:
            allowed = header + list(optional)
            if cells[: len(header)] != header or any(c not in allowed for c in cells[len(header):]):
                raise ParseError([f"{what} line {reader.line_num}: expected header {','.join(header)}"])
            head = cells
            continue
        if len(cells) != len(head):
            raise ParseError([f"{what} line {reader.line_num}: expected {len(head)} fields, got {len(cells)}"])
        yield reader.line_num, dict(zip(head, cells))
    if head is None:
        raise ParseError([f"{what}: missing header {','.join(header)}"])


def _num(value: str, kind, what: str, line: int, name: str):
    try:
        return kind(value)
    except ValueError:
        raise ParseError([f"{what} line {line}: {name} {value!r} is not a number"]) from None


def parse_sites(text: str) -> list[Site]:
    sites = []
    seen = set()
    for line, row in _rows(text, SITES_HEADER, "sites"):
        name = row["site"]
        if not name:
            raise ParseError([f"sites line {line}: empty site name"])
        cores = _num(row["cores"], int, "sites", line, "cores")
        _num(row["disk_tb"], float, "sites", line, "disk_tb")
        _num(row["internal_gbps"], float, "sites", line, "internal_gbps")
        disk = _scaled(row["disk_tb"], _TB)
        internal = _scaled(row["internal_gbps"], _GBIT)
        if cores < 1:
            raise ParseError([f"sites line {line}: {name}: cores must be >= 1 (got {cores})"])
        if disk < 0 or internal < 0 or math.isnan(disk) or math.isnan(internal):
            raise ParseError([f"sites line {line}: {name}: disk and bandwidth must be >= 0"])
        if name in seen:
            raise ValidationError([f"sites line {line}: duplicate site {name!r}"])
        seen.add(name)
        sites.append(Site(name, cores, disk, internal))
    return sites


def parse_links(text: str) -> list[Link]:
    links = []
    seen = set()
    for line, row in _rows(text, LINKS_HEADER, "links"):
        src, dst = row["src"], row["dst"]
        _num(row["bandwidth_gbps"], float, "links", line, "bandwidth_gbps")
        raw = _scaled(row["bandwidth_gbps"], _GB)
        latency = _num(row["latency_ms"], float, "links", line, "latency_ms")
        quality = _num(row["quality"], float, "links", line, "quality")
        if not src or not dst:
            raise ParseError([f"links line {line}: empty site name"])
        if src == dst:
            raise ParseError([f"links line {line}: self-link {src}->{dst}"])
        if not 0 < quality <= 1:
            raise ParseError([f"links line {line}: quality {quality} outside (0, 1]"])
        if not latency >= 0 or math.isinf(latency):
            raise ParseError([f"links line {line}: latency must be >= 0"])
        if not raw > 0:
            raise ParseError([f"links line {line}: bandwidth must be positive"])
        if (src, dst) in seen:
            raise ValidationError([f"links line {line}: duplicate link {src}->{dst}"])
        seen.add((src, dst))
        links.append(Link(src, dst, clamp_bandwidth(raw), latency, quality))
    return links


def _split(field_value: str) -> list[str]:
    return [p.strip() for p in field_value.split(";") if p.strip()]


def parse_catalog(text: str) -> FileCatalog:
    catalog = FileCatalog()
    for line, row in _rows(text, CATALOG_HEADER, "catalog"):
        lfn = row["lfn"]
        size = _num(row["size_bytes"], int, "catalog", line, "size_bytes")
        locations = _split(row["sites"])
        if not lfn:
            raise ParseError([f"catalog line {line}: empty lfn"])
        if size <= 0:
            raise ParseError([f"catalog line {line}: {lfn}: size must be > 0"])
        if not locations:
            raise ParseError([f"catalog line {line}: {lfn}: no replica locations"])
        if lfn in catalog:
            raise ValidationError([f"catalog line {line}: duplicate lfn {lfn!r}"])
        catalog.add_record(FileRecord(lfn, size, set(locations)))
    return catalog


@dataclass
class Trace:
    jobs: list[Job]
    size_hints: dict[str, int] = field(default_factory=dict)


def parse_trace_full(text: str) -> Trace:
    """Parse a job trace, keeping any per-file size hints from the optional lfn_sizes column."""
    jobs = []
    hints: dict[str, int] = {}
    seen = set()
    for line, row in _rows(text, TRACE_HEADER, "trace", optional=[TRACE_SIZES_COLUMN]):
        job_id = _num(row["job_id"], int, "trace", line, "job_id")
        cpu = _num(row["cpu_seconds"], float, "trace", line, "cpu_seconds")
        wall = _num(row["walltime_seconds"], float, "trace", line, "walltime_seconds")
        if not cpu > 0 or math.isinf(cpu):
            raise ParseError([f"trace line {line}: job {job_id}: cpu_seconds must be > 0"])
        if not row["site"]:
            raise ParseError([f"trace line {line}: job {job_id}: empty site"])
        if job_id in seen:
            raise ValidationError([f"trace line {line}: duplicate job id {job_id}"])
        seen.add(job_id)
        lfns = _split(row["lfns"])
        sizes_field = row.get(TRACE_SIZES_COLUMN, "")
        if sizes_field:
            sizes = sizes_field.split(";")
            if len(sizes) != len(lfns):
                raise ParseError([f"trace line {line}: lfn_sizes must align with lfns"])
            for lfn, s in zip(lfns, sizes):
                if s.strip():
                    hints[lfn] = _num(s.strip(), int, "trace", line, "lfn size")
        jobs.append(Job(job_id, row["site"], cpu, tuple(lfns), wall))
    return Trace(jobs, hints)


def parse_trace(text: str) -> list[Job]:
    return parse_trace_full(text).jobs


def tier2_rotation(topology: Topology, tier1: SiteId) -> dict[SiteId, SiteId]:
    tier2 = sorted(s for s in topology.sites if s != tier1)
    return {s: tier2[(i + 1) % len(tier2)] for i, s in enumerate(tier2)}


def duplicate_offset(jobs: list[Job]) -> int:
    # equals the trace length whenever ids are dense from 0
    return max(len(jobs), max((j.id for j in jobs), default=-1) + 1)


def duplicate_trace(jobs: list[Job], topology: Topology, tier1: SiteId, mode: str | None = None) -> list[Job]:
    """Append one copy of every job; Tier-2 copies move to the next Tier-2 by name.

    `mode` is accepted for symmetry with the scenario name; data duplication for
    the preplaced scenario is done by the policy when the catalog is prepared.
    """
    rotation = tier2_rotation(topology, tier1)
    if len(rotation) < 2:
        raise ValidationError(["trace duplication needs at least two Tier-2 sites"])
    offset = duplicate_offset(jobs)
    dups = []
    for job in jobs:
        if job.site not in topology.sites:
            raise ValidationError([f"job {job.id}: unknown site {job.site!r}"])
        site = job.site if job.site == tier1 else rotation[job.site]
        dups.append(Job(job.id + offset, site, job.cpu_seconds, job.inputs, job.original_walltime, job.read_fraction))
    return list(jobs) + dups


def place_missing_at_tier1(
    catalog: FileCatalog,
    jobs: list[Job],
    tier1: SiteId,
    size_hints: dict[str, int] | None = None,
) -> FileCatalog:
    """Give every referenced but unknown LFN a replica at the Tier-1."""
    hints = size_hints or {}
    out = catalog.copy()
    missing = []
    for job in jobs:
        for lfn in job.inputs:
            if lfn in out:
                continue
            size = hints.get(lfn)
            if size is None:
                missing.append(f"job {job.id}: lfn {lfn!r} is in no catalog and has no size")
                continue
            if size <= 0:
                missing.append(f"job {job.id}: lfn {lfn!r} has non-positive size {size}")
                continue
            out.add_record(FileRecord(lfn, size, {tier1}))
    if missing:
        raise ValidationError(missing)
    return out


# ---------------------------------------------------------------- writers


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _real(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def dump_sites(sites: Iterable[Site]) -> str:
    return _csv(
        SITES_HEADER,
        ([s.id, s.cores, _unscaled(s.disk_capacity, _TB), _unscaled(s.internal_bandwidth, _GBIT)] for s in sites),
    )


def dump_links(links: Iterable[Link]) -> str:
    return _csv(
        LINKS_HEADER,
        ([l.src, l.dst, _unscaled(l.bandwidth, _GB), _real(l.latency), repr(float(l.quality))] for l in links),
    )


def dump_catalog(catalog: FileCatalog) -> str:
    return _csv(
        CATALOG_HEADER,
        ([r.lfn, r.size, ";".join(sorted(r.locations))] for r in catalog.records.values()),
    )


def dump_trace(jobs: Iterable[Job]) -> str:
    return _csv(
        TRACE_HEADER,
        ([j.id, j.site, _real(j.cpu_seconds), _real(j.original_walltime), ";".join(j.inputs)] for j in jobs),
    )


# --------------------------------------------------------------- assembly


@dataclass(frozen=True)
class FixtureSet:
    sites_path: Path
    links_path: Path
    catalog_path: Path
    trace_path: Path

    @classmethod
    def from_dir(cls, directory) -> "FixtureSet":
        d = Path(directory)
        return cls(d / "sites.csv", d / "links.csv", d / "catalog.csv", d / "trace.csv")

    def paths(self) -> dict[str, Path]:
        return {
            "sites": Path(self.sites_path),
            "links": Path(self.links_path),
            "catalog": Path(self.catalog_path),
            "trace": Path(self.trace_path),
        }


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "preplaced"
    tier1: SiteId = "FNAL"
    duplicate: bool = True
    sweep: SweepConfig = field(default_factory=SweepConfig)
    slice_length: float = DEFAULT_SLICE
    histogram: EfficiencyHistogram | None = None
    penalty_table: PenaltyTable = field(default_factory=PenaltyTable)
    speed_table: SpeedTable = field(default_factory=SpeedTable)
    max_attempts: int = DEFAULT_MAX_ATTEMPTS


@dataclass
class Fixtures:
    """Parsed but not yet cross-validated fixture contents."""

    sites: list[Site]
    links: list[Link]
    catalog: FileCatalog
    trace: Trace


def read_fixtures(fixtures: FixtureSet) -> Fixtures:
    problems = []
    parsed = {}
    parsers = {"sites": parse_sites, "links": parse_links, "catalog": parse_catalog, "trace": parse_trace_full}
    for name, path in fixtures.paths().items():
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            problems.append(f"{name}: cannot read {path}: {exc.strerror}")
            continue
        try:
            parsed[name] = parsers[name](text)
        except FixtureError as exc:
            problems.extend(exc.problems)
    if problems:
        raise ValidationError(problems)
    return Fixtures(parsed["sites"], parsed["links"], parsed["catalog"], parsed["trace"])


def build_state(fx: Fixtures, config: RunConfig) -> SimulationState:
    """Cross-validate parsed fixtures and produce the initial state for one run."""
    if config.scenario not in SCENARIOS:
        raise ValidationError([f"unknown scenario {config.scenario!r}"])
    if config.histogram is None:
        from .data import default_histogram

        histogram = default_histogram()
    else:
        histogram = config.histogram

    topology = Topology.build(fx.sites, fx.links)
    problems = validate_topology(topology)
    if config.tier1 not in topology.sites:
        problems.append(f"tier1 site {config.tier1!r} is not in the site list")
    for rec in fx.catalog.records.values():
        for site in sorted(rec.locations):
            if site not in topology.sites:
                problems.append(f"catalog: {rec.lfn}: unknown site {site!r}")
    for job in fx.trace.jobs:
        if job.site not in topology.sites:
            problems.append(f"trace: job {job.id}: unknown site {job.site!r}")
    if problems:
        raise ValidationError(problems)

    catalog = place_missing_at_tier1(fx.catalog, fx.trace.jobs, config.tier1, fx.trace.size_hints)
    jobs = list(fx.trace.jobs)
    originals: dict[int, Job] = {}
    if config.duplicate:
        offset = duplicate_offset(jobs)
        jobs = duplicate_trace(jobs, topology, config.tier1, config.scenario)
        originals = {j.id + offset: j for j in fx.trace.jobs}

    policy = make_policy(config.scenario, topology, config.tier1)
    catalog = policy.prepare(catalog, jobs, originals)
    for name, site in topology.sites.items():
        used = catalog.used(name)
        if used > site.disk_capacity:
            problems.append(
                f"site {name}: {used} bytes of replicas exceed disk capacity {site.disk_capacity:.0f}"
            )
    if problems:
        raise ValidationError(problems)

    return SimulationState(
        topology=topology,
        catalog=catalog,
        jobs=jobs,
        policy=policy,
        histogram=histogram,
        penalty_table=config.penalty_table,
        speed_table=config.speed_table,
        sweep=config.sweep,
        slice_length=config.slice_length,
        max_attempts=config.max_attempts,
        scenario=config.scenario,
    )


def assemble_state(fixtures: FixtureSet, config: RunConfig) -> SimulationState:
    return build_state(read_fixtures(fixtures), config)
