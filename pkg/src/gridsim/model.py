"""Domain types for the grid: sites, links, the file catalog and jobs."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

SiteId = str

# Intra-site access has no Link object; it is read at this latency.
LOCAL_LATENCY_MS = 0.0

# Link bandwidth is clamped to [1 GB/s, 10 GB/s] on ingestion.
BANDWIDTH_MIN = 1e9
BANDWIDTH_MAX = 1e10


@dataclass(frozen=True)
class Site:
    id: SiteId
    cores: int
    disk_capacity: float  # bytes
    internal_bandwidth: float = 0.0  # bytes/s, stored but never used by the engine


@dataclass(frozen=True)
class Link:
    src: SiteId
    dst: SiteId
    bandwidth: float  # bytes/s
    latency: float  # ms
    quality: float = 1.0  # per-attempt success probability


@dataclass(frozen=True)
class Topology:
    sites: Mapping[SiteId, Site]
    links: Mapping[tuple[SiteId, SiteId], Link]

    @classmethod
    def build(cls, sites: Iterable[Site], links: Iterable[Link]) -> "Topology":
        return cls(
            sites={s.id: s for s in sites},
            links={(l.src, l.dst): l for l in links},
        )

    def site_names(self) -> list[SiteId]:
        return sorted(self.sites)

    def latency(self, src: SiteId, dst: SiteId) -> float | None:
        """Latency in ms for reading data held at `src` from `dst`.

        Returns None when the two sites are not connected.
        """
        if src == dst:
            return LOCAL_LATENCY_MS
        link = self.links.get((src, dst))
        return None if link is None else link.latency


@dataclass
class FileRecord:
    lfn: str
    size: int
    locations: set[SiteId] = field(default_factory=set)


class FileCatalog:
    """LFN -> size and replica locations, plus per-site used bytes."""

    def __init__(self, records: Iterable[FileRecord] = ()):
        self.records: dict[str, FileRecord] = {}
        self.used_bytes: dict[SiteId, int] = {}
        for rec in records:
            self.add_record(rec)

    def __contains__(self, lfn: str) -> bool:
        return lfn in self.records

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, lfn: str) -> FileRecord:
        return self.records[lfn]

    def add_record(self, rec: FileRecord) -> None:
        if rec.lfn in self.records:
            raise ValueError(f"duplicate lfn {rec.lfn!r}")
        self.records[rec.lfn] = FileRecord(rec.lfn, rec.size, set(rec.locations))
        for site in rec.locations:
            self.used_bytes[site] = self.used_bytes.get(site, 0) + rec.size

    def add_replica(self, lfn: str, site: SiteId) -> bool:
        rec = self.records[lfn]
        if site in rec.locations:
            return False
        rec.locations.add(site)
        self.used_bytes[site] = self.used_bytes.get(site, 0) + rec.size
        return True

    def remove_replica(self, lfn: str, site: SiteId) -> None:
        rec = self.records[lfn]
        if site not in rec.locations:
            return
        if len(rec.locations) == 1:
            raise ValueError(f"refusing to drop the last replica of {lfn!r}")
        rec.locations.discard(site)
        self.used_bytes[site] -= rec.size

    def used(self, site: SiteId) -> int:
        return self.used_bytes.get(site, 0)

    def recount(self) -> dict[SiteId, int]:
        """Recompute per-site usage from scratch (for consistency checks)."""
        totals: dict[SiteId, int] = {}
        for rec in self.records.values():
            for site in rec.locations:
                totals[site] = totals.get(site, 0) + rec.size
        return totals

    def copy(self) -> "FileCatalog":
        return FileCatalog(self.records.values())

    def snapshot(self) -> dict[str, frozenset[SiteId]]:
        return {lfn: frozenset(rec.locations) for lfn, rec in self.records.items()}


@dataclass(frozen=True)
class Job:
    id: int
    site: SiteId
    cpu_seconds: float
    inputs: tuple[str, ...] = ()
    original_walltime: float = 0.0
    read_fraction: float = 1.0


class JobState(enum.Enum):
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"

    def can_become(self, other: "JobState") -> bool:
        order = [JobState.QUEUED, JobState.RUNNING, JobState.DONE]
        return order.index(other) == order.index(self) + 1


def validate_topology(topology: Topology) -> list[str]:
    """Check every site and link invariant; returns one message per violation."""
    problems = []
    for key, site in topology.sites.items():
        if not site.id:
            problems.append("site with empty name")
        if key != site.id:
            problems.append(f"site {site.id!r} registered under name {key!r}")
        if site.cores < 1:
            problems.append(f"site {site.id}: cores must be >= 1 (got {site.cores})")
        if site.disk_capacity < 0:
            problems.append(f"site {site.id}: disk_capacity must be >= 0")
        if site.internal_bandwidth < 0:
            problems.append(f"site {site.id}: internal_bandwidth must be >= 0")

    for (src, dst), link in topology.links.items():
        name = f"link {src}->{dst}"
        if (link.src, link.dst) != (src, dst):
            problems.append(f"{name}: registered under the wrong endpoints")
        for end in (src, dst):
            if end not in topology.sites:
                problems.append(f"{name}: unknown site {end!r}")
        if src == dst:
            problems.append(f"{name}: self-links are not allowed")
        if not (BANDWIDTH_MIN <= link.bandwidth <= BANDWIDTH_MAX):
            problems.append(f"{name}: bandwidth {link.bandwidth:g} B/s outside clamp bounds")
        if not (link.latency >= 0) or math.isinf(link.latency):
            problems.append(f"{name}: latency must be >= 0")
        if not (0 < link.quality <= 1):
            problems.append(f"{name}: quality {link.quality} outside (0, 1]")
    return problems
