"""Data-placement policies: preplaced, copy-and-cache, and remote streaming.

Every policy answers one question per job input: read it locally, copy it to
the job's site before computing, or stream it from another site while
computing. Policies are consulted only from the engine's loop.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Mapping

from .model import FileCatalog, Job, SiteId, Topology

LOCAL = "local"
STAGE_IN = "stage_in"
STREAM = "stream"

SCENARIOS = ("preplaced", "copy", "remote")


@dataclass(frozen=True, slots=True)
class Access:
    kind: str
    src: SiteId


AccessPlan = tuple  # tuple[Access, ...], one per job input


class NoReplicaError(LookupError):
    def __init__(self, lfn: str, site: SiteId):
        super().__init__(f"no reachable replica of {lfn!r} for site {site}")
        self.lfn = lfn
        self.site = site


def nearest_replica(
    catalog: FileCatalog,
    topology: Topology,
    lfn: str,
    dst: SiteId,
    exclude: Iterable[SiteId] = (),
) -> SiteId | None:
    """Lowest-latency replica holder for reading `lfn` at `dst`; ties go to the smaller name."""
    best = None
    best_key = None
    excluded = set(exclude)
    for site in catalog[lfn].locations:
        if site in excluded:
            continue
        latency = topology.latency(site, dst)
        if latency is None:
            continue
        key = (latency, site)
        if best_key is None or key < best_key:
            best, best_key = site, key
    return best


class PlacementPolicy:
    name = ""

    def __init__(self, topology: Topology, tier1: SiteId):
        self.topology = topology
        self.tier1 = tier1

    def prepare(
        self, catalog: FileCatalog, jobs: list[Job], originals: Mapping[int, Job]
    ) -> FileCatalog:
        """Rewrite the initial catalog for this scenario (returns a new catalog)."""
        return catalog.copy()

    def plan(self, catalog: FileCatalog, job: Job) -> AccessPlan:
        raise NotImplementedError

    # hooks used by the caching policy; the others ignore them
    def pin(self, job_id: int, site: SiteId, lfn: str) -> None:
        pass

    def release(self, job_id: int) -> None:
        pass

    def stage_in_done(self, catalog: FileCatalog, job_id: int, lfn: str, site: SiteId) -> bool:
        return False

    def _remote(self, catalog: FileCatalog, job: Job, lfn: str) -> SiteId:
        src = nearest_replica(catalog, self.topology, lfn, job.site)
        if src is None:
            raise NoReplicaError(lfn, job.site)
        return src


def _tier1_only(catalog: FileCatalog, tier1: SiteId) -> FileCatalog:
    out = FileCatalog()
    for rec in catalog.records.values():
        out.add_record(type(rec)(rec.lfn, rec.size, {tier1}))
    return out


class PreplacedPolicy(PlacementPolicy):
    """Fixture placement is kept; off-site inputs are streamed from the nearest holder."""

    name = "preplaced"

    def prepare(self, catalog, jobs, originals):
        out = catalog.copy()
        # a duplicated job brings its data along to the site it was moved to
        for job in jobs:
            orig = originals.get(job.id)
            if orig is None or orig.site == job.site:
                continue
            for lfn in job.inputs:
                if orig.site in out[lfn].locations:
                    out.add_replica(lfn, job.site)
        return out

    def plan(self, catalog, job):
        plan = []
        for lfn in job.inputs:
            if job.site in catalog[lfn].locations:
                plan.append(Access(LOCAL, job.site))
            else:
                plan.append(Access(STREAM, self._remote(catalog, job, lfn)))
        return tuple(plan)


class RemotePolicy(PlacementPolicy):
    """All data lives at the Tier-1 and every other job streams it."""

    name = "remote"

    def prepare(self, catalog, jobs, originals):
        return _tier1_only(catalog, self.tier1)

    def plan(self, catalog, job):
        plan = []
        for lfn in job.inputs:
            locations = catalog[lfn].locations
            if job.site in locations:
                plan.append(Access(LOCAL, job.site))
            elif self.tier1 in locations and self.topology.latency(self.tier1, job.site) is not None:
                plan.append(Access(STREAM, self.tier1))
            else:
                plan.append(Access(STREAM, self._remote(catalog, job, lfn)))
        return tuple(plan)


class CopyPolicy(PlacementPolicy):
    """Copy inputs to the job's site before it computes, and keep them as a cache.

    Cached replicas are evicted least-recently-used first. Replicas that a
    running job reads, or that serve as a transfer source, are pinned until
    that job finishes. An input that cannot fit even after evicting every
    unpinned cached file is streamed instead.
    """

    name = "copy"

    def __init__(self, topology, tier1):
        super().__init__(topology, tier1)
        self._lru: dict[SiteId, OrderedDict[str, int]] = {}
        self._cache_bytes: dict[SiteId, int] = {}
        self._pins: dict[tuple[SiteId, str], int] = {}
        self._pinned_bytes: dict[SiteId, int] = {}
        self._job_pins: dict[int, list[tuple[SiteId, str]]] = {}
        self.evictions = 0

    def prepare(self, catalog, jobs, originals):
        return _tier1_only(catalog, self.tier1)

    def cached(self, site: SiteId) -> list[str]:
        return list(self._lru.get(site, ()))

    def _touch(self, site, lfn):
        lru = self._lru.get(site)
        if lru is not None and lfn in lru:
            lru.move_to_end(lfn)

    def _evictable(self, site):
        return self._cache_bytes.get(site, 0) - self._pinned_bytes.get(site, 0)

    def _fits(self, catalog, site, size):
        capacity = self.topology.sites[site].disk_capacity
        return catalog.used(site) - self._evictable(site) + size <= capacity

    def plan(self, catalog, job):
        plan = []
        for lfn in job.inputs:
            rec = catalog[lfn]
            if job.site in rec.locations:
                self._touch(job.site, lfn)
                self.pin(job.id, job.site, lfn)
                plan.append(Access(LOCAL, job.site))
                continue
            src = self._remote(catalog, job, lfn)
            self.pin(job.id, src, lfn)
            if self._fits(catalog, job.site, rec.size):
                plan.append(Access(STAGE_IN, src))
            else:
                plan.append(Access(STREAM, src))
        return tuple(plan)

    def pin(self, job_id, site, lfn):
        if site not in self._lru or lfn not in self._lru[site]:
            return
        key = (site, lfn)
        n = self._pins.get(key, 0)
        if n == 0:
            self._pinned_bytes[site] = self._pinned_bytes.get(site, 0) + self._lru[site][lfn]
        self._pins[key] = n + 1
        self._job_pins.setdefault(job_id, []).append(key)

    def release(self, job_id):
        for key in self._job_pins.pop(job_id, ()):
            n = self._pins[key] - 1
            if n == 0:
                del self._pins[key]
                site, lfn = key
                self._pinned_bytes[site] -= self._lru[site][lfn]
            else:
                self._pins[key] = n

    def stage_in_done(self, catalog, job_id, lfn, site):
        """Insert a freshly copied replica, evicting as needed. False if it cannot fit."""
        rec = catalog[lfn]
        if site in rec.locations:
            self._touch(site, lfn)
            self.pin(job_id, site, lfn)
            return True
        capacity = self.topology.sites[site].disk_capacity
        lru = self._lru.setdefault(site, OrderedDict())
        if catalog.used(site) - self._evictable(site) + rec.size > capacity:
            return False
        if catalog.used(site) + rec.size > capacity:
            for victim in list(lru):
                if (site, victim) in self._pins:
                    continue
                catalog.remove_replica(victim, site)
                self._cache_bytes[site] -= lru.pop(victim)
                self.evictions += 1
                if catalog.used(site) + rec.size <= capacity:
                    break
        catalog.add_replica(lfn, site)
        lru[lfn] = rec.size
        self._cache_bytes[site] = self._cache_bytes.get(site, 0) + rec.size
        self.pin(job_id, site, lfn)
        return True


_POLICIES = {"preplaced": PreplacedPolicy, "copy": CopyPolicy, "remote": RemotePolicy}


def make_policy(name: str, topology: Topology, tier1: SiteId) -> PlacementPolicy:
    try:
        cls = _POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; expected one of {', '.join(SCENARIOS)}") from None
    return cls(topology, tier1)


def preplaced_policy(catalog: FileCatalog, job: Job, topology: Topology, tier1: SiteId = "FNAL") -> AccessPlan:
    return PreplacedPolicy(topology, tier1).plan(catalog, job)


def copy_policy(catalog: FileCatalog, job: Job, topology: Topology, tier1: SiteId = "FNAL") -> AccessPlan:
    return CopyPolicy(topology, tier1).plan(catalog, job)


def remote_policy(catalog: FileCatalog, job: Job, topology: Topology, tier1: SiteId = "FNAL") -> AccessPlan:
    return RemotePolicy(topology, tier1).plan(catalog, job)
