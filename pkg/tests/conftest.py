from __future__ import annotations

import pytest

from gridsim.ingest import Fixtures, RunConfig, Trace, build_state
from gridsim.model import FileCatalog, FileRecord, Job, Link, Site
from gridsim.params import SweepConfig

TB = 1e12


def two_sites(cores=(1, 1), latency=60.0, bandwidth=1e9, quality=1.0, disk=10 * TB):
    sites = [Site("A", cores[0], disk, 1e9), Site("B", cores[1], disk, 1e9)]
    links = [Link("A", "B", bandwidth, latency, quality), Link("B", "A", bandwidth, latency, quality)]
    return sites, links


def catalog_of(*records) -> FileCatalog:
    return FileCatalog(FileRecord(lfn, size, set(locs)) for lfn, size, locs in records)


def micro_state(
    sites,
    links,
    catalog,
    jobs,
    scenario="preplaced",
    *,
    tier1="A",
    efficiency=None,
    cpu_hit=1.0,
    speed=1.0,
    seed=0,
    slice_length=100.0,
    duplicate=False,
    **kw,
):
    """A run state over hand-built fixtures, with efficiencies optionally pinned per job."""
    fx = Fixtures(list(sites), list(links), catalog, Trace(list(jobs)))
    cfg = RunConfig(
        scenario=scenario,
        tier1=tier1,
        duplicate=duplicate,
        sweep=SweepConfig(cpu_hit, speed, seed),
        slice_length=slice_length,
        **kw,
    )
    state = build_state(fx, cfg)
    if efficiency is not None:
        state.efficiency_override = efficiency
        state.base_efficiency = state._sample_efficiencies()
    return state


def job(jid, site, cpu, *inputs, wall=None):
    return Job(jid, site, float(cpu), tuple(inputs), float(wall if wall is not None else cpu))


# ------------------------------------------------- acceptance line reporting

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    failed = rep.failed or (rep.when == "call" and rep.skipped)
    prev = _criteria.get(n, (title, "PASS"))[1]
    if rep.when == "call" or failed:
        status = "FAIL" if failed or prev == "FAIL" else "PASS"
        _criteria[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title}")
