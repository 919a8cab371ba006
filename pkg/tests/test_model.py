import pytest
from hypothesis import given, strategies as st

from gridsim import synth
from gridsim.model import FileCatalog, FileRecord, JobState, Link, Site, Topology, validate_topology


def nine_site_topology():
    sites = [Site(s, synth.CORES[s], 1e15, 1e10) for s in synth.SITE_ORDER]
    return Topology.build(sites, synth.us_links())


def test_nine_site_topology_is_valid():
    assert validate_topology(nine_site_topology()) == []


def test_unknown_site_in_link_is_named():
    topo = Topology.build([Site("A", 1, 0.0)], [Link("A", "XYZ", 1e9, 10, 1.0)])
    problems = validate_topology(topo)
    assert len(problems) == 1 and "XYZ" in problems[0]


def test_zero_quality_is_one_violation():
    topo = Topology.build([Site("A", 1, 0.0), Site("B", 1, 0.0)], [Link("A", "B", 1e9, 10, 0.0)])
    problems = validate_topology(topo)
    assert len(problems) == 1 and "quality" in problems[0]


def test_latency_lookup():
    topo = nine_site_topology()
    assert topo.latency("FNAL", "FNAL") == 0
    # read at Wisconsin from FNAL: row Wisconsin, column FNAL
    assert topo.latency("FNAL", "Wisconsin") == 20
    assert topo.latency("Nebraska", "Wisconsin") == 40


def test_catalog_refuses_to_drop_last_replica():
    cat = FileCatalog([FileRecord("/a", 10, {"A"})])
    with pytest.raises(ValueError):
        cat.remove_replica("/a", "A")


def test_job_state_only_moves_forward():
    assert JobState.QUEUED.can_become(JobState.RUNNING)
    assert JobState.RUNNING.can_become(JobState.DONE)
    assert not JobState.DONE.can_become(JobState.RUNNING)
    assert not JobState.QUEUED.can_become(JobState.DONE)


ops = st.lists(
    st.tuples(st.sampled_from(["add", "remove"]), st.integers(0, 4), st.sampled_from("ABC")),
    max_size=40,
)


@given(ops)
def test_used_bytes_matches_recount(sequence):
    cat = FileCatalog(FileRecord(f"/f{i}", 100 + i, {"A"}) for i in range(5))
    for op, i, site in sequence:
        if op == "add":
            cat.add_replica(f"/f{i}", site)
        elif len(cat[f"/f{i}"].locations) > 1:
            cat.remove_replica(f"/f{i}", site)
        assert all(cat[f"/f{j}"].locations for j in range(5))
    recount = cat.recount()
    for site in "ABC":
        assert cat.used(site) == recount.get(site, 0)
