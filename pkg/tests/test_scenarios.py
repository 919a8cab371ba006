from gridsim import synth
from gridsim.model import Job, Link, Site, Topology
from gridsim.scenarios import (
    LOCAL,
    STAGE_IN,
    STREAM,
    Access,
    CopyPolicy,
    copy_policy,
    nearest_replica,
    preplaced_policy,
    remote_policy,
)

from conftest import catalog_of

TOPO = Topology.build([Site(s, synth.CORES[s], 1e15) for s in synth.SITE_ORDER], synth.us_links())


def test_preplaced():
    cat = catalog_of(("/a", 10, ["UCSD"]), ("/b", 10, ["FNAL"]), ("/c", 10, ["Nebraska", "FNAL"]))
    assert preplaced_policy(cat, Job(0, "UCSD", 1.0, ("/a",)), TOPO) == (Access(LOCAL, "UCSD"),)
    assert preplaced_policy(cat, Job(0, "MIT", 1.0, ("/b",)), TOPO) == (Access(STREAM, "FNAL"),)
    assert preplaced_policy(cat, Job(0, "Wisconsin", 1.0, ("/c",)), TOPO) == (Access(STREAM, "FNAL"),)


def test_remote():
    cat = catalog_of(("/a", 10, ["FNAL"]))
    assert remote_policy(cat, Job(0, "FNAL", 1.0, ("/a",)), TOPO) == (Access(LOCAL, "FNAL"),)
    assert remote_policy(cat, Job(0, "Caltech", 1.0, ("/a",)), TOPO) == (Access(STREAM, "FNAL"),)


def test_copy_then_local():
    cat = catalog_of(("/store/a", 10, ["FNAL"]))
    policy = CopyPolicy(TOPO, "FNAL")
    assert policy.plan(cat, Job(1, "UCSD", 1.0, ("/store/a",))) == (Access(STAGE_IN, "FNAL"),)
    assert policy.stage_in_done(cat, 1, "/store/a", "UCSD")
    assert policy.plan(cat, Job(2, "UCSD", 1.0, ("/store/a",))) == (Access(LOCAL, "UCSD"),)
    # Wisconsin: FNAL at 20 ms beats the UCSD cache at 70 ms
    assert policy.plan(cat, Job(3, "Wisconsin", 1.0, ("/store/a",))) == (Access(STAGE_IN, "FNAL"),)
    assert copy_policy(cat, Job(4, "FNAL", 1.0, ("/store/a",)), TOPO) == (Access(LOCAL, "FNAL"),)


def test_copy_lru_eviction_respects_pins():
    topo = Topology.build(
        [Site("FNAL", 1, 1e9), Site("T2", 1, 25)],
        [Link("FNAL", "T2", 1e9, 20), Link("T2", "FNAL", 1e9, 20)],
    )
    cat = catalog_of(("/a", 10, ["FNAL"]), ("/b", 10, ["FNAL"]), ("/c", 10, ["FNAL"]))
    policy = CopyPolicy(topo, "FNAL")
    for jid, lfn in enumerate(["/a", "/b"]):
        policy.plan(cat, Job(jid, "T2", 1.0, (lfn,)))
        policy.stage_in_done(cat, jid, lfn, "T2")
    # job 0 still holds /a, so /b (unpinned once job 1 ends) is the victim
    policy.release(1)
    assert policy.plan(cat, Job(2, "T2", 1.0, ("/c",))) == (Access(STAGE_IN, "FNAL"),)
    policy.stage_in_done(cat, 2, "/c", "T2")
    assert policy.cached("T2") == ["/a", "/c"]
    assert policy.evictions == 1
    assert cat.used("T2") <= 25
    # nothing evictable now: a fourth file cannot be staged, so it streams
    cat.add_record(type(cat["/a"])("/d", 10, {"FNAL"}))
    assert policy.plan(cat, Job(3, "T2", 1.0, ("/d",))) == (Access(STREAM, "FNAL"),)


def test_nearest_replica_tie_and_exclusion():
    cat = catalog_of(("/x", 1, ["Florida", "Purdue"]))
    # Vanderbilt reads Florida at 40 and Purdue at 40 -> tie goes to Florida
    assert nearest_replica(cat, TOPO, "/x", "Vanderbilt") == "Florida"
    assert nearest_replica(cat, TOPO, "/x", "Vanderbilt", exclude=["Florida"]) == "Purdue"
    assert nearest_replica(cat, TOPO, "/x", "Vanderbilt", exclude=["Florida", "Purdue"]) is None
