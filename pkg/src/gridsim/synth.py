"""Deterministic synthetic fixtures on the nine-site US topology.

    python -m gridsim.synth OUTDIR [--jobs N] [--files N] [--seed S]

writes sites.csv, links.csv, catalog.csv, trace.csv and histogram.csv.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from .ingest import dump_catalog, dump_links, dump_sites, dump_trace
from .model import FileCatalog, FileRecord, Job, Link, Site
from .params import N_CPU_BINS, N_EFF_BINS, EfficiencyHistogram, default_cpu_edges, dump_histogram

TIER1 = "FNAL"
SITE_ORDER = ["Purdue", "UCSD", "Nebraska", "Wisconsin", "Vanderbilt", "Caltech", "Florida", "MIT", "FNAL"]

# Row = destination site, column = source site, in ms.
LATENCY_MS = [
    [0, 100, 100, 60, 40, 100, 40, 40, 70],
    [100, 0, 70, 100, 100, 20, 100, 100, 100],
    [70, 60, 0, 40, 70, 40, 70, 70, 40],
    [40, 70, 40, 0, 60, 100, 70, 40, 20],
    [40, 100, 70, 70, 0, 100, 40, 20, 60],
    [100, 20, 60, 100, 100, 0, 100, 100, 100],
    [40, 100, 70, 60, 40, 100, 0, 60, 70],
    [40, 100, 100, 70, 40, 100, 40, 0, 70],
    [40, 100, 40, 20, 70, 100, 70, 60, 0],
]

CORES = {
    "FNAL": 500, "Purdue": 260, "UCSD": 220, "Nebraska": 240, "Wisconsin": 250,
    "Vanderbilt": 140, "Caltech": 200, "Florida": 180, "MIT": 210,
}


def latency(src: str, dst: str) -> float:
    return float(LATENCY_MS[SITE_ORDER.index(dst)][SITE_ORDER.index(src)])


def us_links(bandwidth=lambda src, dst: 1e9, quality=lambda src, dst: 1.0) -> list[Link]:
    links = []
    for dst in SITE_ORDER:
        for src in SITE_ORDER:
            if src != dst:
                links.append(Link(src, dst, bandwidth(src, dst), latency(src, dst), quality(src, dst)))
    return links


def default_histogram() -> EfficiencyHistogram:
    """Smooth stand-in for a measured efficiency distribution.

    Short jobs sit lower and spread wider; every row also carries a small
    low-efficiency tail.
    """
    centers = (np.arange(N_EFF_BINS) + 0.5) / N_EFF_BINS
    rows = []
    for i in range(N_CPU_BINS):
        frac = i / (N_CPU_BINS - 1)
        mu = 0.62 + 0.30 * frac
        sigma = 0.12 - 0.07 * frac
        peak = np.exp(-0.5 * ((centers - mu) / sigma) ** 2)
        tail = 0.04 * np.exp(-centers / 0.25)
        w = peak / peak.sum() + tail / tail.sum() * 0.08
        w[centers > 0.99] = 0.0
        rows.append(np.round(w / w.sum() * 100000))
    return EfficiencyHistogram(default_cpu_edges(), np.array(rows))


def generate(
    n_jobs: int = 10000,
    n_files: int = 2000,
    seed: int = 2015,
    *,
    remote_fraction: float = 0.0,
    link_quality: float = 0.995,
    read_rate: tuple[float, float] = (8e6, 20e6),
    tier1_bandwidth: float = 1e9,
    tier2_bandwidth: float = 1e9,
    max_cpu: float = 20000,
) -> dict[str, str]:
    """Build the four fixture texts plus the histogram."""
    rng = np.random.default_rng(seed)
    tier2 = [s for s in SITE_ORDER if s != TIER1]
    names = sorted(SITE_ORDER)
    weights = np.array([CORES[s] for s in names], dtype=float)
    weights /= weights.sum()

    sizes = np.clip(rng.lognormal(math.log(1.5e9), 0.5, n_files), 2e8, 6e9).astype(np.int64)
    homes = rng.choice(names, size=n_files, p=weights)
    lfns = [f"/store/data/Run2015/file{i:05d}.root" for i in range(n_files)]
    # a few files are not in the catalog at all and only known from the trace
    # (drawn from FNAL-homed files so that preplaced reads stay on site)
    fnal_homed = np.flatnonzero(homes == TIER1)
    absent = set(rng.choice(fnal_homed, size=min(len(fnal_homed), max(1, n_files // 100)), replace=False).tolist())
    by_home: dict[str, list[int]] = {s: [] for s in names}
    for i, h in enumerate(homes):
        by_home[h].append(i)

    catalog = FileCatalog()
    for i in range(n_files):
        if i in absent:
            continue
        locs = {str(homes[i])}
        if rng.random() < 0.1:
            locs.add(str(rng.choice(names)))
        catalog.add_record(FileRecord(lfns[i], int(sizes[i]), locs))

    jobs = []
    hints_rows = []
    for jid in range(n_jobs):
        site = str(rng.choice(names, p=weights))
        if rng.random() < 0.03:
            inputs: list[int] = []
        else:
            k = int(rng.choice([1, 2, 3], p=[0.5, 0.35, 0.15]))
            pool = by_home[site] if by_home[site] else list(range(n_files))
            inputs = []
            for _ in range(k):
                if rng.random() < remote_fraction:
                    inputs.append(int(rng.integers(n_files)))
                else:
                    inputs.append(int(pool[rng.integers(len(pool))]))
            inputs = list(dict.fromkeys(inputs))
        total = float(sum(sizes[i] for i in inputs))
        if inputs:
            cpu = total / rng.uniform(*read_rate)
        else:
            cpu = float(rng.lognormal(math.log(600), 0.8))
        cpu = float(np.clip(round(cpu), 60, max_cpu))
        wall = round(cpu / rng.uniform(0.6, 0.95))
        jobs.append(Job(jid, site, cpu, tuple(lfns[i] for i in inputs), float(wall)))
        hints_rows.append(";".join(str(sizes[i]) if i in absent else "" for i in inputs))

    # disk sized for the preplaced layout, duplicated data included, plus headroom
    need = {s: 0 for s in names}
    for rec in catalog.records.values():
        for s in rec.locations:
            need[s] += rec.size
    rotation = {s: sorted(tier2)[(sorted(tier2).index(s) + 1) % len(tier2)] for s in tier2}
    for pred, succ in rotation.items():
        need[succ] += need[pred]
    need[TIER1] = int(sizes.sum())
    sites = [
        Site(s, CORES[s], float(math.ceil(need[s] * 1.6 / 1e12 + 1) * 1e12), 100e9 / 8)
        for s in SITE_ORDER
    ]

    def bandwidth(src, dst):
        return tier1_bandwidth if TIER1 in (src, dst) else tier2_bandwidth

    links = us_links(bandwidth, lambda src, dst: link_quality)

    trace = dump_trace(jobs)
    lines = trace.splitlines()
    lines[0] += ",lfn_sizes"
    for i, extra in enumerate(hints_rows, 1):
        lines[i] += "," + extra
    return {
        "sites.csv": dump_sites(sites),
        "links.csv": dump_links(links),
        "catalog.csv": dump_catalog(catalog),
        "trace.csv": "\n".join(lines) + "\n",
        "histogram.csv": dump_histogram(default_histogram()),
    }


def write(directory, **kwargs) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in generate(**kwargs).items():
        (out / name).write_text(text, encoding="utf-8")
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m gridsim.synth", description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--jobs", type=int, default=10000)
    ap.add_argument("--files", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=2015)
    ap.add_argument("--remote-fraction", type=float, default=0.0)
    args = ap.parse_args(argv)
    write(args.out, n_jobs=args.jobs, n_files=args.files, seed=args.seed, remote_fraction=args.remote_fraction)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
