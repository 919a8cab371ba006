"""Command-line driver.

    gridsim --sites S --links L --catalog C --trace T --out DIR [--scenario all --sweep]
    gridsim --bundled --scenario all --sweep --out runs/

Exit codes: 0 success, 1 fixture validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .engine import DEFAULT_SLICE, SimulationError, run
from .ingest import FixtureError, FixtureSet, RunConfig, build_state, read_fixtures
from .metrics import SUMMARY_HEADER, summary_row, write_outputs
from .params import ALLOWED_FACTORS, ParamError, PenaltyTable, SpeedTable, SweepConfig, load_histogram, parse_overrides
from .scenarios import SCENARIOS

FACTOR_NAMES = {0.5: "Half", 1.0: "Normal", 2.0: "Double"}


@dataclass(frozen=True)
class Cell:
    scenario: str
    cpu_hit_factor: float
    speed_factor: float

    @property
    def dirname(self) -> str:
        return f"{self.scenario}_cpu{self.cpu_hit_factor:g}_speed{self.speed_factor:g}"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridsim", description="Trace-driven grid data-placement simulator.")
    src = ap.add_argument_group("fixtures")
    src.add_argument("--sites", type=Path)
    src.add_argument("--links", type=Path)
    src.add_argument("--catalog", type=Path)
    src.add_argument("--trace", type=Path)
    src.add_argument("--bundled", action="store_true", help="use the bundled nine-site synthetic fixture")
    src.add_argument("--histogram", type=Path, help="efficiency histogram CSV (default: bundled)")
    src.add_argument("--params", type=Path, help="penalty/speed table overrides, one key=value per line")

    ap.add_argument("--scenario", choices=[*SCENARIOS, "all"], default="all")
    ap.add_argument("--cpu-hit-factor", type=float, default=1.0)
    ap.add_argument("--speed-factor", type=float, default=1.0)
    ap.add_argument("--sweep", action="store_true", help="run the 3x3 grid of half/normal/double factors")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--slice-seconds", type=float, default=DEFAULT_SLICE)
    ap.add_argument("--tier1", default="FNAL")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--duplicate-trace", choices=["on", "off"], default="on")
    return ap


def _fixture_set(args, ap) -> FixtureSet:
    if args.bundled:
        from .data import bundled_fixture

        return bundled_fixture()
    missing = [f"--{n}" for n in ("sites", "links", "catalog", "trace") if getattr(args, n) is None]
    if missing:
        ap.error(f"missing {', '.join(missing)} (or pass --bundled)")
    return FixtureSet(args.sites, args.links, args.catalog, args.trace)


def _cells(args) -> list[Cell]:
    scenarios = list(SCENARIOS) if args.scenario == "all" else [args.scenario]
    if args.sweep:
        grid = [(c, s) for c in ALLOWED_FACTORS for s in ALLOWED_FACTORS]
    else:
        grid = [(args.cpu_hit_factor, args.speed_factor)]
    return [Cell(sc, c, s) for c, s in grid for sc in scenarios]


def _run_cell(fx, base: RunConfig, cell: Cell, out: Path) -> list[str]:
    cfg = replace(
        base,
        scenario=cell.scenario,
        sweep=SweepConfig(cell.cpu_hit_factor, cell.speed_factor, base.sweep.rng_seed),
    )
    log = run(build_state(fx, cfg))
    report = write_outputs(log, out)
    return summary_row(log, report)


def _worker(payload):
    fx, base, cell, out = payload
    return _run_cell(fx, base, cell, out)


def _threads() -> int:
    raw = os.environ.get("GRIDSIM_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def format_grid(rows: list[list[str]]) -> str:
    """Totals in billions of seconds: speed factors down, cpu-hit groups across."""
    totals = {}
    for r in rows:
        totals[(r[0], float(r[1]), float(r[2]))] = float(r[4]) / 1e9
    cpus = sorted({k[1] for k in totals})
    speeds = sorted({k[2] for k in totals})
    scen = [s for s in SCENARIOS if any(k[0] == s for k in totals)]
    label = lambda f, what: f"{FACTOR_NAMES.get(f, f'{f:g}x')} {what}"
    width = 10
    head1 = " " * 20 + "".join(label(c, "CPU Hit").center(width * len(scen)) for c in cpus)
    head2 = " " * 20 + "".join(s[:width - 1].rjust(width) for _ in cpus for s in scen)
    lines = ["total wall clock, 10^9 s", head1.rstrip(), head2]
    for sp in speeds:
        cells = []
        for c in cpus:
            for s in scen:
                v = totals.get((s, c, sp))
                cells.append(("-" if v is None else f"{v:.4g}").rjust(width))
        lines.append(label(sp, "Max Speed").ljust(20) + "".join(cells))
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        fixtures = _fixture_set(args, ap)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.slice_seconds <= 0:
        print("gridsim: error: --slice-seconds must be positive", file=sys.stderr)
        return 2

    problems = []
    penalty, speed = PenaltyTable(), SpeedTable()
    histogram = None
    try:
        if args.params is not None:
            penalty, speed = parse_overrides(args.params.read_text(encoding="utf-8"))
        if args.histogram is not None:
            histogram = load_histogram(args.histogram.read_text(encoding="utf-8"))
        SweepConfig(args.cpu_hit_factor, args.speed_factor, args.seed)
    except (ParamError, ValueError) as exc:
        problems.append(str(exc))
    except OSError as exc:
        problems.append(f"{exc.filename}: {exc.strerror}")

    fx = None
    try:
        fx = read_fixtures(fixtures)
    except FixtureError as exc:
        problems.extend(exc.problems)
    base = RunConfig(
        tier1=args.tier1,
        duplicate=args.duplicate_trace == "on",
        sweep=SweepConfig(1.0, 1.0, args.seed),
        slice_length=args.slice_seconds,
        histogram=histogram,
        penalty_table=penalty,
        speed_table=speed,
    )
    cells = _cells(args)
    if fx is not None:
        # validate every scenario up front so nothing is written on bad input
        for sc in dict.fromkeys(c.scenario for c in cells):
            try:
                build_state(fx, replace(base, scenario=sc))
            except FixtureError as exc:
                problems.extend(p for p in exc.problems if p not in problems)
    if problems:
        for p in problems:
            print(f"gridsim: {p}", file=sys.stderr)
        return 1

    out: Path = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"gridsim: cannot create {out}: {exc.strerror}", file=sys.stderr)
        return 1
    multi = len(cells) > 1
    targets = [(fx, base, c, out / c.dirname if multi else out) for c in cells]
    try:
        workers = min(_threads(), len(targets))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_worker, targets))
        else:
            rows = [_worker(t) for t in targets]
    except (SimulationError, OSError) as exc:
        print(f"gridsim: {exc}", file=sys.stderr)
        return 1

    if multi:
        name = "sweep_summary.csv" if args.sweep else "summary.csv"
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            w.writerows(rows)
    print(format_grid(rows))
    for r in rows:
        print(f"{r[0]:>10} cpu={r[1]} speed={r[2]} mean_eff={r[5]} failed={r[6]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
