"""Latency-driven penalty and speed tables, and the CPU-efficiency histogram."""

from __future__ import annotations

import bisect
import csv
import io
import itertools
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

MB = 1e6
PENALTY_CAP = 0.95
N_CPU_BINS = 10
N_EFF_BINS = 100
EFF_BIN_WIDTH = 1.0 / N_EFF_BINS

# (min latency ms, penalty fraction)
DEFAULT_PENALTY_ROWS = ((0.0, 0.0), (1.0, 0.05), (50.0, 0.20))
# (min latency ms, bytes/s)
DEFAULT_SPEED_ROWS = ((0.0, 10000 * MB), (1.0, 1000 * MB), (50.0, 100 * MB), (100.0, 50 * MB))

ALLOWED_FACTORS = (0.5, 1.0, 2.0)


class ParamError(ValueError):
    pass


def _check_thresholds(rows, what):
    if not rows:
        raise ParamError(f"{what}: empty table")
    if rows[0][0] != 0:
        raise ParamError(f"{what}: first threshold must be 0 ms")
    for (a, _), (b, _) in itertools.pairwise(rows):
        if not b > a:
            raise ParamError(f"{what}: thresholds must be strictly increasing")


def _lookup(rows: tuple[tuple[float, float], ...], latency: float) -> float:
    value = rows[0][1]
    for threshold, v in rows:
        if threshold > latency:
            break
        value = v
    return value


@dataclass(frozen=True)
class PenaltyTable:
    rows: tuple[tuple[float, float], ...] = DEFAULT_PENALTY_ROWS
    scale: float = 1.0

    def __post_init__(self):
        rows = tuple((float(a), float(b)) for a, b in self.rows)
        object.__setattr__(self, "rows", rows)
        _check_thresholds(rows, "penalty table")
        for _, p in rows:
            if not 0 <= p < 1:
                raise ParamError(f"penalty {p} outside [0, 1)")
        if not self.scale > 0:
            raise ParamError("penalty scale must be positive")

    def scaled(self, scale: float) -> "PenaltyTable":
        return replace(self, scale=scale)


@dataclass(frozen=True)
class SpeedTable:
    rows: tuple[tuple[float, float], ...] = DEFAULT_SPEED_ROWS
    scale: float = 1.0

    def __post_init__(self):
        rows = tuple((float(a), float(b)) for a, b in self.rows)
        object.__setattr__(self, "rows", rows)
        _check_thresholds(rows, "speed table")
        for _, v in rows:
            if not v > 0:
                raise ParamError("speeds must be positive")
        for (_, a), (_, b) in zip(rows, rows[1:]):
            if not b < a:
                raise ParamError("speeds must be strictly decreasing with latency")
        if not self.scale > 0:
            raise ParamError("speed scale must be positive")

    def scaled(self, scale: float) -> "SpeedTable":
        return replace(self, scale=scale)


def penalty_for(table: PenaltyTable, latency: float) -> float:
    if latency <= 0:
        return 0.0
    base = _lookup(table.rows, latency)
    return min(max(base * table.scale, 0.0), PENALTY_CAP)


def max_speed_for(table: SpeedTable, latency: float) -> float:
    return _lookup(table.rows, latency) * table.scale


@dataclass(frozen=True)
class SweepConfig:
    cpu_hit_factor: float = 1.0
    max_speed_factor: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.cpu_hit_factor > 0 and self.max_speed_factor > 0):
            raise ParamError("sweep factors must be positive")

    @property
    def is_standard(self) -> bool:
        return self.cpu_hit_factor in ALLOWED_FACTORS and self.max_speed_factor in ALLOWED_FACTORS


@dataclass(frozen=True)
class EfficiencyHistogram:
    """CPU-efficiency distribution binned by CPU time.

    Row i of `weights` covers CPU times in [cpu_bin_edges[i], cpu_bin_edges[i+1]);
    column j covers efficiencies in [j/100, (j+1)/100).
    """

    cpu_bin_edges: tuple[float, ...]
    weights: np.ndarray
    _cumulative: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = tuple(float(e) for e in self.cpu_bin_edges)
        object.__setattr__(self, "cpu_bin_edges", edges)
        w = np.asarray(self.weights, dtype=float)
        if len(edges) != N_CPU_BINS + 1:
            raise ParamError(f"expected {N_CPU_BINS + 1} CPU bin edges, got {len(edges)}")
        if edges[0] != 0 or not math.isinf(edges[-1]):
            raise ParamError("CPU bin edges must start at 0 and end at inf")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ParamError("CPU bin edges must be strictly ascending")
        if w.shape != (N_CPU_BINS, N_EFF_BINS):
            raise ParamError(f"expected {N_CPU_BINS}x{N_EFF_BINS} weights, got {w.shape[0]}x{w.shape[1] if w.ndim > 1 else 0}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ParamError("weights must be finite and non-negative")
        sums = w.sum(axis=1)
        for i, s in enumerate(sums):
            if s <= 0:
                raise ParamError(f"CPU bin {i} has no weight")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        cum = np.cumsum(w, axis=1) / sums[:, None]
        cum[:, -1] = 1.0
        cum.setflags(write=False)
        object.__setattr__(self, "_cumulative", cum)

    def cpu_bin(self, cpu_seconds: float) -> int:
        return min(bisect.bisect_right(self.cpu_bin_edges, cpu_seconds) - 1, N_CPU_BINS - 1)

    def row_probabilities(self, row: int) -> np.ndarray:
        return self.weights[row] / self.weights[row].sum()


def sample_efficiency(hist: EfficiencyHistogram, cpu_seconds: float, rng) -> float:
    """Draw one CPU efficiency for a job of the given CPU time.

    `rng` only needs a ``random()`` method (``random.Random`` or a numpy Generator).
    """
    cum = hist._cumulative[hist.cpu_bin(cpu_seconds)]
    col = int(np.searchsorted(cum, rng.random(), side="right"))
    col = min(col, N_EFF_BINS - 1)
    value = (col + rng.random()) * EFF_BIN_WIDTH
    return min(max(value, EFF_BIN_WIDTH), 1.0)


def load_histogram(text: str) -> EfficiencyHistogram:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParamError("empty histogram file")
    try:
        edges = [float(c) for c in rows[0]]
        weights = [[float(c) for c in r] for r in rows[1:]]
    except ValueError as exc:
        raise ParamError(f"non-numeric histogram entry: {exc}") from None
    if len(weights) != N_CPU_BINS or any(len(r) != N_EFF_BINS for r in weights):
        raise ParamError(
            f"histogram must have {N_CPU_BINS} rows of {N_EFF_BINS} counts "
            f"(got {len(weights)} rows)"
        )
    return EfficiencyHistogram(tuple(edges), np.array(weights))


def dump_histogram(hist: EfficiencyHistogram) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow([repr(e) for e in hist.cpu_bin_edges])
    for row in hist.weights:
        w.writerow([repr(float(v)) if v != int(v) else str(int(v)) for v in row])
    return out.getvalue()


def default_cpu_edges() -> tuple[float, ...]:
    inner = np.geomspace(60.0, 1e5, N_CPU_BINS - 1)
    return (0.0, *(float(x) for x in inner), math.inf)


_SPEED_UNITS = {"bps": 1.0, "kbps": 1e3, "mbps": 1e6, "gbps": 1e9}
_KEY_RE = re.compile(r"^(penalty|speed)\.(\d+(?:\.\d+)?)ms$")


def parse_overrides(
    text: str,
    penalty: PenaltyTable = PenaltyTable(),
    speed: SpeedTable = SpeedTable(),
) -> tuple[PenaltyTable, SpeedTable]:
    """Apply ``penalty.<N>ms=<fraction>`` / ``speed.<N>ms=<value><unit>`` lines.

    Speed units are Bps, KBps, MBps or GBps (decimal, case-insensitive); a bare
    number is bytes/s. Keys for new thresholds add rows.
    """
    pen = dict(penalty.rows)
    spd = dict(speed.rows)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (p.strip() for p in line.partition("="))
        m = _KEY_RE.match(key)
        if not sep or not m:
            raise ParamError(f"line {lineno}: cannot parse {raw!r}")
        threshold = float(m.group(2))
        try:
            if m.group(1) == "penalty":
                pen[threshold] = float(value)
            else:
                vm = re.fullmatch(r"([0-9.eE+-]+)\s*([A-Za-z]*)", value)
                if not vm:
                    raise ValueError(value)
                unit = vm.group(2).lower() or "bps"
                if unit not in _SPEED_UNITS:
                    raise ValueError(f"unknown unit {vm.group(2)!r}")
                spd[threshold] = float(vm.group(1)) * _SPEED_UNITS[unit]
        except ValueError as exc:
            raise ParamError(f"line {lineno}: bad value ({exc})") from None
    return (
        PenaltyTable(tuple(sorted(pen.items())), penalty.scale),
        SpeedTable(tuple(sorted(spd.items())), speed.scale),
    )
