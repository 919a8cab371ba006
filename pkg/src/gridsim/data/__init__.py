"""Bundled fixtures: the default efficiency histogram and a synthetic nine-site run."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path

from ..params import EfficiencyHistogram, load_histogram


def data_dir() -> Path:
    return Path(str(resources.files(__name__)))


def bundled_dir() -> Path:
    return data_dir() / "bundled"


@lru_cache(maxsize=None)
def default_histogram() -> EfficiencyHistogram:
    return load_histogram((data_dir() / "default_histogram.csv").read_text(encoding="utf-8"))


def bundled_fixture():
    from ..ingest import FixtureSet

    return FixtureSet.from_dir(bundled_dir())
