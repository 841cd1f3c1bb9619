from functools import lru_cache

import pytest

from elforensics.ingest import CleaningOptions, clean
from elforensics.model import StationRecord
from elforensics.synth import GeneratorConfig, generate


def make_dataset(centers, election_id="test-2010", exclude_manual=False):
    """``centers`` is a list of station lists; each station is (registered, valid, favorable, null)."""
    records = []
    for c, stations in enumerate(centers):
        for j, (reg, valid, fav, null) in enumerate(stations):
            records.append(StationRecord(f"S{c:04d}-{j:02d}", f"C{c:04d}", reg, valid, fav, null))
    return clean(records, CleaningOptions(exclude_manual=exclude_manual), election_id)


@lru_cache(maxsize=None)
def synthetic(seed=0, n_centers=500, **injection):
    cfg = {"seed": seed, "n_centers": n_centers}
    if injection:
        cfg["injection"] = injection
    return generate(GeneratorConfig.from_dict(cfg))


@pytest.fixture(scope="session")
def clean_small():
    return synthetic(seed=11, n_centers=500)


@pytest.fixture(scope="session")
def type_c_small():
    return synthetic(seed=12, n_centers=500, kind="type_c", target_fraction=0.1, shift_sd=6.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
