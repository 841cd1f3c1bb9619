"""Domain types shared by every analysis stage.

A station's ``O`` is its abstentions plus null ballots.  Abstentions are never
stored: they are ``registered - valid - null_votes``, so ``O`` reduces to
``registered - valid``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np


class ForensicsError(Exception):
    """Base class for data errors raised by the analysis stages."""


class ZeroValidVotes(ForensicsError):
    pass


class InvalidStation(ForensicsError):
    pass


@dataclass(frozen=True, slots=True)
class StationRecord:
    station_id: str
    center_id: str
    registered: int
    valid: int
    favorable: int
    null_votes: int
    manual: bool = False

    def __post_init__(self):
        problem = station_problem(
            self.registered, self.valid, self.favorable, self.null_votes
        )
        if problem:
            raise InvalidStation(f"station {self.station_id}: {problem}")

    @property
    def abstentions(self) -> int:
        return self.registered - self.valid - self.null_votes

    @property
    def ballots(self) -> int:
        return self.valid + self.null_votes


def station_problem(registered: int, valid: int, favorable: int, null_votes: int) -> str | None:
    """Return a description of the first violated count invariant, or None."""
    for name, value in (
        ("registered", registered),
        ("valid", valid),
        ("favorable", favorable),
        ("null_votes", null_votes),
    ):
        if value < 0:
            return f"{name} is negative ({value})"
    if favorable > valid:
        return f"favorable ({favorable}) exceeds valid ({valid})"
    if valid + null_votes > registered:
        return f"valid + null_votes ({valid + null_votes}) exceeds registered ({registered})"
    return None


def derived_O(station: StationRecord) -> int:
    """Abstentions plus null votes at ``station``."""
    return station.registered - station.valid


@dataclass(frozen=True)
class Center:
    center_id: str
    stations: tuple[StationRecord, ...]

    def __post_init__(self):
        for s in self.stations:
            if s.center_id != self.center_id:
                raise InvalidStation(
                    f"station {s.station_id} belongs to {s.center_id}, not {self.center_id}"
                )

    @property
    def registered_total(self) -> int:
        return sum(s.registered for s in self.stations)

    def __len__(self) -> int:
        return len(self.stations)


@dataclass(frozen=True)
class CleaningReport:
    excluded_zero_vote_centers: tuple[str, ...] = ()
    excluded_manual_centers: tuple[str, ...] = ()
    excluded_single_station_centers: tuple[str, ...] = ()
    excluded_station_count: int = 0
    retained_station_count: int = 0
    retained_center_count: int = 0
    exclude_manual: bool = True

    @property
    def K(self) -> int:
        return self.retained_station_count

    def to_dict(self) -> dict:
        return {
            "excluded_zero_vote_centers": list(self.excluded_zero_vote_centers),
            "excluded_manual_centers": list(self.excluded_manual_centers),
            "excluded_single_station_centers": list(self.excluded_single_station_centers),
            "excluded_station_count": self.excluded_station_count,
            "retained_station_count": self.retained_station_count,
            "retained_center_count": self.retained_center_count,
            "exclude_manual": self.exclude_manual,
        }


class StationArrays(NamedTuple):
    """Column view of a dataset, stations in center order."""

    station_id: np.ndarray  # str
    center_index: np.ndarray  # int64, index into ElectionDataset.centers
    registered: np.ndarray
    valid: np.ndarray
    favorable: np.ndarray
    null_votes: np.ndarray

    @property
    def O(self) -> np.ndarray:
        return self.registered - self.valid


@dataclass(frozen=True)
class ElectionDataset:
    election_id: str
    centers: tuple[Center, ...]
    cleaning: CleaningReport = field(default_factory=CleaningReport)

    @cached_property
    def arrays(self) -> StationArrays:
        rows = [(ci, s) for ci, c in enumerate(self.centers) for s in c.stations]
        n = len(rows)

        def col(attr):
            return np.fromiter((getattr(s, attr) for _, s in rows), dtype=np.int64, count=n)

        ids = np.array([s.station_id for _, s in rows], dtype=str) if n else np.array([], dtype=str)
        arrays = StationArrays(
            station_id=ids,
            center_index=np.fromiter((ci for ci, _ in rows), dtype=np.int64, count=n),
            registered=col("registered"),
            valid=col("valid"),
            favorable=col("favorable"),
            null_votes=col("null_votes"),
        )
        for a in arrays:
            a.setflags(write=False)
        return arrays

    @property
    def stations(self) -> list[StationRecord]:
        return [s for c in self.centers for s in c.stations]

    @property
    def K(self) -> int:
        return sum(len(c) for c in self.centers)

    def subset(self, station_ids: Sequence[str], election_id: str | None = None) -> "ElectionDataset":
        """Dataset restricted to ``station_ids``, keeping center grouping."""
        keep = set(station_ids)
        centers = []
        for c in self.centers:
            members = tuple(s for s in c.stations if s.station_id in keep)
            if members:
                centers.append(Center(c.center_id, members))
        return ElectionDataset(election_id or self.election_id, tuple(centers), self.cleaning)


def population_ratio(ds: ElectionDataset) -> float:
    """Vote-weighted favorable share ``sum(W) / sum(T)`` over all stations."""
    a = ds.arrays
    total_valid = int(a.valid.sum())
    if total_valid == 0:
        raise ZeroValidVotes(f"{ds.election_id}: no valid votes")
    return int(a.favorable.sum()) / total_valid


def group_centers(records: Sequence[StationRecord]) -> list[Center]:
    """Group records by center, centers in order of first appearance."""
    by_center: dict[str, list[StationRecord]] = {}
    for r in records:
        by_center.setdefault(r.center_id, []).append(r)
    return [Center(cid, tuple(members)) for cid, members in by_center.items()]
