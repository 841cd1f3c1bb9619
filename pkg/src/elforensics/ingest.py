"""Tally-file parsing and the center-level cleaning sequence."""

from __future__ import annotations

import csv
import io
import logging
import os
import re
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Mapping, Sequence

from .model import (
    CleaningReport,
    ElectionDataset,
    ForensicsError,
    StationRecord,
    group_centers,
    station_problem,
)

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = (
    "election_id",
    "center_id",
    "station_id",
    "registered",
    "valid",
    "favorable",
    "null_votes",
)
OPTIONAL_COLUMNS = ("manual",)
COUNT_COLUMNS = ("registered", "valid", "favorable", "null_votes")

# first year with manual stations excluded by default
MANUAL_EXCLUSION_FROM = 2004


class MalformedRow(ForensicsError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class MissingColumn(ForensicsError):
    def __init__(self, name: str):
        super().__init__(f"missing required column {name!r}")
        self.name = name


class DuplicateStation(ForensicsError):
    def __init__(self, station_id: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate station id {station_id!r}{where}")
        self.station_id = station_id


class MixedElections(ForensicsError):
    pass


class EmptyAfterCleaning(ForensicsError):
    pass


def _open_text(source) -> io.TextIOBase:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8", newline="")
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _sniff_delimiter(sample: str) -> str:
    try:
        return csv.Sniffer().sniff(sample, delimiters=",;\t|").delimiter
    except csv.Error:
        return ","


def read_tallies(
    source: BinaryIO | bytes | str | os.PathLike,
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> tuple[str, list[StationRecord]]:
    """Parse a delimited tally file into ``(election_id, records)``.

    ``schema`` maps canonical column names to the names used in the file.
    ``delimiter="auto"`` sniffs it from the first few KB.
    """
    schema = dict(schema or {})
    fh = _open_text(source)
    try:
        text = fh.read()
    finally:
        if isinstance(source, (str, os.PathLike)):
            fh.close()
        elif isinstance(fh, io.TextIOWrapper):
            fh.detach()
    if text.startswith("﻿"):
        text = text[1:]
    if delimiter == "auto":
        delimiter = _sniff_delimiter(text[:8192])

    reader = csv.reader(io.StringIO(text, newline=""), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MissingColumn(schema.get("election_id", "election_id")) from None

    index = {}
    for name in REQUIRED_COLUMNS + OPTIONAL_COLUMNS:
        file_name = schema.get(name, name)
        if file_name in header:
            index[name] = header.index(file_name)
        elif name in REQUIRED_COLUMNS:
            raise MissingColumn(file_name)
    if "manual" not in index:
        log.warning("no manual column; treating every station as automated")

    records: list[StationRecord] = []
    seen: set[str] = set()
    election_ids: set[str] = set()
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
        counts = {}
        for name in COUNT_COLUMNS:
            raw = row[index[name]].strip()
            try:
                counts[name] = int(raw)
            except ValueError:
                raise MalformedRow(line, f"{name} is not an integer: {raw!r}") from None
        problem = station_problem(**counts)
        if problem:
            raise MalformedRow(line, problem)
        manual = False
        if "manual" in index:
            raw = row[index["manual"]].strip()
            if raw not in ("0", "1", ""):
                raise MalformedRow(line, f"manual must be 0 or 1, got {raw!r}")
            manual = raw == "1"
        station_id = row[index["station_id"]].strip()
        center_id = row[index["center_id"]].strip()
        if not station_id or not center_id:
            raise MalformedRow(line, "empty station_id or center_id")
        if station_id in seen:
            raise DuplicateStation(station_id, line)
        seen.add(station_id)
        election_ids.add(row[index["election_id"]].strip())
        records.append(StationRecord(station_id, center_id, manual=manual, **counts))

    if len(election_ids) > 1:
        raise MixedElections(f"file mixes elections: {sorted(election_ids)}")
    return (election_ids.pop() if election_ids else ""), records


def parse_tallies(source, schema: Mapping[str, str] | None = None, delimiter: str = ",") -> list[StationRecord]:
    return read_tallies(source, schema, delimiter)[1]


def write_tallies(
    out,
    election_id: str,
    records: Iterable[StationRecord],
    delimiter: str = ",",
    manual_column: bool = True,
) -> None:
    """Serialize records in the canonical column layout.

    ``out`` is a path or a binary stream.
    """
    columns = list(REQUIRED_COLUMNS) + (["manual"] if manual_column else [])
    buf = io.StringIO(newline="")
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        row = [election_id, r.center_id, r.station_id, r.registered, r.valid, r.favorable, r.null_votes]
        if manual_column:
            row.append(int(r.manual))
        w.writerow(row)
    data = buf.getvalue().encode("utf-8")
    if isinstance(out, (str, os.PathLike)):
        with open(out, "wb") as fh:
            fh.write(data)
    else:
        out.write(data)


@dataclass(frozen=True)
class CleaningOptions:
    exclude_manual: bool = True
    min_stations: int = 2

    @classmethod
    def for_election(cls, election_id: str, **overrides) -> "CleaningOptions":
        """Manual exclusion on from 2004 onward (or when no year is found)."""
        m = re.search(r"(?<!\d)(19|20)\d\d(?!\d)", election_id or "")
        exclude = True if m is None else int(m.group(0)) >= MANUAL_EXCLUSION_FROM
        return cls(**{"exclude_manual": exclude, **overrides})


def clean(
    records: Sequence[StationRecord],
    opts: CleaningOptions | None = None,
    election_id: str = "",
) -> ElectionDataset:
    """Apply the three exclusion rules in order and record every exclusion.

    1. centers with any station that cast no ballots (valid + null = 0);
    2. when ``opts.exclude_manual``, centers with any manually counted station;
    3. centers left with fewer than ``opts.min_stations`` stations.
    """
    opts = opts or CleaningOptions.for_election(election_id)
    ids = set()
    for r in records:
        if r.station_id in ids:
            raise DuplicateStation(r.station_id)
        ids.add(r.station_id)

    zero, manual, single, kept = [], [], [], []
    excluded_stations = 0
    for center in group_centers(records):
        if any(s.ballots == 0 for s in center.stations):
            zero.append(center.center_id)
        elif opts.exclude_manual and any(s.manual for s in center.stations):
            manual.append(center.center_id)
        elif len(center) < opts.min_stations:
            single.append(center.center_id)
        else:
            kept.append(center)
            continue
        excluded_stations += len(center)

    if not kept:
        raise EmptyAfterCleaning(f"{election_id or 'dataset'}: no center survives cleaning")
    report = CleaningReport(
        excluded_zero_vote_centers=tuple(zero),
        excluded_manual_centers=tuple(manual),
        excluded_single_station_centers=tuple(single),
        excluded_station_count=excluded_stations,
        retained_station_count=sum(len(c) for c in kept),
        retained_center_count=len(kept),
        exclude_manual=opts.exclude_manual,
    )
    return ElectionDataset(election_id, tuple(kept), report)


def load_dataset(
    path,
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
    exclude_manual: bool | None = None,
) -> ElectionDataset:
    """Parse and clean a tally file in one step."""
    election_id, records = read_tallies(path, schema, delimiter)
    overrides = {} if exclude_manual is None else {"exclude_manual": exclude_manual}
    return clean(records, CleaningOptions.for_election(election_id, **overrides), election_id)
