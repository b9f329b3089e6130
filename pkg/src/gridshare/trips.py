"""Trip record parsing from delimited text files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime

from .errors import IngestError

REQUIRED_COLUMNS = ("started_at", "ended_at", "start_lat", "start_lng", "end_lat", "end_lng")


@dataclass
class TripRecord:
    start_time: datetime
    end_time: datetime
    start_lat: float
    start_lon: float
    end_lat: float
    end_lon: float


@dataclass
class ParseStats:
    rows_read: int = 0
    rows_malformed: int = 0


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


def parse_trip_row(row: dict) -> TripRecord:
    start = _parse_timestamp(row["started_at"])
    end = _parse_timestamp(row["ended_at"])
    if end < start:
        raise ValueError("trip ends before it starts")
    coords = [float(row[c]) for c in ("start_lat", "start_lng", "end_lat", "end_lng")]
    if not all(math.isfinite(v) for v in coords):
        raise ValueError("non-finite coordinate")
    return TripRecord(start, end, coords[0], coords[1], coords[2], coords[3])


def read_trips(path) -> tuple[list[TripRecord], ParseStats]:
    """Read trips from a delimited file; malformed rows are counted, not fatal.

    The header must contain the six required columns; extra columns are
    ignored. The caller decides whether the malformed fraction is
    acceptable.
    """
    stats = ParseStats()
    trips: list[TripRecord] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: empty file (header row required)")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise IngestError(f"{path}: missing required columns {missing}")
        for row in reader:
            stats.rows_read += 1
            try:
                trips.append(parse_trip_row(row))
            except (ValueError, KeyError, TypeError):
                stats.rows_malformed += 1
    return trips, stats
