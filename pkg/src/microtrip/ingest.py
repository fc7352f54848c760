"""Raw trace parsing, 1 Hz resampling, micro-trip segmentation and dataset I/O."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import MicroTrip, SpeedTrajectory, validate_micro_trip

FORMAT_MAGIC = "#MICROTRIP-DATASET"
FORMAT_VERSION = 1
TRACE_HEADER = ["trip_id", "t", "speed_mps"]

DEFAULT_STOP_SPEED = 0.5
DEFAULT_MIN_DURATION = 34


class IngestError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DatasetFormatError(ValueError):
    pass


class ChecksumError(DatasetFormatError):
    pass


class VersionError(DatasetFormatError):
    pass


@dataclass
class RawTrace:
    trip_id: str
    timestamps: np.ndarray
    speeds: np.ndarray

    def __len__(self):
        return self.timestamps.size


@dataclass
class Dataset:
    micro_trips: list
    provenance: dict = field(default_factory=dict)
    created_at: str | None = None

    def __post_init__(self):
        for i, trip in enumerate(self.micro_trips):
            if not isinstance(trip, MicroTrip):
                trip = MicroTrip.from_speeds(trip)
                self.micro_trips[i] = trip
            verdict = validate_micro_trip(trip, tol=0.0)
            if not verdict:
                raise ValueError(f"trip {i} is not a valid micro-trip: {verdict.violations[:3]}")

    def __len__(self):
        return len(self.micro_trips)

    def __iter__(self):
        return iter(self.micro_trips)

    def __getitem__(self, i):
        return self.micro_trips[i]

    def subset(self, indices):
        return Dataset([self.micro_trips[i] for i in indices], dict(self.provenance), self.created_at)

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.provenance == other.provenance
            and self.created_at == other.created_at
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.micro_trips, other.micro_trips))
        )


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if isinstance(source, (str, Path)) and not (isinstance(source, str) and "\n" in source):
        return Path(source).read_text(encoding="utf-8")
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8") if isinstance(data, bytes) else data
    return str(source)


def parse_trace_csv(source) -> list[RawTrace]:
    """Parse ``trip_id,t,speed_mps`` rows into per-trip traces.

    ``source`` may be bytes, a binary/text stream or a path. Rows are grouped
    by ``trip_id`` (first-appearance order) and sorted by ``t``; repeated
    timestamps within a trip are rejected with the offending line number.
    Negative speeds are clipped to zero.
    """
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("missing header", line=1) from None
    if [h.strip() for h in header] != TRACE_HEADER:
        raise IngestError(f"expected header {','.join(TRACE_HEADER)}, got {','.join(header)}", line=1)
    rows: dict[str, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise IngestError(f"expected 3 fields, got {len(row)}", line=lineno)
        trip_id = row[0].strip()
        try:
            t, v = float(row[1]), float(row[2])
        except ValueError:
            raise IngestError(f"non-numeric field in {row!r}", line=lineno) from None
        if not (math.isfinite(t) and math.isfinite(v)):
            raise IngestError("non-finite value", line=lineno)
        rows.setdefault(trip_id, []).append((t, v, lineno))
    traces = []
    for trip_id, items in rows.items():
        items.sort(key=lambda r: r[0])
        ts = np.array([r[0] for r in items])
        dup = np.flatnonzero(np.diff(ts) <= 0)
        if dup.size:
            bad = items[dup[0] + 1]
            raise IngestError(f"non-increasing timestamp {bad[0]} in trip {trip_id}", line=bad[2])
        vs = np.maximum(np.array([r[1] for r in items]), 0.0)
        traces.append(RawTrace(trip_id, ts, vs))
    return traces


def resample_1hz(raw: RawTrace) -> SpeedTrajectory:
    """Linear interpolation onto the integer-second grid inside the trace span."""
    if len(raw) < 2:
        raise IngestError(f"trip {raw.trip_id}: need at least 2 points")
    t0, t1 = raw.timestamps[0], raw.timestamps[-1]
    if t1 - t0 < 2:
        raise IngestError(f"trip {raw.trip_id}: span {t1 - t0:.3f} s is shorter than 2 s")
    grid = np.arange(math.ceil(t0), math.floor(t1) + 1, dtype=np.float64)
    v = np.interp(grid, raw.timestamps, raw.speeds)
    return SpeedTrajectory(np.maximum(v, 0.0))


def segment_micro_trips(traj, stop_speed=DEFAULT_STOP_SPEED, min_duration=DEFAULT_MIN_DURATION) -> list[MicroTrip]:
    """Split a trace at rest points into stop-to-stop micro-trips.

    A rest point is a sample with speed <= ``stop_speed``. Each maximal run of
    moving samples bounded by rest points on both sides yields one micro-trip
    spanning the bounding rest samples, which are set to exactly zero.
    Segments shorter than ``min_duration`` seconds are dropped, as are moving
    runs touching either end of the trace.
    """
    v = traj.samples if isinstance(traj, SpeedTrajectory) else np.asarray(traj, dtype=np.float64)
    rest = np.flatnonzero(v <= stop_speed)
    trips = []
    for a, b in zip(rest[:-1], rest[1:]):
        if b - a < 2:
            continue
        if b - a < min_duration:
            continue
        seg = v[a : b + 1].copy()
        seg[0] = seg[-1] = 0.0
        trips.append(MicroTrip.from_speeds(seg))
    return trips


SUMMARY_ROWS = [
    ("Duration (s)", "duration_s", 1.0),
    ("Duration (min)", "duration_s", 1 / 60),
    ("Distance (m)", "distance_m", 1.0),
    ("Distance (km)", "distance_m", 1e-3),
    ("Avg Speed (m/s)", "avg_speed_mps", 1.0),
    ("Avg Speed (km/h)", "avg_speed_mps", 3.6),
]


def dataset_summary(ds) -> dict:
    """Min/max/mean/median table of duration, distance and average speed."""
    trips = list(ds)
    if not trips:
        raise ValueError("cannot summarise an empty dataset")
    stats = [t.stats for t in trips]
    table = {}
    for label, attr, scale in SUMMARY_ROWS:
        x = np.array([getattr(s, attr) for s in stats]) * scale
        table[label] = {
            "min": float(x.min()),
            "max": float(x.max()),
            "mean": float(x.mean()),
            "median": float(np.median(x)),
        }
    return table


def summary_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["attribute", "min", "max", "mean", "median"])
    for label, row in table.items():
        w.writerow([label] + [f"{row[k]:.6g}" for k in ("min", "max", "mean", "median")])
    return buf.getvalue()


def _body(ds: Dataset) -> str:
    lines = ["trip_index,t,speed"]
    for i, trip in enumerate(ds.micro_trips):
        lines.extend(f"{i},{t},{float(v)!r}" for t, v in enumerate(trip.speeds))
    return "\n".join(lines) + "\n"


def dumps_dataset(ds: Dataset) -> str:
    body = _body(ds)
    header = {
        "version": FORMAT_VERSION,
        "created_at": ds.created_at,
        "provenance": ds.provenance,
        "n_trips": len(ds),
        "sha256": hashlib.sha256(body.encode()).hexdigest(),
    }
    return f"{FORMAT_MAGIC} {json.dumps(header, sort_keys=True)}\n{body}"


def loads_dataset(text: str) -> Dataset:
    first, _, body = text.partition("\n")
    if not first.startswith(FORMAT_MAGIC):
        raise DatasetFormatError("not a micro-trip dataset file")
    try:
        header = json.loads(first[len(FORMAT_MAGIC) :])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"corrupt header: {exc}") from None
    if header.get("version") != FORMAT_VERSION:
        raise VersionError(f"unsupported dataset version {header.get('version')!r}")
    if hashlib.sha256(body.encode()).hexdigest() != header.get("sha256"):
        raise ChecksumError("dataset body checksum mismatch (truncated or modified file)")
    rows = body.splitlines()
    if not rows or rows[0] != "trip_index,t,speed":
        raise DatasetFormatError("missing body header")
    speeds: dict[int, list] = {}
    for r in rows[1:]:
        i, t, v = r.split(",")
        speeds.setdefault(int(i), []).append(float(v))
    trips = [MicroTrip.from_speeds(speeds[i]) for i in range(header["n_trips"])]
    return Dataset(trips, header.get("provenance") or {}, header.get("created_at"))


def save_dataset(ds: Dataset, path) -> str:
    """Write ``ds`` to ``path``; returns the file's sha256 digest."""
    text = dumps_dataset(ds)
    Path(path).write_text(text, encoding="utf-8")
    return hashlib.sha256(text.encode()).hexdigest()


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))


def ingest_traces(source, stop_speed=DEFAULT_STOP_SPEED, min_duration=DEFAULT_MIN_DURATION) -> Dataset:
    """Parse, resample and segment a trace CSV into a dataset."""
    text = _read_text(source)
    digest = hashlib.sha256(text.encode()).hexdigest()
    trips = []
    for raw in parse_trace_csv(text):
        trips.extend(segment_micro_trips(resample_1hz(raw), stop_speed, min_duration))
    return Dataset(trips, {"source_sha256": [digest], "stop_speed": stop_speed, "min_duration": min_duration})
