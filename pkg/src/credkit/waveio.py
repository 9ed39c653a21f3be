"""Waveform and catalog containers with their text formats and windowing.

Waveform CSV layout::

    #station=<id>,start=<float>,rate=<float>
    e,n,z
    e,n,z
    ...

Catalog CSV layout::

    event_id,p_time,s_time,magnitude

``magnitude`` may be left empty.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateId,
    MalformedHeader,
    MalformedRow,
    MissingFile,
    NonPositiveSamplingRate,
    SBeforeP,
    UnequalChannelLengths,
    WindowLongerThanTrace,
)

COMPONENTS = ("e", "n", "z")
CATALOG_HEADER = ["event_id", "p_time", "s_time", "magnitude"]


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Waveform3C:
    """Three-component ground-motion record.

    Component arrays are copied to read-only float64 arrays on
    construction, so an instance can be shared freely.
    """

    station_id: str
    start_time: float
    sampling_rate: float
    samples_e: np.ndarray
    samples_n: np.ndarray
    samples_z: np.ndarray

    def __post_init__(self):
        if not self.sampling_rate > 0 or not math.isfinite(self.sampling_rate):
            raise NonPositiveSamplingRate(
                f"sampling rate must be positive, got {self.sampling_rate}"
            )
        arrays = [_frozen_array(getattr(self, f"samples_{c}")) for c in COMPONENTS]
        lengths = {a.shape for a in arrays}
        if len(lengths) != 1 or arrays[0].ndim != 1:
            raise UnequalChannelLengths(
                "component lengths differ: "
                + ", ".join(f"{c}={a.shape}" for c, a in zip(COMPONENTS, arrays))
            )
        if arrays[0].size < 1:
            raise UnequalChannelLengths("waveform must contain at least one sample")
        for c, a in zip(COMPONENTS, arrays):
            object.__setattr__(self, f"samples_{c}", a)
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "sampling_rate", float(self.sampling_rate))

    @classmethod
    def from_array(cls, data, sampling_rate: float, station_id: str = "SYN",
                   start_time: float = 0.0) -> "Waveform3C":
        """Build from a ``(3, npts)`` array ordered E, N, Z."""
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != 3:
            raise UnequalChannelLengths(f"expected a (3, npts) array, got {data.shape}")
        return cls(station_id, start_time, sampling_rate, data[0], data[1], data[2])

    @property
    def npts(self) -> int:
        return int(self.samples_e.size)

    @property
    def duration(self) -> float:
        return self.npts / self.sampling_rate

    @property
    def data(self) -> np.ndarray:
        """Stacked ``(3, npts)`` copy of the components."""
        return np.stack([self.samples_e, self.samples_n, self.samples_z])

    def replace_data(self, data, sampling_rate: float | None = None) -> "Waveform3C":
        """Return a new waveform with the same header and new samples."""
        rate = self.sampling_rate if sampling_rate is None else sampling_rate
        return Waveform3C.from_array(data, rate, self.station_id, self.start_time)


@dataclass(frozen=True)
class CatalogEvent:
    event_id: str
    p_time: float
    s_time: float
    magnitude: float | None = None

    def __post_init__(self):
        if not self.s_time > self.p_time:
            raise SBeforeP(
                f"event {self.event_id}: s_time {self.s_time} must be after "
                f"p_time {self.p_time}"
            )


@dataclass(frozen=True)
class Catalog:
    """Events ordered by P arrival, with unique ids."""

    events: tuple[CatalogEvent, ...] = field(default_factory=tuple)

    def __post_init__(self):
        events = tuple(sorted(self.events, key=lambda ev: ev.p_time))
        seen = set()
        for ev in events:
            if ev.event_id in seen:
                raise DuplicateId(f"duplicate event_id {ev.event_id!r}")
            seen.add(ev.event_id)
        object.__setattr__(self, "events", events)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


@dataclass(frozen=True)
class WindowSlice:
    parent: Waveform3C
    start_index: int
    length: int

    def __post_init__(self):
        if self.start_index < 0 or self.start_index + self.length > self.parent.npts:
            raise WindowLongerThanTrace(
                f"window [{self.start_index}, {self.start_index + self.length}) "
                f"exceeds trace of {self.parent.npts} samples"
            )

    @property
    def start_offset_s(self) -> float:
        """Window start in seconds relative to the parent start."""
        return self.start_index / self.parent.sampling_rate

    def waveform(self) -> Waveform3C:
        sl = slice(self.start_index, self.start_index + self.length)
        p = self.parent
        return Waveform3C(
            p.station_id,
            p.start_time + self.start_offset_s,
            p.sampling_rate,
            p.samples_e[sl],
            p.samples_n[sl],
            p.samples_z[sl],
        )


def _check_exists(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    return path


def _parse_header(line: str) -> tuple[str, float, float]:
    if not line.startswith("#"):
        raise MalformedHeader(f"waveform header must start with '#': {line!r}")
    fields = {}
    for part in line[1:].strip().split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise MalformedHeader(f"header field without '=': {part!r}")
        fields[key.strip()] = value.strip()
    missing = {"station", "start", "rate"} - fields.keys()
    if missing:
        raise MalformedHeader(f"header is missing {sorted(missing)}")
    try:
        start = float(fields["start"])
        rate = float(fields["rate"])
    except ValueError as exc:
        raise MalformedHeader(f"bad number in header: {exc}") from None
    if not rate > 0:
        raise NonPositiveSamplingRate(f"sampling rate must be positive, got {rate}")
    return fields["station"], start, rate


def _parse_columns(lines: Sequence[str], path) -> list[list[float]]:
    columns: list[list[float]] = [[], [], []]
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) > 3:
            raise MalformedRow(f"{path}:{lineno}: expected 3 columns, got {len(parts)}")
        parts += [""] * (3 - len(parts))
        for col, text in zip(columns, parts):
            text = text.strip()
            if not text:
                continue
            try:
                col.append(float(text))
            except ValueError:
                raise MalformedRow(f"{path}:{lineno}: not a number: {text!r}") from None
    return columns


def read_waveform(path) -> Waveform3C:
    """Read a waveform CSV file.

    Raises
    ------
    MissingFile, MalformedHeader, UnequalChannelLengths, NonPositiveSamplingRate
    """
    path = _check_exists(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        station, start, rate = _parse_header(header)
        body = fh.read().splitlines()
    columns = _parse_columns(body, path)
    lengths = [len(c) for c in columns]
    if len(set(lengths)) != 1:
        raise UnequalChannelLengths(
            f"{path}: column lengths e={lengths[0]}, n={lengths[1]}, z={lengths[2]}"
        )
    return Waveform3C(station, start, rate, *columns)


def write_waveform(w: Waveform3C, path) -> None:
    """Write ``w`` as a waveform CSV; floats use shortest round-trip repr."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#station={w.station_id},start={w.start_time!r},rate={w.sampling_rate!r}\n")
        for e, n, z in zip(w.samples_e.tolist(), w.samples_n.tolist(), w.samples_z.tolist()):
            fh.write(f"{e!r},{n!r},{z!r}\n")


def read_catalog(path) -> Catalog:
    """Read a catalog CSV. The result is sorted by P time."""
    path = _check_exists(path)
    events = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return Catalog(())
        if [h.strip() for h in header] != CATALOG_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(CATALOG_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise MalformedRow(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            event_id, p_text, s_text, mag_text = (cell.strip() for cell in row)
            if not event_id:
                raise MalformedRow(f"{path}:{lineno}: empty event_id")
            try:
                p_time = float(p_text)
                s_time = float(s_text)
                magnitude = float(mag_text) if mag_text else None
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from None
            events.append(CatalogEvent(event_id, p_time, s_time, magnitude))
    return Catalog(tuple(events))


def write_catalog(cat: Catalog | Iterable[CatalogEvent], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CATALOG_HEADER)
        for ev in cat:
            mag = "" if ev.magnitude is None else repr(float(ev.magnitude))
            writer.writerow([ev.event_id, repr(float(ev.p_time)), repr(float(ev.s_time)), mag])


def segment_windows(w: Waveform3C, window_s: float = 30.0,
                    stride_s: float = 15.0) -> list[WindowSlice]:
    """Cut ``w`` into full-length windows starting every ``stride_s`` seconds.

    A trailing partial window is dropped, so the count is
    ``floor((duration - window_s) / stride_s) + 1``.
    """
    if not window_s > 0 or not stride_s > 0:
        raise WindowLongerThanTrace("window_s and stride_s must be positive")
    length = int(round(window_s * w.sampling_rate))
    stride = int(round(stride_s * w.sampling_rate))
    if length < 1 or stride < 1:
        raise WindowLongerThanTrace("window or stride shorter than one sample")
    if length > w.npts:
        raise WindowLongerThanTrace(
            f"window of {window_s} s is longer than the {w.duration} s trace"
        )
    count = (w.npts - length) // stride + 1
    return [WindowSlice(w, i * stride, length) for i in range(count)]


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
