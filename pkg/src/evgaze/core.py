"""Shared data model: events, frames, centroid tracks, gaze geometry.

Everything here is immutable after construction and safe to share across
threads; the operations are pure functions.  Timestamps are integer
microseconds end-to-end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class Event(NamedTuple):
    """One DVS spike: pixel location, microsecond timestamp, polarity."""

    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class SensorGeometry:
    width: int = 346
    height: int = 260

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError(f"sensor must be at least 8x8, got {self.width}x{self.height}")


@dataclass(frozen=True)
class EventStream:
    """Struct-of-arrays event stream, sorted by timestamp (stable on ties)."""

    xs: np.ndarray
    ys: np.ndarray
    ts: np.ndarray
    ps: np.ndarray
    geometry: SensorGeometry

    def __post_init__(self):
        for name in ("xs", "ys", "ts", "ps"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, arr)
        n = len(self.ts)
        if not (len(self.xs) == len(self.ys) == len(self.ps) == n):
            raise ValueError("event field arrays must have equal length")

    def __len__(self) -> int:
        return len(self.ts)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.xs[i]), int(self.ys[i]), int(self.ts[i]), int(self.ps[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_events(cls, events: Sequence[Event], geometry: SensorGeometry) -> "EventStream":
        if not events:
            return cls.empty(geometry)
        arr = np.asarray(events, dtype=np.int64)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], geometry)

    @classmethod
    def empty(cls, geometry: SensorGeometry) -> "EventStream":
        z = np.empty(0, dtype=np.int64)
        return cls(z, z, z, z, geometry)


@dataclass(frozen=True)
class GrayscaleFrame:
    """Low-rate intensity frame used as the spatial base for encoding."""

    t: int
    pixels: np.ndarray  # (height, width), values in [0, 1]

    def __post_init__(self):
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.float64))
        if self.pixels.ndim != 2:
            raise ValueError("grayscale pixels must be 2-D")


@dataclass(frozen=True)
class CentroidTrack:
    """Time-indexed ground-truth gaze centroids, uniformly spaced."""

    ts: np.ndarray  # int64 microseconds, strictly increasing
    cx: np.ndarray  # float64 pixels
    cy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ts", np.asarray(self.ts, dtype=np.int64))
        object.__setattr__(self, "cx", np.asarray(self.cx, dtype=np.float64))
        object.__setattr__(self, "cy", np.asarray(self.cy, dtype=np.float64))
        if not (len(self.ts) == len(self.cx) == len(self.cy)):
            raise ValueError("centroid track arrays must have equal length")
        if len(self.ts) > 1 and np.any(np.diff(self.ts) <= 0):
            raise ValueError("centroid timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.ts)

    def point(self, i: int) -> tuple[float, float]:
        return float(self.cx[i]), float(self.cy[i])


@dataclass(frozen=True)
class GazeVector:
    """Ordered pair of 2-D centroids: gaze position and direction of motion."""

    start: tuple[float, float]
    end: tuple[float, float]

    def __post_init__(self):
        coords = (*self.start, *self.end)
        if not all(np.isfinite(c) for c in coords):
            raise ValueError(f"gaze vector coordinates must be finite, got {coords}")

    def direction(self) -> np.ndarray:
        return np.array([self.end[0] - self.start[0], self.end[1] - self.start[1]])


@dataclass(frozen=True)
class SamplePair:
    """One training example: two consecutive encoded frames plus the two
    matching gaze centroids in normalized [0,1] coordinates."""

    frame_a: "EncodedFrame"
    frame_b: "EncodedFrame"
    target: np.ndarray  # (2, 2): rows (cx, cy) normalized, for C_i and C_{i+1}
    index_a: int
    index_b: int

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64))
        if self.target.shape != (2, 2):
            raise ValueError(f"target must be (2, 2), got {self.target.shape}")


@dataclass(frozen=True)
class Violation:
    index: int
    # which field of the event is wrong: "x", "y", "p", or "t"
    name: str
    message: str


def normalize_timestamps(ts) -> np.ndarray:
    """Map timestamps onto [0, 1] by (t - min) / (max - min).

    A degenerate span (max == min) maps everything to 0: a single-instant
    burst is colored as "earliest".
    """
    ts = np.asarray(ts, dtype=np.float64)
    if ts.size == 0:
        raise ValueError("cannot normalize an empty timestamp sequence")
    lo, hi = ts[0], ts[-1]
    if hi == lo:
        return np.zeros_like(ts)
    return (ts - lo) / (hi - lo)


def slice_by_time(stream: EventStream, start: int, end: int, mode: str = "half_open") -> EventStream:
    """Events with timestamps in [start, end).

    mode="half_open" (default) guarantees partition semantics over
    consecutive bins.  mode="nearest" selects by nearest-index search on
    both endpoints instead, which may double-count boundary events; it is
    kept as a compatibility behavior only.
    """
    if start > end:
        raise ValueError(f"slice start {start} > end {end}")
    if mode == "half_open":
        i = int(np.searchsorted(stream.ts, start, side="left"))
        j = int(np.searchsorted(stream.ts, end, side="left"))
    elif mode == "nearest":
        if len(stream) == 0:
            return stream
        i = int(np.argmin(np.abs(stream.ts - start)))
        j = int(np.argmin(np.abs(stream.ts - end)))
    else:
        raise ValueError(f"unknown slice mode {mode!r}")
    return EventStream(stream.xs[i:j], stream.ys[i:j], stream.ts[i:j], stream.ps[i:j], stream.geometry)


def validate_stream(stream: EventStream) -> list[Violation]:
    """Report every out-of-bounds coordinate, non-binary polarity, and
    timestamp inversion.  Returns an empty list when the stream is valid;
    never raises."""
    out: list[Violation] = []
    g = stream.geometry
    for i in np.flatnonzero((stream.xs < 0) | (stream.xs >= g.width)):
        out.append(Violation(int(i), "x", f"x={stream.xs[i]} outside [0, {g.width})"))
    for i in np.flatnonzero((stream.ys < 0) | (stream.ys >= g.height)):
        out.append(Violation(int(i), "y", f"y={stream.ys[i]} outside [0, {g.height})"))
    for i in np.flatnonzero((stream.ps != 0) & (stream.ps != 1)):
        out.append(Violation(int(i), "p", f"polarity {stream.ps[i]} is not 0 or 1"))
    if len(stream) > 1:
        for i in np.flatnonzero(np.diff(stream.ts) < 0) + 1:
            out.append(Violation(int(i), "t", f"timestamp {stream.ts[i]} < previous {stream.ts[i - 1]}"))
    out.sort(key=lambda v: v.index)
    return out
