"""Rate-coded event-to-image encoding and event/grayscale fusion.

Event arrival time within a temporal bin is expressed as color: early
events are red, late events blue, with the green channel bridging the two
exponentials.  Encoded frames carry six channels, an RGB triplet per
polarity, painted over a replicated grayscale base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CentroidTrack,
    EventStream,
    GrayscaleFrame,
    SamplePair,
    SensorGeometry,
    normalize_timestamps,
    slice_by_time,
)

BIN_US = 33_000


@dataclass(frozen=True)
class ColorCode:
    alpha: float = 5.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class EncodingConfig:
    bin_us: int = BIN_US
    color: ColorCode = field(default_factory=ColorCode)

    def __post_init__(self):
        if self.bin_us <= 0:
            raise ValueError("bin width must be positive")


@dataclass(frozen=True)
class EncodedFrame:
    """Six-channel encoded image: channels 0-2 = RGB for OFF events,
    channels 3-5 = RGB for ON events."""

    t_end: int
    channels: np.ndarray  # (6, height, width), values in [0, 1]

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float32)
        object.__setattr__(self, "channels", ch)
        if ch.ndim != 3 or ch.shape[0] != 6:
            raise ValueError(f"encoded frame must be (6, H, W), got {ch.shape}")


@dataclass(frozen=True)
class EncodedSequence:
    frames: list[EncodedFrame]
    centroids: CentroidTrack

    def __post_init__(self):
        if len(self.frames) != len(self.centroids):
            raise ValueError(f"{len(self.frames)} frames vs {len(self.centroids)} centroids")

    def __len__(self) -> int:
        return len(self.frames)


def blank_frame(geometry: SensorGeometry, t_end: int = 0) -> EncodedFrame:
    return EncodedFrame(t_end, np.zeros((6, geometry.height, geometry.width), dtype=np.float32))


def frame_from_gray(gray: GrayscaleFrame, t_end: int | None = None) -> EncodedFrame:
    """Replicate the grayscale base into both polarity RGB triplets."""
    ch = np.broadcast_to(gray.pixels.astype(np.float32), (6,) + gray.pixels.shape).copy()
    return EncodedFrame(gray.t if t_end is None else t_end, ch)


def eta_color(t_norm: float, code: ColorCode) -> tuple[float, float, float]:
    """Color for a normalized arrival time: r decays from 1, b rises to 1,
    g peaks at both ends of the bin."""
    if not (0.0 <= t_norm <= 1.0):
        raise ValueError(f"normalized time {t_norm} outside [0, 1]")
    a = code.alpha
    r = math.exp(-a * t_norm)
    b = math.exp(a * (t_norm - 1.0))
    g = r + b - math.exp(-a)
    return r, g, b


def _eta_color_arr(t_norm: np.ndarray, code: ColorCode) -> np.ndarray:
    a = code.alpha
    r = np.exp(-a * t_norm)
    b = np.exp(a * (t_norm - 1.0))
    g = r + b - math.exp(-a)
    return np.stack([r, g, b])


def encode_bin(events: EventStream, base: EncodedFrame, code: ColorCode,
               t_end: int | None = None) -> EncodedFrame:
    """Paint one bin's events onto a copy of `base`.

    Timestamps are normalized within the bin; events are applied in time
    order, so the last event at a given (pixel, polarity) wins.  Pixels
    without events keep the base values.
    """
    out = base.channels.copy()
    if len(events) > 0:
        t_norm = normalize_timestamps(events.ts)
        rgb = _eta_color_arr(t_norm, code)  # (3, n)
        g = events.geometry
        # keep only the last (time-ordered) event per (pixel, polarity)
        key = events.ps * g.height * g.width + events.ys * g.width + events.xs
        order = np.lexsort((np.arange(len(events)), key))
        sorted_key = key[order]
        last = np.ones(len(events), dtype=bool)
        last[:-1] = sorted_key[1:] != sorted_key[:-1]
        idx = order[last]
        ch0 = events.ps[idx] * 3
        for c in range(3):
            out[ch0 + c, events.ys[idx], events.xs[idx]] = rgb[c, idx]
    if t_end is None:
        t_end = int(events.ts[-1]) if len(events) else base.t_end
    return EncodedFrame(t_end, out)


def nearest_gray(frames: list[GrayscaleFrame], t_ref: int) -> int:
    """Index of the frame closest in time to t_ref; ties go to the earlier
    frame."""
    if not frames:
        raise ValueError("no grayscale frames to match against")
    diffs = np.abs(np.asarray([f.t for f in frames], dtype=np.int64) - t_ref)
    return int(np.argmin(diffs))


def fuse_sequence(events: EventStream, gray: list[GrayscaleFrame],
                  truth: CentroidTrack, cfg: EncodingConfig) -> EncodedSequence:
    """Fuse events onto grayscale bases, one encoded frame per temporal bin.

    Each grayscale frame opens a period running to the next frame (or the
    end of the recording).  The canvas is initialized from the grayscale
    frame and accumulates event paint across the period's consecutive
    uniform bins; it resets at every new grayscale frame.  The n-th emitted
    frame is paired with the ground-truth centroid nearest its bin end,
    since grayscale periods need not be whole multiples of the bin width.
    """
    if not gray:
        raise ValueError("fusion requires at least one grayscale frame")
    if not len(truth):
        raise ValueError("fusion requires a non-empty centroid track")
    t_final = max(int(events.ts[-1]) if len(events) else 0,
                  int(truth.ts[-1]), gray[-1].t)

    frames: list[EncodedFrame] = []
    for j, g in enumerate(gray):
        period_end = gray[j + 1].t if j + 1 < len(gray) else t_final
        canvas = frame_from_gray(g)
        n_bins = max(period_end - g.t, 0) // cfg.bin_us
        for k in range(n_bins):
            b_start = g.t + k * cfg.bin_us
            b_end = b_start + cfg.bin_us
            bin_events = slice_by_time(events, b_start, b_end)
            canvas = encode_bin(bin_events, canvas, cfg.color, t_end=b_end)
            frames.append(canvas)

    t_ends = np.array([f.t_end for f in frames], dtype=np.int64)
    if len(t_ends) and truth.ts[-1] < t_ends[-1] - cfg.bin_us:
        raise ValueError(
            f"centroid track too short: ends at {truth.ts[-1]} us but the "
            f"last bin ends at {t_ends[-1]} us")
    # a final bin may outrun the track by up to one bin; drop it rather
    # than reuse the last centroid for two frames
    while len(t_ends) and t_ends[-1] > truth.ts[-1] + cfg.bin_us // 2:
        frames.pop()
        t_ends = t_ends[:-1]
    right = np.searchsorted(truth.ts, t_ends)
    left = np.maximum(right - 1, 0)
    right = np.minimum(right, len(truth) - 1)
    idx = np.where(t_ends - truth.ts[left] <= truth.ts[right] - t_ends,
                   left, right)
    if np.any(np.diff(idx) <= 0):
        raise ValueError("bins outpace the centroid track: bin width must be "
                         "at least the truth sampling interval")
    used = CentroidTrack(truth.ts[idx], truth.cx[idx], truth.cy[idx])
    return EncodedSequence(frames, used)


def make_sample_pairs(seq: EncodedSequence, geometry: SensorGeometry) -> list[SamplePair]:
    """Sliding window of two consecutive frames with their two centroids,
    targets normalized by the sensor size."""
    if len(seq) < 2:
        raise ValueError(f"need at least 2 encoded frames, got {len(seq)}")
    pairs = []
    for i in range(len(seq) - 1):
        target = np.array([
            [seq.centroids.cx[i] / geometry.width, seq.centroids.cy[i] / geometry.height],
            [seq.centroids.cx[i + 1] / geometry.width, seq.centroids.cy[i + 1] / geometry.height],
        ])
        pairs.append(SamplePair(seq.frames[i], seq.frames[i + 1], target, i, i + 1))
    return pairs
