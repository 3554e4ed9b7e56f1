"""Persistence for every pipeline artifact, plus manifests and splits.

Events and centroid tracks are CSV for auditability; grayscale frames are
binary PGM with a sidecar timestamp index; encoded six-channel frames use
the EVG6 binary format (they don't fit standard image formats).  Every
writer/reader pair round-trips exactly, except PGM which quantizes to
8 bits.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CentroidTrack, EventStream, GrayscaleFrame, SensorGeometry
from .encoder import EncodedFrame

EVG6_MAGIC = b"EVG6"
EVG6_VERSION = 1
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


class DataError(Exception):
    """Malformed, missing, or inconsistent on-disk data."""


# ---------------------------------------------------------------- events CSV

def write_events_csv(stream: EventStream, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "t", "p"])
        for i in range(len(stream)):
            w.writerow([int(stream.xs[i]), int(stream.ys[i]), int(stream.ts[i]), int(stream.ps[i])])


def read_events_csv(path, geometry: SensorGeometry) -> EventStream:
    xs, ys, ts, ps = [], [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["x", "y", "t", "p"]:
            raise DataError(f"{path}: expected header x,y,t,p, got {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                x, y, t, p = (int(v) for v in row)
            except (ValueError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: malformed event row {row!r}") from e
            xs.append(x)
            ys.append(y)
            ts.append(t)
            ps.append(p)
    return EventStream(np.asarray(xs, dtype=np.int64), np.asarray(ys, dtype=np.int64),
                       np.asarray(ts, dtype=np.int64), np.asarray(ps, dtype=np.int64), geometry)


# ----------------------------------------------------------------------- PGM

def write_pgm(frame: GrayscaleFrame, path) -> None:
    h, w = frame.pixels.shape
    data = np.rint(frame.pixels * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path, t: int = 0) -> GrayscaleFrame:
    with open(path, "rb") as f:
        raw = f.read()
    # tokenize the header byte-wise: the binary payload may contain
    # whitespace bytes, so a plain split() would corrupt it
    tokens, pos = [], 0
    try:
        while len(tokens) < 4:
            while raw[pos] in b" \t\r\n":
                pos += 1
            start = pos
            while raw[pos] not in b" \t\r\n":
                pos += 1
            tokens.append(raw[start:pos])
        pos += 1  # single whitespace byte terminating the header
    except IndexError as e:
        raise DataError(f"{path}: truncated PGM header") from e
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (P5) file")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise DataError(f"{path}: malformed PGM header") from e
    if maxval != 255:
        raise DataError(f"{path}: expected maxval 255, got {maxval}")
    pixels = np.frombuffer(raw[pos:], dtype=np.uint8)
    if pixels.size != w * h:
        raise DataError(f"{path}: expected {w * h} pixel bytes, got {pixels.size}")
    return GrayscaleFrame(t, pixels.reshape(h, w).astype(np.float64) / 255.0)


def write_gray_frames(frames: list[GrayscaleFrame], directory) -> None:
    """PGM per frame plus a frames.csv index (index,t,filename)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "frames.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "t", "filename"])
        for i, frame in enumerate(frames):
            name = f"gray_{i:05d}.pgm"
            write_pgm(frame, directory / name)
            w.writerow([i, frame.t, name])


def read_gray_frames(directory) -> list[GrayscaleFrame]:
    directory = Path(directory)
    index = directory / "frames.csv"
    if not index.exists():
        raise DataError(f"missing frame index {index}")
    frames = []
    with open(index, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            _, t, name = row
            frames.append(read_pgm(directory / name, t=int(t)))
    return frames


# ------------------------------------------------------------- EVG6 encoded

def write_encoded(frame: EncodedFrame, path) -> None:
    _, h, w = frame.channels.shape
    with open(path, "wb") as f:
        f.write(EVG6_MAGIC)
        f.write(struct.pack("<IIIQ", EVG6_VERSION, w, h, frame.t_end))
        f.write(frame.channels.astype("<f4").tobytes())


def read_encoded(path) -> EncodedFrame:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != EVG6_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}")
    version, w, h, t_end = struct.unpack("<IIIQ", raw[4:24])
    if version != EVG6_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    expected = 24 + 6 * h * w * 4
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, got {len(raw)}")
    channels = np.frombuffer(raw[24:], dtype="<f4").reshape(6, h, w)
    return EncodedFrame(t_end, channels)


# ----------------------------------------------------------------- truth CSV

def write_truth_csv(track: CentroidTrack, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "cx", "cy"])
        for i in range(len(track)):
            w.writerow([int(track.ts[i]), repr(float(track.cx[i])), repr(float(track.cy[i]))])


def read_truth_csv(path) -> CentroidTrack:
    ts, cx, cy = [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["t", "cx", "cy"]:
            raise DataError(f"{path}: expected header t,cx,cy, got {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                ts.append(int(row[0]))
                cx.append(float(row[1]))
                cy.append(float(row[2]))
            except (IndexError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: malformed centroid row {row!r}") from e
    return CentroidTrack(np.asarray(ts, dtype=np.int64), np.asarray(cx), np.asarray(cy))


# ------------------------------------------------------------------ manifest

@dataclass
class Manifest:
    version: int = MANIFEST_VERSION
    width: int = 0
    height: int = 0
    seed: int = 0
    bin_us: int = 0
    alpha: float = 0.0
    events_file: str = ""
    gray_dir: str = ""
    truth_file: str = ""
    encoded_dir: str = ""
    pairs_file: str = ""
    n_events: int = 0
    n_gray: int = 0
    n_truth: int = 0
    n_encoded: int = 0
    n_pairs: int = 0
    extra: dict = field(default_factory=dict)

    def save(self, directory) -> None:
        path = Path(directory) / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.__dict__, f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory, check: bool = True) -> "Manifest":
        directory = Path(directory)
        path = directory / MANIFEST_NAME
        if not path.exists():
            raise DataError(f"no manifest at {path}")
        with open(path, encoding="utf-8") as f:
            m = cls(**json.load(f))
        if check:
            m.validate(directory)
        return m

    def validate(self, directory) -> None:
        """Fail loudly on missing files or count mismatches."""
        directory = Path(directory)
        if self.events_file:
            p = directory / self.events_file
            if not p.exists():
                raise DataError(f"manifest references missing events file {p}")
            with open(p) as f:
                n = sum(1 for _ in f) - 1
            if n != self.n_events:
                raise DataError(f"events count mismatch: manifest {self.n_events}, file {n}")
        if self.gray_dir:
            d = directory / self.gray_dir
            frames = read_gray_frames(d)
            if len(frames) != self.n_gray:
                raise DataError(f"gray frame count mismatch: manifest {self.n_gray}, dir {len(frames)}")
        if self.truth_file:
            p = directory / self.truth_file
            if not p.exists():
                raise DataError(f"manifest references missing truth file {p}")
            with open(p) as f:
                n = sum(1 for _ in f) - 1
            if n != self.n_truth:
                raise DataError(f"truth count mismatch: manifest {self.n_truth}, file {n}")
        if self.encoded_dir:
            d = directory / self.encoded_dir
            n = len(sorted(d.glob("enc_*.evg6"))) if d.exists() else 0
            if n != self.n_encoded:
                raise DataError(f"encoded frame count mismatch: manifest {self.n_encoded}, dir {n}")

    def geometry(self) -> SensorGeometry:
        return SensorGeometry(self.width, self.height)


# --------------------------------------------------------------------- split

def split(pairs: list, fraction: float, seed: int) -> tuple[list, list]:
    """Deterministic shuffled train/test split.

    `fraction` is the train share.  Consecutive pairs share a frame, so
    temporal adjacency leaks across the split; accepted for synthetic data.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 pairs to split, got {len(pairs)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n_train = int(round(len(pairs) * fraction))
    n_train = min(max(n_train, 1), len(pairs) - 1)
    train = [pairs[i] for i in order[:n_train]]
    test = [pairs[i] for i in order[n_train:]]
    return train, test
