"""Pixel-radius success strategies and the accuracy table.

Strategy 1: both predicted endpoints must land within the radius of their
corresponding target endpoints (boundary inclusive).  Strategy 2: the
predicted segment must intersect the closed disk around either target
endpoint.  Strategy 1 implies strategy 2, so its accuracies are never
higher.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GazeVector, SensorGeometry

DEFAULT_RADII = (100.0, 90.0, 75.0, 50.0, 25.0)
FIXATION_NORM_EPS = 1e-6


@dataclass(frozen=True)
class Trial:
    target: GazeVector
    predicted: GazeVector


@dataclass(frozen=True)
class AccuracyTable:
    radii: tuple[float, ...]
    strat1: tuple[float, ...]  # percent
    strat2: tuple[float, ...]

    def rows(self):
        return list(zip(self.radii, self.strat1, self.strat2))

    def to_csv(self) -> str:
        lines = ["radius,strat1_acc,strat2_acc"]
        for r, s1, s2 in self.rows():
            lines.append(f"{r:g},{s1:.2f},{s2:.2f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"{'Pixel Radius':>12}  {'Strat 1 Acc.(%)':>15}  {'Strat 2 Acc.(%)':>15}"]
        for r, s1, s2 in self.rows():
            lines.append(f"{r:>12g}  {s1:>15.2f}  {s2:>15.2f}")
        return "\n".join(lines) + "\n"


def _dist(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def point_segment_distance(p: tuple[float, float], a: tuple[float, float],
                           b: tuple[float, float]) -> float:
    """Distance from point p to the closed segment a-b."""
    ax, ay = a
    vx, vy = b[0] - ax, b[1] - ay
    L2 = vx * vx + vy * vy
    if L2 == 0.0:
        return _dist(p, a)
    t = ((p[0] - ax) * vx + (p[1] - ay) * vy) / L2
    t = min(1.0, max(0.0, t))
    return _dist(p, (ax + t * vx, ay + t * vy))


def strat1_success(trial: Trial, radius: float, center: str = "endpoints") -> bool:
    """Both predicted endpoints within `radius` of their target endpoints.

    center="midpoint" is an alternative reading: a single circle about the
    target segment midpoint must contain both predicted endpoints.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    t, p = trial.target, trial.predicted
    if center == "midpoint":
        mid = ((t.start[0] + t.end[0]) / 2.0, (t.start[1] + t.end[1]) / 2.0)
        return _dist(p.start, mid) <= radius and _dist(p.end, mid) <= radius
    return _dist(p.start, t.start) <= radius and _dist(p.end, t.end) <= radius


def strat2_success(trial: Trial, radius: float, center: str = "endpoints") -> bool:
    """Predicted segment intersects a closed target disk (either endpoint,
    or the midpoint disk under center="midpoint")."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    t, p = trial.target, trial.predicted
    if center == "midpoint":
        mid = ((t.start[0] + t.end[0]) / 2.0, (t.start[1] + t.end[1]) / 2.0)
        centers = [mid]
    else:
        centers = [t.start, t.end]
    return any(point_segment_distance(c, p.start, p.end) <= radius for c in centers)


def accuracy_table(trials: list[Trial], radii=DEFAULT_RADII,
                   center: str = "endpoints") -> AccuracyTable:
    """Percent success per strategy per radius, over all trials."""
    if not trials:
        raise ValueError("accuracy table needs at least one trial")
    n = len(trials)
    s1, s2 = [], []
    for r in radii:
        k1 = sum(strat1_success(t, r, center) for t in trials)
        k2 = sum(strat2_success(t, r, center) for t in trials)
        s1.append(round(100.0 * k1 / n, 2))
        s2.append(round(100.0 * k2 / n, 2))
    return AccuracyTable(tuple(radii), tuple(s1), tuple(s2))


@dataclass(frozen=True)
class AngularStats:
    mean: float | None
    median: float | None
    max: float | None
    n_used: int
    n_fixation: int


def angular_error_stats(trials: list[Trial]) -> AngularStats:
    """Mean/median/max angle between target and predicted directions.

    Trials whose target direction is shorter than the fixation threshold
    are excluded and counted separately; if every trial is a fixation the
    stats are undefined (None).
    """
    if not trials:
        raise ValueError("angular stats need at least one trial")
    angles = []
    n_fix = 0
    for tr in trials:
        dc = tr.target.direction()
        dp = tr.predicted.direction()
        nc = float(np.linalg.norm(dc))
        npn = float(np.linalg.norm(dp))
        if nc < FIXATION_NORM_EPS:
            n_fix += 1
            continue
        if npn < FIXATION_NORM_EPS:
            angles.append(math.pi / 2.0)  # prediction collapsed to a point
            continue
        u = float(np.dot(dc, dp) / (nc * npn))
        angles.append(math.acos(min(1.0, max(-1.0, u))))
    if not angles:
        return AngularStats(None, None, None, 0, n_fix)
    arr = np.asarray(angles)
    return AngularStats(float(arr.mean()), float(np.median(arr)), float(arr.max()),
                        len(angles), n_fix)


def trials_from_predictions(targets: np.ndarray, predictions: np.ndarray,
                            geometry: SensorGeometry) -> list[Trial]:
    """Denormalize (N, 2, 2) normalized centroid pairs into pixel-space trials."""
    scale = np.array([geometry.width, geometry.height], dtype=np.float64)
    trials = []
    for tgt, prd in zip(np.asarray(targets), np.asarray(predictions)):
        tp = tgt * scale
        pp = prd * scale
        trials.append(Trial(
            GazeVector((float(tp[0, 0]), float(tp[0, 1])), (float(tp[1, 0]), float(tp[1, 1]))),
            GazeVector((float(pp[0, 0]), float(pp[0, 1])), (float(pp[1, 0]), float(pp[1, 1]))),
        ))
    return trials
