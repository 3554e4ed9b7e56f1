"""Deterministic synthetic DVS camera.

Renders a dark disk (the pupil) moving over a lighter background along a
saccade/fixation trajectory, and converts the resulting log-intensity
changes into an event stream with a per-pixel contrast-threshold model.
Also emits sparse grayscale guide frames and the ground-truth centroid
track.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CentroidTrack, EventStream, GrayscaleFrame, SensorGeometry

# DVS-native truth period: one centroid per 33 ms temporal bin
TRUTH_PERIOD_US = 33_000

# intensity floor applied before ln so black pixels stay finite
LOG_FLOOR = 1e-3

# simulation tick; events get sub-tick timestamps by linear interpolation
TICK_US = 1_000


@dataclass(frozen=True)
class SceneConfig:
    geometry: SensorGeometry = field(default_factory=SensorGeometry)
    background_intensity: float = 0.35
    pupil_intensity: float = 0.05
    pupil_radius: float = 6.0
    contrast_threshold: float = 0.3
    noise_rate: float = 0.0  # events / pixel / second
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.background_intensity <= 1.0):
            raise ValueError("background_intensity must be in (0, 1]")
        if not (0.0 <= self.pupil_intensity < 1.0):
            raise ValueError("pupil_intensity must be in [0, 1)")
        if self.pupil_intensity >= self.background_intensity:
            raise ValueError("pupil must be darker than the background")
        if self.contrast_threshold <= 0:
            raise ValueError("contrast_threshold must be positive")
        if self.noise_rate < 0:
            raise ValueError("noise_rate must be non-negative")


@dataclass(frozen=True)
class TrajectoryConfig:
    duration: int = 4_000_000  # microseconds
    fixation_mean: int = 300_000
    saccade_duration: int = 40_000
    margin: float = 10.0  # inset of the fixation box from the sensor border
    jitter: float = 0.0  # fixation jitter amplitude, pixels
    seed: int = 0

    def __post_init__(self):
        if self.duration < self.fixation_mean + self.saccade_duration:
            raise ValueError("duration must cover at least one fixation and one saccade")
        if self.saccade_duration <= 0 or self.fixation_mean <= 0:
            raise ValueError("fixation_mean and saccade_duration must be positive")


@dataclass(frozen=True)
class SimOutput:
    events: EventStream
    gray_frames: list[GrayscaleFrame]
    truth: CentroidTrack


class Trajectory:
    """Piecewise gaze path: fixations (constant position, optional jitter)
    alternating with smooth-step saccades."""

    def __init__(self, knots_t: np.ndarray, knots_x: np.ndarray, knots_y: np.ndarray,
                 is_saccade: np.ndarray, duration: int, jitter: float, seed: int):
        # knots_t[i] .. knots_t[i+1] is segment i, holding or interpolating
        # between (knots_x[i], knots_y[i]) and (knots_x[i+1], knots_y[i+1])
        self.knots_t = knots_t
        self.knots_x = knots_x
        self.knots_y = knots_y
        self.is_saccade = is_saccade
        self.duration = int(duration)
        self.jitter = float(jitter)
        self._jitter_rng = np.random.default_rng(seed + 1)

    def position(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Gaze center at time(s) t (microseconds), vectorized."""
        t = np.clip(np.asarray(t, dtype=np.float64), 0, self.duration)
        seg = np.clip(np.searchsorted(self.knots_t, t, side="right") - 1, 0, len(self.knots_t) - 2)
        t0 = self.knots_t[seg].astype(np.float64)
        t1 = self.knots_t[seg + 1].astype(np.float64)
        frac = np.where(t1 > t0, (t - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0)
        # smooth-step easing on saccade segments, hold on fixations
        s = np.where(self.is_saccade[seg], frac * frac * (3.0 - 2.0 * frac), 0.0)
        x = self.knots_x[seg] + s * (self.knots_x[seg + 1] - self.knots_x[seg])
        y = self.knots_y[seg] + s * (self.knots_y[seg + 1] - self.knots_y[seg])
        return x, y

    def track(self, period: int = TRUTH_PERIOD_US) -> CentroidTrack:
        """Sample the path every `period` microseconds, one sample per bin,
        timestamped at the bin end."""
        n = self.duration // period
        ts = (np.arange(1, n + 1, dtype=np.int64)) * period
        x, y = self.position(ts)
        if self.jitter > 0:
            x = x + self._jitter_rng.uniform(-self.jitter, self.jitter, size=n)
            y = y + self._jitter_rng.uniform(-self.jitter, self.jitter, size=n)
        return CentroidTrack(ts, x, y)


def gen_trajectory(cfg: TrajectoryConfig, geometry: SensorGeometry) -> Trajectory:
    """Build a deterministic fixation/saccade path inside the margin-inset box."""
    lo_x, hi_x = cfg.margin, geometry.width - cfg.margin
    lo_y, hi_y = cfg.margin, geometry.height - cfg.margin
    if lo_x >= hi_x or lo_y >= hi_y:
        raise ValueError(f"margin {cfg.margin} leaves no room inside {geometry.width}x{geometry.height}")
    rng = np.random.default_rng(cfg.seed)

    knots_t = [0]
    knots_x = [rng.uniform(lo_x, hi_x)]
    knots_y = [rng.uniform(lo_y, hi_y)]
    is_saccade = []
    t = 0
    fixating = True
    while t < cfg.duration:
        if fixating:
            dt = int(rng.uniform(0.5, 1.5) * cfg.fixation_mean)
            is_saccade.append(False)
            nx, ny = knots_x[-1], knots_y[-1]
        else:
            dt = cfg.saccade_duration
            is_saccade.append(True)
            nx, ny = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
        t = min(t + dt, cfg.duration)
        knots_t.append(t)
        knots_x.append(nx)
        knots_y.append(ny)
        fixating = not fixating
    return Trajectory(np.asarray(knots_t, dtype=np.int64), np.asarray(knots_x),
                      np.asarray(knots_y), np.asarray(is_saccade, dtype=bool),
                      cfg.duration, cfg.jitter, cfg.seed)


def render_intensity(cfg: SceneConfig, center: tuple[float, float], u: int, v: int) -> float:
    """Scene intensity at pixel (u, v): dark disk about `center` on the
    background, with a 1-pixel linear edge blend."""
    d = math.sqrt((u - center[0]) ** 2 + (v - center[1]) ** 2)
    return _blend(cfg, d)


def _blend(cfg: SceneConfig, d):
    """Intensity as a function of distance from the disk center.  Written so
    the scalar and array paths execute identical float operations."""
    r = cfg.pupil_radius
    w = np.clip((d - (r - 0.5)) / 1.0, 0.0, 1.0)
    return cfg.pupil_intensity + w * (cfg.background_intensity - cfg.pupil_intensity)


def render_frame(cfg: SceneConfig, center: tuple[float, float]) -> np.ndarray:
    """Full-sensor intensity image; vectorized equivalent of render_intensity."""
    g = cfg.geometry
    u = np.arange(g.width, dtype=np.float64)[None, :]
    v = np.arange(g.height, dtype=np.float64)[:, None]
    d = np.sqrt((u - center[0]) ** 2 + (v - center[1]) ** 2)
    return _blend(cfg, d)


def gen_events(cfg: SceneConfig, traj: Trajectory) -> EventStream:
    """Contrast-threshold event generation.

    Per pixel, log intensity is tracked against a reference level; each
    crossing of a threshold multiple emits one event (ON when brightening,
    OFF when darkening) timestamped by linear interpolation between the
    1 ms simulation ticks.  Output is sorted by (t, y, x, p).
    """
    g = cfg.geometry
    theta = cfg.contrast_threshold
    ticks = np.arange(0, traj.duration + TICK_US, TICK_US, dtype=np.int64)
    ticks[-1] = min(ticks[-1], traj.duration)

    cx0, cy0 = traj.position(ticks[0])
    log_ref = np.log(np.maximum(render_frame(cfg, (float(cx0), float(cy0))), LOG_FLOOR))
    log_prev = log_ref.copy()

    ex, ey, et, ep = [], [], [], []
    vv, uu = np.mgrid[0:g.height, 0:g.width]
    for k in range(1, len(ticks)):
        cx, cy = traj.position(ticks[k])
        log_new = np.log(np.maximum(render_frame(cfg, (float(cx), float(cy))), LOG_FLOOR))
        delta = log_new - log_ref
        n_cross = np.floor(np.abs(delta) / theta).astype(np.int64)
        if n_cross.any():
            sign = np.sign(delta)
            active = n_cross > 0
            max_n = int(n_cross.max())
            t0, t1 = float(ticks[k - 1]), float(ticks[k])
            for j in range(1, max_n + 1):
                sel = n_cross >= j
                lvl = log_ref[sel] + j * theta * sign[sel]
                denom = log_new[sel] - log_prev[sel]
                frac = np.clip((lvl - log_prev[sel]) / np.where(denom != 0, denom, 1.0), 0.0, 1.0)
                ex.append(uu[sel])
                ey.append(vv[sel])
                et.append(np.rint(t0 + frac * (t1 - t0)).astype(np.int64))
                ep.append((sign[sel] > 0).astype(np.int64))
            log_ref = np.where(active, log_ref + n_cross * theta * sign, log_ref)
        log_prev = log_new

    if ex:
        xs = np.concatenate(ex)
        ys = np.concatenate(ey)
        ts = np.concatenate(et)
        ps = np.concatenate(ep)
    else:
        xs = ys = ts = ps = np.empty(0, dtype=np.int64)

    if cfg.noise_rate > 0:
        rng = np.random.default_rng(cfg.seed + 7)
        expected = cfg.noise_rate * g.width * g.height * traj.duration / 1e6
        n_noise = int(rng.poisson(expected))
        xs = np.concatenate([xs, rng.integers(0, g.width, n_noise)])
        ys = np.concatenate([ys, rng.integers(0, g.height, n_noise)])
        ts = np.concatenate([ts, rng.integers(0, traj.duration + 1, n_noise)])
        ps = np.concatenate([ps, rng.integers(0, 2, n_noise)])

    order = np.lexsort((ps, xs, ys, ts))
    return EventStream(xs[order], ys[order], ts[order], ps[order], g)


def sample_gray_frames(cfg: SceneConfig, traj: Trajectory, fps: float) -> list[GrayscaleFrame]:
    """Guide frames at uniform period 1/fps starting at t = 0."""
    if not (0.5 <= fps <= 30.0):
        raise ValueError(f"fps must be within [0.5, 30], got {fps}")
    period = 1e6 / fps
    n = int(math.floor(traj.duration * fps / 1e6)) + 1
    frames = []
    for i in range(n):
        t = int(round(i * period))
        cx, cy = traj.position(t)
        frames.append(GrayscaleFrame(t, render_frame(cfg, (float(cx), float(cy)))))
    return frames


def simulate(scene: SceneConfig, traj_cfg: TrajectoryConfig, fps: float = 2.0) -> SimOutput:
    """Full synthetic recording: events + guide frames + ground truth."""
    traj = gen_trajectory(traj_cfg, scene.geometry)
    return SimOutput(
        events=gen_events(scene, traj),
        gray_frames=sample_gray_frames(scene, traj, fps),
        truth=traj.track(),
    )
