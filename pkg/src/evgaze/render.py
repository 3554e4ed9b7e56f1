"""PPM rendering: encoded-frame previews, time-colored trajectory overlays,
and predicted-vs-target vector drawings.

Path color runs from pure blue (earliest) to pure red (latest) by linear
RGB interpolation.  Predicted vectors draw red, targets green.
"""

from __future__ import annotations

import numpy as np

from .core import CentroidTrack, SensorGeometry
from .encoder import EncodedFrame

RED = (255, 0, 0)
GREEN = (0, 255, 0)


def write_ppm(image: np.ndarray, path) -> None:
    """image: (H, W, 3) uint8."""
    h, w, _ = image.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos] in b" \t\r\n":
            pos += 1
        start = pos
        while raw[pos] not in b" \t\r\n":
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(raw[pos:], dtype=np.uint8).reshape(h, w, 3)


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def preview_frame(frame: EncodedFrame) -> np.ndarray:
    """Polarity-0 RGB and polarity-1 RGB triplets side by side."""
    off = np.moveaxis(frame.channels[0:3], 0, -1)
    on = np.moveaxis(frame.channels[3:6], 0, -1)
    return _to_u8(np.concatenate([off, on], axis=1))


def time_color(s: float) -> tuple[int, int, int]:
    """Blue at s=0 through to red at s=1."""
    s = min(1.0, max(0.0, s))
    return int(round(255 * s)), 0, int(round(255 * (1.0 - s)))


def draw_line(image: np.ndarray, a: tuple[float, float], b: tuple[float, float],
              color: tuple[int, int, int]) -> None:
    """Dense-sampled line draw, in place; endpoints land on exact pixels."""
    h, w, _ = image.shape
    n = max(2, int(2 * max(abs(b[0] - a[0]), abs(b[1] - a[1]))) + 2)
    for s in np.linspace(0.0, 1.0, n):
        x = int(round(a[0] + s * (b[0] - a[0])))
        y = int(round(a[1] + s * (b[1] - a[1])))
        if 0 <= x < w and 0 <= y < h:
            image[y, x] = color


def trajectory_overlay(track: CentroidTrack, geometry: SensorGeometry,
                       background: np.ndarray | None = None) -> np.ndarray:
    """Truth path painted over a background (black if none), segment color
    moving from blue to red with normalized sample time."""
    if background is None:
        image = np.zeros((geometry.height, geometry.width, 3), dtype=np.uint8)
    else:
        image = background.copy()
    n = len(track)
    if n == 0:
        return image
    for i in range(n - 1):
        draw_line(image, track.point(i), track.point(i + 1),
                  time_color(i / max(n - 1, 1)))
    # repaint sample points so endpoints carry their exact colors
    for i in range(n):
        x, y = track.point(i)
        xi, yi = int(round(x)), int(round(y))
        if 0 <= xi < geometry.width and 0 <= yi < geometry.height:
            image[yi, xi] = time_color(i / max(n - 1, 1))
    return image


def vector_overlay(frame: EncodedFrame, target, predicted) -> np.ndarray:
    """Predicted (red) and target (green) gaze vectors over the polarity-1
    preview half.  target/predicted: ((x0, y0), (x1, y1)) in pixels."""
    on = _to_u8(np.moveaxis(frame.channels[3:6], 0, -1))
    image = on.copy()
    draw_line(image, predicted[0], predicted[1], RED)
    draw_line(image, target[0], target[1], GREEN)
    return image
