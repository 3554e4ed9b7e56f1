"""Event-camera gaze-vector pipeline: DVS simulation, rate-coded temporal
event encoding, a two-branch convolutional regressor, and pixel-radius
evaluation."""

from .core import (
    CentroidTrack,
    Event,
    EventStream,
    GazeVector,
    GrayscaleFrame,
    SamplePair,
    SensorGeometry,
)

__all__ = [
    "CentroidTrack",
    "Event",
    "EventStream",
    "GazeVector",
    "GrayscaleFrame",
    "SamplePair",
    "SensorGeometry",
]

__version__ = "0.1.0"
