"""Single-target tracking through sudden jumps: patch correspondences pick
promising image cells and an adaptive Metropolis-Hastings chain searches them."""

from .appearance import AppearanceModel, TargetState
from .geometry import Box, RegionGrid
from .imaging import Frame, load_frames
from .sampler import SamplerConfig
from .tracker import TrackerConfig, TrackerRun, track_sequence

__version__ = "0.1.0"

__all__ = [
    "AppearanceModel",
    "Box",
    "Frame",
    "RegionGrid",
    "SamplerConfig",
    "TargetState",
    "TrackerConfig",
    "TrackerRun",
    "load_frames",
    "track_sequence",
]
