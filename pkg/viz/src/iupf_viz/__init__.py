"""Figure rendering for exported iupf simulation runs."""

from .artifacts import FieldSnapshot, RunArtifacts, load_run
from .plots import render_field_frames, render_layers, render_timeseries_and_safety

__all__ = [
    "FieldSnapshot",
    "RunArtifacts",
    "load_run",
    "render_field_frames",
    "render_layers",
    "render_timeseries_and_safety",
]
