"""Layered global and local noise guidance for compositional diffusion sampling.

Typical use: build a :class:`LayerStack` (or load a :class:`Scene`), pick a
denoiser backend and call :func:`glod_sample`.
"""

__version__ = "0.1.0"

from glod.composer import (
    Box,
    Entry,
    EntryRef,
    Layer,
    LayerStack,
    box_mask,
    compose,
    guidance_terms,
)
from glod.denoiser import (
    NULL,
    AnalyticMixtureDenoiser,
    Condition,
    MixtureSpec,
    ToyMLPDenoiser,
    train_toy,
)
from glod.errors import (
    FormatError,
    GlodError,
    IncompletePredictionsError,
    InvalidArgumentError,
    NumericDivergenceError,
    UnknownConditionError,
)
from glod.layout import LayoutConfig, LayoutTarget, layout_control
from glod.sampler import (
    SamplerConfig,
    Trace,
    baseline_sample,
    glod_sample,
    sample_seeds,
    unconditional_sample,
)
from glod.scene import Scene
from glod.schedule import Schedule, StepRule, make_schedule

__all__ = [
    "NULL",
    "AnalyticMixtureDenoiser",
    "Box",
    "Condition",
    "Entry",
    "EntryRef",
    "FormatError",
    "GlodError",
    "IncompletePredictionsError",
    "InvalidArgumentError",
    "Layer",
    "LayerStack",
    "LayoutConfig",
    "LayoutTarget",
    "MixtureSpec",
    "NumericDivergenceError",
    "SamplerConfig",
    "Scene",
    "Schedule",
    "StepRule",
    "ToyMLPDenoiser",
    "Trace",
    "UnknownConditionError",
    "baseline_sample",
    "box_mask",
    "compose",
    "glod_sample",
    "guidance_terms",
    "layout_control",
    "make_schedule",
    "sample_seeds",
    "train_toy",
    "unconditional_sample",
]
