"""Denoiser backends: the analytic Gaussian-mixture oracle and a small trainable MLP."""

from glod.denoiser.analytic import AnalyticMixtureDenoiser, MixtureSpec
from glod.denoiser.base import Denoiser, predict
from glod.denoiser.condition import NULL, Condition
from glod.denoiser.serialization import load, save
from glod.denoiser.toy import (
    ToyMLPDenoiser,
    TrainConfig,
    denoising_loss,
    train_toy,
    two_color_dataset,
)

__all__ = [
    "NULL",
    "AnalyticMixtureDenoiser",
    "Condition",
    "Denoiser",
    "MixtureSpec",
    "ToyMLPDenoiser",
    "TrainConfig",
    "denoising_loss",
    "load",
    "predict",
    "save",
    "train_toy",
    "two_color_dataset",
]
