"""End-to-end sampling: layered composition and the classifier-free baseline.

Both samplers share one chain runner. Per step ``t = T..1`` it applies
layout control to ``x_t``, predicts every needed condition on the adjusted
sample, combines the predictions and takes one reverse step.
"""

from __future__ import annotations

import csv
import io
import os
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from glod.composer import LayerStack, _combine, guidance_terms
from glod.denoiser.base import Denoiser
from glod.denoiser.condition import NULL, Condition
from glod.errors import (
    InvalidArgumentError,
    NumericDivergenceError,
    UnknownConditionError,
)
from glod.layout import LayoutConfig, LayoutTarget, layout_control
from glod.schedule import Schedule, StepRule, reverse_step


@dataclass(frozen=True)
class SamplerConfig:
    """Everything one sampling run depends on.

    ``num_chains`` adds a leading batch axis; all chains then share one
    random stream seeded by ``seed``. ``trace_stride`` keeps every n-th step
    in the trace (``None`` keeps only the last step).
    """

    schedule: Schedule
    stack: LayerStack
    image_shape: tuple[int, int, int]
    layout_targets: tuple[LayoutTarget, ...] = ()
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    seed: int = 0
    step_rule: StepRule | None = None
    num_chains: int | None = None
    trace_stride: int | None = 1

    def __post_init__(self):
        object.__setattr__(self, "image_shape", tuple(int(n) for n in self.image_shape))
        object.__setattr__(self, "layout_targets", tuple(self.layout_targets))
        if len(self.image_shape) != 3 or min(self.image_shape) < 1:
            raise InvalidArgumentError(f"image_shape must be (H, W, C), got {self.image_shape}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        if self.num_chains is not None and self.num_chains < 1:
            raise InvalidArgumentError("num_chains must be positive")
        for r in self.stack.local_refs():
            if self.stack.entry(r).mask.shape != self.image_shape[:2]:
                raise InvalidArgumentError("local mask does not match the image grid")

    @property
    def rule(self) -> StepRule:
        return StepRule(self.step_rule or self.schedule.step_rule)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        if self.num_chains is None:
            return self.image_shape
        return (self.num_chains, *self.image_shape)


@dataclass(frozen=True)
class TraceRecord:
    t: int
    norm_global: float
    norm_local: float
    norm_x: float


@dataclass
class Trace:
    step_rule: str
    seed: int
    records: list[TraceRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# step_rule={self.step_rule} seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "norm_g_global", "norm_g_local", "norm_x"])
        for r in self.records:
            w.writerow([r.t, repr(r.norm_global), repr(r.norm_local), repr(r.norm_x)])
        return buf.getvalue()


Combiner = Callable[[dict], tuple[np.ndarray, np.ndarray, np.ndarray]]


def _check_known(d: Denoiser, conditions: Sequence[Condition]):
    for c in conditions:
        if not d.knows(c):
            raise UnknownConditionError(f"denoiser does not know condition {c}")


def _run_chain(cfg: SamplerConfig, d: Denoiser, conditions: list[Condition], combine: Combiner):
    # overflow is detected explicitly below and reported with its step
    with np.errstate(over="ignore", invalid="ignore"):
        return _chain_steps(cfg, d, conditions, combine)


def _chain_steps(cfg: SamplerConfig, d: Denoiser, conditions: list[Condition], combine: Combiner):
    s = cfg.schedule
    _check_known(d, [*conditions, *(tg.condition for tg in cfg.layout_targets)])
    if tuple(d.image_shape) != cfg.image_shape:
        raise InvalidArgumentError(f"denoiser works on {d.image_shape}, config asks for {cfg.image_shape}")
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal(cfg.sample_shape)
    trace = Trace(cfg.rule.value, int(cfg.seed))
    stride = cfg.trace_stride
    for t in range(s.num_steps, 0, -1):
        if cfg.layout_targets:
            x = layout_control(x, t, cfg.layout_targets, d, s, cfg.layout)
            if not np.all(np.isfinite(x)):
                raise NumericDivergenceError(t, "layout-adjusted sample")
        preds = d.predict_many(x, t, conditions)
        eps, g_global, g_local = combine(preds)
        if not np.all(np.isfinite(eps)):
            raise NumericDivergenceError(t, "noise estimate")
        x = reverse_step(x, eps, t, s, rng, cfg.rule)
        if not np.all(np.isfinite(x)):
            raise NumericDivergenceError(t, "sample")
        if (stride and (s.num_steps - t) % stride == 0) or t == 1:
            trace.records.append(
                TraceRecord(t, float(np.linalg.norm(g_global)), float(np.linalg.norm(g_local)), float(np.linalg.norm(x)))
            )
    return x, trace


def glod_sample(cfg: SamplerConfig, d: Denoiser) -> tuple[np.ndarray, Trace]:
    """Sample with layered global and local guidance.

    Returns the final sample and a per-step trace of guidance and sample norms.
    """
    stack = cfg.stack

    def combine(preds):
        eps_u = preds[NULL]
        g_global, g_local = guidance_terms(stack, preds, eps_u)
        return _combine(stack, eps_u, g_global, g_local), g_global, g_local

    return _run_chain(cfg, d, stack.conditions(), combine)


def baseline_sample(cfg: SamplerConfig, d: Denoiser) -> tuple[np.ndarray, Trace]:
    """Classifier-free guidance with the stack's single global entry.

    An empty stack gives the plain unconditional chain.
    """
    stack = cfg.stack
    if stack.local_refs() or len(stack.global_refs()) > 1:
        raise InvalidArgumentError("the baseline sampler takes at most one global condition and no locals")
    if stack.is_empty:
        return unconditional_sample(cfg, d)
    entry = stack.entry(stack.global_refs()[0])
    c, w = entry.condition, entry.weight

    def combine(preds):
        eps_u = preds[NULL]
        g = w * (preds[c] - eps_u)
        return eps_u + g, g, np.zeros_like(eps_u)

    return _run_chain(cfg, d, [NULL, c], combine)


def unconditional_sample(cfg: SamplerConfig, d: Denoiser) -> tuple[np.ndarray, Trace]:
    def combine(preds):
        eps_u = preds[NULL]
        zeros = np.zeros_like(eps_u)
        return eps_u.copy(), zeros, zeros

    return _run_chain(cfg, d, [NULL], combine)


def worker_count(default: int | None = None) -> int:
    env = os.environ.get("GLOD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidArgumentError(f"GLOD_THREADS must be an integer, got {env!r}") from None
    return default or min(4, os.cpu_count() or 1)


def sample_seeds(cfg: SamplerConfig, d: Denoiser, seeds: Sequence[int], sampler=glod_sample, workers: int | None = None):
    """Run one independent chain per seed; results come back in seed order."""
    cfgs = [replace(cfg, seed=int(sd)) for sd in seeds]
    n = min(worker_count(workers), max(len(cfgs), 1))
    if n == 1:
        return [sampler(c, d) for c in cfgs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda c: sampler(c, d), cfgs))
