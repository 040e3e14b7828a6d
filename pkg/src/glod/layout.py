"""Training-free layout control applied to ``x_t`` before noise prediction.

Each target condition's evidence map is the per-pixel magnitude of its
guidance, ``|eps(x_t, t | c) - eps(x_t, t)|`` summed over channels and
normalized to unit mass. The energy

    E(x_t) = sum_c (1 - mass of the evidence map inside the target box)^2

is lowered by a few clipped gradient steps. The gradient is estimated with
central differences along a coarse basis of cell indicators (at most 8x8
cells, each spanning all channels), so any backend works, learned or not.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from glod.composer import Box, box_mask
from glod.denoiser.base import Denoiser
from glod.denoiser.condition import NULL, Condition
from glod.errors import InvalidArgumentError
from glod.schedule import Schedule


@dataclass(frozen=True)
class LayoutTarget:
    condition: Condition
    box: Box

    def __post_init__(self):
        if not isinstance(self.box, Box):
            object.__setattr__(self, "box", Box(*self.box))


@dataclass(frozen=True)
class LayoutConfig:
    enabled: bool = True
    iterations: int = 3
    step_scale: float = 0.3
    grad_clip: float = 1.0
    active_fraction: float = 0.4
    cells: int = 8
    fd_step: float = 1e-3

    def is_active(self, t: int, num_steps: int) -> bool:
        return (num_steps - t) < self.active_fraction * num_steps


def _cell_bounds(n: int, cells: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, min(cells, n) + 1).round().astype(int)
    return list(zip(edges[:-1], edges[1:]))


def cell_basis(image_shape, cells: int = 8) -> np.ndarray:
    """Indicator directions, shape ``(n_cells, H, W, C)``."""
    H, W, C = image_shape
    basis = []
    for r0, r1 in _cell_bounds(H, cells):
        for c0, c1 in _cell_bounds(W, cells):
            b = np.zeros((H, W, C))
            b[r0:r1, c0:c1, :] = 1.0
            basis.append(b)
    return np.stack(basis)


def evidence_maps(predictions: dict, conditions: Sequence[Condition]) -> np.ndarray:
    """Normalized guidance magnitude per condition, shape ``(..., n_targets, H, W)``.

    A condition with no guidance anywhere gets an all-zero map.
    """
    eps_u = predictions[NULL]
    maps = []
    for c in conditions:
        a = np.abs(predictions[c] - eps_u).sum(axis=-1)
        total = a.sum(axis=(-2, -1), keepdims=True)
        maps.append(np.divide(a, total, out=np.zeros_like(a), where=total > 0))
    return np.stack(maps, axis=-3)


def layout_energy(x_t, t: int, targets: Sequence[LayoutTarget], d: Denoiser) -> np.ndarray:
    """Energy per chain; shape is ``x_t.shape[:-3]``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    H, W = x_t.shape[-3:-1]
    conds = [tg.condition for tg in targets]
    preds = d.predict_many(x_t, t, [NULL, *conds])
    maps = evidence_maps(preds, conds)
    masks = np.stack([box_mask(tg.box, H, W) for tg in targets])
    inside = (maps * masks).sum(axis=(-2, -1))
    has_evidence = maps.sum(axis=(-2, -1)) > 0
    inside = np.where(has_evidence, inside, 1.0)
    return ((1.0 - inside) ** 2).sum(axis=-1)


def energy_gradient(x_t, t: int, targets, d: Denoiser, cfg: LayoutConfig) -> np.ndarray:
    """Central-difference gradient of :func:`layout_energy` projected on the cell basis."""
    x_t = np.asarray(x_t, dtype=np.float64)
    lead, shape = x_t.shape[:-3], x_t.shape[-3:]
    basis = cell_basis(shape, cfg.cells)
    n = len(basis)
    h = cfg.fd_step
    flat = x_t.reshape(-1, *shape)
    probes = np.concatenate([flat[:, None] + h * basis, flat[:, None] - h * basis], axis=1)
    e = layout_energy(probes.reshape(-1, *shape), t, targets, d).reshape(len(flat), 2, n)
    directional = (e[:, 0] - e[:, 1]) / (2.0 * h)
    norms = basis.sum(axis=(1, 2, 3))
    grad = np.einsum("bn,nhwc->bhwc", directional / norms, basis)
    return grad.reshape(*lead, *shape)


def layout_control(x_t, t: int, targets: Sequence[LayoutTarget], d: Denoiser, s: Schedule, cfg: LayoutConfig | None = None):
    """Steer each target condition's evidence into its box.

    Runs ``cfg.iterations`` steps of ``x <- x - eta * sqrt(ab_t) * clip(grad E)``
    with ``eta = cfg.step_scale * sigma_t`` (a step of ``eta`` on the
    sigma-space sample). Returns ``x_t`` itself when disabled, when there are
    no targets, when ``eta`` is zero or outside the active window of steps.
    """
    cfg = cfg or LayoutConfig()
    for tg in targets:
        if not isinstance(tg, LayoutTarget) or not isinstance(tg.box, Box):
            raise InvalidArgumentError(f"malformed layout target {tg!r}")
    t = s.check_t(t, lo=1)
    eta = cfg.step_scale * s.sigma[t]
    if not cfg.enabled or not targets or eta == 0.0 or cfg.iterations <= 0 or not cfg.is_active(t, s.num_steps):
        return x_t
    x = np.asarray(x_t, dtype=np.float64)
    step = eta * np.sqrt(s.alpha_bar[t])
    for _ in range(cfg.iterations):
        g = np.clip(energy_gradient(x, t, targets, d, cfg), -cfg.grad_clip, cfg.grad_clip)
        x = x - step * g
    return x
