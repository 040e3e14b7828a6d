"""Noise schedules, the forward noising kernel and single-step reverse updates.

Samples are held in variance-preserving form,
``x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * noise``. The Euler
rule works on the equivalent sigma-space variable ``x_t / sqrt(alpha_bar[t])``
with ``sigma[t] = sqrt((1 - alpha_bar[t]) / alpha_bar[t])``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from glod.errors import InvalidArgumentError

KARRAS_SIGMA_MIN = 0.02
KARRAS_SIGMA_MAX = 10.0
KARRAS_RHO = 7.0


class StepRule(str, enum.Enum):
    DDPM = "ddpm"
    EULER = "euler"


class ScheduleKind(str, enum.Enum):
    LINEAR_BETA = "linear-beta"
    KARRAS_RHO7 = "karras-rho7"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Schedule:
    """Noise levels for ``num_steps`` reverse steps, indexed ``0..num_steps``."""

    num_steps: int
    alpha_bar: np.ndarray
    sigma: np.ndarray
    step_rule: StepRule = StepRule.EULER
    kind: str = "custom"

    def __post_init__(self):
        ab = _frozen(self.alpha_bar)
        sg = _frozen(self.sigma)
        object.__setattr__(self, "alpha_bar", ab)
        object.__setattr__(self, "sigma", sg)
        object.__setattr__(self, "step_rule", StepRule(self.step_rule))
        T = self.num_steps
        if ab.shape != (T + 1,) or sg.shape != (T + 1,):
            raise InvalidArgumentError("alpha_bar and sigma need length num_steps + 1")
        if ab[0] != 1.0 or not np.all(np.diff(ab) < 0) or ab[-1] <= 0:
            raise InvalidArgumentError("alpha_bar must start at 1 and strictly decrease")
        if ab[-1] >= 0.05:
            raise InvalidArgumentError(f"alpha_bar[T]={ab[-1]:.4g} is not below 0.05")
        if sg[0] != 0.0 or np.any(np.diff(sg) < 0):
            raise InvalidArgumentError("sigma must start at 0 and be non-decreasing")

    @classmethod
    def from_sigmas(cls, sigmas, step_rule=StepRule.EULER, kind: str = "custom") -> Schedule:
        """Build a schedule from sigma-space noise levels ``[0, s_1, ..., s_T]``."""
        sg = np.asarray(sigmas, dtype=np.float64)
        if sg.ndim != 1 or sg.size < 3:
            raise InvalidArgumentError("need at least three sigma levels")
        return cls(sg.size - 1, 1.0 / (1.0 + sg**2), sg, step_rule, kind)

    def with_rule(self, step_rule) -> Schedule:
        return Schedule(self.num_steps, self.alpha_bar, self.sigma, StepRule(step_rule), self.kind)

    def check_t(self, t: int, lo: int = 0) -> int:
        t = int(t)
        if not lo <= t <= self.num_steps:
            raise InvalidArgumentError(f"timestep {t} outside [{lo}, {self.num_steps}]")
        return t


def linear_betas(T: int) -> np.ndarray:
    # rescaled so the cumulative decay matches the 1000-step reference grid at any T
    scale = 1000.0 / T
    return np.clip(np.linspace(1e-4 * scale, 0.02 * scale, T), 0.0, 0.999)


def karras_sigmas(
    T: int,
    sigma_min: float = KARRAS_SIGMA_MIN,
    sigma_max: float = KARRAS_SIGMA_MAX,
    rho: float = KARRAS_RHO,
) -> np.ndarray:
    """Return ``[0, sigma_1, ..., sigma_T]`` with sigma_1 = sigma_min and sigma_T = sigma_max."""
    ramp = np.linspace(0.0, 1.0, T)
    lo, hi = sigma_min ** (1 / rho), sigma_max ** (1 / rho)
    return np.concatenate([[0.0], (lo + ramp * (hi - lo)) ** rho])


def make_schedule(T: int, kind="karras-rho7", step_rule=StepRule.EULER) -> Schedule:
    """Build a schedule of ``T`` steps.

    Args:
        T: Number of reverse steps, at least 2.
        kind: ``"linear-beta"`` (DDPM betas, rescaled to ``T``) or
            ``"karras-rho7"`` (power-law sigma grid, rho=7, sigma in [0.02, 10]).
        step_rule: Default reverse update used by samplers.

    Returns:
        A validated :class:`Schedule`.
    """
    if not isinstance(T, (int, np.integer)) or T < 2:
        raise InvalidArgumentError(f"T must be an integer >= 2, got {T!r}")
    T = int(T)
    try:
        kind = ScheduleKind(kind)
    except ValueError:
        raise InvalidArgumentError(f"unknown schedule kind {kind!r}") from None
    if kind is ScheduleKind.LINEAR_BETA:
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - linear_betas(T))])
        sigma = np.sqrt((1.0 - alpha_bar) / alpha_bar)
        return Schedule(T, alpha_bar, sigma, step_rule, kind.value)
    return Schedule.from_sigmas(karras_sigmas(T), step_rule, kind.value)


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def add_noise(x0, t: int, noise, s: Schedule) -> np.ndarray:
    """Forward kernel: ``sqrt(ab[t]) * x0 + sqrt(1 - ab[t]) * noise``."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    _check_shapes(x0, noise, "add_noise")
    ab = s.alpha_bar[s.check_t(t)]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def ddpm_coefficients(t: int, s: Schedule) -> tuple[float, float, float]:
    """Return ``(1/sqrt(alpha_t), beta_t/sqrt(1-ab_t), posterior std)`` for step ``t``."""
    ab_t, ab_prev = s.alpha_bar[t], s.alpha_bar[t - 1]
    alpha_t = ab_t / ab_prev
    beta_t = 1.0 - alpha_t
    var = beta_t * (1.0 - ab_prev) / (1.0 - ab_t)
    return 1.0 / np.sqrt(alpha_t), beta_t / np.sqrt(1.0 - ab_t), float(np.sqrt(var))


def ddpm_step(x_t, eps_hat, t: int, s: Schedule, rng: np.random.Generator | None, stochastic: bool = True):
    """Ancestral DDPM update with the posterior (lower-bound) variance.

    ``x_{t-1} = (x_t - beta_t / sqrt(1 - ab_t) * eps_hat) / sqrt(alpha_t) + std_t * z``.
    No noise is drawn at ``t == 1`` or when ``stochastic`` is false.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_shapes(x_t, eps_hat, "ddpm_step")
    t = s.check_t(t, lo=1)
    inv_sqrt_alpha, eps_coef, std = ddpm_coefficients(t, s)
    mean = inv_sqrt_alpha * (x_t - eps_coef * eps_hat)
    if not stochastic or t == 1 or std == 0.0:
        return mean
    if rng is None:
        raise InvalidArgumentError("ddpm_step needs an rng for stochastic steps")
    return mean + std * rng.standard_normal(x_t.shape)


def euler_step(x_t, eps_hat, t: int, s: Schedule) -> np.ndarray:
    """First-order step in sigma space: ``x + (sigma[t-1] - sigma[t]) * eps_hat``.

    ``x_t`` here is the sigma-space sample, see :func:`to_sigma_space`.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_shapes(x_t, eps_hat, "euler_step")
    t = s.check_t(t, lo=1)
    return x_t + (s.sigma[t - 1] - s.sigma[t]) * eps_hat


def to_sigma_space(x_t, t: int, s: Schedule) -> np.ndarray:
    return np.asarray(x_t) / np.sqrt(s.alpha_bar[t])


def from_sigma_space(y, t: int, s: Schedule) -> np.ndarray:
    return np.asarray(y) * np.sqrt(s.alpha_bar[t])


def reverse_step(x_t, eps_hat, t: int, s: Schedule, rng=None, step_rule=None) -> np.ndarray:
    """One reverse step on a variance-preserving sample with the given rule."""
    rule = StepRule(step_rule or s.step_rule)
    if rule is StepRule.DDPM:
        return ddpm_step(x_t, eps_hat, t, s, rng)
    y = euler_step(to_sigma_space(x_t, t, s), eps_hat, t, s)
    return from_sigma_space(y, t - 1, s)
