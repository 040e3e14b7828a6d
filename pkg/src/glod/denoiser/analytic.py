"""Exact noise predictions for Gaussian-mixture data.

If ``x0 ~ sum_k w_k N(mu_k, s_k^2 I)`` then ``x_t`` is distributed as
``sum_k w_k N(sqrt(ab) mu_k, v_k I)`` with ``v_k = ab s_k^2 + 1 - ab``, and the
optimal noise prediction is ``E[eps | x_t] = -sqrt(1 - ab) * grad log p_t(x_t)``,
which expands to ``sqrt(1 - ab) * sum_k r_k(x_t) (x_t - sqrt(ab) mu_k) / v_k``
with posterior responsibilities ``r_k``. Conditioning restricts the sum to the
components a condition maps to.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from glod.denoiser.base import DenoiserBase
from glod.denoiser.condition import NULL, Condition
from glod.errors import InvalidArgumentError, UnknownConditionError
from glod.schedule import Schedule


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Isotropic Gaussian mixture over ``(H, W, C)`` images plus a condition table.

    ``condition_map`` sends each condition to the component indices it selects.
    The null condition always selects every component and is filled in when
    absent.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    condition_map: Mapping[Condition, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        mu = np.array(self.means, dtype=np.float64)
        var = np.array(self.variances, dtype=np.float64)
        if mu.ndim != 4:
            raise InvalidArgumentError("means must have shape (K, H, W, C)")
        K = mu.shape[0]
        if w.shape != (K,) or var.shape != (K,):
            raise InvalidArgumentError("weights and variances need one entry per component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError("weights must be positive and sum to 1")
        if np.any(var <= 0):
            raise InvalidArgumentError("variances must be positive")
        cmap = {}
        for c, idx in self.condition_map.items():
            idx = tuple(sorted({int(i) for i in idx}))
            if not idx:
                raise InvalidArgumentError(f"condition {c} maps to no components")
            if idx[0] < 0 or idx[-1] >= K:
                raise InvalidArgumentError(f"condition {c} maps outside 0..{K - 1}")
            cmap[c] = idx
        if cmap.setdefault(NULL, tuple(range(K))) != tuple(range(K)):
            raise InvalidArgumentError("the null condition must map to every component")
        for name, a in (("weights", w), ("means", mu), ("variances", var)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "condition_map", cmap)

    @property
    def num_components(self) -> int:
        return self.means.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.means.shape[1:])

    def components(self, c: Condition) -> tuple[int, ...]:
        try:
            return self.condition_map[c]
        except KeyError:
            raise UnknownConditionError(f"unknown condition {c}") from None

    def conditional(self, c: Condition) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Renormalized ``(weights, means, variances)`` of the data law given ``c``."""
        idx = list(self.components(c))
        w = self.weights[idx]
        return w / w.sum(), self.means[idx], self.variances[idx]

    def sample(self, n: int, rng: np.random.Generator, c: Condition = NULL) -> np.ndarray:
        w, mu, var = self.conditional(c)
        k = rng.choice(len(w), size=n, p=w)
        return mu[k] + np.sqrt(var[k])[:, None, None, None] * rng.standard_normal((n, *self.image_shape))

    def __eq__(self, other):
        if not isinstance(other, MixtureSpec):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
            and self.condition_map == other.condition_map
        )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


class AnalyticMixtureDenoiser(DenoiserBase):
    """Closed-form posterior-mean noise predictor for a :class:`MixtureSpec`."""

    def __init__(self, spec: MixtureSpec, schedule: Schedule):
        self.spec = spec
        self.schedule = schedule
        self.image_shape = spec.image_shape
        self._flat_means = spec.means.reshape(spec.num_components, -1)
        self._mean_sq = np.einsum("kd,kd->k", self._flat_means, self._flat_means)
        self._log_w = np.log(spec.weights)

    def knows(self, c: Condition) -> bool:
        return c in self.spec.condition_map

    def _log_likelihoods(self, flat: np.ndarray, alpha_bar: float) -> np.ndarray:
        a = np.sqrt(alpha_bar)
        v = alpha_bar * self.spec.variances + (1.0 - alpha_bar)
        sq = np.einsum("bd,bd->b", flat, flat)[:, None] - 2.0 * a * flat @ self._flat_means.T
        sq = np.maximum(sq + alpha_bar * self._mean_sq, 0.0)
        D = flat.shape[1]
        return self._log_w - 0.5 * D * np.log(v) - sq / (2.0 * v), v

    def responsibilities_at(self, x_t, alpha_bar: float, c: Condition = NULL) -> np.ndarray:
        """Posterior over the components of ``c`` given ``x_t``; shape ``(..., K_c)``."""
        x_t = np.asarray(x_t, dtype=np.float64)
        flat = x_t.reshape(-1, int(np.prod(self.image_shape)))
        loglik, _ = self._log_likelihoods(flat, alpha_bar)
        idx = list(self.spec.components(c))
        return _softmax_rows(loglik[:, idx]).reshape(*x_t.shape[:-3], len(idx))

    def predict_many_at(self, x_t, alpha_bar: float, conditions) -> dict[Condition, np.ndarray]:
        x_t = np.asarray(x_t, dtype=np.float64)
        lead = x_t.shape[:-3]
        flat = x_t.reshape(-1, int(np.prod(self.image_shape)))
        conditions = list(dict.fromkeys(conditions))
        index = [list(self.spec.components(c)) for c in conditions]
        loglik, v = self._log_likelihoods(flat, alpha_bar)
        a = np.sqrt(alpha_bar)
        scale = np.sqrt(1.0 - alpha_bar)
        out = {}
        for c, idx in zip(conditions, index):
            r = _softmax_rows(loglik[:, idx]) / v[idx]
            eps = scale * (flat * r.sum(axis=1, keepdims=True) - a * (r @ self._flat_means[idx]))
            out[c] = eps.reshape(*lead, *self.image_shape)
        return out

    def predict_at(self, x_t, alpha_bar: float, c: Condition) -> np.ndarray:
        return self.predict_many_at(x_t, alpha_bar, [c])[c]

    def predict_many(self, x_t, t, conditions):
        x_t, t = self._check_input(x_t, t)
        return self.predict_many_at(x_t, self.schedule.alpha_bar[t], conditions)

    def predict(self, x_t, t, c):
        return self.predict_many(x_t, t, [c])[c]
