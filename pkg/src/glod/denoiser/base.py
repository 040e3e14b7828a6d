from __future__ import annotations

from collections.abc import Iterable
from typing import Protocol, runtime_checkable

import numpy as np

from glod.denoiser.condition import Condition
from glod.errors import InvalidArgumentError
from glod.schedule import Schedule


@runtime_checkable
class Denoiser(Protocol):
    """Noise predictor ``eps(x_t, t | c)`` bound to the schedule it was built for.

    Implementations accept samples with any number of leading batch axes in
    front of the ``(H, W, C)`` image axes and never mutate their input.
    """

    schedule: Schedule
    image_shape: tuple[int, int, int]

    def predict(self, x_t: np.ndarray, t: int, c: Condition) -> np.ndarray: ...

    def predict_many(self, x_t: np.ndarray, t: int, conditions: Iterable[Condition]) -> dict[Condition, np.ndarray]: ...

    def knows(self, c: Condition) -> bool: ...


class DenoiserBase:
    schedule: Schedule
    image_shape: tuple[int, int, int]

    def predict_many(self, x_t, t, conditions):
        return {c: self.predict(x_t, t, c) for c in dict.fromkeys(conditions)}

    def _check_input(self, x_t, t) -> tuple[np.ndarray, int]:
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.shape[-3:] != tuple(self.image_shape):
            raise InvalidArgumentError(f"expected trailing shape {self.image_shape}, got {x_t.shape}")
        return x_t, self.schedule.check_t(t, lo=1)


def predict(d: Denoiser, x_t, t: int, c: Condition) -> np.ndarray:
    """Noise prediction of ``d`` at ``(x_t, t)`` under condition ``c``."""
    return d.predict(x_t, t, c)
