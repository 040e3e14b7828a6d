"""Layered composition of noise predictions.

A :class:`LayerStack` holds the unconditional slot in layer 0, global entries
(image-wide, guided against the unconditional noise) and local entries
(masked, guided against the noise of the entry they refine). The composed
prediction is::

    eps_u + sum_global w_i (eps_i - eps_u) + sum_local w_j M_j (eps_j - eps_base(j))
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from glod.denoiser.condition import NULL, Condition
from glod.errors import IncompletePredictionsError, InvalidArgumentError

DEFAULT_WEIGHT = 7.5


@dataclass(frozen=True, order=True)
class Box:
    """Axis-aligned box in normalized image coordinates, ``x`` to the right, ``y`` down."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidArgumentError(f"non-finite box {vals}")
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise InvalidArgumentError(f"box {vals} is empty or leaves the unit square")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    def pixel_slices(self, height: int, width: int) -> tuple[slice, slice]:
        """Rows and columns whose pixel centres fall in the half-open box."""
        def span(lo, hi, n):
            start = int(np.ceil(lo * n - 0.5))
            stop = int(np.ceil(hi * n - 0.5))
            return slice(max(start, 0), min(stop, n))

        return span(self.y0, self.y1, height), span(self.x0, self.x1, width)


def box_mask(box: Box, height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width))
    rows, cols = box.pixel_slices(height, width)
    mask[rows, cols] = 1.0
    return mask


def check_mask(mask, spatial_shape=None) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidArgumentError(f"region masks are (H, W) grids, got shape {m.shape}")
    if spatial_shape is not None and m.shape != tuple(spatial_shape):
        raise InvalidArgumentError(f"mask shape {m.shape} does not match image {tuple(spatial_shape)}")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise InvalidArgumentError("mask values must be exactly 0 or 1")
    return m


def _same_shape(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _expand(mask: np.ndarray) -> np.ndarray:
    return mask[..., None]


def global_guidance(eps_cond, eps_uncond) -> np.ndarray:
    """Image-wide guidance ``eps_cond - eps_uncond``."""
    a, b = _same_shape(eps_cond, eps_uncond, "global_guidance")
    return a - b


def local_guidance(eps_local, eps_base, mask) -> np.ndarray:
    """Masked guidance ``mask * (eps_local - eps_base)``; exactly zero off the mask."""
    a, b = _same_shape(eps_local, eps_base, "local_guidance")
    m = check_mask(mask, a.shape[-3:-1])
    return _expand(m) * (a - b)


@dataclass(frozen=True)
class EntryRef:
    layer: int
    index: int


UNCONDITIONAL = EntryRef(0, 0)


@dataclass(frozen=True, eq=False)
class Entry:
    condition: Condition
    weight: float = DEFAULT_WEIGHT
    mask: np.ndarray | None = None
    base: EntryRef = UNCONDITIONAL

    def __post_init__(self):
        if self.mask is not None:
            m = check_mask(self.mask).copy()
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)

    @property
    def is_local(self) -> bool:
        return self.mask is not None


@dataclass(frozen=True)
class Layer:
    entries: tuple[Entry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))


@dataclass(frozen=True)
class LayerStack:
    """Ordered layers; layer 0 is the unconditional slot and is added if omitted."""

    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        layers = [ly if isinstance(ly, Layer) else Layer(tuple(ly)) for ly in self.layers]
        if not layers or [e.condition for e in layers[0].entries] != [NULL]:
            layers.insert(0, Layer((Entry(NULL, 0.0),)))
        object.__setattr__(self, "layers", tuple(layers))
        self._validate()

    @classmethod
    def of(cls, *layers: Sequence[Entry]) -> LayerStack:
        return cls(tuple(Layer(tuple(ly)) for ly in layers))

    def _validate(self):
        l0 = self.layers[0].entries
        if len(l0) != 1 or l0[0].condition != NULL or l0[0].is_local:
            raise InvalidArgumentError("layer 0 must hold exactly the unmasked null condition")
        shapes = set()
        for li, layer in enumerate(self.layers[1:], start=1):
            for ei, e in enumerate(layer.entries):
                if e.condition.is_null:
                    raise InvalidArgumentError(f"entry ({li},{ei}) uses the null condition")
                if not e.is_local and e.base != UNCONDITIONAL:
                    raise InvalidArgumentError(f"global entry ({li},{ei}) must use the unconditional base")
                if e.is_local:
                    shapes.add(e.mask.shape)
                b = e.base
                if not 0 <= b.layer < li:
                    raise InvalidArgumentError(f"entry ({li},{ei}) base must point to a lower layer")
                if not 0 <= b.index < len(self.layers[b.layer].entries):
                    raise InvalidArgumentError(f"entry ({li},{ei}) references missing base {b}")
        if len(shapes) > 1:
            raise InvalidArgumentError(f"local masks disagree on shape: {sorted(shapes)}")

    def entry(self, ref: EntryRef) -> Entry:
        return self.layers[ref.layer].entries[ref.index]

    def refs(self):
        """Every non-null entry reference, bottom layer first."""
        for li, layer in enumerate(self.layers[1:], start=1):
            for ei in range(len(layer.entries)):
                yield EntryRef(li, ei)

    def global_refs(self) -> list[EntryRef]:
        return [r for r in self.refs() if not self.entry(r).is_local]

    def local_refs(self) -> list[EntryRef]:
        return [r for r in self.refs() if self.entry(r).is_local]

    def conditions(self) -> list[Condition]:
        """Distinct conditions in the stack, null first."""
        return list(dict.fromkeys([NULL] + [self.entry(r).condition for r in self.refs()]))

    def without_locals(self) -> LayerStack:
        return LayerStack.of(*[[self.entry(r) for r in self.global_refs()]])

    @property
    def is_empty(self) -> bool:
        return not any(True for _ in self.refs())


def assign_base(stack: LayerStack, predictions: Mapping[Condition, np.ndarray]) -> dict[EntryRef, np.ndarray]:
    """Base noise for each entry: the unconditional prediction for global
    entries, the prediction of the referenced lower entry for local ones."""
    missing = [c for c in stack.conditions() if c not in predictions]
    if missing:
        raise IncompletePredictionsError(f"no prediction for {', '.join(map(str, missing))}")
    return {r: predictions[stack.entry(stack.entry(r).base).condition] for r in stack.refs()}


def guidance_terms(stack: LayerStack, predictions, eps_uncond) -> tuple[np.ndarray, np.ndarray]:
    """Return the summed global and local guidance ``(g_g, g_l)``.

    Global entries are summed in a canonical order so that any permutation
    of them yields a bit-identical result.
    """
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    bases = assign_base(stack, predictions)
    g_global = None
    for r in sorted(stack.global_refs(), key=lambda r: (stack.entry(r).condition, stack.entry(r).weight)):
        e = stack.entry(r)
        term = e.weight * global_guidance(predictions[e.condition], eps_uncond)
        g_global = term if g_global is None else g_global + term
    g_local = None
    for r in stack.local_refs():
        e = stack.entry(r)
        term = e.weight * local_guidance(predictions[e.condition], bases[r], e.mask)
        g_local = term if g_local is None else g_local + term
    zeros = np.zeros_like(eps_uncond)
    return (zeros if g_global is None else g_global), (zeros if g_local is None else g_local)


def compose(stack: LayerStack, predictions: Mapping[Condition, np.ndarray], eps_uncond) -> np.ndarray:
    """Composed noise estimate ``eps_u + g_g + g_l``.

    With no local entries this is the weighted sum of classifier-free
    guidance terms; with an empty stack it is ``eps_uncond`` itself.
    """
    g_global, g_local = guidance_terms(stack, predictions, eps_uncond)
    return _combine(stack, np.asarray(eps_uncond, dtype=np.float64), g_global, g_local)


def _combine(stack: LayerStack, eps_uncond, g_global, g_local) -> np.ndarray:
    # absent terms are skipped rather than added as zeros so reductions stay bit-exact
    eps = eps_uncond
    if stack.global_refs():
        eps = eps + g_global
    if stack.local_refs():
        eps = eps + g_local
    return eps.copy() if eps is eps_uncond else eps
