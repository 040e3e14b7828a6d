"""Template test set and the toy world that renders it.

Each case pairs a *full* scene (one merged condition naming the interaction
and both attributes) with a *decomposed* scene (an interaction-level global
condition plus one local condition per object, each inside its box). The
layout is fixed: subject on the left, object on the right.

The toy world turns a case into a Gaussian mixture over small RGB grids:
one component per (interaction, subject attribute, object attribute), with
the background painted in the interaction's colour and each box painted in
its object's attribute colour. The merged condition is read as a bag of
attributes, so it selects both the intended and the swapped colouring. That
is the attribute-binding ambiguity a single long prompt suffers from.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from glod.composer import DEFAULT_WEIGHT, Box
from glod.denoiser.analytic import MixtureSpec
from glod.denoiser.condition import Condition
from glod.errors import InvalidArgumentError
from glod.layout import LayoutTarget
from glod.scene.format import GlobalSpec, LocalSpec, Scene

SUBJECT_BOX = Box(0.125, 0.25, 0.5, 0.875)
OBJECT_BOX = Box(0.5, 0.25, 0.875, 0.875)

# well separated points of the RGB cube [-1, 1]^3, assigned in order
_PALETTE_POINTS = [
    (0.9, -0.9, -0.9),
    (-0.9, 0.9, -0.9),
    (-0.9, -0.9, 0.9),
    (0.9, 0.9, -0.9),
    (0.9, -0.9, 0.9),
    (-0.9, 0.9, 0.9),
    (0.9, 0.9, 0.9),
    (-0.9, -0.9, -0.9),
    (0.0, 0.0, 0.0),
    (0.0, 0.9, 0.0),
    (0.0, -0.9, 0.0),
    (0.9, 0.0, 0.0),
    (-0.9, 0.0, 0.0),
    (0.0, 0.0, 0.9),
    (0.0, 0.0, -0.9),
]


@dataclass(frozen=True)
class Template:
    subjects: tuple[str, ...] = ("man", "woman", "boy", "dog", "cat")
    objects: tuple[str, ...] = ("girl", "robot", "horse", "bear", "sheep")
    attributes: tuple[str, ...] = ("red", "green", "blue", "yellow", "magenta")
    interactions: tuple[str, ...] = ("talking_to", "walking_with", "playing_with", "looking_at", "holding")
    image_size: tuple[int, int, int] = (8, 8, 3)
    weight: float = DEFAULT_WEIGHT

    def __post_init__(self):
        for name in ("subjects", "objects", "attributes", "interactions"):
            pool = tuple(getattr(self, name))
            if not pool:
                raise InvalidArgumentError(f"template has no {name}")
            if len(set(pool)) != len(pool):
                raise InvalidArgumentError(f"template {name} contain duplicates")
            object.__setattr__(self, name, pool)
        object.__setattr__(self, "image_size", tuple(self.image_size))
        if len(self.attributes) < 2:
            raise InvalidArgumentError("need at least two attributes to tell subject from object")
        if set(self.attributes) & set(self.interactions):
            raise InvalidArgumentError("attribute and interaction tokens must differ")
        if self.image_size[2] != 3:
            raise InvalidArgumentError("the toy world renders RGB grids")

    def combinations(self) -> list[tuple[str, str, str, str, str]]:
        """Every ``(subject, object, subject_attr, object_attr, interaction)``."""
        return [
            (s, o, a_s, a_o, i)
            for s, o, a_s, a_o, i in itertools.product(
                self.subjects, self.objects, self.attributes, self.attributes, self.interactions
            )
            if s != o and a_s != a_o
        ]

    def to_json(self) -> dict:
        return {
            "subjects": list(self.subjects),
            "objects": list(self.objects),
            "attributes": list(self.attributes),
            "interactions": list(self.interactions),
            "image_size": list(self.image_size),
            "weight": self.weight,
        }

    @classmethod
    def from_json(cls, obj: dict) -> Template:
        return cls(
            tuple(obj["subjects"]),
            tuple(obj["objects"]),
            tuple(obj["attributes"]),
            tuple(obj["interactions"]),
            tuple(obj.get("image_size", (8, 8, 3))),
            float(obj.get("weight", DEFAULT_WEIGHT)),
        )


def global_condition(subject: str, obj: str, interaction: str) -> Condition:
    return Condition.token(interaction, subject, obj)


def local_condition(category: str, attribute: str) -> Condition:
    return Condition.token(category, attribute)


def full_condition(subject, obj, a_s, a_o, interaction) -> Condition:
    return Condition.token(interaction, subject, obj, a_s, a_o)


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    case_id: str
    full: Scene
    decomposed: Scene
    subject_box: Box = SUBJECT_BOX
    object_box: Box = OBJECT_BOX
    combo: tuple[str, ...] = ()

    def __post_init__(self):
        locs = self.decomposed.local_conditions
        if len(locs) != 2 or (locs[0].box, locs[1].box) != (self.subject_box, self.object_box):
            raise InvalidArgumentError("decomposed scene must hold the subject then the object local")

    @property
    def global_condition(self) -> Condition:
        return self.decomposed.global_conditions[0].condition

    @property
    def subject_condition(self) -> Condition:
        return self.decomposed.local_conditions[0].condition

    @property
    def object_condition(self) -> Condition:
        return self.decomposed.local_conditions[1].condition

    def swapped(self) -> TestCase:
        """The same case with subject and object roles exchanged."""
        d = self.decomposed
        lo_s, lo_o = d.local_conditions
        dec = Scene(d.global_conditions, (lo_o, lo_s), d.image_size, d.seed, d.layout, d.name)
        full = Scene(self.full.global_conditions, (), self.full.image_size, self.full.seed, tuple(reversed(self.full.layout)), self.full.name)
        return TestCase(self.case_id, full, dec, self.object_box, self.subject_box, _swap_combo(self.combo))


def make_case(case_id: str, combo, template: Template, seed: int = 0) -> TestCase:
    s, o, a_s, a_o, i = combo
    w = template.weight
    c_s, c_o = local_condition(s, a_s), local_condition(o, a_o)
    layout = (LayoutTarget(c_s, SUBJECT_BOX), LayoutTarget(c_o, OBJECT_BOX))
    full = Scene(
        (GlobalSpec(full_condition(s, o, a_s, a_o, i), w),),
        (),
        template.image_size,
        seed,
        layout,
        f"{case_id}-full",
    )
    decomposed = Scene(
        (GlobalSpec(global_condition(s, o, i), w),),
        (LocalSpec(c_s, SUBJECT_BOX, w, "global:0"), LocalSpec(c_o, OBJECT_BOX, w, "global:0")),
        template.image_size,
        seed,
        (),
        f"{case_id}-decomposed",
    )
    return TestCase(case_id, full, decomposed, SUBJECT_BOX, OBJECT_BOX, tuple(combo))


def generate_testset(template: Template | None = None, n: int = 2500, seed: int = 0) -> list[TestCase]:
    """Draw ``n`` cases from the template's cross product, deterministically.

    Cases are taken from a seeded permutation of the cross product without
    repetition; past its size the permutation is reshuffled and reused.
    Each case's scenes carry the per-case seed ``seed + index``.
    """
    template = template or Template()
    if n < 0:
        raise InvalidArgumentError("n must be non-negative")
    combos = template.combinations()
    if not combos:
        raise InvalidArgumentError("template cross product is empty")
    rng = np.random.default_rng(seed)
    order: list[int] = []
    while len(order) < n:
        order.extend(rng.permutation(len(combos)).tolist())
    width = max(4, len(str(max(n - 1, 0))))
    return [make_case(f"case_{k:0{width}d}", combos[idx], template, seed + k) for k, idx in enumerate(order[:n])]


class ToyWorld:
    """Colour palette and per-case mixtures for a template."""

    def __init__(self, template: Template | None = None, component_std: float = 0.1):
        self.template = template or Template()
        tokens = list(self.template.attributes) + list(self.template.interactions)
        if len(tokens) > len(_PALETTE_POINTS):
            raise InvalidArgumentError(f"the toy palette holds at most {len(_PALETTE_POINTS)} colours")
        self.palette = {tok: np.array(p) for tok, p in zip(tokens, _PALETTE_POINTS)}
        self.component_std = component_std

    def render(self, interaction: str, a_s: str, a_o: str, subject_box=SUBJECT_BOX, object_box=OBJECT_BOX) -> np.ndarray:
        H, W, C = self.template.image_size
        img = np.broadcast_to(self.palette[interaction], (H, W, C)).copy()
        for box, attr in ((subject_box, a_s), (object_box, a_o)):
            rows, cols = box.pixel_slices(H, W)
            img[rows, cols, :] = self.palette[attr]
        return img

    def mixture_for(self, case: TestCase) -> MixtureSpec:
        """Mixture over every colouring of the case's two objects and background."""
        s, o, a_s, a_o, i = case.combo
        t = self.template
        combos = list(itertools.product(t.interactions, t.attributes, t.attributes))
        means = np.stack([self.render(ii, xs, xo, case.subject_box, case.object_box) for ii, xs, xo in combos])
        K = len(combos)
        cmap: dict[Condition, list[int]] = {}
        for k, (ii, xs, xo) in enumerate(combos):
            cmap.setdefault(global_condition(s, o, ii), []).append(k)
            cmap.setdefault(local_condition(s, xs), []).append(k)
            cmap.setdefault(local_condition(o, xo), []).append(k)
        for ii in t.interactions:
            for x, y in itertools.permutations(t.attributes, 2):
                cmap[full_condition(s, o, x, y, ii)] = [
                    k for k, (jj, xs, xo) in enumerate(combos) if jj == ii and {xs, xo} == {x, y}
                ]
        return MixtureSpec(np.full(K, 1.0 / K), means, np.full(K, self.component_std**2), cmap)


def _swap_combo(combo):
    if not combo:
        return combo
    s, o, a_s, a_o, i = combo
    return (o, s, a_o, a_s, i)


def world_oracle(world: ToyWorld, tau: float = 0.15):
    from glod.scene.metrics import PaletteOracle

    return PaletteOracle(world.palette, tau)
