"""Scene files: global and local conditions with boxes, serialized as JSON.

Schema ``glod-scene/1``::

    {
      "format": "glod-scene/1",
      "name": "optional label",
      "image_size": [H, W, C],
      "seed": 0,
      "global": [{"condition": "talking_to[man,woman]", "weight": 7.5}],
      "local": [{"condition": "man[red]", "weight": 7.5,
                 "box": [x0, y0, x1, y1], "base": "global:0"}],
      "layout": [{"condition": "man[red]", "box": [x0, y0, x1, y1]}]
    }

Boxes are normalized, ``x`` to the right and ``y`` down. ``base`` is
``"null"``, ``"global:<i>"`` or ``"local:<j>"``. Conditions are written as
``category[attr,...]`` (``"null"`` for the unconditional one); the object form
``{"kind": ..., "category": ..., "attributes": [...]}`` is accepted on read.
``layout`` is optional; when empty, layout control targets the local entries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from glod.composer import (
    DEFAULT_WEIGHT,
    UNCONDITIONAL,
    Box,
    Entry,
    EntryRef,
    LayerStack,
    box_mask,
)
from glod.denoiser.condition import Condition
from glod.errors import FormatError, InvalidArgumentError
from glod.layout import LayoutTarget

SCENE_FORMAT = "glod-scene/1"


@dataclass(frozen=True)
class GlobalSpec:
    condition: Condition
    weight: float = DEFAULT_WEIGHT


@dataclass(frozen=True)
class LocalSpec:
    condition: Condition
    box: Box
    weight: float = DEFAULT_WEIGHT
    base: str = "global:0"


@dataclass(frozen=True)
class Scene:
    global_conditions: tuple[GlobalSpec, ...] = ()
    local_conditions: tuple[LocalSpec, ...] = ()
    image_size: tuple[int, int, int] = (8, 8, 3)
    seed: int = 0
    layout: tuple[LayoutTarget, ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "global_conditions", tuple(self.global_conditions))
        object.__setattr__(self, "local_conditions", tuple(self.local_conditions))
        object.__setattr__(self, "layout", tuple(self.layout))
        object.__setattr__(self, "image_size", tuple(int(n) for n in self.image_size))
        if len(self.image_size) != 3 or min(self.image_size) < 1:
            raise InvalidArgumentError(f"image_size must be (H, W, C), got {self.image_size}")
        self._depths()

    def _resolve(self, ref: str) -> tuple[str, int]:
        if ref == "null":
            return "null", 0
        kind, _, idx = ref.partition(":")
        pool = {"global": self.global_conditions, "local": self.local_conditions}.get(kind)
        if pool is None or not idx.isdigit() or int(idx) >= len(pool):
            raise InvalidArgumentError(f"unresolvable base reference {ref!r}")
        return kind, int(idx)

    def _depths(self) -> list[int]:
        """Stack layer of each local entry; raises on cycles or bad references."""
        depth: dict[int, int] = {}

        def visit(j, seen):
            if j in depth:
                return depth[j]
            if j in seen:
                raise InvalidArgumentError("local base references form a cycle")
            kind, i = self._resolve(self.local_conditions[j].base)
            d = 1 if kind == "null" else 2 if kind == "global" else visit(i, seen | {j}) + 1
            depth[j] = d
            return d

        return [visit(j, frozenset()) for j in range(len(self.local_conditions))]

    def warnings(self) -> list[str]:
        """Non-fatal issues: overlapping local boxes and boxes too small to cover a pixel."""
        H, W, _ = self.image_size
        out = []
        masks = [box_mask(lc.box, H, W) for lc in self.local_conditions]
        for j, m in enumerate(masks):
            if not m.any():
                out.append(f"local:{j} box covers no pixel centre")
            for k in range(j):
                if (m * masks[k]).any():
                    out.append(f"local:{k} and local:{j} masks overlap; their guidance adds up")
        return out

    def layer_stack(self, include_locals: bool = True) -> LayerStack:
        H, W, _ = self.image_size
        layer_of = {("global", i): EntryRef(1, i) for i in range(len(self.global_conditions))}
        layer_of[("null", 0)] = UNCONDITIONAL
        layers: list[list[Entry]] = [[Entry(g.condition, g.weight) for g in self.global_conditions]]
        if include_locals:
            depths = self._depths()
            pending = sorted(range(len(self.local_conditions)), key=lambda j: depths[j])
            for j in pending:
                lc = self.local_conditions[j]
                d = depths[j]
                while len(layers) < d:
                    layers.append([])
                base = layer_of[self._resolve(lc.base)]
                layers[d - 1].append(Entry(lc.condition, lc.weight, box_mask(lc.box, H, W), base))
                layer_of[("local", j)] = EntryRef(d, len(layers[d - 1]) - 1)
        return LayerStack.of(*layers)

    def layout_targets(self) -> tuple[LayoutTarget, ...]:
        if self.layout:
            return self.layout
        return tuple(LayoutTarget(lc.condition, lc.box) for lc in self.local_conditions)

    def conditions(self) -> list[Condition]:
        cs = [g.condition for g in self.global_conditions] + [lc.condition for lc in self.local_conditions]
        return list(dict.fromkeys(cs + [tg.condition for tg in self.layout]))

    def to_json(self) -> dict:
        return {
            "format": SCENE_FORMAT,
            "name": self.name,
            "image_size": list(self.image_size),
            "seed": self.seed,
            "global": [{"condition": str(g.condition), "weight": g.weight} for g in self.global_conditions],
            "local": [
                {"condition": str(lc.condition), "weight": lc.weight, "box": lc.box.as_list(), "base": lc.base}
                for lc in self.local_conditions
            ],
            "layout": [{"condition": str(tg.condition), "box": tg.box.as_list()} for tg in self.layout],
        }

    @classmethod
    def from_json(cls, obj: dict) -> Scene:
        if not isinstance(obj, dict) or obj.get("format") != SCENE_FORMAT:
            raise FormatError(f"expected a {SCENE_FORMAT} document")
        try:
            return cls(
                global_conditions=tuple(
                    GlobalSpec(Condition.from_json(g["condition"]), float(g.get("weight", DEFAULT_WEIGHT)))
                    for g in obj.get("global", [])
                ),
                local_conditions=tuple(
                    LocalSpec(
                        Condition.from_json(lc["condition"]),
                        Box(*map(float, lc["box"])),
                        float(lc.get("weight", DEFAULT_WEIGHT)),
                        str(lc.get("base", "global:0")),
                    )
                    for lc in obj.get("local", [])
                ),
                image_size=tuple(obj["image_size"]),
                seed=int(obj.get("seed", 0)),
                layout=tuple(
                    LayoutTarget(Condition.from_json(tg["condition"]), Box(*map(float, tg["box"])))
                    for tg in obj.get("layout", [])
                ),
                name=str(obj.get("name", "")),
            )
        except FormatError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"invalid scene: {e}") from None


def dumps(scene: Scene) -> str:
    return json.dumps(scene.to_json(), indent=2, sort_keys=True) + "\n"


def loads(text: str) -> Scene:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"scene is not valid JSON: {e}") from None
    return Scene.from_json(obj)


def load_scene(path) -> Scene:
    return loads(Path(path).read_text(encoding="utf-8"))


def save_scene(path, scene: Scene):
    Path(path).write_text(dumps(scene), encoding="utf-8")
