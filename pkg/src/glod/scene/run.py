"""Turn a scene plus a method name into a sampler configuration."""

from __future__ import annotations

from dataclasses import replace

from glod.errors import InvalidArgumentError
from glod.layout import LayoutConfig
from glod.sampler import SamplerConfig, baseline_sample, glod_sample
from glod.scene.format import Scene
from glod.schedule import Schedule

METHODS = ("glod", "baseline-cfg", "layout-only", "locals-removed")


def config_for(scene: Scene, method: str, schedule: Schedule, layout: LayoutConfig | None = None, **overrides):
    """Return ``(SamplerConfig, sampler)`` for one of :data:`METHODS`.

    ``glod`` uses every entry; ``locals-removed`` drops the local entries;
    ``baseline-cfg`` and ``layout-only`` run classifier-free guidance on the
    scene's single global condition, without and with layout control.
    """
    if method not in METHODS:
        raise InvalidArgumentError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    layout = layout or LayoutConfig()
    if method in ("baseline-cfg", "layout-only"):
        if len(scene.global_conditions) != 1:
            raise InvalidArgumentError(f"method {method} needs exactly one global condition")
        stack = scene.layer_stack(include_locals=False)
        sampler = baseline_sample
        if method == "baseline-cfg":
            layout = replace(layout, enabled=False)
    else:
        stack = scene.layer_stack(include_locals=method == "glod")
        sampler = glod_sample
    targets = scene.layout_targets() if layout.enabled else ()
    cfg = SamplerConfig(schedule, stack, scene.image_size, targets, layout, scene.seed, **overrides)
    return cfg, sampler
