"""Command-line front end.

Subcommands: ``sample``, ``testset``, ``score``, ``train`` and
``compose-demo``. Exit status is 0 on success, 2 for bad input (unparsable
flags, missing or malformed files) and 3 when a chain diverges. The
``GLOD_THREADS`` environment variable caps the per-seed worker pool.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from glod import __version__
from glod.denoiser import (
    AnalyticMixtureDenoiser,
    TrainConfig,
    load,
    save,
    train_toy,
    two_color_dataset,
)
from glod.denoiser.serialization import atomic_write_bytes
from glod.errors import GlodError, NumericDivergenceError
from glod.imageio import read_pnm, write_png, write_pnm
from glod.layout import LayoutConfig
from glod.sampler import sample_seeds
from glod.scene import (
    Template,
    ToyWorld,
    generate_testset,
    load_scene,
    metrics_csv,
    score_case,
)
from glod.scene.format import dumps as dump_scene
from glod.scene.run import METHODS, config_for
from glod.scene.testset import make_case, world_oracle
from glod.schedule import ScheduleKind, StepRule, make_schedule

log = logging.getLogger("glod")

DEFAULTS = {"steps": 50, "schedule": ScheduleKind.KARRAS_RHO7.value, "step_rule": StepRule.EULER.value, "num_seeds": 1}


class UsageError(GlodError):
    """Bad command-line input that argparse itself cannot detect."""


def write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError("need at least one non-negative seed")
    return seeds


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schedule(args, stored=None):
    """Flags win over the backend's stored schedule, which wins over defaults."""
    src = {}
    if args.steps is None and args.schedule is None and stored is not None:
        s = stored
        src["schedule"] = "backend"
    else:
        steps = args.steps if args.steps is not None else (stored.num_steps if stored else DEFAULTS["steps"])
        kind = args.schedule or DEFAULTS["schedule"]
        s = make_schedule(steps, kind)
        src["schedule"] = "flags" if (args.steps is not None or args.schedule) else "default"
    rule = args.step_rule or (stored.step_rule.value if stored is not None and args.schedule is None else DEFAULTS["step_rule"])
    src["step_rule"] = "flags" if args.step_rule else src["schedule"]
    return s.with_rule(rule), src


def _load_backend(path, args):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"backend file not found: {path}")
    raw = load(path)
    stored = getattr(raw, "schedule", None)
    s, src = _schedule(args, stored)
    backend = load(path, s)
    return backend, s, src


def _layout_config(args) -> LayoutConfig:
    return LayoutConfig(enabled=not args.no_layout)


def cmd_sample(args) -> int:
    scene_path = Path(args.scene)
    if not scene_path.is_file():
        raise UsageError(f"scene file not found: {scene_path}")
    scene = load_scene(scene_path)
    d, s, sources = _load_backend(args.backend, args)
    if args.seeds is not None:
        seeds, sources["seeds"] = args.seeds, "flags"
    else:
        n = args.num_seeds or DEFAULTS["num_seeds"]
        seeds, sources["seeds"] = [scene.seed + k for k in range(n)], "scene"
    for w in scene.warnings():
        log.warning("%s: %s", scene_path, w)
    out = _out_dir(args.out)
    cfg, sampler = config_for(scene, args.method, s, _layout_config(args))
    results = sample_seeds(cfg, d, seeds, sampler)
    for sd, (x, trace) in zip(seeds, results):
        write_pnm(out / f"image_seed{sd}.ppm", x, f"glod {args.method} seed={sd}")
        if args.png:
            write_png(out / f"image_seed{sd}.png", x)
        atomic_write_bytes(out / f"sample_seed{sd}.npy", _npy_bytes(x))
        write_text(out / f"trace_seed{sd}.csv", trace.to_csv())
    case_id = scene.name or scene_path.stem
    write_text(out / "metrics.csv", metrics_csv([(case_id, None, args.method, sd) for sd in seeds]))
    manifest = {
        "scene": str(scene_path),
        "backend": str(args.backend),
        "output": str(out),
        "method": args.method,
        "seeds": seeds,
        "schedule": {"kind": s.kind, "num_steps": s.num_steps, "step_rule": cfg.rule.value},
        "layout": asdict(cfg.layout),
        "image_size": list(scene.image_size),
        "sources": sources,
        "scene_document": scene.to_json(),
        "version": __version__,
    }
    write_json(out / "manifest.json", manifest)
    print(f"wrote {len(seeds)} image(s) to {out}")
    return 0


def _npy_bytes(x) -> bytes:
    import io

    buf = io.BytesIO()
    np.save(buf, np.asarray(x, dtype=np.float64), allow_pickle=False)
    return buf.getvalue()


def cmd_testset(args) -> int:
    template = Template()
    if args.template:
        tpath = Path(args.template)
        if not tpath.is_file():
            raise UsageError(f"template file not found: {tpath}")
        template = Template.from_json(json.loads(tpath.read_text(encoding="utf-8")))
    cases = generate_testset(template, args.n, args.seed)
    out = _out_dir(args.out)
    world = ToyWorld(template) if args.backends else None
    index = {"template": template.to_json(), "seed": args.seed, "n": args.n, "cases": []}
    for case in cases:
        cdir = _out_dir(out / case.case_id)
        write_text(cdir / "full.json", dump_scene(case.full))
        write_text(cdir / "decomposed.json", dump_scene(case.decomposed))
        write_json(cdir / "case.json", {"case_id": case.case_id, "combo": list(case.combo)})
        if world is not None:
            save(cdir / "backend.glod", world.mixture_for(case))
        index["cases"].append({"case_id": case.case_id, "combo": list(case.combo)})
    write_json(out / "testset.json", index)
    print(f"wrote {len(cases)} case(s) to {out}")
    return 0


def _read_testset(path):
    path = Path(path)
    if path.is_dir():
        path = path / "testset.json"
    if not path.is_file():
        raise UsageError(f"test set index not found: {path}")
    obj = json.loads(path.read_text(encoding="utf-8"))
    template = Template.from_json(obj["template"])
    cases = [make_case(c["case_id"], tuple(c["combo"]), template, int(obj["seed"]) + k) for k, c in enumerate(obj["cases"])]
    return template, cases


def _seed_of(path: Path) -> int:
    return int(path.stem.removeprefix("image_seed"))


def cmd_score(args) -> int:
    template, cases = _read_testset(args.testset)
    oracle = world_oracle(ToyWorld(template), args.tau)
    images = Path(args.images)
    if not images.is_dir():
        raise UsageError(f"image directory not found: {images}")
    rows = []
    for case in cases:
        files = sorted((images / case.case_id).glob("image_seed*.ppm"), key=_seed_of)
        for f in files:
            rows.append((case.case_id, score_case(read_pnm(f), case, oracle), args.method, _seed_of(f)))
    if not rows:
        raise UsageError(f"no image_seed*.ppm files under {images}/<case_id>/")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_text(out, metrics_csv(rows))
    print(f"scored {len(rows)} image(s) into {out}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args.out)
    s = make_schedule(args.steps_t, args.schedule or DEFAULTS["schedule"])
    data = two_color_dataset(args.n, seed=args.seed)
    cfg = TrainConfig(steps=args.iters, lr=args.lr, cond_dropout=args.cond_dropout, seed=args.seed)
    model = train_toy(data, s, cfg)
    save(out / "weights.glod", model)
    write_json(out / "report.json", model.report)
    print(f"held-out MSE {model.report['initial_heldout_mse']:.4f} -> {model.report['heldout_mse']:.4f}")
    return 0


def cmd_compose_demo(args) -> int:
    """Sample one template case with every method on the toy world and score it."""
    template = Template()
    case = generate_testset(template, 1, args.seed)[0]
    world = ToyWorld(template)
    s, _ = _schedule(args)
    d = AnalyticMixtureDenoiser(world.mixture_for(case), s)
    oracle = world_oracle(world)
    out = _out_dir(args.out)
    runs = [
        ("glod", case.decomposed),
        ("locals-removed", case.decomposed),
        ("layout-only", case.full),
        ("baseline-cfg", case.full),
    ]
    rows, strip = [], []
    for method, scene in runs:
        cfg, sampler = config_for(scene, method, s, _layout_config(args))
        x, trace = sampler(replace(cfg, seed=args.seed), d)
        write_pnm(out / f"{method}.ppm", x, f"glod {method} seed={args.seed}")
        write_text(out / f"{method}_trace.csv", trace.to_csv())
        rows.append((case.case_id, score_case(x, case, oracle), method, args.seed))
        strip.append(x)
    gap = np.ones((template.image_size[0], 1, 3))
    write_pnm(out / "strip.ppm", np.concatenate([v for x in strip for v in (x, gap)][:-1], axis=1), "glod demo strip")
    write_text(out / "metrics.csv", metrics_csv(rows))
    write_text(out / "full.json", dump_scene(case.full))
    write_text(out / "decomposed.json", dump_scene(case.decomposed))
    for case_id, sc, method, _ in rows:
        print(f"{method:15s} S_g={sc.S_g:6.2f} S_ls={sc.S_ls:6.2f} S_lo={sc.S_lo:6.2f} S_i={sc.S_i:6.2f}")
    return 0


def _schedule_flags(p):
    p.add_argument("--steps", type=int, help="number of diffusion steps T (default 50)")
    p.add_argument("--schedule", choices=[k.value for k in ScheduleKind], help="noise schedule (default karras-rho7)")
    p.add_argument("--step-rule", choices=[r.value for r in StepRule], help="reverse step rule (default euler)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glod", description="Layered global/local guidance for compositional sampling.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sample", help="sample a scene file with a backend")
    sp.add_argument("--scene", required=True, help="glod-scene/1 JSON file")
    sp.add_argument("--backend", required=True, help="GLODDN1 backend file")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--method", choices=METHODS, default="glod")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--seeds", type=_seeds, help="comma-separated seeds")
    g.add_argument("--num-seeds", type=int, help="use the scene seed and the next n-1 seeds")
    sp.add_argument("--no-layout", action="store_true", help="disable layout control")
    sp.add_argument("--png", action="store_true", help="also write PNG files (needs Pillow)")
    _schedule_flags(sp)
    sp.set_defaults(func=cmd_sample)

    tp = sub.add_parser("testset", help="generate template test-set scenes")
    tp.add_argument("--out", required=True)
    tp.add_argument("--n", type=int, default=2500)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--template", help="template JSON (default: built-in)")
    tp.add_argument("--no-backends", dest="backends", action="store_false", help="skip per-case toy backends")
    tp.set_defaults(func=cmd_testset)

    cp = sub.add_parser("score", help="score sampled images of a test set")
    cp.add_argument("--testset", required=True, help="test-set directory or its testset.json")
    cp.add_argument("--images", required=True, help="directory holding <case_id>/image_seed*.ppm")
    cp.add_argument("--out", required=True, help="CSV file to write")
    cp.add_argument("--method", default="glod", help="method label for the CSV")
    cp.add_argument("--tau", type=float, default=0.15, help="oracle colour tolerance")
    cp.set_defaults(func=cmd_score)

    rp = sub.add_parser("train", help="train the toy MLP on the bundled two-colour data")
    rp.add_argument("--out", required=True)
    rp.add_argument("--iters", type=int, default=2000, help="optimizer steps")
    rp.add_argument("--lr", type=float, default=2e-3)
    rp.add_argument("--n", type=int, default=512, help="dataset size")
    rp.add_argument("--cond-dropout", type=float, default=0.1)
    rp.add_argument("--seed", type=int, default=0)
    rp.add_argument("--steps", dest="steps_t", type=int, default=50, help="diffusion steps T")
    rp.add_argument("--schedule", choices=[k.value for k in ScheduleKind])
    rp.set_defaults(func=cmd_train)

    dp = sub.add_parser("compose-demo", help="run every method on one toy test case")
    dp.add_argument("--out", required=True)
    dp.add_argument("--seed", type=int, default=0)
    dp.add_argument("--no-layout", action="store_true")
    _schedule_flags(dp)
    dp.set_defaults(func=cmd_compose_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericDivergenceError as e:
        print(f"glod: error: {e}", file=sys.stderr)
        return 3
    except (GlodError, ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        print(f"glod: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
