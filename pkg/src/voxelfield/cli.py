"""Command-line entry point: preprocess | render | project | train | bench | gradcheck."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError


def _vec3(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return tuple(float(p) for p in parts)


def _res(text: str) -> tuple[int, int]:
    try:
        w, h = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return w, h


def _overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _camera(args, default_res=(64, 64)):
    from .camera import CameraPose
    w, h = args.res or default_res
    return CameraPose(args.eye, args.lookat, up=args.up, fov=np.deg2rad(args.fov), width=w, height=h)


def _add_camera_args(p):
    p.add_argument("--eye", type=_vec3, required=True, help="camera position x,y,z")
    p.add_argument("--lookat", type=_vec3, required=True, help="look-at point x,y,z")
    p.add_argument("--up", type=_vec3, default=(0.0, 1.0, 0.0))
    p.add_argument("--fov", type=float, default=60.0, help="vertical field of view, degrees")
    p.add_argument("--res", type=_res, default=None, help="WIDTHxHEIGHT")


def cmd_preprocess(args) -> int:
    from .world import load_world, save_world, shell_extract
    world = load_world(args.input)
    shell = shell_extract(world, args.thickness)
    save_world(shell, args.output)
    print(f"occupancy before={world.occupancy:.4%} ({world.K} voxels) "
          f"after={shell.occupancy:.4%} ({shell.K} voxels)")
    return 0


def cmd_render(args) -> int:
    from .io import load_checkpoint, write_depth, write_rgb, write_seg
    from .model import style_code
    from .render import render_frame
    from .world import load_world

    world = load_world(args.world)
    store, cfg, _ = load_checkpoint(args.checkpoint)
    if args.no_refiner:
        cfg = cfg.replace(use_refiner=False)
    if store.table.dims != world.dims:
        raise ValueError("checkpoint was trained on a world with different dims")
    camera = _camera(args)
    res = render_frame(world, store, camera, style_code(cfg, args.style_seed), cfg,
                       n_samples=args.samples or cfg.samples_eval, seed=args.seed)
    prefix = args.out
    write_rgb(f"{prefix}_rgb.png", res.frames.rgb)
    write_depth(f"{prefix}_depth.png", res.frames.depth, cfg.d_max)
    write_seg(f"{prefix}_seg.png", res.frames.seg)
    print(f"wrote {prefix}_rgb.png {prefix}_depth.png {prefix}_seg.png")
    return 0


def cmd_project(args) -> int:
    from .io import write_depth, write_seg
    from .labels import label_entropy
    from .render import project_labels
    from .world import load_world

    world = load_world(args.world)
    camera = _camera(args)
    seg, depth = project_labels(world, camera)
    hit = np.isfinite(depth)
    mean_depth = float(depth[hit].mean()) if hit.any() else float("nan")
    write_seg(f"{args.out}_seg.png", seg)
    write_depth(f"{args.out}_depth.png", depth, Config().d_max)
    print(f"mean_depth={mean_depth:.4f} entropy={label_entropy(seg):.4f} hit_fraction={hit.mean():.4f}")
    return 0


def cmd_train(args) -> int:
    from .trainer import format_metrics, train
    from .world import load_world

    overrides = _overrides(args.set)
    if args.iterations is not None:
        overrides["iterations"] = str(args.iterations)
    cfg = Config.load(args.config, overrides)
    world = load_world(args.world)

    def echo(record):
        if not args.quiet:
            print(format_metrics(record), flush=True)

    result = train(world, cfg, args.out, callback=echo)
    last = result.metrics[-1] if result.metrics else {}
    print(f"done: {len(result.metrics)} iterations, final total={last.get('total', float('nan')):.6g}, "
          f"checkpoint={Path(args.out) / 'checkpoint.vfc'}")
    return 0


def cmd_bench(args) -> int:
    import numba

    from .bench import bench_traverse
    from .fixtures import random_world
    from .world import load_world

    cfg = Config.load(overrides={})
    numba.set_num_threads(max(1, min(cfg.threads, numba.config.NUMBA_NUM_THREADS)))
    world = load_world(args.world) if args.world else random_world((32, 32, 32), 0.2, args.seed)
    r = bench_traverse(world, args.rays, args.seed, verify=not args.no_verify)
    line = f"traverse rays={r.rays} seconds={r.seconds:.4f} rays_per_second={r.rays_per_second:.0f}"
    if r.check is not None:
        line += (f" oracle_mismatches={r.check.mismatched_samples}"
                 f" bad_boundaries={r.check.bad_boundaries}")
    print(line)
    return 0 if r.check is None or r.check.ok else 1


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, full_gradcheck
    from .world import load_world

    world = load_world(args.world) if args.world else None
    reports = full_gradcheck(world, per_tensor=args.per_tensor, seed=args.seed)
    worst = 0.0
    for rep in reports:
        print(f"{rep.group:10s} checked={rep.checked:4d} max_rel_error={rep.max_rel_error:.3e}")
        worst = max(worst, rep.max_rel_error)
    status = "PASS" if worst < TOLERANCE else "FAIL"
    print(f"{status} max_rel_error={worst:.3e} tolerance={TOLERANCE:.0e}")
    return 0 if worst < TOLERANCE else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxelfield", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="keep a thin shell of surface voxels")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--thickness", type=int, default=Config.shell_thickness)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("render", help="render rgb/depth/seg PNGs from a checkpoint")
    p.add_argument("world")
    p.add_argument("checkpoint")
    _add_camera_args(p)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--style-seed", type=int, default=None)
    p.add_argument("--seed", type=int, default=0, help="sample jitter seed")
    p.add_argument("--no-refiner", action="store_true", help="bypass the image-space CNN")
    p.add_argument("--out", default="render")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("project", help="project voxel labels to a segmentation map")
    p.add_argument("world")
    _add_camera_args(p)
    p.add_argument("--out", default="project")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("train", help="train against the flat-shaded target renderer")
    p.add_argument("world")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--out", required=True, help="checkpoint/metrics directory")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="benchmarks")
    p.add_argument("target", choices=["traverse"])
    p.add_argument("--world", default=None)
    p.add_argument("--rays", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-verify", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--world", default=None)
    p.add_argument("--per-tensor", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic for any failure
        print(f"voxelfield {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
