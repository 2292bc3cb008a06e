"""Command line interface.

Subcommands: gen-scenes, train, plan, eval, heatmap, stats. All randomness is
seeded, artifacts carry the config hash and no timestamps, so identical
invocations produce identical bytes. Exit codes: 0 success, 1 runtime failure,
2 usage error (argparse).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import (ConfigError, bin_from_config, config_hash,
                     controller_from_config, gripper_from_config, load_config,
                     loop_from_config, spec_from_config)
from .dataset import read_records
from .heightmap import HeightmapError, _write_pgm, load_heightmap, save_heightmap
from .loop import EvalConfig, LoopError, evaluate_grasp_rate, run_training
from .network import ModelFormatError, RewardModel
from .policy import PolicyError, infer_grid, plan_at, plan_grasp, resolve_workers
from .scene import SceneError, render_heightmap, sample_scene
from .grasp import GraspPrecondition

LOCK_NAME = ".lock"


class CliError(RuntimeError):
    pass


class OutputLock:
    """Guards an output directory against concurrent writers."""

    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, LOCK_NAME)

    def __enter__(self):
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        if os.path.exists(self.path):
            raise CliError(f"output directory is locked by {self.path}; "
                           "remove the file if no other run is active")
        with open(self.path, "w") as f:
            f.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        if os.path.exists(self.path):
            os.remove(self.path)
        return False


def _emit(obj, compact=False):
    if compact:
        print(json.dumps(obj, sort_keys=True))
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))


def _load_model(path: str) -> RewardModel:
    if not os.path.exists(path):
        raise CliError(f"model file not found: {path}")
    return RewardModel.load(path)


def cmd_gen_scenes(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    bin_geom = bin_from_config(cfg)
    rng = np.random.default_rng(cfg["seed"])
    with OutputLock(args.out):
        os.makedirs(args.out, exist_ok=True)
        for i in range(args.count):
            scene = sample_scene(args.objects, rng, bin_geom)
            base = os.path.join(args.out, f"scene_{i:04d}")
            scene.save(base + ".json")
            hm = render_heightmap(scene, px=cfg["scene"]["map_px"],
                                  resolution=cfg["scene"]["resolution"])
            save_heightmap(hm, base + "_height")
        manifest = {"count": args.count, "objects": args.objects,
                    "seed": cfg["seed"], "config_hash": config_hash(cfg)}
        with open(os.path.join(args.out, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
    _emit(manifest)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.attempts is not None:
        cfg["loop"]["attempts"] = args.attempts
    loop_cfg = loop_from_config(cfg)
    with OutputLock(args.out):
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "config_resolved.json"), "w") as f:
            json.dump(cfg, f, indent=2, sort_keys=True)
            f.write("\n")
        summary = run_training(
            args.out, loop_cfg, spec=spec_from_config(cfg),
            grip=gripper_from_config(cfg), bin_geom=bin_from_config(cfg),
            ctrl_cfg=controller_from_config(cfg), seed=cfg["seed"],
            resume=args.resume, config_hash=config_hash(cfg))
    _emit(summary)
    return 0


def _write_heatmap(probs: np.ndarray, out_base: str) -> None:
    """Probabilities (h, w) in [0, 1] -> 8-bit PNG and 16-bit raw PGM."""
    from PIL import Image
    arr = np.clip(probs, 0.0, 1.0)
    png = (np.round(arr * 255)).astype(np.uint8)
    base = out_base[:-4] if out_base.endswith(".png") else out_base
    Image.fromarray(png, mode="L").save(base + ".png")
    _write_pgm(base + ".pgm", np.round(arr * 65535).astype(np.uint16), 65535)


def cmd_plan(args) -> int:
    cfg = load_config(args.config)
    model = _load_model(args.model)
    grip = gripper_from_config(cfg)
    ctrl = controller_from_config(cfg)
    hm = load_heightmap(args.map)
    rng = np.random.default_rng(args.seed)
    adaption = args.adaption == "on"
    workers = resolve_workers(args.workers)

    t0 = time.perf_counter()
    if args.at is not None:
        parts = [p.strip() for p in args.at.split(",")]
        if len(parts) not in (3, 4):
            raise CliError("--at needs x,y,a[,m]")
        x, y, a = (float(p) for p in parts[:3])
        prim = int(parts[3]) if len(parts) == 4 else None
        t_inf0 = time.perf_counter()
        result = plan_at(model, hm, grip, x, y, a, prim, ctrl, adaption)
        t_inf = time.perf_counter() - t_inf0
        rmap = None
    else:
        t_inf0 = time.perf_counter()
        rmap = infer_grid(model, hm, n_rot=args.n_rot, workers=workers)
        t_inf = time.perf_counter() - t_inf0
        result = plan_grasp(model, hm, grip, rng, strategy="greedy",
                            n_rot=args.n_rot, workers=workers, ctrl_cfg=ctrl,
                            adaption=adaption, rmap=rmap)
    overall = time.perf_counter() - t0

    if args.heatmap is not None:
        if rmap is None:
            rmap = infer_grid(model, hm, n_rot=args.n_rot, workers=workers)
        k0 = args.n_rot // 2  # the unrotated view
        _write_heatmap(rmap.probs[k0].max(axis=-1), args.heatmap)

    if result.action is None:
        print(json.dumps({"error": "no_candidate"}, sort_keys=True),
              file=sys.stderr)
        return 1
    payload = result.action.to_dict()
    payload["probability"] = round(result.probability, 6)
    if args.timing:
        payload["timing_ms"] = {
            "inference": round(t_inf * 1e3, 3),
            "processing": round((overall - t_inf) * 1e3, 3),
            "overall": round(overall * 1e3, 3),
        }
    _emit(payload, compact=True)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if args.gripper is not None:
        cfg["gripper"]["kind"] = args.gripper
    grip = gripper_from_config(cfg)
    model = _load_model(args.model) if args.planner == "model" else None
    ecfg = EvalConfig(n_objects=args.objects, n_trials=args.trials,
                      budget_factor=args.budget_factor, planner=args.planner,
                      adaption=args.adaption == "on", n_rot=args.n_rot,
                      workers=resolve_workers(args.workers))
    res = evaluate_grasp_rate(ecfg, model, grip, seed=args.seed,
                              bin_geom=bin_from_config(cfg),
                              ctrl_cfg=controller_from_config(cfg))
    out = res.to_dict()
    out["planner"] = args.planner
    out["adaption"] = args.adaption
    out["config_hash"] = config_hash(cfg)
    _emit(out)
    return 0


def cmd_heatmap(args) -> int:
    model = _load_model(args.model)
    hm = load_heightmap(args.map)
    rmap = infer_grid(model, hm, n_rot=args.n_rot,
                      workers=resolve_workers(args.workers))
    if not 0 <= args.rotation < args.n_rot:
        raise CliError(f"rotation index out of range 0..{args.n_rot - 1}")
    probs = rmap.probs[args.rotation]
    if args.primitive is not None:
        probs = probs[:, :, args.primitive]
    else:
        probs = probs.max(axis=-1)
    _write_heatmap(probs, args.out)
    _emit({"out": args.out, "rotation": args.rotation,
           "primitive": args.primitive})
    return 0


def cmd_stats(args) -> int:
    records = read_records(args.dataset)
    if not records:
        raise CliError(f"no records in {args.dataset}")
    n = len(records)
    rewards = np.array([r["reward"] for r in records])
    prim = np.array([r["m"] for r in records])
    events: dict = {}
    for r in records:
        for e in r["events"]:
            events[e] = events.get(e, 0) + 1
    per_prim = {}
    for m in sorted(set(prim.tolist())):
        sel = prim == m
        per_prim[str(m)] = {"count": int(sel.sum()),
                            "success_rate": round(float(rewards[sel].mean()), 4)}
    out = {
        "rows": n,
        "successes": int(rewards.sum()),
        "success_rate": round(float(rewards.mean()), 4),
        "per_primitive": per_prim,
        "mean_abs_b": round(float(np.mean([abs(r["b"]) for r in records])), 6),
        "mean_abs_c": round(float(np.mean([abs(r["c"]) for r in records])), 6),
        "max_abs_b": round(float(np.max([abs(r["b"]) for r in records])), 6),
        "max_abs_c": round(float(np.max([abs(r["c"]) for r in records])), 6),
        "events": events,
    }
    _emit(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="graspgrid",
        description="Simulated flat-jaw grasp planning toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenes", help="sample scenes and render heightmaps")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--objects", type=int, default=5)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--config", default=None)
    g.set_defaults(fn=cmd_gen_scenes)

    t = sub.add_parser("train", help="run the self-supervised collection loop")
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--attempts", type=int, default=None)
    t.add_argument("--resume", action="store_true")
    t.set_defaults(fn=cmd_train)

    pl = sub.add_parser("plan", help="plan one grasp on a heightmap")
    pl.add_argument("--map", required=True)
    pl.add_argument("--model", required=True)
    pl.add_argument("--config", default=None)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--n-rot", type=int, default=20)
    pl.add_argument("--workers", type=int, default=None)
    pl.add_argument("--adaption", choices=("on", "off"), default="on")
    pl.add_argument("--at", default=None,
                    help="fixed planar pose x,y,a[,m] instead of grid search")
    pl.add_argument("--heatmap", default=None,
                    help="write PNG + 16-bit PGM of the best-primitive scores")
    pl.add_argument("--timing", action="store_true")
    pl.set_defaults(fn=cmd_plan)

    e = sub.add_parser("eval", help="measure grasp rate on sampled scenes")
    e.add_argument("--model", default=None)
    e.add_argument("--config", default=None)
    e.add_argument("--planner", choices=("model", "oracle", "random"),
                   default="model")
    e.add_argument("--objects", type=int, default=5)
    e.add_argument("--trials", type=int, default=20)
    e.add_argument("--budget-factor", type=float, default=2.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--adaption", choices=("on", "off"), default="on")
    e.add_argument("--gripper", choices=("normal", "short"), default=None)
    e.add_argument("--n-rot", type=int, default=20)
    e.add_argument("--workers", type=int, default=None)
    e.set_defaults(fn=cmd_eval)

    h = sub.add_parser("heatmap", help="export one rotation's score image")
    h.add_argument("--map", required=True)
    h.add_argument("--model", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--rotation", type=int, default=10)
    h.add_argument("--primitive", type=int, default=None)
    h.add_argument("--n-rot", type=int, default=20)
    h.add_argument("--workers", type=int, default=None)
    h.set_defaults(fn=cmd_heatmap)

    s = sub.add_parser("stats", help="summarize an attempt log")
    s.add_argument("--dataset", required=True)
    s.set_defaults(fn=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ConfigError, SceneError, HeightmapError, LoopError,
            ModelFormatError, PolicyError, GraspPrecondition,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
