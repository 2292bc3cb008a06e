"""Self-supervised collection loop and scenario evaluation.

Two bins share a fixed object population: grasps are planned on the source
bin, executed in simulation, logged, and successful picks are dropped into the
target bin; when the source empties the bins swap roles. Exploration anneals
from uniform random over Boltzmann sampling to epsilon-greedy. The model
retrains on the full log at a fixed attempt interval; each retrain writes a
metrics row and a resumable checkpoint (model with optimizer state, scenes,
rng state, dataset row count). Resuming truncates the log to the checkpoint
and reproduces the uninterrupted run byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset as ds
from .collision import GripperGeometry
from .controller import ControllerConfig
from .grasp import EVENT_COLLISION, AttemptOutcome, execute_grasp
from .imaging import WINDOW_PX
from .network import ModelSpec, RewardModel, class_weights
from .policy import (EvalResult, PlanResult, boltzmann_temperature,
                     oracle_plan, plan_grasp, random_plan)
from .scene import (BinGeometry, Scene, SceneError, place_random,
                    render_heightmap, sample_object)

CKPT_DIR = "checkpoints"
DATASET_FILE = "dataset.jsonl"
METRICS_FILE = "metrics.csv"
MODEL_FILE = "model.ggrid"
VAL_MODULUS = 10
VAL_RESIDUE = 7


class LoopError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainLoopConfig:
    attempts: int = 2700
    warmup_random: int = 400
    boltzmann_until: int = 1600
    epsilon: float = 0.1
    t_start: float = 1.0
    t_end: float = 0.05
    n_rot: int = 8
    retrain_interval: int = 200
    epochs_per_retrain: int = 2
    batch_size: int = 64
    lr: float = 1e-4
    aux_weight: float = 0.1
    aux_on: bool = True
    adaption: bool = True
    curriculum: tuple = (1, 5, 10, 20)
    advance_thresholds: tuple = (0.6, 0.5, 0.4)
    rolling: int = 100
    retry_budget: int = 25
    workers: int = 1
    augment: bool = True


def robust_scene(n_objects: int, rng: np.random.Generator,
                 bin_geom: BinGeometry, redraws: int = 20) -> Scene:
    """sample_scene with per-object shape redraws when placement jams.

    The flat placement model cannot stack, so a crowded bin can run out of
    disjoint poses; in that case the scene is returned with as many objects
    as fit (physically the rest would pile on top).
    """
    scene = Scene(replace(bin_geom))
    for _ in range(n_objects):
        placed = False
        for _attempt in range(redraws):
            try:
                scene = place_random(scene, sample_object(rng), rng)
                placed = True
                break
            except SceneError:
                continue
        if not placed:
            break
    return scene


def _augment_batch(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized window corruption on stacked (N, 2, H, W) inputs."""
    n = x.shape[0]
    out = x.copy()
    scale = rng.uniform(0.95, 1.05, n).astype(np.float32)
    offset = rng.uniform(-0.005, 0.005, n).astype(np.float32)
    known = out[:, 1] < 0.5
    out[:, 0] = out[:, 0] * scale[:, None, None] + offset[:, None, None]
    out[:, 0][~known] = 0.0
    frac = rng.uniform(0.0, 0.02, n).astype(np.float32)
    salt = rng.random(out[:, 1].shape) < frac[:, None, None]
    out[:, 1] = np.maximum(out[:, 1], salt.astype(np.float32))
    out[:, 0][salt] = 0.0
    return out


def _split_train_val(n_rows: int):
    idx = np.arange(n_rows)
    val = idx % VAL_MODULUS == VAL_RESIDUE
    return idx[~val], idx[val]


def retrain_model(model: RewardModel, records: list, cfg: TrainLoopConfig,
                  rng: np.random.Generator) -> float:
    """Train on the full log, return validation BCE (held-out rows)."""
    x, prim, rew, aux = ds.training_arrays(records)
    tr, va = _split_train_val(len(records))
    cw = class_weights(prim[tr], rew[tr], model.spec.n_primitives)
    for _ in range(cfg.epochs_per_retrain):
        xt = _augment_batch(x[tr], rng) if cfg.augment else x[tr]
        model.train_epoch(xt, prim[tr], rew[tr], aux[tr], rng, lr=cfg.lr,
                          batch_size=cfg.batch_size, aux_on=cfg.aux_on,
                          class_w=cw, aux_weight=cfg.aux_weight)
    if va.size == 0:
        return float("nan")
    return model.validation_bce(x[va], prim[va], rew[va])


def _strategy_for(attempt: int, cfg: TrainLoopConfig):
    if attempt < cfg.warmup_random:
        return "random", 0.0
    if attempt < cfg.boltzmann_until:
        t = boltzmann_temperature(attempt - cfg.warmup_random,
                                  cfg.boltzmann_until - cfg.warmup_random,
                                  cfg.t_start, cfg.t_end)
        return "boltzmann", t
    return "epsilon_greedy", 0.0


@dataclass
class LoopState:
    attempt: int = 0
    stage: int = 0
    swaps: int = 0
    resamples: int = 0
    successes: int = 0
    collisions: int = 0
    rolling: list = field(default_factory=list)
    source: Scene | None = None
    target: Scene | None = None


def _checkpoint(out_dir: str, model: RewardModel, state: LoopState,
                rng: np.random.Generator, rows: int, config_hash: str) -> None:
    label = f"ckpt_{state.attempt:06d}"
    path = os.path.join(out_dir, CKPT_DIR, label)
    os.makedirs(path, exist_ok=True)
    model.save(os.path.join(path, MODEL_FILE))
    meta = {
        "attempt": state.attempt, "rows": rows, "stage": state.stage,
        "swaps": state.swaps, "resamples": state.resamples,
        "successes": state.successes, "collisions": state.collisions,
        "rolling": state.rolling,
        "source": state.source.to_dict(), "target": state.target.to_dict(),
        "rng_state": rng.bit_generator.state,
        "config_hash": config_hash,
    }
    with open(os.path.join(path, "meta.json"), "w") as f:
        json.dump(meta, f, sort_keys=True)
        f.write("\n")


def latest_checkpoint(out_dir: str):
    root = os.path.join(out_dir, CKPT_DIR)
    if not os.path.isdir(root):
        return None
    names = sorted(n for n in os.listdir(root) if n.startswith("ckpt_"))
    return os.path.join(root, names[-1]) if names else None


def _conservation(state: LoopState, expected: int) -> None:
    total = len(state.source.objects) + len(state.target.objects)
    if total != expected:
        raise LoopError(f"object conservation broken: {total} != {expected}")


def _log_failed(records_new, state, plan: PlanResult, strategy: str):
    win = plan.window
    if win is not None:
        values, mask = win.filled(), win.mask
        x, y = win.center
        a = win.yaw
    else:
        values = np.zeros((WINDOW_PX, WINDOW_PX), dtype=np.float32)
        mask = np.ones((WINDOW_PX, WINDOW_PX), dtype=bool)
        x = y = a = 0.0
    outcome = AttemptOutcome(0, 0.0, 0.0, 0.0, list(plan.events))
    action = {"m": 0, "x": x, "y": y, "z": 0.0, "a": a, "b": 0.0, "c": 0.0}
    records_new.append(ds.make_record(state.attempt, state.stage, strategy,
                                      action, outcome, values, mask))
    return outcome


def run_training(out_dir: str, cfg: TrainLoopConfig,
                 spec: ModelSpec | None = None,
                 grip: GripperGeometry | None = None,
                 bin_geom: BinGeometry | None = None,
                 ctrl_cfg: ControllerConfig = ControllerConfig(),
                 seed: int = 0, resume: bool = False,
                 config_hash: str = "") -> dict:
    """Run (or resume) the collection loop. Returns a summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    grip = grip if grip is not None else GripperGeometry()
    bin_geom = bin_geom if bin_geom is not None else BinGeometry()
    dataset_path = os.path.join(out_dir, DATASET_FILE)
    metrics_path = os.path.join(out_dir, METRICS_FILE)

    rng = np.random.default_rng(seed)
    state = LoopState()
    records: list = []
    ckpt = latest_checkpoint(out_dir) if resume else None
    if ckpt is not None:
        with open(os.path.join(ckpt, "meta.json")) as f:
            meta = json.load(f)
        model = RewardModel.load(os.path.join(ckpt, MODEL_FILE))
        state = LoopState(meta["attempt"], meta["stage"], meta["swaps"],
                          meta["resamples"], meta["successes"],
                          meta["collisions"], meta["rolling"],
                          Scene.from_dict(meta["source"]),
                          Scene.from_dict(meta["target"]))
        rng.bit_generator.state = meta["rng_state"]
        ds.truncate_records(dataset_path, meta["rows"])
        records = ds.read_records(dataset_path)
        _trim_metrics(metrics_path, state.attempt)
    else:
        if resume:
            raise LoopError(f"no checkpoint to resume under {out_dir}")
        model = RewardModel(spec if spec is not None else ModelSpec(), seed=seed)
        for path in (dataset_path, metrics_path):
            if os.path.exists(path):
                os.remove(path)
        state.source = robust_scene(cfg.curriculum[0], rng, bin_geom)
        state.target = Scene(replace(bin_geom))
        state.resamples = 1

    expected = len(state.source.objects) + len(state.target.objects)

    while state.attempt < cfg.attempts:
        strategy, temperature = _strategy_for(state.attempt, cfg)
        hm = render_heightmap(state.source)
        if strategy == "random":
            plan = random_plan(hm, grip, rng, bin_geom.inner_half,
                               ctrl_cfg, adaption=cfg.adaption,
                               retry_budget=cfg.retry_budget)
        else:
            plan = plan_grasp(model, hm, grip, rng, strategy=strategy,
                              n_rot=cfg.n_rot, workers=cfg.workers,
                              temperature=temperature, epsilon=cfg.epsilon,
                              ctrl_cfg=ctrl_cfg, adaption=cfg.adaption,
                              retry_budget=cfg.retry_budget)
        new_records: list = []
        if plan.action is None:
            outcome = _log_failed(new_records, state, plan, strategy)
        else:
            outcome, new_source = execute_grasp(state.source, plan.action, grip)
            if EVENT_COLLISION in outcome.events:
                state.collisions += 1
            if outcome.reward:
                moved = state.source.get(outcome.object_id)
                state.source = new_source
                state.target, state.source = _place_back(
                    state.target, state.source, moved, rng)
                state.successes += 1
            win = plan.window
            new_records.append(ds.make_record(
                state.attempt, state.stage, strategy,
                plan.action.to_dict(), outcome, win.filled(), win.mask))
        records.extend(new_records)
        ds.append_records(dataset_path, new_records)
        state.rolling.append(int(outcome.reward))
        if len(state.rolling) > cfg.rolling:
            state.rolling.pop(0)
        state.attempt += 1
        _conservation(state, expected)

        if len(state.source.objects) == 0 and len(state.target.objects) > 0:
            state.source, state.target = state.target, state.source
            state.swaps += 1

        if (state.stage < len(cfg.curriculum) - 1
                and len(state.rolling) >= cfg.rolling
                and float(np.mean(state.rolling)) >=
                cfg.advance_thresholds[state.stage]):
            state.stage += 1
            state.source = robust_scene(cfg.curriculum[state.stage], rng, bin_geom)
            state.target = Scene(replace(bin_geom))
            state.resamples += 1
            state.rolling = []
            expected = len(state.source.objects)

        if state.attempt % cfg.retrain_interval == 0:
            val_bce = retrain_model(model, records, cfg, rng)
            recent = records[-cfg.retrain_interval:]
            ds.write_metrics(metrics_path, [{
                "attempt": state.attempt, "rows": len(records),
                "stage": state.stage,
                "success_rolling": round(float(np.mean(state.rolling))
                                         if state.rolling else 0.0, 4),
                "val_bce": round(val_bce, 6),
                "mean_abs_b": round(float(np.mean([abs(r["b"]) for r in recent])), 6),
                "mean_abs_c": round(float(np.mean([abs(r["c"]) for r in recent])), 6),
                "temperature": round(temperature, 6),
            }])
            _checkpoint(out_dir, model, state, rng, len(records), config_hash)

    model.save(os.path.join(out_dir, MODEL_FILE))
    summary = {
        "attempts": state.attempt, "rows": len(records),
        "successes": state.successes, "collisions": state.collisions,
        "swaps": state.swaps, "stage": state.stage,
        "config_hash": config_hash,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


def _place_back(target: Scene, source: Scene, obj, rng) -> tuple:
    """Transfer a grasped object into the receiving bin.

    Returns (target, source). When the receiving bin jams (the flat placement
    model cannot stack), the object physically falls back onto the source
    pile; its previous footprint there is free by construction, so that
    re-insertion can never fail and no object is ever lost.
    """
    for _ in range(3):
        try:
            return place_random(target, obj, rng), source
        except SceneError:
            continue
    try:
        return target, place_random(source, obj, rng)
    except SceneError:
        back = source.copy()
        back.objects.append(replace(obj))
        return target, back


def _trim_metrics(path: str, attempt: int) -> None:
    if not os.path.exists(path):
        return
    rows = [r for r in ds.read_metrics(path) if int(r["attempt"]) <= attempt]
    os.remove(path)
    if rows:
        ds.write_metrics(path, rows)


# -- scenario evaluation ---------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    n_objects: int = 5
    n_trials: int = 20
    budget_factor: float = 2.0   # attempts allowed = factor * objects + 3
    planner: str = "model"       # model | oracle | random
    adaption: bool = True
    n_rot: int = 20
    workers: int = 1


def evaluate_grasp_rate(cfg: EvalConfig, model: RewardModel | None,
                        grip: GripperGeometry, seed: int = 0,
                        bin_geom: BinGeometry | None = None,
                        ctrl_cfg: ControllerConfig = ControllerConfig()):
    """Empty freshly sampled bins, return pooled success statistics."""
    if cfg.planner == "model" and model is None:
        raise LoopError("model planner needs a model")
    bin_geom = bin_geom if bin_geom is not None else BinGeometry()
    rng = np.random.default_rng(seed)
    successes = attempts = collisions = 0
    budget = int(cfg.budget_factor * cfg.n_objects) + 3
    for _ in range(cfg.n_trials):
        scene = robust_scene(cfg.n_objects, rng, bin_geom)
        for _attempt in range(budget):
            if not scene.objects:
                break
            hm = render_heightmap(scene)
            if cfg.planner == "oracle":
                plan = oracle_plan(scene, hm, grip, rng, ctrl_cfg,
                                   adaption=cfg.adaption)
            elif cfg.planner == "random":
                plan = random_plan(hm, grip, rng, bin_geom.inner_half,
                                   ctrl_cfg, adaption=cfg.adaption)
            else:
                plan = plan_grasp(model, hm, grip, rng, strategy="greedy",
                                  n_rot=cfg.n_rot, workers=cfg.workers,
                                  ctrl_cfg=ctrl_cfg, adaption=cfg.adaption)
            attempts += 1
            if plan.action is None:
                break  # deterministic planners cannot make progress
            outcome, scene = execute_grasp(scene, plan.action, grip)
            if EVENT_COLLISION in outcome.events:
                collisions += 1
            successes += outcome.reward
    return EvalResult(successes, attempts, collisions, cfg.n_trials)
