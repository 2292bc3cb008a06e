"""Cached long-running artifacts shared by the acceptance tests.

The full collection loop, its held-out evaluations, and the auxiliary-task
study take minutes to bake. They are deterministic given the default config
and the package sources, so they are built once under .train_cache/<key>/ and
reused; the key hashes the config and every module source, which invalidates
the cache automatically on any code change.

Runnable directly (``python3 tests/helpers.py bake``) to pre-bake outside
pytest.
"""

import glob
import hashlib
import json
import os
import sys

import numpy as np

from graspgrid import dataset as ds
from graspgrid.collision import GripperGeometry
from graspgrid.config import config_hash, load_config
from graspgrid.grasp import execute_grasp
from graspgrid.loop import (DATASET_FILE, METRICS_FILE, MODEL_FILE,
                            TrainLoopConfig, robust_scene, run_training)
from graspgrid.network import ModelSpec, RewardModel
from graspgrid.policy import oracle_plan, plan_grasp, random_plan
from graspgrid.scene import BinGeometry, render_heightmap

PKG_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CACHE_ROOT = os.path.join(PKG_ROOT, ".train_cache")

TRAIN_SEED = 0
HELDOUT_SEED = 777
HELDOUT_SCENES = 200
HELDOUT_OBJECTS = 10         # curriculum stage 2 object count

POOL_SIZE = 11500
POOL_SEED = 4242
POOL_CYCLE = (1, 5, 10, 20)

STUDY_SEEDS = (0, 1, 2, 3, 4)
STUDY_SIZES = (1000, 10000)
STUDY_VAL = 1500             # validation rows taken from the pool tail
STUDY_SAMPLES_SEEN = 26000   # matched optimizer work across training sizes
STUDY_LR = 1e-4
STUDY_BATCH = 64
STUDY_AUX_WEIGHT = 0.1


def source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(glob.glob(os.path.join(PKG_ROOT, "src", "graspgrid",
                                              "*.py"))):
        h.update(os.path.basename(path).encode())
        with open(path, "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def cache_dir() -> str:
    key = hashlib.sha256(
        (config_hash(load_config()) + source_digest()).encode()).hexdigest()
    path = os.path.join(CACHE_ROOT, key[:16])
    os.makedirs(path, exist_ok=True)
    return path


# -- full collection loop ----------------------------------------------------


def ensure_training_run() -> str:
    """Bake (or reuse) the default-schedule training run. Returns its dir."""
    run_dir = os.path.join(cache_dir(), "run")
    marker = os.path.join(run_dir, "train.done")
    if os.path.exists(marker):
        return run_dir
    cfg = TrainLoopConfig()
    run_training(run_dir, cfg, seed=TRAIN_SEED,
                 config_hash=config_hash(load_config()))
    with open(marker, "w") as f:
        f.write("ok\n")
    return run_dir


def _first_attempt_rate(plan_fn, n_scenes: int, n_objects: int,
                        seed: int) -> float:
    """Fraction of fresh scenes where the first planned grasp succeeds."""
    bin_geom = BinGeometry()
    grip = GripperGeometry()
    rng = np.random.default_rng(seed)
    wins = 0
    for _ in range(n_scenes):
        scene = robust_scene(n_objects, rng, bin_geom)
        hm = render_heightmap(scene)
        plan = plan_fn(scene, hm, grip, rng)
        if plan.action is None:
            continue
        outcome, _ = execute_grasp(scene, plan.action, grip)
        wins += int(outcome.reward == 1)
    return wins / n_scenes


def ensure_heldout_evals() -> dict:
    """Greedy-model vs random first-attempt success on held-out scenes."""
    run_dir = ensure_training_run()
    path = os.path.join(run_dir, "evals.json")
    if os.path.exists(path):
        with open(path) as f:
            return json.load(f)
    model = RewardModel.load(os.path.join(run_dir, MODEL_FILE))

    def plan_greedy(scene, hm, grip, rng):
        return plan_grasp(model, hm, grip, rng, strategy="greedy", n_rot=8)

    def plan_random(scene, hm, grip, rng):
        return random_plan(hm, grip, rng, scene.bin.inner_half)

    out = {
        "n_scenes": HELDOUT_SCENES, "n_objects": HELDOUT_OBJECTS,
        "greedy": _first_attempt_rate(plan_greedy, HELDOUT_SCENES,
                                      HELDOUT_OBJECTS, HELDOUT_SEED),
        "random": _first_attempt_rate(plan_random, HELDOUT_SCENES,
                                      HELDOUT_OBJECTS, HELDOUT_SEED),
    }
    with open(path, "w") as f:
        json.dump(out, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


# -- offline sample pool for the auxiliary-task study -------------------------


def ensure_pool() -> str:
    """Collect a fixed pool of labeled attempts with scripted planners."""
    path = os.path.join(cache_dir(), "pool.jsonl")
    marker = os.path.join(cache_dir(), "pool.done")
    if os.path.exists(marker):
        return path
    if os.path.exists(path):
        os.remove(path)
    bin_geom = BinGeometry()
    grip = GripperGeometry()
    rng = np.random.default_rng(POOL_SEED)
    batch: list = []
    i = 0
    while i < POOL_SIZE:
        scene = robust_scene(POOL_CYCLE[i % len(POOL_CYCLE)], rng, bin_geom)
        hm = render_heightmap(scene)
        if i % 2 == 0:
            strategy = "random"
            plan = random_plan(hm, grip, rng, bin_geom.inner_half)
        else:
            strategy = "oracle"
            plan = oracle_plan(scene, hm, grip, rng)
        if plan.action is None or plan.window is None:
            continue
        outcome, _ = execute_grasp(scene, plan.action, grip)
        batch.append(ds.make_record(
            i, 0, strategy, plan.action.to_dict(), outcome,
            plan.window.values, plan.window.mask))
        i += 1
        if len(batch) >= 500:
            ds.append_records(path, batch)
            batch = []
    if batch:
        ds.append_records(path, batch)
    with open(marker, "w") as f:
        f.write("ok\n")
    return path


def _pool_arrays():
    records = ds.read_records(ensure_pool())
    x, prim, rew, aux = ds.training_arrays(records)
    n_val = STUDY_VAL
    return ((x[:-n_val], prim[:-n_val], rew[:-n_val], aux[:-n_val]),
            (x[-n_val:], prim[-n_val:], rew[-n_val:]))


def study_bce(train, val, n_samples: int, seed: int, aux_on: bool) -> float:
    """Validation BCE after a fixed offline training on n_samples rows."""
    x, prim, rew, aux = train
    pick = np.random.default_rng(seed).permutation(x.shape[0])[:n_samples]
    xs, ps, rs, axs = x[pick], prim[pick], rew[pick], aux[pick]
    model = RewardModel(ModelSpec(), seed=seed)
    rng = np.random.default_rng(10_000 + seed)
    epochs = max(1, round(STUDY_SAMPLES_SEEN / n_samples))
    for _ in range(epochs):
        model.train_epoch(xs, ps, rs, axs, rng, lr=STUDY_LR,
                          batch_size=STUDY_BATCH, aux_on=aux_on,
                          aux_weight=STUDY_AUX_WEIGHT)
    return model.validation_bce(*val)


def ensure_aux_study() -> dict:
    """BCE of aux-on vs aux-off variants per seed and training-set size."""
    path = os.path.join(cache_dir(), "aux_study.json")
    if os.path.exists(path):
        with open(path) as f:
            return json.load(f)
    train, val = _pool_arrays()
    out: dict = {"sizes": list(STUDY_SIZES), "seeds": list(STUDY_SEEDS),
                 "aux": {}, "noaux": {}}
    for n in STUDY_SIZES:
        for label, aux_on in (("aux", True), ("noaux", False)):
            out[label][str(n)] = [
                study_bce(train, val, n, seed, aux_on)
                for seed in STUDY_SEEDS]
    with open(path, "w") as f:
        json.dump(out, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


if __name__ == "__main__":
    step = sys.argv[1] if len(sys.argv) > 1 else "bake"
    if step in ("train", "bake", "all"):
        print("run:", ensure_training_run(), flush=True)
    if step in ("evals", "bake", "all"):
        print("evals:", ensure_heldout_evals(), flush=True)
    if step in ("pool", "bake", "all"):
        print("pool:", ensure_pool(), flush=True)
    if step in ("study", "all"):
        print("study:", json.dumps(ensure_aux_study()), flush=True)
