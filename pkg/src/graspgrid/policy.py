"""Action grid inference and grasp selection.

One dense forward pass per rotated view scores every (rotation, cell, stroke)
action; the map indexes back to world poses exactly. Selection strategies draw
from that grid (greedy, Boltzmann, epsilon-greedy, top-k, uniform random) with
an exclusion set so rejected candidates are not redrawn. Planning validates a
candidate end to end: window extraction, fingertip depth, lateral control,
command ranges, and the swept-volume collision gate with a plan-time margin.
An oracle planner that reads the scene ground truth (and a uniform random one)
exist for evaluation baselines.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .collision import GripperGeometry, check_grasp_collision, gripper_rotation
from .controller import ControllerConfig, LateralAngles, lateral_control
from .grasp import EVENT_NO_CANDIDATE, GraspAction, compute_z
from .heightmap import Heightmap
from .imaging import GRASP_PX, extract_window, rotation_stack, stack_cell_to_world
from .network import RewardModel, input_from_values, sigmoid
from .scene import Scene

WORKERS_ENV = "GRASPGRID_WORKERS"
STRATEGIES = ("greedy", "boltzmann", "epsilon_greedy", "greedy_top_k", "random")
PLAN_CLEARANCE = 0.002
PLAN_STEP = 0.004
RETRY_BUDGET = 25
CONTENT_MIN = 0.005   # heights above this count as graspable content


class PolicyError(ValueError):
    pass


@dataclass
class RewardMap:
    """Success probabilities for the full action grid of one heightmap."""

    probs: np.ndarray            # (n_rot, ho, wo, n_primitives) float32
    angles: np.ndarray           # (n_rot,)
    resolution: float
    origin: tuple[float, float]
    center: tuple[float, float]  # rotation pivot (map center)
    valid: np.ndarray | None = None   # (n_rot, ho, wo) grasp-center known

    @property
    def size(self) -> int:
        return self.probs.size

    def pose(self, k: int, i: int, j: int) -> tuple[float, float, float]:
        """World (x, y, a) for dense cell (i, j) of rotation k."""
        row = i + GRASP_PX
        col = j + GRASP_PX
        hm_like = _Georef(self.resolution, self.origin, self.center)
        x, y = stack_cell_to_world(hm_like, float(self.angles[k]), row, col)
        return float(x), float(y), float(self.angles[k])

    def unravel(self, flat: int) -> tuple[int, int, int, int]:
        return tuple(int(v) for v in np.unravel_index(flat, self.probs.shape))


class _Georef:
    """Just enough of the heightmap interface for coordinate mapping."""

    def __init__(self, resolution, origin, center):
        self.resolution = resolution
        self.origin = origin
        self._center = center

    def center_world(self):
        return self._center

    def px_to_world(self, col, row):
        x = self.origin[0] + (np.asarray(col) + 0.5) * self.resolution
        y = self.origin[1] + (np.asarray(row) + 0.5) * self.resolution
        return x, y


def resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(int(workers), 1)
    env = os.environ.get(WORKERS_ENV)
    return max(int(env), 1) if env else 1


def infer_grid(model: RewardModel, hm: Heightmap, n_rot: int = 20,
               workers: int | None = None,
               bin_half: float | None = None) -> RewardMap:
    """Score every action on the map: one dense pass per rotated view.

    Work is sharded by rotation across threads (the matmuls release the GIL);
    results are identical for any worker count.

    The returned map's `valid` plane restricts selection to plannable cells:
    pose() plans dense cell (i, j) at view pixel (i + GRASP_PX), so the cell
    needs that pixel to exist, its depth to be known, and the spot to show
    above-floor content — grasping provably empty floor cannot succeed, and
    pruning it keeps exploration (and a cold model's argmax) on candidates
    that can actually produce reward. With `bin_half` the gate also drops
    cells outside the bin interior, whose "content" is the bin wall itself.
    """
    stack, angles = rotation_stack(hm, n_rot)
    n_workers = resolve_workers(workers)

    def score(view) -> np.ndarray:
        x = input_from_values(view.values, view.mask)
        out = model.forward_dense(x)
        return sigmoid(out[: model.spec.n_primitives].astype(np.float64)) \
            .transpose(1, 2, 0).astype(np.float32)

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            per_rot = list(pool.map(score, stack))
    else:
        per_rot = [score(view) for view in stack]
    probs = np.stack(per_rot, axis=0)
    ho, wo = probs.shape[1], probs.shape[2]
    valid = np.zeros((len(stack), ho, wo), dtype=bool)
    hv = max(min(ho, stack[0].values.shape[0] - GRASP_PX), 0)
    wv = max(min(wo, stack[0].values.shape[1] - GRASP_PX), 0)
    cols, rows = np.meshgrid(np.arange(wv) + GRASP_PX, np.arange(hv) + GRASP_PX)
    cx, cy = hm.center_world()
    for k, view in enumerate(stack):
        cut = slice(GRASP_PX, GRASP_PX + hv), slice(GRASP_PX, GRASP_PX + wv)
        ok = ~view.mask[cut] & (view.filled()[cut] >= CONTENT_MIN)
        if bin_half is not None:
            wx, wy = stack_cell_to_world(hm, float(angles[k]), rows, cols)
            ok &= (np.abs(wx - cx) <= bin_half) & (np.abs(wy - cy) <= bin_half)
        valid[k, :hv, :wv] = ok
    return RewardMap(probs, np.asarray(angles), hm.resolution, hm.origin,
                     hm.center_world(), valid)


def boltzmann_temperature(step: int, steps: int, t0: float = 1.0,
                          t1: float = 0.05) -> float:
    """Exponential decay from t0 to t1 across `steps`."""
    if steps <= 1:
        return t1
    frac = min(max(step / (steps - 1), 0.0), 1.0)
    return t0 * (t1 / t0) ** frac


def select(rmap: RewardMap, strategy: str, rng: np.random.Generator,
           excluded: np.ndarray | None = None, temperature: float = 1.0,
           epsilon: float = 0.1, top_k: int = 5):
    """Draw one flat action index from the grid. excluded is a flat bool mask."""
    if strategy not in STRATEGIES:
        raise PolicyError(f"unknown strategy {strategy!r}")
    v = rmap.probs.reshape(-1).astype(np.float64)
    allowed = np.ones(v.size, dtype=bool) if excluded is None else ~excluded
    if rmap.valid is not None:
        allowed &= np.broadcast_to(rmap.valid[..., None],
                                   rmap.probs.shape).reshape(-1)
    n_allowed = int(np.count_nonzero(allowed))
    if n_allowed == 0:
        return None
    if strategy == "random":
        return int(rng.choice(np.nonzero(allowed)[0]))
    if strategy == "epsilon_greedy":
        if rng.random() < epsilon:
            return int(rng.choice(np.nonzero(allowed)[0]))
        strategy = "greedy"
    if strategy == "greedy":
        masked = np.where(allowed, v, -np.inf)
        return int(np.argmax(masked))  # ties: lowest flat index
    if strategy == "greedy_top_k":
        idx = np.nonzero(allowed)[0]
        k = min(top_k, idx.size)
        top = idx[np.argpartition(v[idx], -k)[-k:]]
        return int(rng.choice(top))
    # boltzmann
    idx = np.nonzero(allowed)[0]
    logits = (v[idx] - np.max(v[idx])) / max(temperature, 1e-6)
    p = np.exp(logits)
    p /= p.sum()
    return int(idx[rng.choice(idx.size, p=p)])


@dataclass
class PlanResult:
    action: GraspAction | None
    probability: float = 0.0
    window: object = None
    angles: LateralAngles | None = None
    tried: int = 0
    events: tuple = ()


def _validate_candidate(hm, x, y, a, primitive, grip, ctrl_cfg, adaption,
                        workspace_half) -> tuple:
    """Common gate: window -> z -> angles -> range -> collision."""
    stroke = grip.stroke(primitive)
    window = extract_window(hm, x, y, a)
    z = compute_z(window, stroke, grip)
    if z is None:
        return None, window, None
    if adaption:
        lat = lateral_control(window, stroke, grip, ctrl_cfg, z_ref=z)
        if not lat.feasible:
            return None, window, lat
        b, c = lat.b, lat.c
    else:
        lat = LateralAngles(0, 0, 0, 0, 0, 0.0, 0.0)
        b, c = 0.0, 0.0
    action = GraspAction(primitive, x, y, z, a, b, c)
    if not (abs(x) <= workspace_half and abs(y) <= workspace_half):
        return None, window, lat
    if check_grasp_collision(hm, x, y, z, a, b, c, stroke, grip,
                             clearance=PLAN_CLEARANCE, step=PLAN_STEP):
        return None, window, lat
    return action, window, lat


def plan_grasp(model: RewardModel, hm: Heightmap, grip: GripperGeometry,
               rng: np.random.Generator, strategy: str = "greedy",
               n_rot: int = 20, workers: int | None = None,
               temperature: float = 1.0, epsilon: float = 0.1,
               ctrl_cfg: ControllerConfig = ControllerConfig(),
               adaption: bool = True, retry_budget: int = RETRY_BUDGET,
               workspace_half: float = 0.2,
               rmap: RewardMap | None = None) -> PlanResult:
    """Pick and validate one grasp from the learned action grid."""
    if rmap is None:
        rmap = infer_grid(model, hm, n_rot=n_rot, workers=workers)
    excluded = np.zeros(rmap.size, dtype=bool)
    last_window = None
    for attempt in range(retry_budget):
        flat = select(rmap, strategy, rng, excluded=excluded,
                      temperature=temperature, epsilon=epsilon)
        if flat is None:
            break
        excluded[flat] = True
        k, i, j, m = rmap.unravel(flat)
        x, y, a = rmap.pose(k, i, j)
        action, window, lat = _validate_candidate(
            hm, x, y, a, m, grip, ctrl_cfg, adaption, workspace_half)
        last_window = window
        if action is not None:
            prob = float(rmap.probs[k, i, j, m])
            return PlanResult(action, prob, window, lat, attempt + 1)
    return PlanResult(None, 0.0, last_window, None, retry_budget,
                      (EVENT_NO_CANDIDATE,))


def plan_at(model: RewardModel, hm: Heightmap, grip: GripperGeometry,
            x: float, y: float, a: float, primitive: int | None = None,
            ctrl_cfg: ControllerConfig = ControllerConfig(),
            adaption: bool = True, workspace_half: float = 0.2) -> PlanResult:
    """Plan at a fixed planar pose; picks the best primitive when not given."""
    window = extract_window(hm, x, y, a)
    head = model.forward_window(input_from_values(window.filled(), window.mask))
    probs = sigmoid(head[: model.spec.n_primitives].astype(np.float64))
    prims = [primitive] if primitive is not None else \
        list(np.argsort(-probs))
    for m in prims:
        action, window, lat = _validate_candidate(
            hm, x, y, a, int(m), grip, ctrl_cfg, adaption, workspace_half)
        if action is not None:
            return PlanResult(action, float(probs[int(m)]), window, lat, 1)
    return PlanResult(None, 0.0, window, None, len(prims), (EVENT_NO_CANDIDATE,))


# -- ground-truth and random baselines ------------------------------------------


def _object_grasp_params(obj) -> tuple[float, float]:
    """(yaw, width): closing axis alignment and expected jaw span.

    A tilted box presents two 45 degree roof faces across its lean, so the
    clean planar grasp runs along the ridge, closing on the end caps. A wedge
    is grasped across its lean direction where the lateral controller can
    align the jaws with the two parallel slanted faces.
    """
    if obj.kind == "box":
        lx, ly, lz = obj.dims
        if obj.resting == "tilted":
            return obj.yaw + math.pi / 2.0, lx
        return obj.yaw, ly
    if obj.kind == "wedge":
        lx, w, h = obj.dims
        return obj.yaw, w + h
    if obj.kind == "cylinder":
        return obj.yaw, 2.0 * obj.dims[0]
    return 0.0, 2.0 * obj.dims[0]


ORACLE_OFFSETS = (0.0, -0.004, 0.004, -0.008, 0.008)
FIT_MARGIN = 0.002


def oracle_plan(scene: Scene, hm: Heightmap, grip: GripperGeometry,
                rng: np.random.Generator,
                ctrl_cfg: ControllerConfig = ControllerConfig(),
                adaption: bool = True, workspace_half: float = 0.2) -> PlanResult:
    """Ground-truth planner: aim near object centers with the aligned yaw.

    Depth comes from the true object top (the learned path derives it from
    the window instead, which nearby walls can inflate). Each candidate also
    slides a few millimeters along the closing axis: near a wall the whole
    tool must sit clear of it at the tilted pose, which a centered grasp may
    miss by a hair.
    """
    objs = list(scene.objects)
    rng.shuffle(objs)
    tried = 0
    last_window = None
    for obj in objs:
        yaw, _ = _object_grasp_params(obj)
        yaw = math.remainder(yaw, math.pi)
        z = max(obj.top_z() - grip.approach_depth, 0.002)
        for cand_yaw in (yaw, math.remainder(yaw + math.pi / 2, math.pi)):
            jx, jy = -math.sin(cand_yaw), math.cos(cand_yaw)
            for m in range(grip.n_primitives):
                stroke = grip.strokes[m]
                for off in ORACLE_OFFSETS:
                    tried += 1
                    x = obj.x + off * jx
                    y = obj.y + off * jy
                    if not (abs(x) <= workspace_half and abs(y) <= workspace_half):
                        continue
                    window = extract_window(hm, x, y, cand_yaw)
                    last_window = window
                    if adaption:
                        lat = lateral_control(window, stroke, grip, ctrl_cfg,
                                              z_ref=z)
                        if not lat.feasible:
                            continue
                        b, c = lat.b, lat.c
                    else:
                        lat = LateralAngles(0, 0, 0, 0, 0, 0.0, 0.0)
                        b, c = 0.0, 0.0
                    # the tilted object must land cleanly between the plates
                    jaw = gripper_rotation(cand_yaw, b, c)[:, 1]
                    p = float((obj.center3() - np.array([x, y, z])) @ jaw)
                    w = obj.support_width(jaw)
                    if p - w <= -stroke / 2.0 + FIT_MARGIN:
                        continue
                    if p + w >= stroke / 2.0 - FIT_MARGIN:
                        continue
                    if check_grasp_collision(hm, x, y, z, cand_yaw, b, c,
                                             stroke, grip,
                                             clearance=PLAN_CLEARANCE,
                                             step=PLAN_STEP):
                        continue
                    action = GraspAction(m, x, y, z, cand_yaw, b, c)
                    return PlanResult(action, 1.0, window, lat, tried)
    return PlanResult(None, 0.0, last_window, None, tried, (EVENT_NO_CANDIDATE,))


def random_plan(hm: Heightmap, grip: GripperGeometry,
                rng: np.random.Generator, bin_half: float,
                ctrl_cfg: ControllerConfig = ControllerConfig(),
                adaption: bool = True, retry_budget: int = RETRY_BUDGET,
                workspace_half: float = 0.2) -> PlanResult:
    """Random selection policy: planar poses drawn over visible content.

    Positions are sampled among above-floor cells of the observed map (with
    sub-cell jitter); yaw and stroke stay uniform. The policy reads nothing
    but the heightmap, so it stays a fair self-supervised explorer, yet it
    does not waste the budget on provably empty floor. Falls back to uniform
    positions when the map shows no content.
    """
    filled = hm.filled()
    rows, cols = np.nonzero(~hm.mask & (filled >= CONTENT_MIN))
    if rows.size:
        cx, cy = hm.px_to_world(cols, rows)
        keep = (np.abs(cx) <= bin_half) & (np.abs(cy) <= bin_half)
        cx, cy = cx[keep], cy[keep]
    else:
        cx = cy = np.zeros(0)
    last_window = None
    for attempt in range(retry_budget):
        if cx.size:
            i = int(rng.integers(cx.size))
            x = float(cx[i] + rng.uniform(-0.5, 0.5) * hm.resolution)
            y = float(cy[i] + rng.uniform(-0.5, 0.5) * hm.resolution)
        else:
            x = rng.uniform(-bin_half, bin_half)
            y = rng.uniform(-bin_half, bin_half)
        a = rng.uniform(-math.pi / 2, math.pi / 2)
        m = int(rng.integers(grip.n_primitives))
        action, window, lat = _validate_candidate(
            hm, x, y, a, m, grip, ctrl_cfg, adaption, workspace_half)
        last_window = window
        if action is not None:
            return PlanResult(action, 0.0, window, lat, attempt + 1)
    return PlanResult(None, 0.0, last_window, None, retry_budget,
                      (EVENT_NO_CANDIDATE,))


# -- evaluation ------------------------------------------------------------------


def wilson_interval(successes: int, trials: int, z: float = 1.96):
    if trials == 0:
        return (0.0, 1.0)
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials
                         + z * z / (4 * trials * trials)) / denom
    return (max(center - half, 0.0), min(center + half, 1.0))


@dataclass
class EvalResult:
    successes: int
    attempts: int
    collisions: int
    trials: int

    @property
    def rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0

    def ci(self):
        return wilson_interval(self.successes, self.attempts)

    def to_dict(self) -> dict:
        lo, hi = self.ci()
        return {"successes": self.successes, "attempts": self.attempts,
                "collisions": self.collisions, "trials": self.trials,
                "rate": round(self.rate, 4),
                "ci95": [round(lo, 4), round(hi, 4)]}
