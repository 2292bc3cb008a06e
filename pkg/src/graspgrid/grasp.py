"""Grasp execution oracle.

Executes a 6-DoF two-jaw grasp against the analytic scene. The open tool is
marched down its own approach axis through the true solid geometry (not the
camera heightmap, which cannot see the free space beneath overhanging faces).
The first touch is classified by how the tool entered the solid: crossing a
column top from above is an approach contact (stop, back off, close there),
entering through a side face is a collision and aborts the attempt. The
closing phase finds the objects straddled by the jaws via support projections
along the closing axis and scores the pinch by how flush the jaws sit on the
contact faces. Success removes the object from the scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .collision import GripperGeometry, _bottom_samples, gripper_rotation
from .imaging import GRASP_PX, Window
from .scene import Scene, column_tops, remove_object, scene_occupied

EVENT_APPROACH_CONTACT = "approach_contact"
EVENT_COLLISION = "collision"
EVENT_LIFT_SLIP = "lift_slip"
EVENT_LIFT_OK = "lift_ok"
EVENT_RANGE = "range_violation"
EVENT_NO_CANDIDATE = "no_candidate"

QUALITY_MIN = 0.75
WIDTH_MIN = 0.005
ENGAGE_MIN = 0.005
Z_MAX = 0.25


class GraspPrecondition(ValueError):
    """The planner handed execution a pose outside the commanded ranges."""


@dataclass
class GraspAction:
    """One parameterized grasp: stroke primitive plus a 6-DoF pose."""

    primitive: int
    x: float
    y: float
    z: float
    a: float       # yaw of the window frame
    b: float       # lateral tilt about window y (finger-width plane)
    c: float       # lateral tilt about window x (closing plane)

    def stroke(self, grip: GripperGeometry) -> float:
        return grip.stroke(self.primitive)

    def to_dict(self) -> dict:
        return {"m": self.primitive, "x": self.x, "y": self.y, "z": self.z,
                "a": self.a, "b": self.b, "c": self.c}

    @staticmethod
    def from_dict(d: dict) -> "GraspAction":
        return GraspAction(d["m"], d["x"], d["y"], d["z"], d["a"], d["b"], d["c"])


@dataclass
class AttemptOutcome:
    reward: int
    quality: float
    width: float
    z_actual: float
    events: list = field(default_factory=list)
    object_id: int | None = None


def compute_z(window: Window, stroke: float, grip: GripperGeometry):
    """Fingertip target height: max known height inside the jaw footprint
    minus the approach depth. None when the grasp point itself is unknown or
    the footprint holds no data."""
    if window.center_masked:
        return None
    n = window.values.shape[0]
    off = (np.arange(n) - GRASP_PX) * window.resolution
    inx = np.abs(off) <= grip.finger_width / 2.0
    iny = np.abs(off) <= stroke / 2.0
    patch = window.values[np.ix_(iny, inx)]
    good = np.isfinite(patch)
    if not np.any(good):
        return None
    return max(float(np.max(patch[good])) - grip.approach_depth, 0.0)


def check_range(action: GraspAction, grip: GripperGeometry,
                workspace_half: float = 0.2) -> bool:
    return (0.0 <= action.z <= Z_MAX
            and abs(action.b) <= math.pi / 2
            and abs(action.c) <= math.pi / 2
            and abs(action.x) <= workspace_half
            and abs(action.y) <= workspace_half
            and 0 <= action.primitive < grip.n_primitives)


DESCENT_STEP = 0.001
ENTRY_TOL = 0.0015   # touch no deeper than this below a column top is "from above"


def _descend(scene: Scene, action: GraspAction, grip: GripperGeometry,
             stroke: float):
    """March the open tool down its approach axis to the planned pose.

    Returns (z_stop, contact, collision). contact means the descent was
    stopped early by a touch from above; z_stop is the fingertip height at the
    stop (before any back-off). collision means some sample entered a solid
    through a side face.
    """
    rot = gripper_rotation(action.a, action.b, action.c)
    up = rot[:, 2]
    if up[2] <= 0.1:
        return action.z, False, True   # nonsensical tilt, never admissible
    base = np.array([action.x, action.y, action.z])
    pts = base + _bottom_samples(stroke, grip, 0.0, 0.002) @ rot.T
    top = max([scene.bin.wall_height] + [o.top_z() for o in scene.objects])

    if abs(action.b) < 1e-12 and abs(action.c) < 1e-12:
        # vertical descent: samples keep their columns, the stop height is the
        # max column top over the sample footprint and is always a top entry
        tops = column_tops(scene, pts[:, 0], pts[:, 1])
        z_stop = float(np.max(tops - (pts[:, 2] - action.z)))
        if z_stop > action.z + 1e-4:
            return z_stop, True, False
        return action.z, False, False

    z_min = float(np.min(pts[:, 2]))
    travel = max(top + 0.005 - z_min, 0.0) / up[2]
    for i in range(int(math.ceil(travel / DESCENT_STEP)), -1, -1):
        p = pts + (i * DESCENT_STEP) * up
        hit = scene_occupied(scene, p) | (p[:, 2] < -1e-6)
        if not np.any(hit):
            continue
        hp = p[hit]
        entered_above = hp[:, 2] >= column_tops(scene, hp[:, 0], hp[:, 1]) - ENTRY_TOL
        z_stop = action.z + i * DESCENT_STEP * up[2]
        if np.all(entered_above):
            if z_stop > action.z + 1e-4:
                return z_stop, True, False
            return action.z, False, False
        return z_stop, False, True
    return action.z, False, False


def execute_grasp(scene: Scene, action: GraspAction, grip: GripperGeometry,
                  rng: np.random.Generator | None = None,
                  slip_model: bool = False):
    """Run one grasp. Returns (AttemptOutcome, updated scene).

    Raises GraspPrecondition on out-of-range commands (a planner bug, not an
    outcome). A side collision found by the descent march is an outcome event:
    the grasp aborts with reward 0 and the scene unchanged.
    """
    if not check_range(action, grip):
        raise GraspPrecondition(f"command outside ranges: {action}")
    stroke = action.stroke(grip)
    events: list = []

    z_stop, contact, collided = _descend(scene, action, grip, stroke)
    if collided:
        return AttemptOutcome(0, 0.0, 0.0, action.z,
                              [EVENT_COLLISION, EVENT_LIFT_SLIP]), scene

    z_actual = action.z
    if contact:
        z_actual = z_stop + grip.retract
        events.append(EVENT_APPROACH_CONTACT)

    rot = gripper_rotation(action.a, action.b, action.c)
    jaw = rot[:, 1]                       # closing axis
    plate_x = rot[:, 0]
    grasp_pt = np.array([action.x, action.y, z_actual])
    xh = np.array([plate_x[0], plate_x[1], 0.0])
    xh_norm = np.linalg.norm(xh)
    xh = xh / xh_norm if xh_norm > 1e-9 else np.array([1.0, 0.0, 0.0])

    engaged = []
    for obj in scene.objects:
        if obj.top_z() <= z_actual + ENGAGE_MIN:
            continue
        rel = obj.center3() - grasp_pt
        if abs(float(rel @ xh)) > grip.finger_width / 2.0 + obj.support_width(xh):
            continue
        p = float(rel @ jaw)
        w = obj.support_width(jaw)
        if p - w <= -stroke / 2.0 or p + w >= stroke / 2.0:
            continue                       # not cleanly between the plates
        engaged.append((obj, p - w, p + w))

    if not engaged:
        events.append(EVENT_LIFT_SLIP)
        return AttemptOutcome(0, 0.0, 0.0, z_actual, events), scene

    lo_obj, lo = min(((o, lo) for o, lo, _ in engaged), key=lambda t: t[1])
    hi_obj, hi = max(((o, hi) for o, _, hi in engaged), key=lambda t: t[1])
    width = min(max(hi - lo, 0.0), stroke)

    if lo_obj.obj_id != hi_obj.obj_id:
        events.append(EVENT_LIFT_SLIP)
        return AttemptOutcome(0, 0.0, width, z_actual, events), scene

    obj = hi_obj
    n_plus = obj.contact_normal(jaw)
    n_minus = obj.contact_normal(-jaw)
    quality = 0.5 * (float(n_plus @ jaw) + float(n_minus @ -jaw))
    quality = min(max(quality, 0.0), 1.0)

    held = quality >= QUALITY_MIN and WIDTH_MIN < width <= stroke
    if held and slip_model and rng is not None:
        held = rng.random() < quality

    if not held:
        events.append(EVENT_LIFT_SLIP)
        return AttemptOutcome(0, quality, width, z_actual, events), scene

    events.append(EVENT_LIFT_OK)
    return (AttemptOutcome(1, quality, width, z_actual, events, obj.obj_id),
            remove_object(scene, obj.obj_id))
