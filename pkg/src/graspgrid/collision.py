"""Gripper collision models.

Two layers, deliberately independent in formulation:

* a 2-d analytic bound per tilt axis: the gripper body is a rectangle spanning
  [d_l, d_u] radially from the fingertip point with half width r_g; for a set
  of obstacle samples (r_h, r_z) relative to the fingertip the admissible
  rotation interval around vertical is computed in closed form from the
  per-sample angular collision bands;
* a 3-d swept-volume check of the full tool (two jaw plates plus the body box)
  descending along its own axis, evaluated directly against heightmap columns.

The analytic bound feeds the lateral controller's clipping step; the swept
check gates execution. `collides_at` is the pointwise primitive the sweep
oracle in the tests drives to validate the analytic interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .heightmap import Heightmap
from .imaging import GRASP_PX, Window

HALF_PI = math.pi / 2.0


@dataclass(frozen=True)
class GripperGeometry:
    """Flat two-jaw tool. Distances are measured from the fingertip plane."""

    body_half_width: float = 0.035   # r_g: body half extent in a tilt plane
    finger_width: float = 0.022      # jaw plate extent along gripper x
    finger_length: float = 0.12      # d_l: fingertip to body underside
    body_top: float = 0.25           # d_u: fingertip to top of the body
    plate_thickness: float = 0.008
    strokes: tuple = (0.025, 0.05, 0.07, 0.086)
    max_stroke: float = 0.086        # mechanical opening limit
    approach_depth: float = 0.015    # fingertip target below surface top
    retract: float = 0.003           # back-off after an approach contact

    def __post_init__(self):
        if not (0.0 < self.finger_length < self.body_top):
            raise ValueError("need 0 < finger_length < body_top")
        if self.body_half_width <= 0.0:
            raise ValueError("body_half_width must be positive")
        if not self.strokes or any(
                b <= a for a, b in zip(self.strokes, self.strokes[1:])):
            raise ValueError("strokes must be strictly ascending")
        if self.strokes[-1] > self.max_stroke:
            raise ValueError("strokes must not exceed max_stroke")

    @property
    def n_primitives(self) -> int:
        return len(self.strokes)

    def stroke(self, primitive: int) -> float:
        return self.strokes[primitive]


def short_gripper(**overrides) -> GripperGeometry:
    """Short-finger variant: body underside below typical wall height."""
    return replace(GripperGeometry(finger_length=0.06), **overrides)


# -- 2-d analytic interval ------------------------------------------------------


def collides_at(r_h, r_z, grip: GripperGeometry, alpha: float) -> bool:
    """True if the body rectangle at elevation angle `alpha` hits any sample."""
    r_h = np.asarray(r_h, dtype=float)
    r_z = np.asarray(r_z, dtype=float)
    ca, sa = math.cos(alpha), math.sin(alpha)
    s = r_h * ca + r_z * sa           # radial coordinate in the tool frame
    w = -r_h * sa + r_z * ca          # lateral coordinate
    hit = (s >= grip.finger_length) & (s <= grip.body_top) & \
          (np.abs(w) <= grip.body_half_width)
    return bool(np.any(hit))


def blocked_bands(r_h, r_z, grip: GripperGeometry):
    """Merged elevation bands in (0, pi) where the body rectangle is struck.

    Per sample at polar (rho, theta) the blocked set is [theta-half, theta-inner]
    u [theta+inner, theta+half], where half caps the angular reach of the
    rectangle (radial entry past d_l, lateral within r_g) and inner opens a gap
    when the sample lies beyond the body top.
    """
    r_h = np.atleast_1d(np.asarray(r_h, dtype=float))
    r_z = np.atleast_1d(np.asarray(r_z, dtype=float))
    rho = np.hypot(r_h, r_z)
    theta = np.arctan2(r_z, r_h)
    # samples closer than the fingertip circle can never meet the body
    near = rho >= grip.finger_length
    rho = rho[near]
    theta = theta[near]
    if rho.size == 0:
        return []
    half = np.minimum(np.arccos(np.clip(grip.finger_length / rho, -1.0, 1.0)),
                      np.arcsin(np.clip(grip.body_half_width / rho, -1.0, 1.0)))
    inner = np.zeros_like(rho)
    far = rho > grip.body_top
    inner[far] = np.arccos(np.clip(grip.body_top / rho[far], -1.0, 1.0))
    live = inner <= half             # sample actually reachable by the body
    if not np.any(live):
        return []
    theta, half, inner = theta[live], half[live], inner[live]
    lo = np.concatenate([theta - half, theta + inner])
    hi = np.concatenate([theta - inner, theta + half])
    # theta is 2pi-periodic while atan2 is single-valued, so a band anchored
    # near -pi can cross (0, pi) only through its +2pi alias (and vice versa);
    # emit both shifted copies and let the clip discard the irrelevant ones
    two_pi = 2.0 * math.pi
    lo = np.concatenate([lo, lo + two_pi, lo - two_pi])
    hi = np.concatenate([hi, hi + two_pi, hi - two_pi])
    lo = np.clip(lo, 0.0, math.pi)
    hi = np.clip(hi, 0.0, math.pi)
    keep = hi > lo
    if not np.any(keep):
        return []
    order = np.argsort(lo[keep])
    lo, hi = lo[keep][order], hi[keep][order]
    merged = [(float(lo[0]), float(hi[0]))]
    for b_lo, b_hi in zip(lo[1:], hi[1:]):
        m_lo, m_hi = merged[-1]
        if b_lo <= m_hi:
            merged[-1] = (m_lo, max(m_hi, float(b_hi)))
        else:
            merged.append((float(b_lo), float(b_hi)))
    return merged


def free_intervals(r_h, r_z, grip: GripperGeometry):
    """Admissible elevation intervals in (0, pi), ascending.

    alpha is measured from the positive horizontal axis of the tilt plane, so
    the vertical pose is pi/2. With no obstacles this is [(0, pi)]. The set can
    exclude the vertical pose entirely while still offering tilted bands, e.g.
    next to a tall wall.
    """
    out = []
    cursor = 0.0
    for b_lo, b_hi in blocked_bands(r_h, r_z, grip):
        if b_lo - cursor > 1e-12:
            out.append((cursor, b_lo))
        cursor = max(cursor, b_hi)
    if math.pi - cursor > 1e-12:
        out.append((cursor, math.pi))
    return out


def free_interval(r_h, r_z, grip: GripperGeometry):
    """The admissible elevation interval containing the vertical pose.

    Returns (alpha_min, alpha_max) or None when the vertical pose itself is
    blocked; tilted bands may still exist in that case, see free_intervals.
    """
    for lo, hi in free_intervals(r_h, r_z, grip):
        if lo < HALF_PI < hi:
            return (lo, hi)
    return None


def tilt_intervals(r_h, r_z, grip: GripperGeometry):
    """free_intervals rephrased as admissible tilt t = pi/2 - alpha, ascending.

    Positive tilt leans the body toward positive r_h.
    """
    ivs = [(HALF_PI - hi, HALF_PI - lo)
           for lo, hi in free_intervals(r_h, r_z, grip)]
    return ivs[::-1]


def window_profile(window: Window, axis: str, z_ref: float,
                   band: tuple | None = None):
    """Obstacle samples (r_h, r_z) for one tilt axis of a grasp window.

    axis "x" collapses rows (bounds the b tilt), axis "y" collapses columns
    (bounds the c tilt). Heights are taken as the per-line max over known
    cells; unknown cells are ignored. `band` = (lo, hi) in meters restricts
    the collapsed coordinate to the extent the tool actually occupies there;
    obstacles outside that slab cannot touch the tool under this tilt axis
    and must not pollute the profile. None keeps the whole window.
    """
    vals = window.values
    if band is not None:
        n = vals.shape[0] if axis == "x" else vals.shape[1]
        off = (np.arange(n) - GRASP_PX) * window.resolution
        keep_line = (off >= band[0]) & (off <= band[1])
        vals = vals[keep_line, :] if axis == "x" else vals[:, keep_line]
    if vals.size == 0:
        return np.empty(0), np.empty(0)
    filled = np.where(np.isfinite(vals), vals, -np.inf)
    prof = filled.max(axis=0) if axis == "x" else filled.max(axis=1)
    idx = np.arange(prof.size, dtype=float)
    r_h = (idx - GRASP_PX) * window.resolution
    keep = np.isfinite(prof)
    return r_h[keep], prof[keep] - z_ref


# -- 3-d swept check ------------------------------------------------------------


def gripper_rotation(a: float, b: float, c: float) -> np.ndarray:
    """World-from-tool rotation: yaw a, then tilt b about y, tilt -c about x."""
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cc, sc = math.cos(c), math.sin(c)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cc, sc], [0.0, -sc, cc]])
    return rz @ ry @ rx


def _grid2(x0, x1, y0, y1, step):
    nx = max(int(math.ceil((x1 - x0) / step)) + 1, 2)
    ny = max(int(math.ceil((y1 - y0) / step)) + 1, 2)
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    gx, gy = np.meshgrid(xs, ys)
    return gx.ravel(), gy.ravel()


def _bottom_samples(stroke: float, grip: GripperGeometry, inflate: float,
                    step: float):
    """Tool-frame sample points of the downward-facing faces (x, y, z)."""
    pts = []
    fx = grip.finger_width / 2.0 + inflate
    for side in (-1.0, 1.0):
        y0 = side * (stroke / 2.0)
        y1 = side * (stroke / 2.0 + grip.plate_thickness + inflate)
        gx, gy = _grid2(-fx, fx, min(y0, y1), max(y0, y1), step / 2.0)
        pts.append(np.stack([gx, gy, np.zeros_like(gx)], axis=1))
    bx = grip.body_half_width + inflate
    by = stroke / 2.0 + grip.plate_thickness + inflate
    gx, gy = _grid2(-bx, bx, -by, by, step)
    pts.append(np.stack([gx, gy, np.full_like(gx, grip.finger_length)], axis=1))
    return np.concatenate(pts, axis=0)


def _heights_at(hm: Heightmap, x, y) -> np.ndarray:
    """Nearest-cell heights; unknown and off-map cells read as the floor."""
    col = np.round((x - hm.origin[0]) / hm.resolution - 0.5).astype(np.int64)
    row = np.round((y - hm.origin[1]) / hm.resolution - 0.5).astype(np.int64)
    h, w = hm.shape
    inside = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    out = np.zeros(np.shape(x), dtype=np.float64)
    vals = hm.values[row[inside], col[inside]]
    out[inside] = np.where(np.isfinite(vals), vals, 0.0)
    return out


def check_grasp_collision(hm: Heightmap, x: float, y: float, z: float,
                          a: float, b: float, c: float, stroke: float,
                          grip: GripperGeometry, clearance: float = 0.0,
                          step: float = 0.004) -> bool:
    """True if descending the open tool to the grasp pose strikes the scene.

    The tool translates along its own axis, so its swept volume is exactly the
    prism of its bottom faces extruded upward along that axis; each bottom
    sample is marched up in `step` increments and compared against the column
    heights. `clearance` inflates the tool footprint and the required height
    margin (used at plan time; execution validates with zero margin).
    """
    rot = gripper_rotation(a, b, c)
    up = rot[:, 2]
    if up[2] <= 0.1:
        return True  # nonsensical tilt, never admissible
    base = np.array([x, y, z])
    pts = base + _bottom_samples(stroke, grip, clearance, step) @ rot.T
    with np.errstate(invalid="ignore"):
        h_max = float(np.nanmax(hm.values))
    if not math.isfinite(h_max):
        h_max = 0.0
    z_min = float(np.min(pts[:, 2]))
    travel = max(h_max + 0.005 - z_min, 0.0) / up[2]
    n_steps = int(math.ceil(travel / step)) + 1
    s = np.arange(n_steps) * step
    for si in s:
        p = pts + si * up
        heights = _heights_at(hm, p[:, 0], p[:, 1])
        hit = (heights > 1e-6) & (heights > p[:, 2] + clearance + 1e-9)
        if np.any(hit):
            return True
    return False
