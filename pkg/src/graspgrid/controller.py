"""Model-based lateral angle controller.

Given a grasp-aligned window the controller derives two tilt angles from the
local surface geometry: b tilts the approach within the finger-width plane
(window x-z) toward the surface downhill direction, c tilts within the jaw
closing plane (window y-z) so the jaws meet the side faces of the object flush.
The c angle combines three estimates: the mean closing-plane slope and one
orientation per contact side recovered from the extreme row gradients inside
the jaw strip. A side with no falling (resp. rising) gradient is an undercut:
its face is invisible from above and the estimate from the other side plus the
mean slope is used instead. Both angles are finally clipped to the commanded
limit and to the collision-free tilt interval of the body model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .collision import GripperGeometry, tilt_intervals, window_profile
from .imaging import GRASP_PX, Window

HALF_PI = math.pi / 2.0
FLAT_SLOPE = 1e-9
TILT_INSET = 0.03       # rad, stand-off kept from analytic collision boundaries
PROFILE_MARGIN = 0.002  # m, slack added to the tool extent when banding profiles


@dataclass(frozen=True)
class ControllerConfig:
    sigma_scale: float = 1.5      # b-weight std dev in finger widths
    rho: float = 0.5              # undercut blend weight for the mean slope
    max_lateral: float = 0.5      # rad, commanded |b|, |c| ceiling


@dataclass
class LateralAngles:
    beta: float                   # raw x-z surface angle
    gamma_l: float                # left side face estimate, [-pi, 0]
    gamma_r: float                # right side face estimate, [0, pi]
    gamma_m: float                # mean closing-plane slope angle
    gamma: float                  # combined c before clipping
    b: float                      # final tilt about window y
    c: float                      # final tilt about window x
    feasible: bool = True         # False when a tilt axis has no free pose


def window_gradients(window: Window):
    """Central-difference slopes (dimensionless); NaN where the stencil is cut
    by the mask or the window edge."""
    v = window.values
    gx = np.full(v.shape, np.nan, dtype=np.float64)
    gy = np.full(v.shape, np.nan, dtype=np.float64)
    d = 2.0 * window.resolution
    gx[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / d
    gy[1:-1, :] = (v[2:, :] - v[:-2, :]) / d
    return gx, gy


def angle_b(window: Window, grip: GripperGeometry,
            cfg: ControllerConfig = ControllerConfig()) -> float:
    """Surface angle in the window x-z plane, Gaussian-weighted around the
    grasp point (weight std dev = sigma_scale * finger_width)."""
    gx, _ = window_gradients(window)
    n = window.values.shape[1]
    xs = (np.arange(n) - GRASP_PX) * window.resolution
    sigma = cfg.sigma_scale * grip.finger_width
    w = np.exp(-0.5 * (xs / sigma) ** 2)[None, :] * np.ones((n, 1))
    valid = np.isfinite(gx)
    if not np.any(valid):
        return 0.0
    mean_gx = float(np.sum(w[valid] * gx[valid]) / np.sum(w[valid]))
    return math.atan(-mean_gx)


def side_gradients(window: Window, stroke: float, grip: GripperGeometry):
    """Per-row mean closing-plane slope g(y) inside the jaw strip
    |y| <= stroke/2 + finger_width. Rows with no valid gradient are dropped."""
    _, gy = window_gradients(window)
    n = window.values.shape[0]
    ys = (np.arange(n) - GRASP_PX) * window.resolution
    strip = np.abs(ys) <= stroke / 2.0 + grip.finger_width
    rows = []
    for r in np.nonzero(strip)[0]:
        row = gy[r]
        good = np.isfinite(row)
        if np.any(good):
            rows.append(float(np.mean(row[good])))
    return np.array(rows)


def gamma_sides(window: Window, stroke: float, grip: GripperGeometry):
    """Side face angles (gamma_l, gamma_r) from the strip's extreme gradients.

    gamma_l = -pi/2 - atan(min g): a visible falling face maps to (-pi/2, 0],
    no falling gradient at all lands at or below -pi/2 (undercut). Mirror for
    gamma_r from max g. An exactly flat strip is (0, 0): nothing to tilt for
    and neither undercut case should fire.
    """
    g = side_gradients(window, stroke, grip)
    if g.size == 0 or np.max(np.abs(g)) < FLAT_SLOPE:
        return 0.0, 0.0
    gamma_l = -HALF_PI - math.atan(float(np.min(g)))
    gamma_r = HALF_PI - math.atan(float(np.max(g)))
    return gamma_l, gamma_r


def gamma_mean(window: Window) -> float:
    """Mean closing-plane slope angle over the whole window."""
    _, gy = window_gradients(window)
    valid = np.isfinite(gy)
    if not np.any(valid):
        return 0.0
    return math.atan(-float(np.mean(gy[valid])))


def combine_gamma(gamma_l: float, gamma_r: float, gamma_m: float,
                  rho: float) -> float:
    """Blend the side estimates, falling back across undercut sides.

    Undercuts fire on ties: gamma_l <= -pi/2 means the left face is invisible,
    gamma_r >= +pi/2 the right one.
    """
    under_l = gamma_l <= -HALF_PI
    under_r = gamma_r >= HALF_PI
    if under_l and under_r:
        return gamma_m
    if under_r:
        return (rho * gamma_l + gamma_m) / (1.0 + rho)
    if under_l:
        return (rho * gamma_r + gamma_m) / (1.0 + rho)
    return 0.5 * (gamma_l + gamma_r) + gamma_m


def _clip_tilt(t: float, intervals, max_lateral: float) -> tuple[float, bool]:
    """Project the desired tilt onto the admissible set.

    Interval edges come from the analytic collision bound and are inset by
    TILT_INSET (at most to the interval middle) to keep a margin from the
    boundary; the commanded max_lateral clamp itself stays exact. The nearest
    admissible point wins, ties go to the smaller magnitude. A blocked
    vertical pose is fine as long as some tilted band remains reachable.
    """
    best_key, best = None, 0.0
    for lo, hi in intervals:
        pad = min(TILT_INSET, (hi - lo) / 2.0)
        lo_i = max(lo + pad, -max_lateral)
        hi_i = min(hi - pad, max_lateral)
        if lo_i > hi_i:
            continue
        cand = min(max(t, lo_i), hi_i)
        key = (abs(cand - t), abs(cand))
        if best_key is None or key < best_key:
            best_key, best = key, cand
    if best_key is None:
        return 0.0, False
    return float(best), True


def _jaw_band(stroke: float, grip: GripperGeometry, c_hint: float):
    """Closing-axis extent of the jaw strip when the tool leans by c_hint.

    The fingertips pivot in place, so the lean-away side reach is just the
    foreshortened strip half-width; the lean side gains the finger-length
    displacement of the upper plates and body.
    """
    half = (stroke / 2.0 + grip.plate_thickness) * math.cos(c_hint)
    lean = grip.finger_length * abs(math.sin(c_hint))
    if c_hint >= 0.0:
        return (-half - PROFILE_MARGIN, half + lean + PROFILE_MARGIN)
    return (-half - lean - PROFILE_MARGIN, half + PROFILE_MARGIN)


def _body_band(grip: GripperGeometry, b_hint: float):
    """Finger-width-axis extent of the body block when leaning by b_hint.

    The body sits a finger length above the tips, so leaning pulls its
    away-side reach inward, floored by the jaw plates that stay at the tips.
    """
    cos_b, sin_b = math.cos(b_hint), abs(math.sin(b_hint))
    into = grip.body_half_width * cos_b + grip.finger_length * sin_b
    away = max(grip.body_half_width * cos_b - grip.finger_length * sin_b,
               grip.finger_width / 2.0)
    if b_hint >= 0.0:
        return (-away - PROFILE_MARGIN, into + PROFILE_MARGIN)
    return (-into - PROFILE_MARGIN, away + PROFILE_MARGIN)


def lateral_control(window: Window, stroke: float, grip: GripperGeometry,
                    cfg: ControllerConfig = ControllerConfig(),
                    z_ref: float | None = None) -> LateralAngles:
    """Full lateral command for one grasp window.

    z_ref is the fingertip target height; when omitted it is derived from the
    jaw footprint top minus the approach depth (the planner normally passes
    the value it already computed). Each axis profile is restricted to the
    slab the tool occupies along the other axis, using the raw desired tilt
    there as the lean hint: an obstacle the lean clears away (a bin wall
    beside the jaws, say) must not block the perpendicular axis.
    """
    if z_ref is None:
        z_ref = _footprint_top(window, stroke, grip) - grip.approach_depth
        z_ref = max(z_ref, 0.0)
    beta = angle_b(window, grip, cfg)
    gamma_l, gamma_r = gamma_sides(window, stroke, grip)
    gamma_m = gamma_mean(window)
    gamma = combine_gamma(gamma_l, gamma_r, gamma_m, cfg.rho)

    b_hint = min(max(beta, -cfg.max_lateral), cfg.max_lateral)
    c_hint = min(max(gamma, -cfg.max_lateral), cfg.max_lateral)
    b, ok_b = _clip_tilt(beta, tilt_intervals(
        *window_profile(window, "x", z_ref, band=_jaw_band(stroke, grip, c_hint)),
        grip), cfg.max_lateral)
    c, ok_c = _clip_tilt(gamma, tilt_intervals(
        *window_profile(window, "y", z_ref, band=_body_band(grip, b_hint)),
        grip), cfg.max_lateral)
    return LateralAngles(beta, gamma_l, gamma_r, gamma_m, gamma,
                         b, c, feasible=ok_b and ok_c)


def _footprint_top(window: Window, stroke: float, grip: GripperGeometry) -> float:
    n = window.values.shape[0]
    off = (np.arange(n) - GRASP_PX) * window.resolution
    inx = np.abs(off) <= grip.finger_width / 2.0
    iny = np.abs(off) <= stroke / 2.0
    patch = window.values[np.ix_(iny, inx)]
    good = np.isfinite(patch)
    if not np.any(good):
        return 0.0
    return float(np.max(patch[good]))
