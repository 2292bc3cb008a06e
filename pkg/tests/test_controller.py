"""Lateral angle derivation from window geometry, and tilt clipping."""

import math

import numpy as np
import pytest

from graspgrid.collision import GripperGeometry
from graspgrid.controller import (ControllerConfig, TILT_INSET, _body_band,
                                  _clip_tilt, _jaw_band, angle_b,
                                  combine_gamma, gamma_mean, gamma_sides,
                                  lateral_control, side_gradients,
                                  window_gradients)

from conftest import plane_window

HALF_PI = math.pi / 2.0


def test_flat_window_commands_no_tilt(grip):
    win = plane_window(height=0.05)
    lat = lateral_control(win, 0.05, grip, z_ref=0.035)
    assert lat.beta == 0.0
    assert lat.gamma_l == 0.0 and lat.gamma_r == 0.0
    assert lat.gamma_m == 0.0 and lat.gamma == 0.0
    assert lat.b == 0.0 and lat.c == 0.0
    assert lat.feasible


@pytest.mark.parametrize("theta", [0.1, 0.2, 0.3, 0.4, 0.5])
def test_ramp_angles_recover_the_plane_tilt(theta, grip):
    # falling along +x: the approach should tilt by exactly theta
    # float32 window heights bound the gradient precision near 1e-6
    win = plane_window(height=0.10, slope_x=-math.tan(theta))
    assert angle_b(win, grip) == pytest.approx(theta, abs=1e-5)
    # falling along +y: the mean closing-plane slope angle is theta
    win = plane_window(height=0.10, slope_y=-math.tan(theta))
    assert gamma_mean(win) == pytest.approx(theta, abs=1e-5)
    assert angle_b(win, grip) == 0.0


def test_gradients_are_exact_on_planes():
    win = plane_window(height=0.05, slope_x=0.2, slope_y=-0.4)
    gx, gy = window_gradients(win)
    inner = np.isfinite(gx) & np.isfinite(gy)
    assert inner[1:-1, 1:-1].all()
    assert not np.isfinite(gx[:, 0]).any()        # edge stencils cut
    np.testing.assert_allclose(gx[np.isfinite(gx)], 0.2, atol=1e-4)
    np.testing.assert_allclose(gy[np.isfinite(gy)], -0.4, atol=1e-4)


def test_angle_b_ignores_antisymmetric_curvature(grip):
    # gradient odd in x: the even Gaussian weight cancels it; mask the last
    # column so the valid-stencil support is symmetric about the center
    win = plane_window()
    n = win.values.shape[0]
    xs = (np.arange(n) - 15) * win.resolution
    win.values += (50.0 * xs[None, :] ** 2).astype(np.float32)
    win.values[:, -1] = np.nan
    win.mask[:, -1] = True
    assert angle_b(win, grip) == pytest.approx(0.0, abs=1e-5)


def test_side_gradients_cover_the_jaw_strip(grip):
    win = plane_window(slope_y=-0.3)
    g = side_gradients(win, 0.05, grip)
    # strip |y| <= stroke/2 + finger_width = 0.047 -> 27 rows at this scale
    rows = np.sum(np.abs((np.arange(32) - 15) * win.resolution) <= 0.047)
    assert g.size == rows
    np.testing.assert_allclose(g, -0.3, atol=1e-6)


def test_gamma_sides_on_a_ridge(grip):
    """A box ridge shows one rising and one falling face: both visible."""
    win = plane_window(height=0.0)
    n = win.values.shape[0]
    ys = (np.arange(n) - 15) * win.resolution
    ridge = np.abs(ys) <= 0.015
    win.values[ridge, :] = 0.05
    gamma_l, gamma_r = gamma_sides(win, 0.05, grip)
    d = 2 * win.resolution
    steep = math.atan(0.05 / d)
    assert gamma_l == pytest.approx(-HALF_PI + steep, abs=1e-6)
    assert gamma_r == pytest.approx(HALF_PI - steep, abs=1e-6)
    # symmetric faces plus flat mean: no net c
    assert combine_gamma(gamma_l, gamma_r, 0.0, 0.5) == pytest.approx(0.0)


def test_gamma_sides_detect_an_undercut(grip):
    """No falling gradient anywhere: the left face is invisible."""
    win = plane_window(height=0.0)
    n = win.values.shape[0]
    ys = (np.arange(n) - 15) * win.resolution
    win.values[ys >= -0.01, :] = 0.04      # one rising step, then plateau
    gamma_l, gamma_r = gamma_sides(win, 0.05, grip)
    assert gamma_l == pytest.approx(-HALF_PI)    # undercut marker
    assert gamma_r < HALF_PI                      # right face visible


def test_flat_strip_is_not_an_undercut(grip):
    win = plane_window(height=0.08)
    assert gamma_sides(win, 0.05, grip) == (0.0, 0.0)


def test_combine_gamma_cases():
    # both sides visible: mean of sides plus the surface slope
    assert combine_gamma(-0.2, 0.3, 0.05, 0.5) == pytest.approx(0.10)
    # right undercut: blend the left estimate with the mean slope
    assert combine_gamma(-0.4, HALF_PI, 0.1, 0.5) == pytest.approx(-0.1 / 1.5)
    # left undercut, mirrored
    assert combine_gamma(-HALF_PI, 0.4, 0.1, 0.5) == pytest.approx(0.3 / 1.5)
    # both undercut: only the mean slope is trustworthy
    assert combine_gamma(-HALF_PI, HALF_PI, 0.07, 0.5) == pytest.approx(0.07)
    assert combine_gamma(-HALF_PI - 0.2, HALF_PI + 0.1, -0.3, 0.0) == \
        pytest.approx(-0.3)


def test_clip_tilt_behaviour():
    full = [(-HALF_PI, HALF_PI)]
    # commanded ceiling stays exact even though interval edges are inset
    assert _clip_tilt(0.8, full, 0.5) == (0.5, True)
    assert _clip_tilt(-0.8, full, 0.5) == (-0.5, True)
    assert _clip_tilt(0.12, full, 0.5) == (0.12, True)
    # analytic edges are inset by the stand-off
    t, ok = _clip_tilt(0.4, [(-0.1, 0.42)], 0.5)
    assert ok and t == pytest.approx(0.42 - TILT_INSET)
    # narrow interval: inset caps at the middle
    t, ok = _clip_tilt(0.5, [(0.0, 0.04)], 0.5)
    assert ok and t == pytest.approx(0.02)
    # equidistant bands: magnitude stays bounded by the band edge
    t, ok = _clip_tilt(0.0, [(-0.3, -0.1), (0.1, 0.3)], 0.5)
    assert ok and abs(t) == pytest.approx(0.1 + TILT_INSET)
    # everything out of reach
    t, ok = _clip_tilt(0.0, [(0.6, 0.9)], 0.5)
    assert not ok and t == 0.0
    t, ok = _clip_tilt(0.2, [], 0.5)
    assert not ok


def test_band_helpers_track_the_lean(grip):
    lo, hi = _jaw_band(0.05, grip, 0.0)
    assert lo == pytest.approx(-0.035) and hi == pytest.approx(0.035)
    lo, hi = _jaw_band(0.05, grip, 0.5)
    assert hi > 0.08        # lean side gains the finger-length displacement
    assert -0.032 < lo < -0.028    # away side foreshortens
    lo_n, hi_n = _jaw_band(0.05, grip, -0.5)
    assert lo_n == pytest.approx(-hi) and hi_n == pytest.approx(-lo)

    lo, hi = _body_band(grip, 0.0)
    assert lo == pytest.approx(-0.037) and hi == pytest.approx(0.037)
    lo, hi = _body_band(grip, 0.4)
    assert hi > 0.07
    assert lo == pytest.approx(-(grip.finger_width / 2.0) - 0.002)
    lo_n, hi_n = _body_band(grip, -0.4)
    assert lo_n == pytest.approx(-hi) and hi_n == pytest.approx(-lo)


def test_low_ceiling_makes_the_pose_infeasible(grip):
    """A slab just above finger length blocks every tilt within the limit.

    Higher slabs can legitimately free large tilts: the body swings past the
    slab edge where the window has no samples.
    """
    win = plane_window(height=0.13)
    lat = lateral_control(win, 0.05, grip, z_ref=0.0)
    assert not lat.feasible
    assert lat.b == 0.0 and lat.c == 0.0


def test_default_z_ref_matches_footprint_rule(grip):
    win = plane_window(height=0.12)
    a = lateral_control(win, 0.05, grip)
    b = lateral_control(win, 0.05, grip, z_ref=0.12 - grip.approach_depth)
    assert a == b


def test_masked_rows_are_skipped(grip):
    win = plane_window(slope_y=-0.3)
    win.values[10, :] = np.nan
    win.mask[10, :] = True
    g = side_gradients(win, 0.05, grip)
    assert np.isfinite(g).all()
    lat = lateral_control(win, 0.05, grip, z_ref=0.05)
    assert lat.feasible


def test_fully_masked_window_degrades_to_zero(grip):
    win = plane_window()
    win.values[:] = np.nan
    win.mask[:] = True
    assert angle_b(win, grip) == 0.0
    assert gamma_mean(win) == 0.0
    assert gamma_sides(win, 0.05, grip) == (0.0, 0.0)
