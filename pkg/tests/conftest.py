"""Shared fixtures and synthetic-window builders."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))  # for `import helpers`

from graspgrid.collision import GripperGeometry, short_gripper
from graspgrid.imaging import GRASP_PX, WINDOW_PX, Window
from graspgrid.scene import DEFAULT_RESOLUTION


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def grip():
    return GripperGeometry()


@pytest.fixture(scope="session")
def short_grip():
    return short_gripper()


def plane_window(height: float = 0.05, slope_x: float = 0.0,
                 slope_y: float = 0.0, resolution: float = DEFAULT_RESOLUTION,
                 size: int = WINDOW_PX) -> Window:
    """Fully known window of a plane through the grasp point.

    slope_x tilts along window x (columns), slope_y along window y (rows);
    both are dimensionless dz per unit distance.
    """
    g = (size - 1) // 2
    off = (np.arange(size) - g) * resolution
    xs, ys = np.meshgrid(off, off)
    values = (height + slope_x * xs + slope_y * ys).astype(np.float32)
    mask = np.zeros((size, size), dtype=bool)
    return Window(values, mask, resolution, (0.0, 0.0), 0.0)


def window_from_values(values, resolution: float = DEFAULT_RESOLUTION) -> Window:
    values = np.asarray(values, dtype=np.float32)
    mask = ~np.isfinite(values)
    vals = values.copy()
    vals[mask] = np.nan
    return Window(vals, mask, resolution, (0.0, 0.0), 0.0)


assert GRASP_PX == (WINDOW_PX - 1) // 2
