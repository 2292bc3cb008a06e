"""Window extraction and rotated views of a heightmap.

All planar reasoning happens in grasp-aligned windows: a WINDOW_PX square crop
whose y axis is the jaw closing direction. Sampling is bilinear with mask
poisoning (any unknown or out-of-map neighbor makes the sample unknown), so
unknown data never turns into plausible heights. The rotation stack rotates the
whole map about its center so a fixed axis-aligned window grid covers every
yaw bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .heightmap import Heightmap

WINDOW_PX = 32
GRASP_PX = (WINDOW_PX - 1) // 2  # grasp point pixel (15, 15) in a 32 px window


class ImagingError(ValueError):
    pass


@dataclass
class Window:
    """Grasp-aligned crop; pixel (GRASP_PX, GRASP_PX) is the grasp point."""

    values: np.ndarray           # (WINDOW_PX, WINDOW_PX) float32, NaN masked
    mask: np.ndarray             # bool, True = unknown
    resolution: float
    center: tuple[float, float]  # world grasp point
    yaw: float                   # window x axis direction in the world

    @property
    def center_masked(self) -> bool:
        return bool(self.mask[GRASP_PX, GRASP_PX])

    def filled(self, fill: float = 0.0) -> np.ndarray:
        out = self.values.copy()
        out[self.mask] = fill
        return out


def sample_bilinear(hm: Heightmap, x, y):
    """Sample world points; returns (values, unknown) with mask poisoning."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    col, row = hm.world_to_px(x, y)
    h, w = hm.shape
    c0 = np.floor(col).astype(np.int64)
    r0 = np.floor(row).astype(np.int64)
    fc = col - c0
    fr = row - r0
    inside = (c0 >= 0) & (c0 + 1 <= w - 1) & (r0 >= 0) & (r0 + 1 <= h - 1)
    c0c = np.clip(c0, 0, w - 2)
    r0c = np.clip(r0, 0, h - 2)
    v00 = hm.values[r0c, c0c]
    v01 = hm.values[r0c, c0c + 1]
    v10 = hm.values[r0c + 1, c0c]
    v11 = hm.values[r0c + 1, c0c + 1]
    m = (hm.mask[r0c, c0c] | hm.mask[r0c, c0c + 1]
         | hm.mask[r0c + 1, c0c] | hm.mask[r0c + 1, c0c + 1])
    unknown = ~inside | m
    top = v00 * (1 - fc) + v01 * fc
    bot = v10 * (1 - fc) + v11 * fc
    values = (top * (1 - fr) + bot * fr).astype(np.float32)
    values = np.where(unknown, np.float32(np.nan), values)
    return values, unknown


def extract_window(hm: Heightmap, x: float, y: float, a: float,
                   size: int = WINDOW_PX) -> Window:
    """Crop a size^2 window at world (x, y) with its x axis rotated by `a`."""
    g = (size - 1) // 2
    offs = (np.arange(size) - g) * hm.resolution
    ox, oy = np.meshgrid(offs, offs)  # ox along window x (cols), oy rows
    ca, sa = math.cos(a), math.sin(a)
    wx = x + ca * ox - sa * oy
    wy = y + sa * ox + ca * oy
    values, unknown = sample_bilinear(hm, wx, wy)
    return Window(values, unknown, hm.resolution, (float(x), float(y)), float(a))


def rotation_angles(n_rot: int) -> np.ndarray:
    """Yaw bins spaced pi/n_rot; n_rot=1 is the unrotated map."""
    if n_rot < 1:
        raise ImagingError("n_rot must be >= 1")
    k = np.arange(n_rot)
    return (k - n_rot // 2) * math.pi / n_rot


def rotate_about_center(hm: Heightmap, angle: float) -> Heightmap:
    """Resample the map rotated by `angle` about its center point.

    Pixel (r, c) of the result samples the source at
    center + R(angle) (p_rc - center), so a window cut axis-aligned from the
    result equals a window cut from the source at yaw `angle`.
    """
    h, w = hm.shape
    cx, cy = hm.center_world()
    gx, gy = hm.px_to_world(*np.meshgrid(np.arange(w), np.arange(h)))
    ca, sa = math.cos(angle), math.sin(angle)
    dx, dy = gx - cx, gy - cy
    sx = cx + ca * dx - sa * dy
    sy = cy + sa * dx + ca * dy
    values, unknown = sample_bilinear(hm, sx, sy)
    return Heightmap(values, unknown, hm.resolution, hm.origin, hm.wall_height)


def rotation_stack(hm: Heightmap, n_rot: int):
    """All yaw-bin rotations of the map. Returns (list of Heightmap, angles)."""
    angles = rotation_angles(n_rot)
    return [rotate_about_center(hm, float(a)) for a in angles], angles


def stack_cell_to_world(hm: Heightmap, angle: float, row: float, col: float):
    """World pose equivalent to pixel (row, col) of the rotated view."""
    cx, cy = hm.center_world()
    px, py = hm.px_to_world(col, row)
    ca, sa = math.cos(angle), math.sin(angle)
    dx, dy = px - cx, py - cy
    return (cx + ca * dx - sa * dy, cy + sa * dx + ca * dy)


def augment(values: np.ndarray, mask: np.ndarray, rng: np.random.Generator):
    """Sensor-style corruption for training windows.

    Height scale U(0.95, 1.05), height offset U(-5, +5) mm, and a salt fraction
    U(0, 2%) of pixels newly masked. Never unmasks a pixel.
    """
    scale = rng.uniform(0.95, 1.05)
    offset = rng.uniform(-0.005, 0.005)
    out = values * scale + offset
    m = mask.copy()
    frac = rng.uniform(0.0, 0.02)
    salt = rng.random(mask.shape) < frac
    m |= salt
    out = np.where(m, np.float32(np.nan), out.astype(np.float32))
    return out, m
