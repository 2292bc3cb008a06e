"""Top-down height grids and their on-disk format.

A heightmap is a dense float32 grid of surface heights in meters plus a boolean
mask of unknown cells (occlusions, sensor dropout). Unknown cells carry NaN in
the value array. On disk a map is a 16-bit binary PGM in 0.1 mm units with a
JSON sidecar for geometry; the mask, when present, is an 8-bit PGM (255 =
unknown).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

HEIGHT_UNIT_M = 1e-4  # one PGM count = 0.1 mm
PGM_MAXVAL = 65535


class HeightmapError(ValueError):
    pass


@dataclass
class Heightmap:
    """Height grid with pixel (row, col) -> world (x, y) georeferencing.

    Pixel centers sit at origin + (index + 0.5) * resolution, rows along world
    y and columns along world x. `mask[r, c]` True means the cell height is
    unknown; the matching `values` entry is NaN.
    """

    values: np.ndarray              # (H, W) float32, meters, NaN where masked
    mask: np.ndarray                # (H, W) bool, True = unknown
    resolution: float               # meters per pixel
    origin: tuple[float, float]     # world (x, y) of the map's low corner
    wall_height: float = 0.0        # bin wall height, informational

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape or self.values.ndim != 2:
            raise HeightmapError("values and mask must be matching 2-d arrays")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def world_to_px(self, x, y):
        """World coords -> fractional (col, row); integers are pixel centers."""
        col = (np.asarray(x) - self.origin[0]) / self.resolution - 0.5
        row = (np.asarray(y) - self.origin[1]) / self.resolution - 0.5
        return col, row

    def px_to_world(self, col, row):
        x = self.origin[0] + (np.asarray(col) + 0.5) * self.resolution
        y = self.origin[1] + (np.asarray(row) + 0.5) * self.resolution
        return x, y

    def center_world(self) -> tuple[float, float]:
        h, w = self.values.shape
        return (self.origin[0] + 0.5 * w * self.resolution,
                self.origin[1] + 0.5 * h * self.resolution)

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Values with masked cells replaced by `fill`."""
        out = self.values.copy()
        out[self.mask] = fill
        return out

    def copy(self) -> "Heightmap":
        return Heightmap(self.values.copy(), self.mask.copy(),
                         self.resolution, self.origin, self.wall_height)


def make_heightmap(values, resolution, origin, mask=None, wall_height=0.0) -> Heightmap:
    values = np.array(values, dtype=np.float32)
    if mask is None:
        mask = np.zeros(values.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool).copy()
    values = values.copy()
    values[mask] = np.nan
    return Heightmap(values, mask, float(resolution), origin, float(wall_height))


def _write_pgm(path: str, data: np.ndarray, maxval: int) -> None:
    h, w = data.shape
    dtype = ">u2" if maxval > 255 else np.uint8
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(np.ascontiguousarray(data.astype(dtype)).tobytes())


def _read_pgm(path: str) -> tuple[np.ndarray, int]:
    with open(path, "rb") as f:
        raw = f.read()
    # header: magic, width, height, maxval separated by whitespace/comments
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise HeightmapError(f"not a binary PGM: {path}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else np.uint8
    count = w * h
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    return data.reshape(h, w), maxval


def save_heightmap(hm: Heightmap, path: str) -> None:
    """Write `<path>.pgm` / `<path>.json`, plus `<path>.mask.pgm` if masked."""
    base = path[:-4] if path.endswith(".pgm") else path
    counts = np.clip(np.round(hm.filled(0.0) / HEIGHT_UNIT_M), 0, PGM_MAXVAL)
    _write_pgm(base + ".pgm", counts.astype(np.uint16), PGM_MAXVAL)
    meta = {
        "resolution_m_per_px": hm.resolution,
        "origin_xy_m": [hm.origin[0], hm.origin[1]],
        "wall_height_m": hm.wall_height,
    }
    if hm.mask.any():
        _write_pgm(base + ".mask.pgm", np.where(hm.mask, 255, 0).astype(np.uint8), 255)
        meta["mask_file"] = os.path.basename(base) + ".mask.pgm"
    with open(base + ".json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_heightmap(path: str) -> Heightmap:
    base = path[:-4] if path.endswith(".pgm") else path
    data, maxval = _read_pgm(base + ".pgm")
    if maxval != PGM_MAXVAL:
        raise HeightmapError(f"height PGM must have maxval {PGM_MAXVAL}")
    with open(base + ".json") as f:
        meta = json.load(f)
    values = data.astype(np.float32) * HEIGHT_UNIT_M
    mask = np.zeros(values.shape, dtype=bool)
    if "mask_file" in meta:
        mdata, _ = _read_pgm(os.path.join(os.path.dirname(base) or ".", meta["mask_file"]))
        if mdata.shape != values.shape:
            raise HeightmapError("mask shape does not match height data")
        mask = mdata > 127
    values[mask] = np.nan
    return Heightmap(values, mask,
                     float(meta["resolution_m_per_px"]),
                     tuple(meta["origin_xy_m"]),
                     float(meta.get("wall_height_m", 0.0)))


def project_pointcloud(points: np.ndarray, resolution: float,
                       origin: tuple[float, float], shape: tuple[int, int]) -> Heightmap:
    """Max z-buffer projection of an (N, 3) cloud; unhit cells stay masked."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] == 0:
        raise HeightmapError("need a non-empty (N, 3) point array")
    h, w = shape
    col = np.floor((points[:, 0] - origin[0]) / resolution).astype(np.int64)
    row = np.floor((points[:, 1] - origin[1]) / resolution).astype(np.int64)
    keep = (col >= 0) & (col < w) & (row >= 0) & (row < h)
    values = np.full(shape, -np.inf, dtype=np.float32)
    np.maximum.at(values, (row[keep], col[keep]), points[keep, 2].astype(np.float32))
    mask = ~np.isfinite(values)
    values[mask] = np.nan
    return Heightmap(values, mask, float(resolution), origin)
