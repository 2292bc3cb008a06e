"""Simulated bin scenes: rigid shapes on a plane inside four walls.

Objects are boxes, cylinders, spheres and wedges with a resting-orientation
tag (boxes can lean 45 degrees on an edge, cylinders can lie on their side; a
wedge is a box sheared 45 degrees sideways, so its two long side faces slant
at 45 degrees with one of them overhanging). Placement rejection-samples
disjoint horizontal footprints, so every object rests on the floor. Rendering
is analytic: each shape exposes its top surface as z(x, y) over the grid and
the map is the pointwise max over shapes, walls included.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .heightmap import Heightmap, make_heightmap

TILT_ANGLE = math.pi / 4          # lean of a "tilted" box about its local x
SHAPE_KINDS = ("box", "cylinder", "sphere", "wedge")
SQRT2 = math.sqrt(2.0)
EPS = 1e-9


class SceneError(ValueError):
    pass


@dataclass
class BinGeometry:
    inner_size: float = 0.30      # inner edge length of the square bin (m)
    wall_thickness: float = 0.02
    wall_height: float = 0.10
    center: tuple[float, float] = (0.0, 0.0)

    @property
    def inner_half(self) -> float:
        return self.inner_size / 2.0

    @property
    def outer_half(self) -> float:
        return self.inner_size / 2.0 + self.wall_thickness

    def to_dict(self) -> dict:
        return {"inner_size": self.inner_size, "wall_thickness": self.wall_thickness,
                "wall_height": self.wall_height, "center": list(self.center)}

    @staticmethod
    def from_dict(d: dict) -> "BinGeometry":
        return BinGeometry(d["inner_size"], d["wall_thickness"], d["wall_height"],
                           tuple(d["center"]))


@dataclass
class RigidObject:
    """One rigid body resting on the floor.

    dims: box (lx, ly, lz); cylinder (radius, length); sphere (radius,);
    wedge (lx, w, h): a box of cross section w x h sheared by 45 degrees so
    every height slice shifts toward +local-y by its height, leaving a flat
    top, a 45 degree ramp face and a parallel 45 degree overhang face.
    resting: box "flat" | "tilted"; cylinder "upright" | "side"; else "".
    yaw rotates the local frame about world z; tilted boxes additionally lean
    by TILT_ANGLE about their local x axis before the yaw is applied.
    """

    kind: str
    dims: tuple
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    resting: str = ""
    obj_id: int = -1

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise SceneError(f"unknown shape kind {self.kind!r}")
        self.dims = tuple(float(v) for v in self.dims)

    # -- derived geometry ---------------------------------------------------

    def rotation(self) -> np.ndarray:
        """World-from-local rotation (yaw about z, then the resting lean)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        if self.kind == "box" and self.resting == "tilted":
            ct, st = math.cos(TILT_ANGLE), math.sin(TILT_ANGLE)
            rx = np.array([[1.0, 0.0, 0.0], [0.0, ct, -st], [0.0, st, ct]])
            return rz @ rx
        if self.kind == "cylinder" and self.resting == "side":
            # local z (the axis) laid along local x
            ry = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
            return rz @ ry
        return rz

    def half_extents(self) -> np.ndarray:
        """Local half extents of the bounding box of the shape."""
        if self.kind == "box":
            return np.array(self.dims) / 2.0
        if self.kind == "cylinder":
            r, length = self.dims
            return np.array([r, r, length / 2.0])
        if self.kind == "wedge":
            lx, w, h = self.dims
            return np.array([lx / 2.0, (w + h) / 2.0, h / 2.0])
        return np.array([self.dims[0]] * 3)

    def _wedge_edges(self) -> np.ndarray:
        """World edge vectors of the sheared box, as columns."""
        lx, w, h = self.dims
        local = np.array([[lx, 0.0, 0.0], [0.0, w, 0.0], [0.0, h, h]]).T
        return self.rotation() @ local

    def _wedge_normals(self) -> np.ndarray:
        """World outward face normals (6 columns: shear pair, top/bottom, caps)."""
        s = 1.0 / SQRT2
        local = np.array([
            [0.0, s, -s],    # overhanging 45 degree face (+local-y side)
            [0.0, -s, s],    # visible ramp face
            [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
            [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
        ]).T
        return self.rotation() @ local

    def center3(self) -> np.ndarray:
        """World position of the shape's geometric center."""
        return np.array([self.x, self.y, self.center_height()])

    def center_height(self) -> float:
        r = self.rotation()
        h = self.half_extents()
        if self.kind == "box":
            # lowest corner at z = 0
            return float(np.abs(r[2]) @ h)
        if self.kind == "cylinder":
            radius, length = self.dims
            if self.resting == "side":
                return radius
            return length / 2.0
        if self.kind == "wedge":
            return self.dims[2] / 2.0
        return self.dims[0]

    def top_z(self) -> float:
        r = self.rotation()
        h = self.half_extents()
        if self.kind == "box":
            return float(2.0 * (np.abs(r[2]) @ h))
        if self.kind == "cylinder":
            radius, length = self.dims
            return 2.0 * radius if self.resting == "side" else length
        if self.kind == "wedge":
            return self.dims[2]
        return 2.0 * self.dims[0]

    def footprint_radius(self) -> float:
        """Radius of a horizontal circle covering the shape's footprint."""
        r = self.rotation()
        h = self.half_extents()
        if self.kind == "box":
            return float(math.hypot(np.abs(r[0]) @ h, np.abs(r[1]) @ h))
        if self.kind == "cylinder":
            radius, length = self.dims
            return math.hypot(length / 2.0, radius) if self.resting == "side" else radius
        if self.kind == "wedge":
            lx, w, h_ = self.dims
            return math.hypot(lx / 2.0, (w + h_) / 2.0)
        return self.dims[0]

    # -- rendering ----------------------------------------------------------

    def top_surface(self, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
        """Height of the shape's upper surface on grid points, NaN off-shape."""
        if self.kind == "box":
            return self._box_top(gx, gy)
        if self.kind == "cylinder":
            return self._cylinder_top(gx, gy)
        if self.kind == "wedge":
            return self._wedge_top(gx, gy)
        r = self.dims[0]
        d2 = (gx - self.x) ** 2 + (gy - self.y) ** 2
        out = np.full(gx.shape, np.nan)
        hit = d2 <= r * r
        out[hit] = r + np.sqrt(np.maximum(r * r - d2[hit], 0.0))
        return out

    def _box_top(self, gx, gy):
        # box = intersection of three slabs |u_i . (p - c)| <= h_i; per grid
        # column solve the z interval and take its top
        rot = self.rotation()
        h = self.half_extents()
        c = self.center3()
        lo = np.full(gx.shape, -np.inf)
        hi = np.full(gx.shape, np.inf)
        ok = np.ones(gx.shape, dtype=bool)
        for i in range(3):
            u = rot[:, i]
            s = u[0] * (gx - c[0]) + u[1] * (gy - c[1]) - u[2] * c[2]
            if abs(u[2]) > 1e-8:
                a = (-h[i] - s) / u[2]
                b = (h[i] - s) / u[2]
                lo = np.maximum(lo, np.minimum(a, b))
                hi = np.minimum(hi, np.maximum(a, b))
            else:
                ok &= np.abs(s) <= h[i]
        ok &= lo <= hi + EPS
        out = np.full(gx.shape, np.nan)
        out[ok] = hi[ok]
        return out

    def _cylinder_top(self, gx, gy):
        radius, length = self.dims
        out = np.full(gx.shape, np.nan)
        if self.resting == "side":
            axis = np.array([math.cos(self.yaw), math.sin(self.yaw)])
            dx, dy = gx - self.x, gy - self.y
            t = dx * axis[0] + dy * axis[1]
            d2 = dx * dx + dy * dy - t * t
            hit = (np.abs(t) <= length / 2.0) & (d2 <= radius * radius)
            out[hit] = radius + np.sqrt(np.maximum(radius * radius - d2[hit], 0.0))
        else:
            d2 = (gx - self.x) ** 2 + (gy - self.y) ** 2
            out[d2 <= radius * radius] = length
        return out

    def _wedge_top(self, gx, gy):
        # the sheared box is |x| <= lx/2, |z - h/2| <= h/2, |y - (z - h/2)| <= w/2
        # in centroid coordinates; the top of the z interval per column is the
        # flat top capped by the ramp constraint, the overhang face projects to
        # a vertical drop at the +local-y silhouette edge
        lx, w, h = self.dims
        cy_, sy_ = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = gx - self.x, gy - self.y
        x_l = cy_ * dx + sy_ * dy
        y_l = -sy_ * dx + cy_ * dy
        top = np.minimum(h / 2.0, y_l + w / 2.0)
        bottom = np.maximum(-h / 2.0, y_l - w / 2.0)
        ok = (np.abs(x_l) <= lx / 2.0) & (top >= bottom - EPS)
        out = np.full(gx.shape, np.nan)
        out[ok] = h / 2.0 + top[ok]
        return out

    # -- grasp-time queries ---------------------------------------------------

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Solid occupancy test for world points of shape (N, 3), inclusive."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "wedge":
            lx, w, h = self.dims
            cy_, sy_ = math.cos(self.yaw), math.sin(self.yaw)
            dx, dy = pts[:, 0] - self.x, pts[:, 1] - self.y
            x_l = cy_ * dx + sy_ * dy
            y_l = -sy_ * dx + cy_ * dy
            z_c = pts[:, 2] - h / 2.0
            return ((np.abs(x_l) <= lx / 2.0 + EPS)
                    & (np.abs(z_c) <= h / 2.0 + EPS)
                    & (np.abs(y_l - z_c) <= w / 2.0 + EPS))
        rel = pts - self.center3()
        if self.kind == "box":
            local = rel @ self.rotation()
            return np.all(np.abs(local) <= self.half_extents() + EPS, axis=1)
        if self.kind == "cylinder":
            radius, length = self.dims
            axis = self.rotation()[:, 2]
            along = rel @ axis
            rad2 = np.einsum("ij,ij->i", rel, rel) - along * along
            return (np.abs(along) <= length / 2.0 + EPS) & \
                   (rad2 <= (radius + EPS) ** 2)
        r = self.dims[0]
        return np.einsum("ij,ij->i", rel, rel) <= (r + EPS) ** 2

    def support_width(self, dhat: np.ndarray) -> float:
        """Half extent of the shape along unit direction dhat (3-d support)."""
        dhat = np.asarray(dhat, dtype=float)
        if self.kind == "box":
            rot = self.rotation()
            return float(np.abs(dhat @ rot) @ self.half_extents())
        if self.kind == "cylinder":
            radius, length = self.dims
            axis = self.rotation()[:, 2]
            along = abs(float(dhat @ axis))
            perp = math.sqrt(max(1.0 - along * along, 0.0))
            return (length / 2.0) * along + radius * perp
        if self.kind == "wedge":
            return float(np.sum(np.abs(dhat @ self._wedge_edges())) / 2.0)
        return self.dims[0]

    def contact_normal(self, dhat: np.ndarray) -> np.ndarray:
        """Outward surface normal at the support contact along dhat."""
        dhat = np.asarray(dhat, dtype=float)
        if self.kind == "box":
            rot = self.rotation()
            proj = dhat @ rot
            i = int(np.argmax(np.abs(proj)))
            return rot[:, i] * math.copysign(1.0, proj[i])
        if self.kind == "cylinder":
            axis = self.rotation()[:, 2]
            along = float(dhat @ axis)
            perp = dhat - along * axis
            norm = float(np.linalg.norm(perp))
            if norm >= abs(along):
                return perp / max(norm, EPS)
            return axis * math.copysign(1.0, along)
        if self.kind == "wedge":
            normals = self._wedge_normals()
            return normals[:, int(np.argmax(dhat @ normals))]
        return dhat

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims), "x": self.x,
                "y": self.y, "yaw": self.yaw, "resting": self.resting,
                "obj_id": self.obj_id}

    @staticmethod
    def from_dict(d: dict) -> "RigidObject":
        return RigidObject(d["kind"], tuple(d["dims"]), d["x"], d["y"],
                           d["yaw"], d["resting"], d["obj_id"])


@dataclass
class Scene:
    bin: BinGeometry = field(default_factory=BinGeometry)
    objects: list = field(default_factory=list)
    next_id: int = 0

    def copy(self) -> "Scene":
        return Scene(replace(self.bin), [replace(o) for o in self.objects], self.next_id)

    def get(self, obj_id: int) -> RigidObject:
        for o in self.objects:
            if o.obj_id == obj_id:
                return o
        raise SceneError(f"no object with id {obj_id}")

    def to_dict(self) -> dict:
        return {"bin": self.bin.to_dict(),
                "objects": [o.to_dict() for o in self.objects],
                "next_id": self.next_id}

    @staticmethod
    def from_dict(d: dict) -> "Scene":
        return Scene(BinGeometry.from_dict(d["bin"]),
                     [RigidObject.from_dict(o) for o in d["objects"]],
                     d["next_id"])

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def load(path: str) -> "Scene":
        with open(path) as f:
            return Scene.from_dict(json.load(f))


def remove_object(scene: Scene, obj_id: int) -> Scene:
    out = scene.copy()
    before = len(out.objects)
    out.objects = [o for o in out.objects if o.obj_id != obj_id]
    if len(out.objects) == before:
        raise SceneError(f"no object with id {obj_id}")
    return out


def _fits(scene: Scene, obj: RigidObject, margin: float = 0.001) -> bool:
    rad = obj.footprint_radius()
    half = scene.bin.inner_half - rad
    cx, cy = scene.bin.center
    if abs(obj.x - cx) > half or abs(obj.y - cy) > half:
        return False
    for other in scene.objects:
        dist = math.hypot(obj.x - other.x, obj.y - other.y)
        if dist < rad + other.footprint_radius() - margin:
            return False
    return True


def place_random(scene: Scene, obj: RigidObject, rng: np.random.Generator,
                 max_tries: int = 100) -> Scene:
    """Drop `obj` at a random free pose; raises SceneError when none is found."""
    out = scene.copy()
    rad = obj.footprint_radius()
    half = out.bin.inner_half - rad
    if half <= 0:
        raise SceneError("object footprint larger than the bin")
    cx, cy = out.bin.center
    for _ in range(max_tries):
        cand = replace(obj,
                       x=cx + rng.uniform(-half, half),
                       y=cy + rng.uniform(-half, half),
                       yaw=rng.uniform(-math.pi, math.pi))
        if _fits(out, cand):
            if cand.obj_id < 0:
                cand.obj_id = out.next_id
                out.next_id += 1
            out.objects.append(cand)
            return out
    raise SceneError(f"no free pose for object after {max_tries} tries")


def sample_object(rng: np.random.Generator) -> RigidObject:
    """Draw one shape from the corpus mix; dims keep one extent graspable."""
    roll = rng.random()
    if roll < 0.30:
        lx = rng.uniform(0.035, 0.09)
        ly = rng.uniform(0.022, min(0.075, lx))
        lz = rng.uniform(0.02, 0.06)
        return RigidObject("box", (lx, ly, lz), resting="flat")
    if roll < 0.45:
        lx = rng.uniform(0.04, 0.075)
        ly = rng.uniform(0.025, 0.05)
        lz = rng.uniform(0.025, 0.05)
        return RigidObject("box", (lx, ly, lz), resting="tilted")
    if roll < 0.60:
        lx = rng.uniform(0.05, 0.08)
        h = rng.uniform(0.025, 0.045)
        w = rng.uniform(h + 0.005, 0.065)   # wider than tall: rests stably
        return RigidObject("wedge", (lx, w, h))
    if roll < 0.75:
        r = rng.uniform(0.012, 0.035)
        length = rng.uniform(0.03, 0.08)
        return RigidObject("cylinder", (r, length), resting="upright")
    if roll < 0.85:
        r = rng.uniform(0.012, 0.03)
        length = rng.uniform(0.04, 0.09)
        return RigidObject("cylinder", (r, length), resting="side")
    r = rng.uniform(0.015, 0.035)
    return RigidObject("sphere", (r,))


def sample_scene(n_objects: int, rng: np.random.Generator,
                 bin_geom: BinGeometry | None = None) -> Scene:
    scene = Scene(bin_geom if bin_geom is not None else BinGeometry())
    for _ in range(n_objects):
        scene = place_random(scene, sample_object(rng), rng)
    return scene


def scene_occupied(scene: Scene, pts: np.ndarray) -> np.ndarray:
    """True-solid occupancy of world points (N, 3): objects plus bin walls.

    The floor is not included; callers treat z < 0 separately since touching
    the floor from above is a contact, not an overlap.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    cx, cy = scene.bin.center
    span = np.maximum(np.abs(pts[:, 0] - cx), np.abs(pts[:, 1] - cy))
    hit = ((span >= scene.bin.inner_half) & (span <= scene.bin.outer_half)
           & (pts[:, 2] >= 0.0) & (pts[:, 2] <= scene.bin.wall_height))
    for obj in scene.objects:
        hit |= obj.contains(pts)
    return hit


def column_tops(scene: Scene, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Highest solid surface per (x, y) column: objects, walls, floor at 0."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    cx, cy = scene.bin.center
    span = np.maximum(np.abs(xs - cx), np.abs(ys - cy))
    tops = np.where((span >= scene.bin.inner_half) & (span <= scene.bin.outer_half),
                    scene.bin.wall_height, 0.0)
    for obj in scene.objects:
        t = obj.top_surface(xs, ys)
        good = np.isfinite(t)
        tops[good] = np.maximum(tops[good], t[good])
    return tops


# -- rendering ----------------------------------------------------------------

DEFAULT_MAP_PX = 110
DEFAULT_RESOLUTION = 0.11 / 32.0  # 3.4375 mm/px; 110 px cover 0.378 m


def default_origin(bin_geom: BinGeometry, px: int = DEFAULT_MAP_PX,
                   resolution: float = DEFAULT_RESOLUTION) -> tuple[float, float]:
    cx, cy = bin_geom.center
    half = px * resolution / 2.0
    return (cx - half, cy - half)


def render_heightmap(scene: Scene, px: int = DEFAULT_MAP_PX,
                     resolution: float = DEFAULT_RESOLUTION,
                     origin: tuple[float, float] | None = None) -> Heightmap:
    if origin is None:
        origin = default_origin(scene.bin, px, resolution)
    cols = origin[0] + (np.arange(px) + 0.5) * resolution
    rows = origin[1] + (np.arange(px) + 0.5) * resolution
    gx, gy = np.meshgrid(cols, rows)
    cx, cy = scene.bin.center
    heights = np.zeros((px, px), dtype=np.float64)
    span = np.maximum(np.abs(gx - cx), np.abs(gy - cy))
    walls = (span >= scene.bin.inner_half) & (span <= scene.bin.outer_half)
    heights[walls] = scene.bin.wall_height
    for obj in scene.objects:
        top = obj.top_surface(gx, gy)
        hit = np.isfinite(top)
        heights[hit] = np.maximum(heights[hit], top[hit])
    return make_heightmap(heights, resolution, origin,
                          wall_height=scene.bin.wall_height)
