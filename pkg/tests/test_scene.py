"""Rigid shapes, placement, occupancy queries, and rendering."""

import math

import numpy as np
import pytest

from graspgrid.scene import (BinGeometry, RigidObject, Scene, SceneError,
                             column_tops, place_random, remove_object,
                             render_heightmap, sample_object, sample_scene,
                             scene_occupied)

KINDS = [
    RigidObject("box", (0.08, 0.04, 0.03), resting="flat"),
    RigidObject("box", (0.06, 0.04, 0.04), resting="tilted"),
    RigidObject("cylinder", (0.02, 0.06), resting="upright"),
    RigidObject("cylinder", (0.02, 0.07), resting="side"),
    RigidObject("sphere", (0.025,)),
    RigidObject("wedge", (0.06, 0.05, 0.03)),
]


def posed(obj, x=0.0, y=0.0, yaw=0.0):
    from dataclasses import replace
    return replace(obj, x=x, y=y, yaw=yaw)


def test_unknown_kind_rejected():
    with pytest.raises(SceneError):
        RigidObject("torus", (0.02, 0.05))


def test_top_heights_per_kind():
    assert KINDS[0].top_z() == pytest.approx(0.03)          # flat box: lz
    assert KINDS[2].top_z() == pytest.approx(0.06)          # upright: length
    assert KINDS[3].top_z() == pytest.approx(0.04)          # side: 2 r
    assert KINDS[4].top_z() == pytest.approx(0.05)          # sphere: 2 r
    assert KINDS[5].top_z() == pytest.approx(0.03)          # wedge: h
    for obj in KINDS:
        # every shape rests with its center midway up its height
        assert obj.center_height() == pytest.approx(obj.top_z() / 2.0)
        assert obj.center3()[2] >= 0.0


def test_support_width_matches_vertex_oracle_box(rng):
    for _ in range(50):
        obj = posed(RigidObject("box",
                                tuple(rng.uniform(0.02, 0.09, size=3)),
                                resting=str(rng.choice(["flat", "tilted"]))),
                    yaw=rng.uniform(-math.pi, math.pi))
        rot = obj.rotation()
        h = obj.half_extents()
        corners = np.array([[sx * h[0], sy * h[1], sz * h[2]]
                            for sx in (-1, 1) for sy in (-1, 1)
                            for sz in (-1, 1)]) @ rot.T
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        oracle = np.abs(corners @ d).max()
        assert obj.support_width(d) == pytest.approx(oracle, abs=1e-9)


def test_support_width_matches_boundary_oracle_cylinder(rng):
    phi = np.linspace(0.0, 2 * math.pi, 20000, endpoint=False)
    for _ in range(20):
        obj = posed(RigidObject("cylinder",
                                (rng.uniform(0.01, 0.03),
                                 rng.uniform(0.03, 0.09)),
                                resting=str(rng.choice(["upright", "side"]))),
                    yaw=rng.uniform(-math.pi, math.pi))
        radius, length = obj.dims
        axis = obj.rotation()[:, 2]
        u = np.cross(axis, [0.0, 0.0, 1.0])
        if np.linalg.norm(u) < 1e-9:
            u = np.cross(axis, [1.0, 0.0, 0.0])
        u /= np.linalg.norm(u)
        v = np.cross(axis, u)
        rim = (radius * np.outer(np.cos(phi), u)
               + radius * np.outer(np.sin(phi), v))
        pts = np.vstack([rim + axis * length / 2.0, rim - axis * length / 2.0])
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        oracle = np.abs(pts @ d).max()
        assert obj.support_width(d) == pytest.approx(oracle, abs=1e-6)


def test_support_width_matches_vertex_oracle_wedge(rng):
    for _ in range(50):
        obj = posed(RigidObject("wedge", (rng.uniform(0.04, 0.08),
                                          rng.uniform(0.03, 0.06),
                                          rng.uniform(0.02, 0.04))),
                    yaw=rng.uniform(-math.pi, math.pi))
        edges = obj._wedge_edges()
        corners = np.array([[sx, sy, sz] for sx in (-0.5, 0.5)
                            for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)])
        verts = corners @ edges.T
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        oracle = np.abs(verts @ d).max()
        assert obj.support_width(d) == pytest.approx(oracle, abs=1e-9)


def test_support_width_sphere_is_radius(rng):
    obj = RigidObject("sphere", (0.03,))
    for _ in range(10):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        assert obj.support_width(d) == pytest.approx(0.03)


def test_contains_agrees_with_top_surface(rng):
    """Just below the rendered top is solid; just above is free."""
    for obj in KINDS:
        o = posed(obj, x=0.01, y=-0.02, yaw=0.4)
        span = o.footprint_radius() * 0.9
        gx = o.x + rng.uniform(-span, span, size=200)
        gy = o.y + rng.uniform(-span, span, size=200)
        top = o.top_surface(gx, gy)
        hit = np.isfinite(top) & (top > 2e-3)
        pts_in = np.column_stack([gx[hit], gy[hit], top[hit] - 1e-4])
        pts_out = np.column_stack([gx[hit], gy[hit], top[hit] + 1e-4])
        assert o.contains(pts_in).all()
        assert not o.contains(pts_out).any()


def test_wedge_overhang_shades_empty_floor():
    """Columns under the overhang face see the top but are hollow below."""
    obj = RigidObject("wedge", (0.06, 0.04, 0.03))
    y = np.array([0.0345])          # beyond the base, under the upper lip
    x = np.array([0.0])
    top = obj.top_surface(x, y)
    assert np.isfinite(top[0]) and top[0] == pytest.approx(0.03, abs=1e-6)
    assert not obj.contains(np.array([[0.0, 0.0345, 0.001]]))[0]
    assert obj.contains(np.array([[0.0, 0.0345, 0.0295]]))[0]


def test_column_tops_cover_contained_points(rng):
    """No solid point ever pokes above the reported column top."""
    scene = sample_scene(6, np.random.default_rng(3))
    for obj in scene.objects:
        r = obj.footprint_radius()
        box = np.column_stack([
            obj.x + rng.uniform(-r, r, size=400),
            obj.y + rng.uniform(-r, r, size=400),
            rng.uniform(0.0, obj.top_z(), size=400),
        ])
        inside = scene_occupied(scene, box)
        tops = column_tops(scene, box[:, 0], box[:, 1])
        assert (tops[inside] >= box[inside, 2] - 1e-9).all()


def test_column_tops_report_walls():
    scene = Scene(BinGeometry())
    tops = column_tops(scene, np.array([0.0, 0.16, 0.25]), np.zeros(3))
    np.testing.assert_allclose(tops, [0.0, 0.10, 0.0])


def test_scene_occupied_wall_band():
    scene = Scene(BinGeometry())
    pts = np.array([
        [0.16, 0.0, 0.05],    # inside the wall band, below the top
        [0.16, 0.0, 0.15],    # above the wall
        [0.0, 0.0, 0.05],     # interior air
        [0.0, -0.16, 0.02],   # wall band on the y side
    ])
    np.testing.assert_array_equal(scene_occupied(scene, pts),
                                  [True, False, False, True])


def test_contact_normals():
    box = RigidObject("box", (0.08, 0.04, 0.03), resting="flat")
    np.testing.assert_allclose(box.contact_normal([1.0, 0.0, 0.0]),
                               [1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(box.contact_normal([-0.9, 0.1, 0.0]),
                               [-1.0, 0.0, 0.0], atol=1e-12)
    cyl = RigidObject("cylinder", (0.02, 0.06), resting="upright")
    np.testing.assert_allclose(cyl.contact_normal([1.0, 0.0, 0.0]),
                               [1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(cyl.contact_normal([0.0, 0.0, 1.0]),
                               [0.0, 0.0, 1.0], atol=1e-12)
    sph = RigidObject("sphere", (0.02,))
    d = np.array([0.6, 0.8, 0.0])
    np.testing.assert_allclose(sph.contact_normal(d), d)


def test_placement_respects_disjoint_footprints(rng):
    from graspgrid.loop import robust_scene
    scene = robust_scene(8, rng, BinGeometry())
    assert len(scene.objects) == 8
    ids = [o.obj_id for o in scene.objects]
    assert sorted(ids) == list(range(8))
    half = scene.bin.inner_half
    for i, a in enumerate(scene.objects):
        assert abs(a.x) <= half - a.footprint_radius() + 1e-9
        assert abs(a.y) <= half - a.footprint_radius() + 1e-9
        for b in scene.objects[i + 1:]:
            dist = math.hypot(a.x - b.x, a.y - b.y)
            assert dist >= a.footprint_radius() + b.footprint_radius() - 2e-3


def test_oversized_object_rejected(rng):
    scene = Scene(BinGeometry())
    with pytest.raises(SceneError):
        place_random(scene, RigidObject("sphere", (0.2,)), rng)


def test_jammed_bin_raises(rng):
    scene = Scene(BinGeometry(inner_size=0.12))
    big = RigidObject("sphere", (0.045,))
    scene = place_random(scene, big, rng)
    with pytest.raises(SceneError):
        place_random(scene, big, rng, max_tries=50)


def test_place_random_leaves_input_scene_unchanged(rng):
    scene = Scene(BinGeometry())
    out = place_random(scene, RigidObject("sphere", (0.02,)), rng)
    assert len(scene.objects) == 0
    assert len(out.objects) == 1


def test_remove_object_copies(rng):
    scene = sample_scene(3, rng)
    out = remove_object(scene, scene.objects[1].obj_id)
    assert len(scene.objects) == 3
    assert len(out.objects) == 2
    with pytest.raises(SceneError):
        remove_object(scene, 999)
    with pytest.raises(SceneError):
        scene.get(999)


def test_scene_save_load_round_trip(tmp_path, rng):
    scene = sample_scene(5, rng)
    path = str(tmp_path / "scene.json")
    scene.save(path)
    back = Scene.load(path)
    assert back.to_dict() == scene.to_dict()
    assert back.next_id == scene.next_id


def test_sampled_objects_are_graspable_sizes(rng):
    for _ in range(200):
        obj = sample_object(rng)
        assert obj.footprint_radius() < 0.08
        assert 0.0 < obj.top_z() <= 0.12


def test_render_heightmap_box_height(rng):
    scene = Scene(BinGeometry())
    scene.objects.append(RigidObject("box", (0.08, 0.05, 0.03),
                                     resting="flat", obj_id=0))
    hm = render_heightmap(scene)
    col, row = hm.world_to_px(0.0, 0.0)
    assert hm.values[int(round(row)), int(round(col))] == pytest.approx(0.03)
    # off the box, inside the bin: floor
    col, row = hm.world_to_px(0.1, 0.1)
    assert hm.values[int(round(row)), int(round(col))] == 0.0
