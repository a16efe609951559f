import math

import numpy as np
import pytest

from cuboidtrack.errors import NonPositiveDepth
from cuboidtrack.geometry import (
    VERTEX_SIGNS,
    Cuboid,
    CuboidDimensions,
    RigidTransform,
    compose,
    cuboid_vertices,
    invert,
    look_at,
    project,
    rot_x,
    rot_y,
    rot_z,
    rotation_distance,
    so3_exp,
    so3_log,
    unproject,
)

from conftest import random_cuboid, random_rotation


def test_unit_box_vertices_at_identity():
    v = cuboid_vertices(CuboidDimensions([1, 1, 1]), RigidTransform.identity())
    assert v.shape == (8, 3)
    np.testing.assert_array_equal(np.abs(v), 0.5)
    # every sign pattern appears once
    assert len({tuple(np.sign(p)) for p in v}) == 8


def test_vertex_order_is_binary_x_fastest():
    v = cuboid_vertices(CuboidDimensions([1, 1, 1]), RigidTransform.identity())
    for i, p in enumerate(v):
        bits = [(i >> k) & 1 for k in range(3)]
        np.testing.assert_array_equal(np.sign(p), [1 if b else -1 for b in bits])
    np.testing.assert_array_equal(VERTEX_SIGNS, np.sign(v))


def test_translation_equivariance():
    dims = CuboidDimensions([1, 1, 1])
    base = cuboid_vertices(dims, RigidTransform.identity())
    shifted = cuboid_vertices(dims, RigidTransform(np.eye(3), [1, 2, 3]))
    np.testing.assert_allclose(shifted, base + [1, 2, 3], atol=1e-15)


def test_rotated_box_corner_by_hand():
    # 90 deg about z sends (x, y, z) to (-y, x, z)
    v = cuboid_vertices(CuboidDimensions([2, 1, 4]), RigidTransform(rot_z(math.pi / 2)))
    # vertex 7 is (+1, +0.5, +2) before rotation
    np.testing.assert_allclose(v[7], [-0.5, 1.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(v[0], [0.5, -1.0, -2.0], atol=1e-12)


def test_project_examples(camera):
    np.testing.assert_allclose(project([0, 0, 5], camera), [320, 240])
    np.testing.assert_allclose(project([1, 0, 5], camera), [440, 240])
    with pytest.raises(NonPositiveDepth):
        project([0, 0, -1], camera)
    with pytest.raises(NonPositiveDepth):
        project([[0, 0, 1], [0, 0, 0]], camera)


def test_project_unproject_round_trip(camera):
    rng = np.random.default_rng(0)
    px = rng.uniform([0, 0], [640, 480], (100, 2))
    depth = rng.uniform(0.5, 20.0, 100)
    np.testing.assert_allclose(project(unproject(px, depth, camera), camera), px, atol=1e-9)


def test_group_laws():
    ident = RigidTransform.identity()
    assert invert(ident).allclose(ident)
    rng = np.random.default_rng(1)
    for _ in range(100):
        t = RigidTransform(random_rotation(rng), rng.normal(size=3))
        assert compose(t, invert(t)).allclose(ident, atol=1e-9)
        assert compose(invert(t), t).allclose(ident, atol=1e-9)
    a = RigidTransform(rot_z(math.radians(30)))
    b = RigidTransform(rot_z(math.radians(60)))
    assert compose(a, b).allclose(RigidTransform(rot_z(math.radians(90))), atol=1e-12)


def test_compose_is_associative_and_applies_right_first():
    rng = np.random.default_rng(2)
    a, b, c = (RigidTransform(random_rotation(rng), rng.normal(size=3)) for _ in range(3))
    assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), atol=1e-12)
    p = rng.normal(size=(5, 3))
    np.testing.assert_allclose(compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-12)


def test_rejects_invalid_rotation():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 2.0)


def test_dimensions_validate_and_normalize():
    with pytest.raises(ValueError):
        CuboidDimensions([1.0, 0.0, 1.0])
    d = CuboidDimensions([2.0, 4.0, 1.0]).normalized()
    np.testing.assert_allclose(d.d, [0.5, 1.0, 0.25])


def test_vertex_centroid_and_volume_invariance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        box = random_cuboid(rng)
        np.testing.assert_allclose(box.vertices().mean(axis=0), box.center, atol=1e-9)
        moved = box.transformed(RigidTransform(random_rotation(rng), rng.normal(size=3)))
        assert moved.volume == pytest.approx(box.volume, rel=1e-15)


def test_scaled_preserves_projection(camera):
    box = Cuboid(RigidTransform(rot_y(0.3), [0.1, -0.2, 4.0]), CuboidDimensions([2, 1, 3]))
    np.testing.assert_allclose(
        project(box.scaled(2.5).vertices(), camera), project(box.vertices(), camera), atol=1e-9
    )


def test_so3_exp_log_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(200):
        w = rng.normal(size=3)
        w *= rng.uniform(0.0, 3.1) / np.linalg.norm(w)
        np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-9)
    np.testing.assert_allclose(so3_exp(np.zeros(3)), np.eye(3))
    assert rotation_distance(rot_x(0.2), rot_x(0.5)) == pytest.approx(0.3, abs=1e-12)


def test_look_at_points_camera_at_target():
    cam = look_at([2.0, 0.0, 1.0], [0.0, 0.0, 0.0])
    target_cam = invert(cam).apply([0.0, 0.0, 0.0])
    assert target_cam[0] == pytest.approx(0.0, abs=1e-12)
    assert target_cam[1] == pytest.approx(0.0, abs=1e-12)
    assert target_cam[2] == pytest.approx(math.sqrt(5.0))
    with pytest.raises(ValueError):
        look_at([0, 0, 1], [0, 0, 0])
