"""Pinhole camera, rigid transforms and cuboid construction.

Conventions: right-handed camera frame with +z forward, +x right, +y down.
Cuboid vertices are ordered by 3-bit binary sign enumeration with x fastest,
bit value 0 meaning the negative half-extent::

    index  sign(x, y, z)
      0      (-, -, -)
      1      (+, -, -)
      2      (-, +, -)
      3      (+, +, -)
      4      (-, -, +)
      5      (+, -, +)
      6      (-, +, +)
      7      (+, +, +)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth

_ORTHO_TOL = 1e-9

# (8, 3) sign pattern, x fastest
VERTEX_SIGNS = np.array(
    [[(1 if (i >> b) & 1 else -1) for b in range(3)] for i in range(8)], dtype=float
)

# Faces as vertex-index quads, counter-clockwise seen from outside.
CUBOID_FACES = (
    (0, 4, 6, 2),  # -x
    (1, 3, 7, 5),  # +x
    (0, 1, 5, 4),  # -y
    (2, 6, 7, 3),  # +y
    (0, 2, 3, 1),  # -z
    (4, 5, 7, 6),  # +z
)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))


def _as_rotation(r) -> np.ndarray:
    r = np.array(r, dtype=float).reshape(3, 3)
    if not np.allclose(r.T @ r, np.eye(3), atol=_ORTHO_TOL * 10):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL * 10:
        raise ValueError("rotation determinant is not +1")
    return r


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """x_out = rotation @ x_in + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """self ∘ other: apply ``other`` first."""
        return compose(self, other)

    def inverse(self) -> RigidTransform:
        return invert(self)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    r = a.rotation @ b.rotation
    # re-orthonormalize to stop drift over long chains
    return RigidTransform(orthonormalize(r), a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues formula; small angles use a second-order expansion."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    k = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * k @ k
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * k @ k


def so3_log(r: np.ndarray) -> np.ndarray:
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < 1e-8:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        m = (r + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(m)))
        axis = m[:, i] / np.sqrt(m[i, i])
        return axis * theta
    return theta / (2.0 * np.sin(theta)) * w


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle (radians) of a rotation matrix."""
    return float(np.arccos(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)))


def rotation_distance(a: np.ndarray, b: np.ndarray) -> float:
    return rotation_angle(a.T @ b)


def axis_rotation(axis: int, angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about local axis 0, 1 or 2."""
    omega = np.zeros(3)
    omega[axis] = angle
    return so3_exp(omega)


def rot_x(angle: float) -> np.ndarray:
    return axis_rotation(0, angle)


def rot_y(angle: float) -> np.ndarray:
    return axis_rotation(1, angle)


def rot_z(angle: float) -> np.ndarray:
    return axis_rotation(2, angle)


@dataclass(frozen=True, eq=False)
class CuboidDimensions:
    d: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=float).reshape(3)
        if not np.all(d > 0):
            raise ValueError(f"cuboid dimensions must be positive, got {d}")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    def normalized(self) -> CuboidDimensions:
        return CuboidDimensions(self.d / self.d[1])

    @property
    def volume(self) -> float:
        return float(np.prod(self.d))


def cuboid_vertices(dims: CuboidDimensions, pose: RigidTransform) -> np.ndarray:
    """Eight vertices (8, 3) of the box in the frame ``pose`` maps into."""
    local = VERTEX_SIGNS * (dims.d / 2.0)
    return pose.apply(local)


@dataclass(frozen=True, eq=False)
class Cuboid:
    pose: RigidTransform
    dims: CuboidDimensions

    def vertices(self) -> np.ndarray:
        return cuboid_vertices(self.dims, self.pose)

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    @property
    def volume(self) -> float:
        return self.dims.volume

    def transformed(self, t: RigidTransform) -> Cuboid:
        """The same box expressed in another frame: ``t`` maps current frame to the new one."""
        return Cuboid(compose(t, self.pose), self.dims)

    def scaled(self, s: float) -> Cuboid:
        """Uniformly rescale size and distance to the frame origin (projection-preserving)."""
        return Cuboid(
            RigidTransform(self.pose.rotation, self.pose.translation * s),
            CuboidDimensions(self.dims.d * s),
        )


def project(points, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of one (3,) point or an (N, 3) array to pixels."""
    p = np.asarray(points, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth(f"cannot project point with z <= 0 (min z = {np.min(z)})")
    u = k.fx * p[..., 0] / z + k.cx
    v = k.fy * p[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1)


def unproject(pixels, depth, k: CameraIntrinsics) -> np.ndarray:
    px = np.asarray(pixels, dtype=float)
    depth = np.asarray(depth, dtype=float)
    x = (px[..., 0] - k.cx) / k.fx * depth
    y = (px[..., 1] - k.cy) / k.fy * depth
    return np.stack([x, y, np.broadcast_to(depth, x.shape)], axis=-1)


def look_at(eye, target, world_up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world transform for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(world_up, dtype=float))
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise ValueError("viewing direction is parallel to world up")
    right /= n
    down = np.cross(forward, right)
    return RigidTransform(np.column_stack([right, down, forward]), eye)
