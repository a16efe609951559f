"""Inverse-variance fusion, constant-velocity Kalman filtering, dimension fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInput

VELOCITY_VAR = 20.0
ACCEL_STD = 0.5

# state layout: [x, y, vx, vy]
_F = np.array(
    [
        [1.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
)


@dataclass(frozen=True)
class GaussianEstimate2D:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(2))
        var = np.broadcast_to(np.asarray(self.var, dtype=float), (2,)).copy()
        if not (np.all(var > 0) and np.all(np.isfinite(var))):
            raise ValueError(f"variances must be positive and finite, got {var}")
        object.__setattr__(self, "var", var)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


def bayes_fuse(estimates: Sequence[GaussianEstimate2D]) -> GaussianEstimate2D:
    """Per-axis inverse-variance weighted fusion of independent estimates."""
    if len(estimates) == 0:
        raise EmptyInput("bayes_fuse needs at least one estimate")
    if len(estimates) == 1:
        return estimates[0]
    means = np.array([e.mean for e in estimates])
    prec = 1.0 / np.array([e.var for e in estimates])
    total = prec.sum(axis=0)
    return GaussianEstimate2D((prec * means).sum(axis=0) / total, 1.0 / total)


def process_noise(accel_std: float = ACCEL_STD) -> np.ndarray:
    """Discrete white-noise-acceleration covariance for dt = 1."""
    q1 = np.array([[0.25, 0.5], [0.5, 1.0]]) * accel_std**2
    q = np.zeros((4, 4))
    for axis in (0, 1):
        idx = np.ix_([axis, axis + 2], [axis, axis + 2])
        q[idx] = q1
    return q


@dataclass(frozen=True)
class KeypointFilterState:
    position: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(2))
        object.__setattr__(self, "covariance", np.asarray(self.covariance, dtype=float).reshape(4, 4))

    @classmethod
    def from_measurement(
        cls, z: GaussianEstimate2D, velocity=(0.0, 0.0), velocity_var: float = VELOCITY_VAR
    ) -> KeypointFilterState:
        cov = np.diag([z.var[0], z.var[1], velocity_var, velocity_var])
        return cls(z.mean, velocity, cov)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @property
    def position_var(self) -> np.ndarray:
        return np.diag(self.covariance)[:2].copy()

    @property
    def position_estimate(self) -> GaussianEstimate2D:
        return GaussianEstimate2D(self.position, self.position_var)


def _symmetrize(p):
    return 0.5 * (p + p.T)


def kalman_predict(state: KeypointFilterState, q=None) -> KeypointFilterState:
    """Constant-velocity propagation by one frame. ``q`` defaults to :func:`process_noise`."""
    if q is None:
        q = process_noise()
    x = _F @ state.x
    p = _symmetrize(_F @ state.covariance @ _F.T + q)
    return KeypointFilterState(x[:2], x[2:], p)


def kalman_update(
    state: KeypointFilterState,
    z_pos: GaussianEstimate2D | None,
    z_vel: GaussianEstimate2D | None = None,
) -> KeypointFilterState:
    """Linear Gaussian update with position and/or velocity measurements (diagonal R).

    Uses the Joseph form so the posterior stays symmetric positive-definite.
    """
    rows, z, r = [], [], []
    if z_pos is not None:
        rows += [0, 1]
        z.append(z_pos.mean)
        r.append(z_pos.var)
    if z_vel is not None:
        rows += [2, 3]
        z.append(z_vel.mean)
        r.append(z_vel.var)
    if not rows:
        return state
    h = np.eye(4)[rows]
    z = np.concatenate(z)
    r = np.diag(np.concatenate(r))
    p = state.covariance
    s = h @ p @ h.T + r
    k = np.linalg.solve(s, h @ p).T
    x = state.x + k @ (z - h @ state.x)
    a = np.eye(4) - k @ h
    p_new = _symmetrize(a @ p @ a.T + k @ r @ k.T)
    return KeypointFilterState(x[:2], x[2:], p_new)


@dataclass(frozen=True)
class DimensionBelief:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(3))
        object.__setattr__(self, "var", np.broadcast_to(np.asarray(self.var, dtype=float), (3,)).copy())
        if not np.all(self.var > 0):
            raise ValueError("dimension variances must be positive")

    @classmethod
    def flat(cls, mean=(1.0, 1.0, 1.0), var: float = 1e12) -> DimensionBelief:
        return cls(mean, var)


def dim_update(belief: DimensionBelief, obs_mean, obs_var) -> DimensionBelief:
    """Recursive per-axis inverse-variance fusion; equals batch fusion of the history."""
    obs_mean = np.asarray(obs_mean, dtype=float).reshape(3)
    obs_var = np.broadcast_to(np.asarray(obs_var, dtype=float), (3,))
    if np.any(obs_var <= 0):
        raise ValueError("observation variances must be positive")
    prec = 1.0 / belief.var + 1.0 / obs_var
    mean = (belief.mean / belief.var + obs_mean / obs_var) / prec
    return DimensionBelief(mean, 1.0 / prec)
