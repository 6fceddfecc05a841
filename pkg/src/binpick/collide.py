"""Oriented-box collision queries via the separating axis theorem.

Both the static overlap test and the swept (translational) variant are exact
for pairs of oriented boxes.  The swept variant returns the time of impact and
the axis that separated the boxes last, which doubles as the contact normal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_PARALLEL_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class OBB:
    """Oriented box: ``center`` (3,), ``axes`` (3, 3) with box axes as columns,
    ``half`` (3,) half extents along those axes."""

    center: np.ndarray
    axes: np.ndarray
    half: np.ndarray

    @classmethod
    def from_arrays(cls, center, axes, half) -> "OBB":
        return cls(
            np.asarray(center, dtype=float),
            np.asarray(axes, dtype=float),
            np.asarray(half, dtype=float),
        )

    def translated(self, offset) -> "OBB":
        return OBB(self.center + np.asarray(offset, dtype=float), self.axes, self.half)

    def corners(self) -> np.ndarray:
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=float,
        )
        return self.center + (signs * self.half) @ self.axes.T

    def radius_along(self, axes: np.ndarray) -> np.ndarray:
        # projection half-length onto each row of `axes`
        return np.abs(axes @ self.axes) @ self.half

    @property
    def aabb_half(self) -> np.ndarray:
        return np.abs(self.axes) @ self.half

    @property
    def bounding_radius(self) -> float:
        return float(np.sqrt(self.half @ self.half))

    def lowest_z(self) -> float:
        return float(self.center[2] - np.abs(self.axes[2]) @ self.half)

    def highest_z(self) -> float:
        return float(self.center[2] + np.abs(self.axes[2]) @ self.half)


def _candidate_axes(a: OBB, b: OBB) -> np.ndarray:
    face = np.vstack([a.axes.T, b.axes.T])
    u = a.axes.T[:, None, :]
    v = b.axes.T[None, :, :]
    # explicit cross products; np.cross is slow for tiny arrays
    cross = np.stack(
        [
            u[..., 1] * v[..., 2] - u[..., 2] * v[..., 1],
            u[..., 2] * v[..., 0] - u[..., 0] * v[..., 2],
            u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0],
        ],
        axis=-1,
    ).reshape(9, 3)
    norms = np.linalg.norm(cross, axis=1)
    keep = norms > _PARALLEL_EPS
    cross = cross[keep] / norms[keep, None]
    return np.vstack([face, cross])


def obb_overlap(a: OBB, b: OBB, tol: float = 1e-9) -> bool:
    """True when the boxes interpenetrate by more than ``tol`` along every axis.

    Touching boxes (shared face, edge or vertex) do not overlap.
    """
    # world-aligned bounding boxes give a cheap exact rejection
    if np.any(np.abs(b.center - a.center) >= a.aabb_half + b.aabb_half):
        return False
    axes = _candidate_axes(a, b)
    dist = np.abs(axes @ (b.center - a.center))
    reach = a.radius_along(axes) + b.radius_along(axes)
    return bool(np.all(dist < reach - tol))


def penetration(a: OBB, b: OBB) -> tuple[float, np.ndarray]:
    """Minimum penetration depth and its axis, oriented from ``b`` toward ``a``.

    Negative depth means the boxes are separated along the returned axis.
    """
    axes = _candidate_axes(a, b)
    delta = a.center - b.center
    proj = axes @ delta
    depth = a.radius_along(axes) + b.radius_along(axes) - np.abs(proj)
    k = int(np.argmin(depth))
    normal = axes[k] if proj[k] >= 0 else -axes[k]
    return float(depth[k]), normal


class SweepHit(NamedTuple):
    toi: float
    normal: np.ndarray  # unit, from the static box toward the moving box
    initially_overlapping: bool


def obb_sweep(
    moving: OBB, static: OBB, direction, max_dist: float, tol: float = 1e-9
) -> SweepHit | None:
    """Earliest contact of ``moving`` translated along ``direction``.

    ``direction`` must be a unit vector; the box travels ``t * direction`` for
    ``t`` in ``[0, max_dist]``.  Returns None when the path stays clear
    (contact within ``tol`` of touching counts as clear).
    """
    v = np.asarray(direction, dtype=float)
    # bounding spheres: distance from static centre to the moving centre's path
    rel = static.center - moving.center
    along = min(max(rel @ v, 0.0), max_dist)
    miss = rel - along * v
    if miss @ miss >= (moving.bounding_radius + static.bounding_radius) ** 2:
        return None
    axes = _candidate_axes(moving, static)
    speed = axes @ v
    gap = axes @ (static.center - moving.center)
    reach = moving.radius_along(axes) + static.radius_along(axes) - tol

    still = np.abs(speed) < _PARALLEL_EPS
    if np.any(still & (np.abs(gap) >= reach)):
        return None
    lo = np.full(len(axes), -np.inf)
    hi = np.full(len(axes), np.inf)
    moving_axes = ~still
    s = speed[moving_axes]
    t1 = (gap[moving_axes] - reach[moving_axes]) / s
    t2 = (gap[moving_axes] + reach[moving_axes]) / s
    lo[moving_axes] = np.minimum(t1, t2)
    hi[moving_axes] = np.maximum(t1, t2)

    enter = lo.max()
    leave = hi.min()
    if not enter < leave or enter > max_dist or leave <= 0.0:
        return None
    if enter < 0.0:
        _, normal = penetration(moving, static)
        return SweepHit(0.0, normal, True)
    k = int(np.argmax(lo))
    normal = axes[k]
    # at impact the moving box sits on the far side of `static` along the axis
    if normal @ (moving.center + enter * v - static.center) < 0:
        normal = -normal
    return SweepHit(float(enter), normal, False)
