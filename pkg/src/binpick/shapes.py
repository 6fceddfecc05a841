"""Primitive part models with exact signed distance and ray intersection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .collide import OBB

KINDS = ("box", "cylinder", "sphere")


@dataclass(frozen=True)
class ObjectModel:
    """A rigid primitive centred on its local origin.

    ``dims`` holds full extents ``(lx, ly, lz)`` for a box, ``(radius, height)``
    for a cylinder whose axis is local z, and ``(radius,)`` for a sphere.
    """

    kind: str
    dims: tuple
    name: str = "part"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        dims = tuple(float(v) for v in self.dims)
        expected = {"box": 3, "cylinder": 2, "sphere": 1}[self.kind]
        if len(dims) != expected:
            raise ValueError(f"{self.kind} needs {expected} dimensions, got {len(dims)}")
        if not all(v > 0 for v in dims):
            raise ValueError("dimensions must be positive")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def box(cls, lx, ly, lz, name="part"):
        return cls("box", (lx, ly, lz), name)

    @classmethod
    def cylinder(cls, radius, height, name="part"):
        return cls("cylinder", (radius, height), name)

    @classmethod
    def sphere(cls, radius, name="part"):
        return cls("sphere", (radius,), name)

    @property
    def extents(self) -> np.ndarray:
        """Full extents of the canonical (local) bounding box."""
        if self.kind == "box":
            return np.array(self.dims)
        if self.kind == "cylinder":
            r, hgt = self.dims
            return np.array([2 * r, 2 * r, hgt])
        r = self.dims[0]
        return np.array([2 * r, 2 * r, 2 * r])

    def obb(self, pose) -> OBB:
        """Bounding box at ``pose``; exact for boxes."""
        return OBB(pose.position.copy(), pose.rotation.copy(), 0.5 * self.extents)

    def sdf_local(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float).reshape(-1, 3)
        if self.kind == "box":
            q = np.abs(p) - 0.5 * np.array(self.dims)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            return outside + np.minimum(q.max(axis=1), 0.0)
        if self.kind == "cylinder":
            r, hgt = self.dims
            q = np.column_stack(
                [np.hypot(p[:, 0], p[:, 1]) - r, np.abs(p[:, 2]) - 0.5 * hgt]
            )
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            return outside + np.minimum(q.max(axis=1), 0.0)
        return np.linalg.norm(p, axis=1) - self.dims[0]

    def signed_distance(self, pts, pose) -> np.ndarray:
        return self.sdf_local(pose.apply_inverse(pts))

    def ray_cast_local(self, origins, dirs) -> np.ndarray:
        """Distance along each ray to the first surface hit (inf on a miss).

        Rays starting inside the shape report inf; only entering hits count.
        """
        o = np.asarray(origins, dtype=float).reshape(-1, 3)
        v = np.asarray(dirs, dtype=float).reshape(-1, 3)
        if self.kind == "box":
            return ray_box(o, v, 0.5 * np.array(self.dims))
        if self.kind == "cylinder":
            return _ray_cylinder(o, v, *self.dims)
        return _ray_sphere(o, v, self.dims[0])

    def ray_cast(self, origins, dirs, pose) -> np.ndarray:
        o = pose.apply_inverse(origins)
        v = np.asarray(dirs, dtype=float) @ pose.rotation
        return self.ray_cast_local(o, v)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims), "name": self.name}

    @classmethod
    def from_dict(cls, data) -> "ObjectModel":
        return cls(data["kind"], tuple(data["dims"]), data.get("name", "part"))


def ray_box(o: np.ndarray, v: np.ndarray, half: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / v
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    lo = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    hi = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    # axis-parallel rays outside the slab never enter it
    parallel_out = (v == 0) & (np.abs(o) > half)
    t_in = lo.max(axis=1)
    t_out = hi.min(axis=1)
    hit = (t_in <= t_out) & (t_in > 0) & ~parallel_out.any(axis=1)
    return np.where(hit, t_in, np.inf)


def _ray_sphere(o, v, r):
    a = np.einsum("ij,ij->i", v, v)
    b = np.einsum("ij,ij->i", o, v)
    c = np.einsum("ij,ij->i", o, o) - r * r
    disc = b * b - a * c
    ok = (disc >= 0) & (c > 0)
    t = (-b - np.sqrt(np.where(ok, disc, 0.0))) / a
    return np.where(ok & (t > 0), t, np.inf)


def _ray_cylinder(o, v, r, hgt):
    half = 0.5 * hgt
    best = np.full(len(o), np.inf)
    # lateral surface
    a = v[:, 0] ** 2 + v[:, 1] ** 2
    b = o[:, 0] * v[:, 0] + o[:, 1] * v[:, 1]
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
    disc = b * b - a * c
    ok = (a > 0) & (disc >= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-b - np.sqrt(np.where(ok, disc, 0.0))) / np.where(a > 0, a, 1.0)
    z = o[:, 2] + t * v[:, 2]
    side = ok & (t > 0) & (np.abs(z) <= half) & (c > 0)
    best = np.where(side, t, best)
    # end caps
    for zc in (-half, half):
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = (zc - o[:, 2]) / v[:, 2]
        px = o[:, 0] + tc * v[:, 0]
        py = o[:, 1] + tc * v[:, 1]
        cap = (v[:, 2] != 0) & (tc > 0) & (px * px + py * py <= r * r) & (np.abs(o[:, 2]) > half)
        best = np.where(cap & (tc < best), tc, best)
    return best
