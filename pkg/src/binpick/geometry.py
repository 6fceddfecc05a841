"""Rigid frames, point clouds and the finger swept volume.

The swept volume is modelled as one box in a local frame attached to the grasp:

* local ``y`` is the finger closing axis,
* local ``z`` runs along the approach line, pointing back toward the wrist, so
  ``z = 0`` is the fingertip plane at the grasp pose and the interior is
  ``0 <= z <= extent_z``,
* local ``x = y cross z``.

``d`` of a point is its distance to the y-boundary (``half_extent_y - |y|``)
and ``h`` its height above the fingertip plane (``z``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .collide import OBB
from .errors import InvalidFrameError

DEFAULT_MARGIN = 0.002
DEFAULT_REMOVAL_THRESHOLD = 0.005


def _check_rotation(R: np.ndarray, tol: float = 1e-9) -> None:
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidFrameError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise InvalidFrameError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise InvalidFrameError("rotation determinant is not +1")


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping local coordinates into the parent frame."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(p)):
            raise InvalidFrameError("position must be finite")
        _check_rotation(R)
        p.flags.writeable = False
        R.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", R)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_quat(cls, position, quat_xyzw) -> "Pose":
        return cls(position, Rotation.from_quat(quat_xyzw).as_matrix())

    def as_quat(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_quat()

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.position

    def apply_inverse(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (pts - self.position) @ self.rotation

    def inverse(self) -> "Pose":
        return Pose(-self.rotation.T @ self.position, self.rotation.T)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.position + self.rotation @ other.position,
            self.rotation @ other.rotation,
        )

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def allclose(self, other: "Pose", atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.position, other.position, rtol=0, atol=atol)
            and np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
        )

    def __repr__(self):
        return f"Pose(position={self.position.tolist()}, quat_xyzw={self.as_quat().tolist()})"


@dataclass(frozen=True, eq=False)
class PointCloud:
    frame_id: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if np.isnan(pts).any():
            raise ValueError("point cloud contains NaN coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def transformed(self, pose: Pose) -> "PointCloud":
        return PointCloud(self.frame_id, pose.apply(self.points))


def write_point_cloud(path, cloud: PointCloud) -> None:
    """ASCII ``x y z`` per line with a ``# frame: <name>`` header."""
    lines = [f"# frame: {cloud.frame_id}"]
    lines.extend(f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist())
    Path(path).write_text("\n".join(lines) + "\n")


def read_point_cloud(path) -> PointCloud:
    frame = "world"
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("frame:"):
                frame = body[len("frame:"):].strip()
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"expected 3 coordinates, got {line!r}")
        rows.append([float(v) for v in parts])
    return PointCloud(frame, np.array(rows, dtype=float).reshape(-1, 3))


@dataclass(frozen=True)
class GripperModel:
    """Two-fingered parallel gripper dimensions in meters."""

    finger_length: float = 0.04
    finger_thickness: float = 0.01
    finger_width: float = 0.02
    preshape_half_opening: float = 0.03
    approach_stroke: float = 0.05

    def __post_init__(self):
        for name in (
            "finger_length",
            "finger_thickness",
            "finger_width",
            "preshape_half_opening",
            "approach_stroke",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


# tool-frame conventions shared by the grasp database and the planner
APPROACH_DIR = np.array([0.0, 0.0, 1.0])
CLOSING_DIR = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True, eq=False)
class SweptVolume:
    frame: Pose  # local -> world; use frame.apply_inverse for world -> local
    half_extent_x: float
    half_extent_y: float
    extent_z: float
    margin: float = DEFAULT_MARGIN

    def to_local(self, points) -> np.ndarray:
        return self.frame.apply_inverse(points)

    def obb(self, margin: float = 0.0) -> OBB:
        half = np.array(
            [
                self.half_extent_x + margin,
                self.half_extent_y + margin,
                0.5 * self.extent_z + margin,
            ]
        )
        center = self.frame.apply([0.0, 0.0, 0.5 * self.extent_z])
        return OBB(center, self.frame.rotation, half)

    def axis(self, k: int) -> np.ndarray:
        return self.frame.rotation[:, k]

    def finger_box(self, gripper: GripperModel, side: int, lift: float = 0.0) -> OBB:
        """One finger at the preshape opening, its tip ``lift`` above the grasp depth.

        ``side`` is +1 or -1 along the closing axis.
        """
        t = gripper.finger_thickness
        local = np.array(
            [
                0.0,
                side * (gripper.preshape_half_opening + 0.5 * t),
                lift + 0.5 * gripper.finger_length,
            ]
        )
        half = np.array(
            [0.5 * gripper.finger_width, 0.5 * t, 0.5 * gripper.finger_length]
        )
        return OBB(self.frame.apply(local), self.frame.rotation, half)

    def finger_corridor(self, gripper: GripperModel, side: int) -> OBB:
        """Region one finger travels through during the approach (no margin)."""
        t = gripper.finger_thickness
        half = np.array([self.half_extent_x, 0.5 * t, 0.5 * self.extent_z])
        local = np.array(
            [0.0, side * (self.half_extent_y - 0.5 * t), 0.5 * self.extent_z]
        )
        return OBB(self.frame.apply(local), self.frame.rotation, half)


def build_swept_volume(
    grasp: Pose,
    approach_dir=APPROACH_DIR,
    closing_dir=CLOSING_DIR,
    gripper: GripperModel | None = None,
    margin: float = DEFAULT_MARGIN,
) -> SweptVolume:
    """Swept volume of both fingers for one grasp.

    ``approach_dir`` and ``closing_dir`` are expressed in the wrist frame
    ``grasp``; the fingertip centre sits at the wrist-frame origin at the
    grasp pose.
    """
    gripper = gripper or GripperModel()
    a = np.asarray(approach_dir, dtype=float)
    c = np.asarray(closing_dir, dtype=float)
    if abs(np.linalg.norm(a) - 1.0) > 1e-9 or abs(np.linalg.norm(c) - 1.0) > 1e-9:
        raise InvalidFrameError("approach and closing directions must be unit vectors")
    if abs(a @ c) > 1e-6:
        raise InvalidFrameError("approach and closing directions must be orthogonal")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    z = -a
    y = c - (c @ z) * z
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    local_in_wrist = np.column_stack([x, y, z])
    frame = Pose(grasp.position, grasp.rotation @ local_in_wrist)
    return SweptVolume(
        frame=frame,
        half_extent_x=0.5 * gripper.finger_width,
        half_extent_y=gripper.preshape_half_opening + gripper.finger_thickness,
        extent_z=gripper.approach_stroke + gripper.finger_length,
        margin=margin,
    )


class SweptPoint(NamedTuple):
    local: np.ndarray
    d: float
    h: float
    source_index: int


@dataclass(frozen=True, eq=False)
class SweptPoints:
    """Column-wise container of the cloud points that fell inside a swept volume."""

    local: np.ndarray
    d: np.ndarray
    h: np.ndarray
    source_index: np.ndarray

    @classmethod
    def empty(cls) -> "SweptPoints":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))

    @classmethod
    def from_dh(cls, d, h) -> "SweptPoints":
        """Build from bare distance arrays (local coordinates left at zero)."""
        d = np.asarray(d, dtype=float).reshape(-1)
        h = np.asarray(h, dtype=float).reshape(-1)
        n = len(d)
        return cls(np.zeros((n, 3)), d, h, np.arange(n))

    def __len__(self):
        return len(self.d)

    def __iter__(self) -> Iterator[SweptPoint]:
        for k in range(len(self)):
            yield SweptPoint(
                self.local[k], float(self.d[k]), float(self.h[k]), int(self.source_index[k])
            )

    def subset(self, mask) -> "SweptPoints":
        return SweptPoints(
            self.local[mask], self.d[mask], self.h[mask], self.source_index[mask]
        )

    def clamped(self) -> "SweptPoints":
        """Copy with margin-shell distances clamped at zero."""
        return SweptPoints(
            self.local, np.maximum(self.d, 0.0), np.maximum(self.h, 0.0), self.source_index
        )


def classify_points(cloud: PointCloud, sv: SweptVolume) -> SweptPoints:
    """Points of ``cloud`` inside the margin-expanded swept volume, with d and h."""
    if len(cloud) == 0:
        return SweptPoints.empty()
    local = sv.to_local(cloud.points)
    m = sv.margin
    inside = (
        (np.abs(local[:, 0]) <= sv.half_extent_x + m)
        & (np.abs(local[:, 1]) <= sv.half_extent_y + m)
        & (local[:, 2] >= -m)
        & (local[:, 2] <= sv.extent_z + m)
    )
    idx = np.flatnonzero(inside)
    loc = local[idx]
    d = sv.half_extent_y - np.abs(loc[:, 1])
    return SweptPoints(loc, d, loc[:, 2].copy(), idx)


def remove_target_points(
    swept: SweptPoints,
    cloud: PointCloud,
    target,
    target_pose: Pose,
    threshold: float = DEFAULT_REMOVAL_THRESHOLD,
) -> SweptPoints:
    """Drop swept points within ``threshold`` of the target surface or inside it."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    if len(swept) == 0:
        return swept
    world = cloud.points[swept.source_index]
    sd = target.signed_distance(world, target_pose)
    return swept.subset(sd > threshold)
