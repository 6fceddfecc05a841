"""Synthetic bin scenes and the sensing front end.

Piles are built by kinematic drops: each part is released above the bin with
a random orientation and lowered straight down until it first touches the
floor or a part already in the bin.  New parts are biased to land next to an
existing one so that fingers regularly meet neighbours.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .collide import OBB, obb_overlap, obb_sweep
from .errors import SceneCapacityError
from .geometry import PointCloud, Pose
from .shapes import ObjectModel, ray_box

POSE_ERROR_THRESHOLD = 0.007
DEFAULT_CLUSTER_DIST = 0.01
BIN_ID = -1

__all__ = [
    "ObjectModel",
    "SceneObject",
    "BinScene",
    "SensorConfig",
    "Segment",
    "gen_scene",
    "capture",
    "segment",
    "bbox_filter",
    "inject_pose_noise",
    "read_scene",
    "write_scene",
]


@dataclass(frozen=True, eq=False)
class SceneObject:
    model: ObjectModel
    position: tuple
    quat: tuple  # x, y, z, w

    @cached_property
    def pose(self) -> Pose:
        return Pose.from_quat(self.position, self.quat)

    @cached_property
    def obb(self) -> OBB:
        return self.model.obb(self.pose)


@dataclass(frozen=True, eq=False)
class BinScene:
    """Open-top bin with its floor at z = 0 and interior centred on the origin.

    ``frame`` places the whole bin in the world; generated scenes use identity.
    """

    bin_size: tuple = (0.3, 0.3)
    wall_height: float = 0.1
    objects: tuple = ()
    seed: int | None = None
    wall_thickness: float = 0.01
    frame: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "bin_size", tuple(float(v) for v in self.bin_size))

    def poses(self) -> list[Pose]:
        return [o.pose for o in self.objects]

    @cached_property
    def bin_obbs(self) -> tuple:
        """Floor slab followed by the four walls, in world coordinates."""
        return tuple(
            OBB(self.frame.apply(b.center), self.frame.rotation @ b.axes, b.half)
            for b in _bin_boxes(self.bin_size, self.wall_height, self.wall_thickness)
        )

    def without(self, index: int) -> "BinScene":
        objs = self.objects[:index] + self.objects[index + 1:]
        return BinScene(self.bin_size, self.wall_height, objs, self.seed,
                        self.wall_thickness, self.frame)

    def transformed(self, T: Pose) -> "BinScene":
        objs = []
        for o in self.objects:
            p = T @ o.pose
            objs.append(SceneObject(o.model, tuple(p.position), tuple(p.as_quat())))
        return BinScene(self.bin_size, self.wall_height, objs, self.seed,
                        self.wall_thickness, T @ self.frame)


def _bin_boxes(size, wall_height, t):
    sx, sy = size
    ax = np.eye(3)
    floor_t = 0.02
    boxes = [
        OBB(np.array([0.0, 0.0, -0.5 * floor_t]), ax,
            np.array([0.5 * sx + t, 0.5 * sy + t, 0.5 * floor_t])),
    ]
    hz = 0.5 * wall_height
    for sgn in (-1, 1):
        boxes.append(OBB(np.array([sgn * (0.5 * sx + 0.5 * t), 0.0, hz]), ax,
                         np.array([0.5 * t, 0.5 * sy + t, hz])))
        boxes.append(OBB(np.array([0.0, sgn * (0.5 * sy + 0.5 * t), hz]), ax,
                         np.array([0.5 * sx, 0.5 * t, hz])))
    return boxes


def _random_quat(rng, max_tilt):
    yaw = rng.uniform(0.0, 2 * np.pi)
    pitch, roll = rng.uniform(-max_tilt, max_tilt, size=2)
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_quat()


def _drop(obb: OBB, obstacles, wall_ids) -> float | None:
    """Lower ``obb`` straight down; return the resting centre z or None.

    Landing on a wall top, or missing the floor entirely, is a failed drop.
    """
    best = None
    best_id = None
    down = np.array([0.0, 0.0, -1.0])
    top = obb.center[2]
    for k, other in enumerate(obstacles):
        hit = obb_sweep(obb, other, down, max_dist=top + 1.0, tol=0.0)
        if hit is None:
            continue
        if hit.initially_overlapping:
            return None
        if best is None or hit.toi < best:
            best, best_id = hit.toi, k
    if best is None or best_id in wall_ids:
        return None
    return float(top - best)


def gen_scene(
    model: ObjectModel,
    count: int,
    bin_size=(0.3, 0.3),
    wall_height: float = 0.1,
    seed: int = 0,
    gap=(0.0, 0.01),
    max_tilt: float = 0.5,
    max_attempts: int = 400,
) -> BinScene:
    """Random pile of ``count`` copies of ``model``.

    Parts after the first are slid against a randomly chosen earlier part,
    backed off by a gap drawn from ``gap`` and then dropped.  Drops that land
    on a wall, leave the bin, or lose contact with the chosen neighbour are
    resampled; ``SceneCapacityError`` is raised after ``max_attempts``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    sx, sy = bin_size
    ext = np.sort(model.extents)
    if count * ext[1] * ext[2] > sx * sy:
        raise SceneCapacityError(f"a {sx}x{sy} bin cannot hold {count} parts")
    lo_gap, hi_gap = gap
    if not 0 <= lo_gap <= hi_gap:
        raise ValueError("gap must satisfy 0 <= low <= high")

    rng = np.random.default_rng(seed)
    fixed = list(_bin_boxes(bin_size, wall_height, 0.01))
    wall_ids = set(range(1, len(fixed)))
    placed: list[SceneObject] = []
    half_diag = 0.5 * float(np.linalg.norm(model.extents))

    for _ in range(count):
        for _attempt in range(max_attempts):
            quat = _random_quat(rng, max_tilt)
            R = Rotation.from_quat(quat).as_matrix()
            half = 0.5 * model.extents
            if not placed:
                xy = rng.uniform(-0.25, 0.25, size=2) * np.array([sx, sy])
                anchor = None
            else:
                anchor = placed[int(rng.integers(len(placed)))]
                theta = rng.uniform(0.0, 2 * np.pi)
                u = np.array([np.cos(theta), np.sin(theta), 0.0])
                g = rng.uniform(lo_gap, hi_gap)
                reach = 4 * half_diag
                start = anchor.obb.center + reach * u
                hit = obb_sweep(OBB(start, R, half), anchor.obb, -u, 2 * reach, tol=0.0)
                if hit is None or hit.initially_overlapping:
                    continue
                xy = (start - (hit.toi - g) * u)[:2]
            stack_top = max([wall_height] + [o.obb.highest_z() for o in placed])
            probe = OBB(np.array([xy[0], xy[1], stack_top + half_diag + 0.01]), R, half)
            z = _drop(probe, fixed + [o.obb for o in placed], wall_ids)
            if z is None:
                continue
            rest = OBB(np.array([xy[0], xy[1], z]), R, half)
            if any(obb_overlap(rest, w) for w in fixed):
                continue
            if anchor is not None:
                touch = obb_sweep(rest, anchor.obb, -u, hi_gap + 1e-9, tol=0.0)
                if touch is None:
                    continue
            placed.append(SceneObject(model, (float(xy[0]), float(xy[1]), z), tuple(quat)))
            break
        else:
            raise SceneCapacityError(
                f"could not place part {len(placed) + 1} of {count} after {max_attempts} attempts"
            )
    return BinScene(tuple(bin_size), wall_height, tuple(placed), seed)


def _looking_down(height: float) -> Pose:
    return Pose([0.0, 0.0, height], np.diag([1.0, -1.0, -1.0]))


@dataclass(frozen=True, eq=False)
class SensorConfig:
    """Pinhole depth sensor; its optical axis is the viewpoint's local +z."""

    viewpoint: Pose = field(default_factory=lambda: _looking_down(0.6))
    resolution: float = 0.004
    noise_sigma: float = 0.0005
    max_range: float = 2.0
    fov: tuple = (0.6, 0.6)

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def ray_directions(self) -> np.ndarray:
        cols = []
        for span in self.fov:
            n = max(1, int(np.floor(span / self.resolution + 1e-9)))
            cols.append((np.arange(n) - 0.5 * (n - 1)) * self.resolution)
        a, b = np.meshgrid(cols[0], cols[1], indexing="xy")
        local = np.column_stack([np.tan(a.ravel()), np.tan(b.ravel()), np.ones(a.size)])
        local /= np.linalg.norm(local, axis=1, keepdims=True)
        return local @ self.viewpoint.rotation.T


def _ray_obb(o, v, box: OBB):
    lo = (o - box.center) @ box.axes
    lv = v @ box.axes
    return ray_box(lo, lv, box.half)


def capture(scene: BinScene, sensor: SensorConfig | None = None, seed=0, return_ids=False):
    """Ray-cast a depth image of ``scene``; keeps the first hit along each ray.

    Gaussian noise of ``sensor.noise_sigma`` perturbs each range.  With
    ``return_ids`` the id of the surface hit (object index, or ``BIN_ID``) is
    returned alongside the cloud.
    """
    sensor = sensor or SensorConfig()
    dirs = sensor.ray_directions()
    origin = np.broadcast_to(sensor.viewpoint.position, dirs.shape)
    best = np.full(len(dirs), np.inf)
    ids = np.full(len(dirs), BIN_ID - 1)
    for box in scene.bin_obbs:
        t = _ray_obb(origin, dirs, box)
        closer = t < best
        best[closer] = t[closer]
        ids[closer] = BIN_ID
    eye = sensor.viewpoint.position
    for k, obj in enumerate(scene.objects):
        # only rays passing within the part's bounding sphere can hit it
        rel = obj.pose.position - eye
        along = dirs @ rel
        radius = 0.5 * float(np.linalg.norm(obj.model.extents))
        near = np.flatnonzero(rel @ rel - along**2 < radius**2)
        t = obj.model.ray_cast(origin[near], dirs[near], obj.pose)
        closer = t < best[near]
        best[near[closer]] = t[closer]
        ids[near[closer]] = k
    keep = best <= sensor.max_range
    t = best[keep]
    if sensor.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        t = t + rng.normal(0.0, sensor.noise_sigma, size=t.shape)
    pts = origin[keep] + t[:, None] * dirs[keep]
    cloud = PointCloud("world", pts)
    return (cloud, ids[keep]) if return_ids else cloud


@dataclass(frozen=True, eq=False)
class Segment:
    indices: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    oriented_extents: np.ndarray  # along the principal axes of the members

    @property
    def extents(self) -> np.ndarray:
        return self.bbox_max - self.bbox_min

    @classmethod
    def from_points(cls, indices, pts) -> "Segment":
        idx = np.asarray(indices, dtype=int)
        sub = pts[idx]
        if len(sub) > 2:
            centred = sub - sub.mean(axis=0)
            _, vecs = np.linalg.eigh(centred.T @ centred)
            proj = centred @ vecs
            oriented = proj.max(axis=0) - proj.min(axis=0)
        else:
            oriented = sub.max(axis=0) - sub.min(axis=0)
        return cls(idx, sub.min(axis=0), sub.max(axis=0), oriented)

    def centroid(self, cloud: PointCloud) -> np.ndarray:
        return cloud.points[self.indices].mean(axis=0)


def segment(cloud: PointCloud, cluster_dist: float = DEFAULT_CLUSTER_DIST) -> list[Segment]:
    """Euclidean clustering: connected components of the ``cluster_dist`` graph."""
    if not cluster_dist > 0:
        raise ValueError("cluster_dist must be positive")
    n = len(cloud)
    if n == 0:
        return []
    pts = cloud.points
    pairs = cKDTree(pts).query_pairs(cluster_dist, output_type="ndarray")
    graph = coo_matrix(
        (np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    _, labels = connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    groups = np.split(order, bounds)
    groups.sort(key=lambda g: g[0])
    return [Segment.from_points(np.sort(g), pts) for g in groups]


def bbox_filter(segments, model: ObjectModel, rel_tol: float = 0.2, oriented: bool = False):
    """Keep segments whose sorted extents match the part's within ``rel_tol``.

    ``oriented`` compares extents along each segment's principal axes instead
    of the world axes, which tolerates parts rotated about the vertical.
    """
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    ref = np.sort(model.extents)
    kept = []
    for seg in segments:
        ext = np.sort(seg.oriented_extents if oriented else seg.extents)
        if np.all(np.abs(ext - ref) <= rel_tol * ref):
            kept.append(seg)
    return kept


def inject_pose_noise(pose: Pose, sigma_t: float, sigma_r: float, seed=0):
    """Perturb a pose with isotropic translation and rotation-vector noise.

    Returns the noisy pose and the norm of its translation error.
    """
    if sigma_t < 0 or sigma_r < 0:
        raise ValueError("noise sigmas must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dt = rng.normal(0.0, sigma_t, size=3) if sigma_t > 0 else np.zeros(3)
    dr = rng.normal(0.0, sigma_r, size=3) if sigma_r > 0 else np.zeros(3)
    if sigma_t == 0 and sigma_r == 0:
        return pose, 0.0
    R = pose.rotation @ Rotation.from_rotvec(dr).as_matrix()
    return Pose(pose.position + dt, R), float(np.linalg.norm(dt))


def scene_to_dict(scene: BinScene) -> dict:
    data = {
        "format": "binpick-scene/1",
        "bin": {
            "size": list(scene.bin_size),
            "wall_height": scene.wall_height,
            "wall_thickness": scene.wall_thickness,
        },
        "seed": scene.seed,
        "objects": [
            {
                "shape": o.model.to_dict(),
                "position": [float(v) for v in o.position],
                "quaternion_xyzw": [float(v) for v in o.quat],
            }
            for o in scene.objects
        ],
    }
    if not scene.frame.allclose(Pose.identity(), atol=0.0):
        data["frame"] = {
            "position": scene.frame.position.tolist(),
            "quaternion_xyzw": scene.frame.as_quat().tolist(),
        }
    return data


def scene_from_dict(data: dict) -> BinScene:
    objs = [
        SceneObject(ObjectModel.from_dict(o["shape"]), tuple(o["position"]),
                    tuple(o["quaternion_xyzw"]))
        for o in data["objects"]
    ]
    frame = Pose.identity()
    if "frame" in data:
        frame = Pose.from_quat(data["frame"]["position"], data["frame"]["quaternion_xyzw"])
    b = data["bin"]
    return BinScene(tuple(b["size"]), b["wall_height"], objs, data.get("seed"),
                    b.get("wall_thickness", 0.01), frame)


def write_scene(path, scene: BinScene) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2, sort_keys=True) + "\n")


def read_scene(path) -> BinScene:
    return scene_from_dict(json.loads(Path(path).read_text()))
