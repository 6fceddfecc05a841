"""Grasp candidates: database expansion, quality tiers, reachability and selection."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .collide import obb_overlap
from .errors import ConfigError, ModelFormatError
from .features import selection_index
from .geometry import (
    APPROACH_DIR,
    CLOSING_DIR,
    DEFAULT_MARGIN,
    DEFAULT_REMOVAL_THRESHOLD,
    GripperModel,
    Pose,
    PointCloud,
    SweptPoints,
    build_swept_volume,
    classify_points,
    remove_target_points,
)
from .shapes import ObjectModel

DB_FORMAT = "binpick-graspdb/1"


@dataclass(frozen=True, eq=False)
class GraspEntry:
    """Wrist (fingertip-centre) frame in object coordinates, finger joints, stability."""

    position: tuple
    quat: tuple  # x, y, z, w; kept verbatim so file round trips are exact
    joints: tuple
    stability: float

    def __post_init__(self):
        if not np.isfinite(self.stability):
            raise ValueError("stability index must be finite")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "quat", tuple(float(v) for v in self.quat))

    @cached_property
    def pose(self) -> Pose:
        return Pose.from_quat(self.position, self.quat)


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    pose: Pose
    joints: tuple
    stability: float
    object_index: int  # index into the scene's objects
    entry_index: int
    object_pose: Pose  # the (estimated) object pose the candidate was built from
    slot: int = 0  # position of the object in the expansion list

    @property
    def order_key(self):
        return (self.entry_index, self.slot)


def expand_candidates(db, object_poses, object_ids=None) -> list[GraspCandidate]:
    """World-frame candidates for every (entry, object) pair, entry-major."""
    if len(db) == 0:
        raise ValueError("grasp database is empty")
    ids = list(range(len(object_poses))) if object_ids is None else list(object_ids)
    out = []
    for i, entry in enumerate(db):
        for slot, (j, obj_pose) in enumerate(zip(ids, object_poses)):
            out.append(GraspCandidate(obj_pose @ entry.pose, entry.joints, entry.stability,
                                      j, i, obj_pose, slot))
    return out


@dataclass
class TierSet:
    tiers: list
    thresholds: list  # t_1 > ... > t_{f-1}

    def __len__(self):
        return len(self.tiers)

    def sizes(self):
        return [len(t) for t in self.tiers]


def tier_split(candidates, f: int) -> TierSet:
    """Split into ``f`` near-equal tiers by descending stability index.

    Ties are ordered by (entry, object); tier sizes differ by at most one.
    Threshold ``t_k`` is the highest stability in tier ``k + 1``.
    """
    if f < 1:
        raise ConfigError("number of tiers must be at least 1")
    n = len(candidates)
    if f > n:
        raise ConfigError(f"cannot split {n} candidates into {f} tiers")
    ranked = sorted(candidates, key=lambda c: (-c.stability, c.order_key))
    base, extra = divmod(n, f)
    tiers, start = [], 0
    for k in range(f):
        size = base + (1 if k < extra else 0)
        tiers.append(ranked[start:start + size])
        start += size
    thresholds = [tiers[k + 1][0].stability for k in range(f - 1)]
    return TierSet(tiers, thresholds)


@dataclass(frozen=True, eq=False)
class ReachModel:
    """Stand-in for arm IK: a workspace box for the wrist plus finger/bin collision."""

    workspace_min: np.ndarray
    workspace_max: np.ndarray
    bin_obbs: tuple = ()

    def __post_init__(self):
        lo = np.asarray(self.workspace_min, dtype=float)
        hi = np.asarray(self.workspace_max, dtype=float)
        if not np.all(hi > lo):
            raise ValueError("workspace box is degenerate")
        object.__setattr__(self, "workspace_min", lo)
        object.__setattr__(self, "workspace_max", hi)

    @classmethod
    def for_scene(cls, scene, reach_xy: float = 0.0, height: float = 0.4) -> "ReachModel":
        sx, sy = scene.bin_size
        lo = scene.frame.apply([-0.5 * sx - reach_xy, -0.5 * sy - reach_xy, 0.0])
        hi = scene.frame.apply([0.5 * sx + reach_xy, 0.5 * sy + reach_xy, height])
        return cls(np.minimum(lo, hi), np.maximum(lo, hi), tuple(scene.bin_obbs))


def check_reachable(candidate: GraspCandidate, reach: ReachModel, gripper: GripperModel) -> bool:
    p = candidate.pose.position
    if np.any(p < reach.workspace_min) or np.any(p > reach.workspace_max):
        return False
    sv = build_swept_volume(candidate.pose, APPROACH_DIR, CLOSING_DIR, gripper, margin=0.0)
    for side in (1, -1):
        corridor = sv.finger_corridor(gripper, side)
        if any(obb_overlap(corridor, wall) for wall in reach.bin_obbs):
            return False
    return True


def candidate_swept_points(
    candidate: GraspCandidate,
    cloud: PointCloud,
    target: ObjectModel,
    gripper: GripperModel,
    margin: float = DEFAULT_MARGIN,
    threshold: float = DEFAULT_REMOVAL_THRESHOLD,
) -> SweptPoints:
    """Neighbour points inside the candidate's swept volume, clamped."""
    sv = build_swept_volume(candidate.pose, APPROACH_DIR, CLOSING_DIR, gripper, margin)
    swept = classify_points(cloud, sv)
    swept = remove_target_points(swept, cloud, target, candidate.object_pose, threshold)
    return swept.clamped()


@dataclass
class Selection:
    chosen: GraspCandidate | None
    trace: list = field(default_factory=list)
    swept: SweptPoints | None = None
    score: float | None = None
    tier_sizes: list = field(default_factory=list)

    @property
    def abstained(self) -> bool:
        return self.chosen is None


def select_grasp(
    tiers: TierSet,
    cloud: PointCloud,
    discriminator,
    reach: ReachModel,
    gripper: GripperModel,
    target: ObjectModel,
    alpha: float = 1.0,
    beta: float = 1.0,
    mode: str = "execution",
    margin: float = DEFAULT_MARGIN,
    threshold: float = DEFAULT_REMOVAL_THRESHOLD,
) -> Selection:
    """Walk tiers best-first and return the first tier's best surviving candidate.

    In ``training`` mode only reachability filters candidates and the highest
    stability index wins.  In ``execution`` mode candidates must also be
    predicted successful by ``discriminator`` (anything with
    ``predict(list_of_swept_points)`` returning +1/-1), and the winner
    maximises the selection index.  Ties go to the lowest (entry, object).
    """
    if mode not in ("training", "execution"):
        raise ValueError("mode must be 'training' or 'execution'")
    if mode == "execution" and discriminator is None:
        raise ValueError("execution mode needs a discriminator")
    trace = []
    sizes = tiers.sizes()
    for k, tier in enumerate(tiers.tiers, start=1):
        reachable = [c for c in tier if check_reachable(c, reach, gripper)]
        row = {"tier": k, "candidates": len(tier), "reachable": len(reachable)}
        trace.append(row)
        if not reachable:
            continue
        if mode == "training":
            best = min(reachable, key=lambda c: (-c.stability, c.order_key))
            swept = candidate_swept_points(best, cloud, target, gripper, margin, threshold)
            return Selection(best, trace, swept, best.stability, sizes)
        swept = [candidate_swept_points(c, cloud, target, gripper, margin, threshold)
                 for c in reachable]
        verdict = np.asarray(discriminator.predict(swept))
        row["predicted_success"] = int(np.sum(verdict == 1))
        survivors = [(c, s) for c, s, v in zip(reachable, swept, verdict) if v == 1]
        if not survivors:
            continue
        scored = [(selection_index(s, alpha, beta), c, s) for c, s in survivors]
        score, best, best_swept = min(scored, key=lambda t: (-t[0], t[1].order_key))
        return Selection(best, trace, best_swept, score, sizes)
    return Selection(None, trace, tier_sizes=sizes)


def _entry(position, rotation_cols, joints, stability) -> GraspEntry:
    quat = Pose(position, np.column_stack(rotation_cols)).as_quat()
    return GraspEntry(tuple(position), tuple(quat), tuple(joints), float(stability))


def box_grasp_database(
    model: ObjectModel,
    gripper: GripperModel | None = None,
    offsets=(-0.02, -0.01, 0.0, 0.01, 0.02),
    depths=(0.008, 0.012, 0.016),
    end_depths=(0.01, 0.015, 0.02),
) -> list[GraspEntry]:
    """Antipodal grasps closing across the box's middle dimension.

    Top and bottom grasps slide along the long axis (``offsets``) at several
    finger insertion ``depths``; end grasps approach along the long axis.
    The stability index is a wrench-margin proxy: finger-pad contact fraction
    times how centred the pad is on the part.
    """
    if model.kind != "box":
        raise ValueError("procedural grasp database is defined for boxes only")
    gripper = gripper or GripperModel()
    L, W, H = model.dims
    if W >= 2 * gripper.preshape_half_opening:
        raise ValueError("part is wider than the gripper opening")
    half_w = 0.5 * gripper.finger_width
    joints = (0.5 * W, 0.5 * W)
    entries = []
    ex, ey, ez = np.eye(3)
    for up in (1.0, -1.0):
        approach = -up * ez
        x_tool = np.cross(ey, approach)
        for s in offsets:
            if abs(s) + half_w > 0.5 * L + 1e-12:
                continue
            for depth in depths:
                if not 0 < depth < H:
                    continue
                stab = (min(depth, gripper.finger_length) / H) * (1.0 - abs(s) / (0.5 * L))
                pos = [s, 0.0, up * (0.5 * H - depth)]
                entries.append(_entry(pos, (x_tool, ey, approach), joints, stab))
    for end in (1.0, -1.0):
        approach = -end * ex
        x_tool = np.cross(ey, approach)
        for depth in end_depths:
            if not 0 < depth < L:
                continue
            contact = min(depth, gripper.finger_length) / L
            lever = (0.5 * L - 0.5 * depth) / (0.5 * L)
            pos = [end * (0.5 * L - depth), 0.0, 0.0]
            entries.append(_entry(pos, (x_tool, ey, approach), joints, contact * (1.0 - lever)))
    return entries


def db_to_dict(db, model: ObjectModel) -> dict:
    return {
        "format": DB_FORMAT,
        "object": model.to_dict(),
        "entries": [
            {
                "position": list(e.position),
                "quaternion_xyzw": list(e.quat),
                "joints": list(e.joints),
                "stability": e.stability,
            }
            for e in db
        ],
    }


def write_grasp_db(path, db, model: ObjectModel) -> None:
    Path(path).write_text(json.dumps(db_to_dict(db, model), indent=1, sort_keys=True) + "\n")


def read_grasp_db(path):
    """Return ``(entries, object_model)``."""
    data = json.loads(Path(path).read_text())
    if data.get("format") != DB_FORMAT:
        raise ModelFormatError(f"unsupported grasp database format {data.get('format')!r}")
    entries = [
        GraspEntry(tuple(e["position"]), tuple(e["quaternion_xyzw"]), tuple(e["joints"]),
                   float(e["stability"]))
        for e in data["entries"]
    ]
    return entries, ObjectModel.from_dict(data["object"])
