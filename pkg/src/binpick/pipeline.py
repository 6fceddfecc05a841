"""Capture -> segment -> detect -> expand -> tier -> select, for one bin scene.

Pose estimation is replaced by the ground-truth pose of each matched part
plus injected noise; detections whose translation error exceeds
``pose_error_threshold`` are discarded before candidates are generated.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.pipeline import make_pipeline

from .features import BinningConfig, SweptFeatures
from .geometry import DEFAULT_MARGIN, DEFAULT_REMOVAL_THRESHOLD, GripperModel, PointCloud, Pose
from .learn import LinearSVMDiscriminator
from .plan import ReachModel, Selection, expand_candidates, select_grasp, tier_split
from .scene import (
    POSE_ERROR_THRESHOLD,
    BinScene,
    ObjectModel,
    SensorConfig,
    bbox_filter,
    gen_scene,
    inject_pose_noise,
    segment,
)


def default_part() -> ObjectModel:
    return ObjectModel.box(0.06, 0.03, 0.025)


@dataclass
class PipelineConfig:
    part: ObjectModel = field(default_factory=default_part)
    n_objects: int = 9
    bin_size: tuple = (0.3, 0.3)
    wall_height: float = 0.1
    gap: tuple = (0.0, 0.01)
    max_tilt: float = 0.5
    gripper: GripperModel = field(default_factory=GripperModel)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    crop_height: float = 0.003
    cluster_dist: float = 0.004
    bbox_rel_tol: float = 0.3
    pose_sigma_t: float = 0.001
    pose_sigma_r: float = 0.01
    pose_error_threshold: float = POSE_ERROR_THRESHOLD
    n_tiers: int = 3
    margin: float = DEFAULT_MARGIN
    removal_threshold: float = DEFAULT_REMOVAL_THRESHOLD
    binning: BinningConfig = field(default_factory=BinningConfig)

    def make_scene(self, seed) -> BinScene:
        return gen_scene(self.part, self.n_objects, self.bin_size, self.wall_height,
                         seed=seed, gap=self.gap, max_tilt=self.max_tilt)

    def describe(self) -> dict:
        """JSON-ready summary for manifests."""
        out = {}
        for k, v in asdict(self).items():
            if k == "sensor":
                continue
            out[k] = v
        out["part"] = self.part.to_dict()
        s = self.sensor
        out["sensor"] = {
            "viewpoint_position": s.viewpoint.position.tolist(),
            "viewpoint_quaternion_xyzw": s.viewpoint.as_quat().tolist(),
            "resolution": s.resolution,
            "noise_sigma": s.noise_sigma,
            "max_range": s.max_range,
            "fov": list(s.fov),
        }
        return _jsonable(out)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class Detection:
    object_index: int
    pose: Pose
    error_norm: float


def crop_to_bin(scene: BinScene, cloud: PointCloud, crop_height: float, inset: float = 0.002):
    """Points inside the bin interior and above the floor band."""
    local = scene.frame.apply_inverse(cloud.points)
    sx, sy = scene.bin_size
    keep = (
        (local[:, 2] > crop_height)
        & (np.abs(local[:, 0]) < 0.5 * sx - inset)
        & (np.abs(local[:, 1]) < 0.5 * sy - inset)
    )
    return PointCloud(cloud.frame_id, cloud.points[keep])


def detect_objects(scene: BinScene, cloud: PointCloud, cfg: PipelineConfig, seed=0):
    """Segments with part-sized bounding boxes, matched to parts by nearest centre.

    Returns the accepted detections (sorted by part index) and a small report.
    """
    rng = np.random.default_rng(seed)
    cropped = crop_to_bin(scene, cloud, cfg.crop_height)
    segs = segment(cropped, cfg.cluster_dist)
    kept = bbox_filter(segs, cfg.part, cfg.bbox_rel_tol, oriented=True)
    centres = np.array([o.pose.position for o in scene.objects]).reshape(-1, 3)
    radius = 0.5 * float(np.max(cfg.part.extents))
    matched = {}
    for seg in kept:
        c = seg.centroid(cropped)
        dist = np.linalg.norm(centres - c, axis=1)
        j = int(np.argmin(dist))
        if dist[j] <= radius and j not in matched:
            matched[j] = seg
    detections = []
    rejected = 0
    for j in sorted(matched):
        pose, err = inject_pose_noise(scene.objects[j].pose, cfg.pose_sigma_t,
                                      cfg.pose_sigma_r, rng)
        if err > cfg.pose_error_threshold:
            rejected += 1
            continue
        detections.append(Detection(j, pose, err))
    report = {"segments": len(segs), "part_sized": len(kept), "matched": len(matched),
              "rejected_pose_error": rejected, "detected": len(detections)}
    return detections, report


def plan_pick(scene, cloud, detections, db, cfg: PipelineConfig, discriminator=None,
              alpha=1.0, beta=1.0, mode="execution", reach: ReachModel | None = None) -> Selection:
    if not detections:
        return Selection(None, [])
    reach = reach or ReachModel.for_scene(scene)
    candidates = expand_candidates(db, [d.pose for d in detections],
                                   [d.object_index for d in detections])
    tiers = tier_split(candidates, min(cfg.n_tiers, len(candidates)))
    return select_grasp(tiers, cloud, discriminator, reach, cfg.gripper, cfg.part,
                        alpha, beta, mode, cfg.margin, cfg.removal_threshold)


def swept_discriminator(model, binning: BinningConfig | None = None):
    """Wrap a fitted learner so it predicts directly from swept-point sets."""
    binning = binning or BinningConfig()
    kind = "svm2d" if isinstance(model, LinearSVMDiscriminator) else "hist"
    feats = SweptFeatures(kind, binning.b_y, binning.b_z, binning.w_y, binning.w_z)
    return make_pipeline(feats, model)
