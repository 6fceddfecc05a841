"""Rule-based, quasi-static pick outcome model and synthetic dataset generation.

A pick is judged from the neighbours that reach into the finger swept volume:

1. no neighbour intersects the swept volume: success (``clear``);
2. a finger's first contact with a neighbour happens at a steep angle to the
   outward push direction, or during closing (pushing it toward the target):
   failure (``bad-contact-angle``);
3. a pushed neighbour cannot travel ``push_clearance`` outward without hitting
   another part or the bin: failure (``blocked-by-second-neighbor``);
4. otherwise success (``neighbor-pushed-clear``).

Parts are treated as their bounding boxes, which is exact for box parts.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .collide import obb_overlap, obb_sweep
from .features import BinningConfig, hist_feature, svm_feature, write_dataset
from .geometry import APPROACH_DIR, CLOSING_DIR, GripperModel, build_swept_volume
from .learn import TrainingSet, derive_seeds, splitmix64
from .pipeline import PipelineConfig, detect_objects, plan_pick
from .plan import GraspCandidate, box_grasp_database
from .scene import BinScene, capture


class Reason(str, enum.Enum):
    CLEAR = "clear"
    PUSHED_CLEAR = "neighbor-pushed-clear"
    BLOCKED = "blocked-by-second-neighbor"
    BAD_ANGLE = "bad-contact-angle"


_SUCCESS_REASONS = (Reason.CLEAR, Reason.PUSHED_CLEAR)


@dataclass(frozen=True)
class PickOutcome:
    success: bool
    reason: Reason

    def __post_init__(self):
        if self.success != (self.reason in _SUCCESS_REASONS):
            raise ValueError(f"reason {self.reason.value} contradicts success={self.success}")

    @property
    def label(self) -> int:
        return 1 if self.success else -1


@dataclass(frozen=True)
class OracleConfig:
    push_clearance: float = 0.015
    contact_angle_max: float = np.deg2rad(60.0)

    def __post_init__(self):
        if not (self.push_clearance > 0 and self.contact_angle_max > 0):
            raise ValueError("push_clearance and contact_angle_max must be positive")


def _surface_samples(box, spacing: float = 0.001) -> np.ndarray:
    """Grid points on the six faces of an OBB (edges included), world frame."""
    h = box.half
    n = np.maximum(np.ceil(2 * h / spacing).astype(int) + 1, 2)
    axes = [np.linspace(-h[k], h[k], n[k]) for k in range(3)]
    faces = []
    for k in range(3):
        a, b = [m for m in range(3) if m != k]
        ua, ub = np.meshgrid(axes[a], axes[b], indexing="ij")
        for sign in (-1.0, 1.0):
            f = np.empty((ua.size, 3))
            f[:, a], f[:, b], f[:, k] = ua.ravel(), ub.ravel(), sign * h[k]
            faces.append(f)
    return box.center + np.concatenate(faces) @ box.axes.T


def _approach_contact(sv, gripper, side, local):
    """Cosine between the outward push and the finger's pressing direction.

    The fingertip is a half cylinder of diameter ``finger_thickness`` moving
    down the approach stroke; ``local`` holds neighbour surface points in the
    swept-volume frame.  Returns None when the finger never touches them.
    """
    r = 0.5 * gripper.finger_thickness
    yc = side * (gripper.preshape_half_opening + r)
    dy = local[:, 1] - yc
    band = (np.abs(local[:, 0]) <= sv.half_extent_x) & (np.abs(dy) <= r)
    if not np.any(band):
        return None
    q, dy = local[band], dy[band]
    centre_z = q[:, 2] + np.sqrt(np.maximum(r * r - dy * dy, 0.0))
    k = int(np.argmax(centre_z))
    if centre_z[k] - r <= 0.0:
        return None  # the finger stops above the grasp depth before touching
    return side * dy[k] / r


def _closing_blocked(sv, gripper, side, neighbour, target):
    """True when a closing finger meets ``neighbour`` before the target."""
    inward = -side * sv.axis(1)
    start = sv.finger_box(gripper, side, lift=0.0)
    travel = gripper.preshape_half_opening
    hit = obb_sweep(start, neighbour, inward, travel)
    if hit is None:
        return False
    stop = obb_sweep(start, target, inward, travel)
    return stop is None or hit.toi < stop.toi


# resting contacts (part on part, part on floor) do not block a push
_TOUCH = 1e-6


def _in_plane(u, scene):
    """Push direction projected onto the bin floor plane."""
    n = scene.frame.rotation[:, 2]
    p = u - (u @ n) * n
    norm = np.linalg.norm(p)
    return p / norm if norm > 1e-9 else u


def simulate_pick(scene: BinScene, candidate: GraspCandidate, gripper: GripperModel | None = None,
                  cfg: OracleConfig | None = None) -> PickOutcome:
    gripper = gripper or GripperModel()
    cfg = cfg or OracleConfig()
    j = candidate.object_index
    if not 0 <= j < len(scene.objects):
        raise ValueError(f"target object {j} is not in the scene")
    sv = build_swept_volume(candidate.pose, APPROACH_DIR, CLOSING_DIR, gripper, margin=0.0)
    volume = sv.obb()
    boxes = [o.obb for o in scene.objects]
    target = boxes[j]
    intruders = [k for k in range(len(boxes)) if k != j and obb_overlap(volume, boxes[k])]
    if not intruders:
        return PickOutcome(True, Reason.CLEAR)

    cos_max = np.cos(cfg.contact_angle_max)
    pushes = []
    for k in intruders:
        local = sv.to_local(_surface_samples(boxes[k]))
        for side in (1, -1):
            cos = _approach_contact(sv, gripper, side, local)
            if cos is None:
                if _closing_blocked(sv, gripper, side, boxes[k], target):
                    return PickOutcome(False, Reason.BAD_ANGLE)
                continue
            if cos <= cos_max:
                return PickOutcome(False, Reason.BAD_ANGLE)
            pushes.append((k, _in_plane(side * sv.axis(1), scene)))

    obstacles = list(scene.bin_obbs)
    for k, push in pushes:
        others = [b for m, b in enumerate(boxes) if m != k] + obstacles
        for other in others:
            if obb_sweep(boxes[k], other, push, cfg.push_clearance, tol=_TOUCH) is not None:
                return PickOutcome(False, Reason.BLOCKED)
    return PickOutcome(True, Reason.PUSHED_CLEAR)


@dataclass
class TrialResult:
    seed: int
    scene: BinScene
    selection: object
    detection_report: dict
    outcome: PickOutcome | None

    @property
    def picked(self) -> bool:
        return self.outcome is not None


def _trial_seeds(seed):
    a, b, c = derive_seeds(seed, 3)
    return a, b, c


def run_trial(seed, cfg: PipelineConfig | None = None, oracle_cfg: OracleConfig | None = None,
              db=None, discriminator=None, alpha=1.0, beta=1.0, mode="execution",
              scene: BinScene | None = None) -> TrialResult:
    """One full pick attempt on a generated (or given) scene, judged by the oracle."""
    cfg = cfg or PipelineConfig()
    oracle_cfg = oracle_cfg or OracleConfig()
    db = db if db is not None else box_grasp_database(cfg.part, cfg.gripper)
    scene_seed, capture_seed, noise_seed = _trial_seeds(seed)
    if scene is None:
        scene = cfg.make_scene(scene_seed)
    cloud = capture(scene, cfg.sensor, capture_seed)
    detections, report = detect_objects(scene, cloud, cfg, noise_seed)
    sel = plan_pick(scene, cloud, detections, db, cfg, discriminator, alpha, beta, mode)
    outcome = None
    if sel.chosen is not None:
        outcome = simulate_pick(scene, sel.chosen, cfg.gripper, oracle_cfg)
    return TrialResult(seed, scene, sel, report, outcome)


@dataclass
class PickDataset:
    labels: np.ndarray
    svm: np.ndarray
    hist: np.ndarray
    records: list = field(default_factory=list)
    binning: BinningConfig = field(default_factory=BinningConfig)

    def __len__(self):
        return len(self.labels)

    def training_set(self, kind: str) -> TrainingSet:
        return TrainingSet(self.svm if kind == "svm2d" else self.hist, self.labels, kind)

    def balance(self) -> dict:
        reasons = {}
        for r in self.records:
            reasons[r["reason"]] = reasons.get(r["reason"], 0) + 1
        return {
            "rows": len(self),
            "success": int(np.sum(self.labels == 1)),
            "failure": int(np.sum(self.labels == -1)),
            "reasons": dict(sorted(reasons.items())),
        }

    def write(self, csv_path) -> None:
        write_dataset(csv_path, self.labels, self.svm, self.hist, self.binning)


def _row(result: TrialResult, binning):
    sw = result.selection.swept
    return result.outcome.label, np.array(svm_feature(sw)), hist_feature(sw, binning)


def generate_dataset(n_trials: int, cfg: PipelineConfig | None = None,
                     oracle_cfg: OracleConfig | None = None, seed: int = 0,
                     max_attempts: int = 20, scenes=None) -> PickDataset:
    """Training-mode picks labelled by the oracle, one row per trial.

    Trials whose scene yields no pick are re-drawn with a derived seed, up to
    ``max_attempts`` times.  When ``scenes`` is given, one trial is run per
    scene (no re-draws) and scenes without a pick are skipped.
    """
    cfg = cfg or PipelineConfig()
    oracle_cfg = oracle_cfg or OracleConfig()
    db = box_grasp_database(cfg.part, cfg.gripper)
    labels, svm_rows, hist_rows, records = [], [], [], []

    def keep(t, result, attempt):
        y, s, h = _row(result, cfg.binning)
        labels.append(y)
        svm_rows.append(s)
        hist_rows.append(h)
        records.append({"trial": t, "seed": result.seed, "attempt": attempt,
                        "reason": result.outcome.reason.value,
                        "object": result.selection.chosen.object_index,
                        "entry": result.selection.chosen.entry_index})

    if scenes is not None:
        seeds = derive_seeds(seed, len(scenes))
        for t, (sc, s) in enumerate(zip(scenes, seeds)):
            result = run_trial(s, cfg, oracle_cfg, db, mode="training", scene=sc)
            if result.picked:
                keep(t, result, 0)
    else:
        if n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        for t, trial_seed in enumerate(derive_seeds(seed, n_trials)):
            for attempt in range(max_attempts):
                s = trial_seed if attempt == 0 else splitmix64(trial_seed + attempt)
                result = run_trial(s, cfg, oracle_cfg, db, mode="training")
                if result.picked:
                    keep(t, result, attempt)
                    break
            else:
                raise RuntimeError(f"trial {t}: no pickable grasp in {max_attempts} scenes")

    return PickDataset(
        np.array(labels, dtype=int),
        np.array(svm_rows, dtype=float).reshape(-1, 2),
        np.array(hist_rows, dtype=float).reshape(-1, cfg.binning.size),
        records,
        cfg.binning,
    )


def balance_report(ds: PickDataset) -> str:
    return json.dumps(ds.balance(), sort_keys=True)
