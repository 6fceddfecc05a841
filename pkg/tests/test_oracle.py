import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from binpick.geometry import GripperModel, Pose
from binpick.oracle import (
    OracleConfig,
    PickOutcome,
    Reason,
    generate_dataset,
    simulate_pick,
)
from binpick.pipeline import PipelineConfig
from binpick.plan import GraspEntry, box_grasp_database, expand_candidates
from binpick.scene import BinScene, SceneObject, gen_scene
from binpick.shapes import ObjectModel

from conftest import random_rotation

PART = ObjectModel.box(0.06, 0.03, 0.025)
GRIPPER = GripperModel()
UPRIGHT = (0.0, 0.0, 0.0, 1.0)


def part_at(y, x=0.0):
    return SceneObject(PART, (x, y, 0.0125), UPRIGHT)


def top_grasp(depth=0.012):
    # fingertips `depth` below the top face of a part resting at the origin
    pose = Pose([0.0, 0.0, 0.025 - depth], np.diag([1.0, -1.0, -1.0]))
    entry = GraspEntry(pose.position, pose.as_quat(), (0.015, 0.015), 1.0)
    return expand_candidates([entry], [Pose.identity()], [0])[0]


def outcome(*objects):
    return simulate_pick(BinScene(objects=objects), top_grasp(), GRIPPER, OracleConfig())


def test_isolated_target_is_clear():
    assert outcome(part_at(0.0)) == PickOutcome(True, Reason.CLEAR)


def test_neighbour_under_outer_fingertip_is_pushed_clear():
    # near face at y = 0.039: the finger (y in [0.03, 0.04]) lands on its outer edge
    got = outcome(part_at(0.0), part_at(0.039 + 0.015))
    assert got == PickOutcome(True, Reason.PUSHED_CLEAR)


def test_second_neighbour_blocks_the_push():
    got = outcome(part_at(0.0), part_at(0.054), part_at(0.054 + 0.03 + 0.005))
    assert got == PickOutcome(False, Reason.BLOCKED)
    # a second part beyond the push clearance does not matter
    got = outcome(part_at(0.0), part_at(0.054), part_at(0.054 + 0.03 + 0.02))
    assert got.reason is Reason.PUSHED_CLEAR


def test_wall_blocks_the_push():
    scene = BinScene(bin_size=(0.3, 0.2), objects=(part_at(0.0), part_at(0.054)))
    got = simulate_pick(scene, top_grasp(), GRIPPER)
    assert got.reason is Reason.PUSHED_CLEAR
    tight = BinScene(bin_size=(0.3, 0.16), objects=(part_at(0.0), part_at(0.054)))
    assert simulate_pick(tight, top_grasp(), GRIPPER).reason is Reason.BLOCKED


def test_landing_on_top_is_a_bad_angle():
    # near face at y = 0.031: the fingertip presses down on the part's top
    got = outcome(part_at(0.0), part_at(0.031 + 0.015))
    assert got == PickOutcome(False, Reason.BAD_ANGLE)


def test_part_between_fingers_is_a_bad_angle():
    # a small part inside the closing stroke, between finger and target
    wafer = SceneObject(ObjectModel.box(0.02, 0.006, 0.004), (0.0, 0.022, 0.03), UPRIGHT)
    assert outcome(part_at(0.0), wafer).reason is Reason.BAD_ANGLE


def test_contact_angle_threshold_is_a_parameter():
    scene = BinScene(objects=(part_at(0.0), part_at(0.054)))
    strict = OracleConfig(contact_angle_max=np.deg2rad(30.0))
    assert simulate_pick(scene, top_grasp(), GRIPPER, strict).reason is Reason.BAD_ANGLE


def test_bad_target_index():
    cand = top_grasp()
    with pytest.raises(ValueError):
        simulate_pick(BinScene(objects=()), cand, GRIPPER)


@pytest.mark.invariant
def test_reason_consistency_enforced():
    with pytest.raises(ValueError):
        PickOutcome(True, Reason.BLOCKED)
    with pytest.raises(ValueError):
        PickOutcome(False, Reason.CLEAR)
    with pytest.raises(ValueError):
        OracleConfig(push_clearance=0.0)


DB = box_grasp_database(PART, GRIPPER)


def sample_candidates(scene, rng, n):
    cands = expand_candidates(DB, scene.poses())
    return [cands[k] for k in rng.choice(len(cands), size=n, replace=False)]


def relabel(cand, removed):
    j = cand.object_index - (1 if removed < cand.object_index else 0)
    return cand.__class__(cand.pose, cand.joints, cand.stability, j, cand.entry_index,
                          cand.object_pose, cand.slot)


@pytest.mark.invariant
def test_removing_a_part_never_breaks_a_success():
    checked = flips = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        scene = gen_scene(PART, 6, seed=seed)
        for cand in sample_candidates(scene, rng, 8):
            out = simulate_pick(scene, cand, GRIPPER)
            assert out.success == (out.reason in (Reason.CLEAR, Reason.PUSHED_CLEAR))
            for k in range(len(scene.objects)):
                if k == cand.object_index:
                    continue
                after = simulate_pick(scene.without(k), relabel(cand, k), GRIPPER)
                checked += 1
                if out.success and not after.success:
                    flips += 1
    assert checked >= 4000 and flips == 0


@pytest.mark.invariant
@given(st.integers(0, 2**32 - 1))
def test_outcome_invariant_under_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    scene = gen_scene(PART, 6, seed=int(rng.integers(1000)))
    T = Pose(rng.normal(size=3), random_rotation(rng))
    moved = scene.transformed(T)
    for cand in sample_candidates(scene, rng, 6):
        moved_cand = cand.__class__(T @ cand.pose, cand.joints, cand.stability,
                                    cand.object_index, cand.entry_index,
                                    T @ cand.object_pose, cand.slot)
        assert simulate_pick(scene, cand, GRIPPER) == simulate_pick(moved, moved_cand, GRIPPER)


def test_dataset_is_deterministic(tmp_path):
    cfg = PipelineConfig()
    a = generate_dataset(6, cfg, seed=4)
    b = generate_dataset(6, cfg, seed=4)
    a.write(tmp_path / "a.csv")
    b.write(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    bal = a.balance()
    assert bal["rows"] == 6 == bal["success"] + bal["failure"]
    assert sum(bal["reasons"].values()) == 6
    assert a.training_set("hist").X.shape == (6, 25)
    with pytest.raises(ValueError):
        generate_dataset(0, cfg)


def test_dataset_from_given_scenes():
    scenes = [gen_scene(PART, 9, seed=s) for s in range(3)]
    ds = generate_dataset(3, scenes=scenes, seed=1)
    assert len(ds) <= 3
    assert all(r["attempt"] == 0 for r in ds.records)
