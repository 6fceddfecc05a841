"""Bin-picking grasp selection from finger swept-volume point features."""
from .errors import ConfigError, DegenerateDataError, InvalidFrameError, ModelFormatError, SceneCapacityError
from .features import BinningConfig, SweptFeatures, hist_feature, selection_index, svm_feature
from .geometry import GripperModel, PointCloud, Pose, SweptPoints, build_swept_volume, classify_points
from .learn import ConfusionMatrix, LinearSVMDiscriminator, RandomForestDiscriminator, evaluate
from .oracle import OracleConfig, PickOutcome, Reason, generate_dataset, run_trial, simulate_pick
from .pipeline import PipelineConfig, swept_discriminator
from .plan import expand_candidates, select_grasp, tier_split
from .scene import BinScene, capture, gen_scene, segment
from .shapes import ObjectModel

__version__ = "0.1.0"
