"""Multi-view 3D correspondence probing for per-view feature maps.

The toolkit unprojects posed RGB-D frames to world coordinates, buckets
feature cells into voxels, scores cross-view feature agreement, and
provides contrastive and teacher-alignment losses with analytic gradients
plus a small trainer that demonstrates both improving the score.
"""

from .cli import run_cli, schema_dir
from .errors import (
    ConfigError,
    Corr3dError,
    DegenerateVectorError,
    DivergenceError,
    EmptyMaskError,
    EmptyPairsError,
    EmptySceneError,
    FormatError,
    NoNegativesError,
    SchemaError,
    ShapeError,
    SpecError,
    TooFewSamplesError,
    ValidationError,
)
from .geometry import (
    BBox,
    CoordinateMap,
    PosEncoding,
    encode_position,
    encode_positions,
    inject_position,
    pool_coordinates,
    unproject_frame,
    unproject_pixel,
)
from .losses import (
    AlignmentMlp,
    LossResult,
    MlpGrads,
    alignment_loss,
    avg_pool_2d,
    correspondence_loss,
    grad_check,
)
from .metrics import (
    QuartileBin,
    QuartileReport,
    ScoreReport,
    correspondence_score,
    cosine_similarity,
    feature_stack,
    pair_similarities,
    quartile_report,
)
from .scene import (
    FrameRecord,
    Scene,
    ValidationIssue,
    ValidationReport,
    load_scene,
    parse_manifest,
    subsample_indices,
    validate_scene,
    write_scene,
)
from .synth import SynthSpec, SynthTruth, generate_synthetic_scene
from .tensor_io import Tensor, read_tensor, write_tensor
from .trainer import EvalPoint, TrainConfig, TrainReport, alignment_inputs, run_training
from .voxel import (
    Entry,
    Pair,
    PairMode,
    PairSet,
    VoxelGrid,
    VoxelKey,
    build_voxel_grid,
    enumerate_negative_pairs,
    enumerate_positive_pairs,
    pooled_coordinate_maps,
    sample_negative_pairs,
    scene_voxel_grid,
    voxel_index,
)

__version__ = "0.1.0"
