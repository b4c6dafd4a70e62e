"""Small-motion initialization for monocular inspection sequences.

Feature tracks from a narrow-field camera drifting slowly around a target
are lifted to a metric-up-to-scale reconstruction in three stages: a linear
pairwise motion estimate with outlier rejection, a translation and depth
refinement with rotations held fixed, and a full bundle adjustment over
rotations, translations, and landmark directions. A synthetic scene
generator and a benchmark harness round out the package.
"""

from .version import __version__, VERSION_STRING
from .errors import (
    SfsmError,
    ParseError,
    ValidationError,
    DegenerateDepth,
    NonPositiveDepth,
    InsufficientCorrespondences,
    RansacFailure,
    Step1Failure,
    Step2Failure,
    Step3Failure,
    NumericalFailure,
    GenerationError,
    DegenerateScale,
)
from .geometry import (
    CameraModel,
    SoftPlusParams,
    Pose,
    pixel_to_camera,
    camera_to_pixel,
    small_rotation_matrix,
    exact_rotation,
    rotation_log,
    softplus,
    softplus_inverse,
)
from .tracks import Track, FeatureTracks, read_tracks, write_tracks, validate_tracks
from .step1 import Step1Config, RansacResult, SmallMotionEstimate, estimate_all_frames
from .step2 import Step2Solution, build_step2_problem, solve_step2
from .step3 import InitializationSolution, build_step3_problem, solve_step3
from .optimizer import LmConfig, SolveReport, Problem, solve, check_jacobians
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    SuccessThresholds,
    SolutionFile,
    VARIANT_ALIASES,
    run_pipeline,
    write_solution,
    read_solution,
    failure_stage,
)
from .synth import SceneConfig, SceneTruth, generate_scene, generate_benchmark_set, read_truth, write_truth
from .evaluation import (
    ErrorReport,
    AlignedSolution,
    SequenceResult,
    BenchmarkSummary,
    align_and_scale,
    compute_errors,
    classify_success,
    evaluate_sequence,
    run_benchmark,
    summarize,
    reports_identical,
    rows_to_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
