"""Macroblock-level adaptive quantization with a learned emphasis model.

The package pairs an intra-only block-DCT codec simulator with a synthetic
detection benchmark: an emphasis model assigns one of five quality levels
per 16x16 macroblock, trained self-supervised from region-aware exploration
against SSIM resilience thresholds and a downstream accuracy margin.
"""

from .accuracy import (
    AccuracyOracle,
    DetectionOracle,
    DetectorConfig,
    EdgeRetentionOracle,
    detect_blobs,
    detection_f1,
    edge_retention_score,
    iou,
)
from .baselines import BaselineResult, binary_roi_assignment, uniform_qp_search, variance_aq
from .codec import (
    DEFAULT_QP_TABLE,
    EncodeResult,
    apply_emphasis,
    dct8_forward,
    dct8_inverse,
    emphasis_map_from_json,
    emphasis_map_to_json,
    emphasis_to_qp,
    encode_frame,
    estimate_bits,
    qp_map_from_json,
    qp_map_to_json,
    qp_to_qstep,
    read_qp_matrix,
    uniform_qp_map,
    write_qp_matrix,
)
from .config import RunConfig, load_run_config
from .errors import (
    InvalidConfigError,
    InvalidInputError,
    MbaqError,
    ParseError,
    PlacementError,
    TrainingError,
)
from .frames import (
    BoundingBox,
    Frame,
    MbGrid,
    Scene,
    SceneConfig,
    classify_regions,
    generate_scene,
    generate_sequence,
    pad_to_macroblocks,
    partition,
    read_pgm,
    write_pgm,
)
from .quality import per_mb_ssim, psnr, ssim_block
from .thresholds import (
    EmphasisThresholds,
    lowest_quality_encode,
    proxy_emphasis_threshold,
    threshold_from_values,
)
from .training import (
    BruteForceResult,
    EmphasisModel,
    LinearEmphasisModel,
    ObjectiveResult,
    SceneContext,
    TrainerConfig,
    alignment_loss,
    brute_force_optimum,
    build_proxy_target,
    evaluate_objective,
    exponential_sample,
    extract_features,
    predict_emphasis,
    prepare_scene,
    train,
)

__version__ = "0.1.0"
