"""Evaluation metrics, detector-tracker fusion and simulation tools for
phrase-prompted instance segmentation."""

from .errors import UndefinedMetricError, ValidationError
from .masks import (
    BBox,
    FrameMaskSeq,
    RleMask,
    bbox_iou,
    bbox_of,
    mask_iom,
    mask_iou,
    rle_decode,
    rle_encode,
    volume_iou,
)
from .matching import Counts, Detection, Matching, counts_at_threshold, iom_nms, optimal_match
from .image_metrics import (
    DataPoint,
    GtInstance,
    ILCounts,
    IOU_THRESHOLDS,
    MetricReport,
    cg_f1,
    combine_scores,
    counting_metrics,
    gate,
    il_counts,
    il_mcc,
    local_f1,
    macro_pf1,
    oracle_select,
    pm_f1,
    random_pair,
)
from .video_metrics import (
    HOTA_ALPHAS,
    HotaResult,
    RemappedTrackSet,
    ScoredMasklet,
    VideoDataPoint,
    hota,
    match_masklets,
    phota_remap,
    video_cg_f1,
)
from .tracker import Masklet, Tracker, TrackerConfig, TrackResult, delta, mds, run
from .sim import PromptEvent, ScenarioConfig, exemplar_policy, gen_scenario

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Counts",
    "DataPoint",
    "Detection",
    "FrameMaskSeq",
    "GtInstance",
    "HOTA_ALPHAS",
    "HotaResult",
    "ILCounts",
    "IOU_THRESHOLDS",
    "Masklet",
    "Matching",
    "MetricReport",
    "PromptEvent",
    "RemappedTrackSet",
    "RleMask",
    "ScenarioConfig",
    "ScoredMasklet",
    "Tracker",
    "TrackerConfig",
    "TrackResult",
    "UndefinedMetricError",
    "ValidationError",
    "VideoDataPoint",
    "bbox_iou",
    "bbox_of",
    "cg_f1",
    "combine_scores",
    "counting_metrics",
    "counts_at_threshold",
    "delta",
    "exemplar_policy",
    "gate",
    "gen_scenario",
    "hota",
    "il_counts",
    "il_mcc",
    "iom_nms",
    "local_f1",
    "macro_pf1",
    "mask_iom",
    "mask_iou",
    "match_masklets",
    "mds",
    "optimal_match",
    "oracle_select",
    "phota_remap",
    "pm_f1",
    "random_pair",
    "rle_decode",
    "rle_encode",
    "run",
    "video_cg_f1",
    "volume_iou",
]
