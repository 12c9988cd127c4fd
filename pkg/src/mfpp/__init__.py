"""Black-box saliency explanation via multi-scale fragment perturbation.

Pipeline: segment the image into superpixel fragments at several scales,
randomly keep/drop fragments to build perturbation masks, score the masked
images with an opaque predictor, and aggregate the scores into a per-pixel
saliency map.  Includes pointing-game and timing evaluation plus a CLI.
"""

__version__ = "0.1.0"

from .engine import (
    ExplainConfig,
    SaliencyMap,
    config_hash,
    fragment_attribution,
    saliency,
    saliency_from_batch,
    top_class,
)
from .errors import (
    ExplainJobError,
    InvalidConfigError,
    MfppError,
    ProtocolError,
    TransportError,
)
from .evaluation import (
    Box,
    GroundTruth,
    PointingResult,
    TimingReport,
    benchmark_time,
    load_coco,
    load_voc,
    pointing_game,
    synthetic_pointing_dataset,
)
from .masks import (
    FragmentPyramid,
    MaskBatch,
    PyramidConfig,
    apply_mask,
    build_pyramid,
    gen_fragment_masks,
    gen_grid_masks,
    iter_fragment_masks,
)
from .predictors import (
    RemotePredictor,
    ToyPredictorSpec,
    decode_predict_request,
    decode_predict_response,
    encode_predict_request,
    encode_predict_response,
    make_toy,
    predict_batch,
)
from .segmentation import LabelMap, SlicParams, slic_segment

__all__ = [
    "__version__",
    "Box",
    "ExplainConfig",
    "ExplainJobError",
    "FragmentPyramid",
    "GroundTruth",
    "InvalidConfigError",
    "LabelMap",
    "MaskBatch",
    "MfppError",
    "PointingResult",
    "ProtocolError",
    "PyramidConfig",
    "RemotePredictor",
    "SaliencyMap",
    "SlicParams",
    "TimingReport",
    "ToyPredictorSpec",
    "TransportError",
    "apply_mask",
    "benchmark_time",
    "build_pyramid",
    "config_hash",
    "decode_predict_request",
    "decode_predict_response",
    "encode_predict_request",
    "encode_predict_response",
    "fragment_attribution",
    "gen_fragment_masks",
    "gen_grid_masks",
    "iter_fragment_masks",
    "load_coco",
    "load_voc",
    "make_toy",
    "pointing_game",
    "predict_batch",
    "saliency",
    "saliency_from_batch",
    "slic_segment",
    "synthetic_pointing_dataset",
    "top_class",
]
