"""Multimodal contrastive embedding training and re-identification retrieval.

The visual branch learns by momentum contrast against a FIFO key
dictionary; the text branch combines soft clustering with an
instance-contrastive head; both losses are summed and optimized jointly.
Evaluation follows the standard cross-camera retrieval protocol (mAP, CMC).
"""

from .augment import NoiseDropout
from .data import (
    FeatureDataset,
    FeatureRecord,
    SynthSpec,
    assign_splits,
    load_dataset,
    save_dataset,
    synth_generate,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .encoders import (
    EncoderPair,
    EncoderParams,
    forward,
    init_params,
    momentum_update,
)
from .evaluation import (
    EvalMetrics,
    GalleryItem,
    RankingResult,
    average_precision,
    evaluate,
    format_ranking,
    fuse,
    rank,
)
from .numerics import finite_diff_grad, l2_normalize, log_sum_exp
from .textual import (
    ClusterState,
    TextLossConfig,
    clustering_loss,
    init_centers,
    instance_cl_loss,
    soft_assign,
    target_distribution,
    text_loss,
)
from .trainer import (
    MODES,
    TrainConfig,
    TrainState,
    ablate,
    adam_step,
    evaluate_state,
    resume,
    total_loss,
    train,
)
from .visual import KeyQueue, VisualLossConfig, enqueue_dequeue, info_nce, visual_step

__version__ = "0.1.0"

__all__ = [
    "ClusterState",
    "EncoderPair",
    "EncoderParams",
    "EvalMetrics",
    "FeatureDataset",
    "FeatureRecord",
    "GalleryItem",
    "KeyQueue",
    "MODES",
    "NoiseDropout",
    "RankingResult",
    "SynthSpec",
    "TextLossConfig",
    "TrainConfig",
    "TrainState",
    "VisualLossConfig",
    "ablate",
    "adam_step",
    "assign_splits",
    "average_precision",
    "clustering_loss",
    "enqueue_dequeue",
    "evaluate",
    "evaluate_state",
    "finite_diff_grad",
    "format_ranking",
    "forward",
    "fuse",
    "info_nce",
    "init_centers",
    "init_params",
    "instance_cl_loss",
    "l2_normalize",
    "load_checkpoint",
    "load_dataset",
    "log_sum_exp",
    "momentum_update",
    "rank",
    "resume",
    "save_checkpoint",
    "save_dataset",
    "soft_assign",
    "synth_generate",
    "target_distribution",
    "text_loss",
    "total_loss",
    "train",
    "visual_step",
]
