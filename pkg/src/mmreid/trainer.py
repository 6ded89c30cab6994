"""Joint training loop and the four-mode ablation runner.

Each iteration samples one paired mini-batch, runs the visual contrastive
step and/or the text clustering-contrastive step depending on the mode,
sums the two losses, and applies Adam with decoupled weight decay to the
trainable parameters: the query encoder, the text encoder, and the cluster
centers. The key encoder is only ever moved by the momentum update inside
the visual step.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import encoders, rng as rng_mod
from .augment import NoiseDropout
from .data import FeatureDataset
from .errors import EmptyDataset, ModeDataMismatch, NonFinite, ShapeMismatch
from .evaluation import EvalMetrics, GalleryItem, evaluate, fuse
from .textual import ClusterState, TextLossConfig, init_centers, text_loss
from .visual import KeyQueue, VisualLossConfig, visual_step

MODES = ("baseline", "text_only", "video_only", "total")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 180
    batch_size: int = 64
    tau: float = 0.07
    eta: float = 10.0
    momentum: float = 0.999
    queue_capacity: int = 4096
    learning_rate: float = 1e-3
    weight_decay_visual: float = 1e-5
    weight_decay_text: float = 1e-7
    seed: int = 0
    mode: str = "total"
    clusters: int | None = None
    hidden_dims: tuple[int, ...] = (64,)
    embedding_dim: int = 32
    tau_instance: float = 0.5
    cluster_alpha: float = 1.0
    aug_sigma: float = 0.1
    aug_dropout: float = 0.1
    text_warmup: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        positive = {
            "batch_size": self.batch_size,
            "tau": self.tau,
            "queue_capacity": self.queue_capacity,
            "learning_rate": self.learning_rate,
            "embedding_dim": self.embedding_dim,
            "tau_instance": self.tau_instance,
            "cluster_alpha": self.cluster_alpha,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        non_negative = {
            "iterations": self.iterations,
            "eta": self.eta,
            "weight_decay_visual": self.weight_decay_visual,
            "weight_decay_text": self.weight_decay_text,
            "seed": self.seed,
            "aug_sigma": self.aug_sigma,
            "text_warmup": self.text_warmup,
        }
        for name, value in non_negative.items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")
        if not 0.0 <= self.aug_dropout < 1.0:
            raise ValueError("dropout probability must lie in [0, 1)")


@dataclass
class AdamMoments:
    """First and second moment estimates, aligned with a parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]

    @staticmethod
    def zeros_like(params) -> "AdamMoments":
        return AdamMoments(
            [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params]
        )


@dataclass
class TrainState:
    config: TrainConfig
    pair: encoders.EncoderPair
    text: encoders.EncoderParams
    clusters: ClusterState
    queue: KeyQueue
    opt_visual: AdamMoments
    opt_text: AdamMoments
    opt_centers: AdamMoments
    iteration: int = 0


def total_loss(visual_loss: float, text_loss_value: float) -> float:
    """Unweighted sum of the two branch losses."""
    if not (np.isfinite(visual_loss) and np.isfinite(text_loss_value)):
        raise NonFinite(f"branch losses not finite: {visual_loss}, {text_loss_value}")
    return float(visual_loss) + float(text_loss_value)


def adam_step(params, grads, moments: AdamMoments, lr: float, weight_decay: float,
              t: int, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS):
    """One adaptive-moment update over aligned parameter arrays.

    Decoupled weight decay shrinks each parameter by (1 - lr * wd) before
    the bias-corrected moment step. Returns (new_params, new_moments).
    """
    if t < 1:
        raise ValueError("step counter must start at 1")
    if not (len(params) == len(grads) == len(moments.m) == len(moments.v)):
        raise ShapeMismatch("parameter, gradient and moment lists must align")
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, moments.m, moments.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape {p.shape} vs gradient {g.shape}")
        p = p * (1.0 - lr * weight_decay)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamMoments(new_m, new_v)


def _train_items(config: TrainConfig, dataset: FeatureDataset):
    for modality in ("visual", "text"):
        if not any(r.modality == modality for r in dataset.records):
            raise ModeDataMismatch(
                f"mode {config.mode!r} training and evaluation need {modality} records"
            )
    items = dataset.items_for(dataset.splits.train)
    if not items:
        raise EmptyDataset("train split has no paired items")
    return items


def initialize(config: TrainConfig, dataset: FeatureDataset) -> TrainState:
    """Deterministic starting state: encoders, centers, empty queue."""
    items = _train_items(config, dataset)
    visual_dim = items[0].visual.shape[0]
    text_dim = items[0].text.shape[0]

    query = encoders.init_params(
        [visual_dim, *config.hidden_dims, config.embedding_dim],
        rng_mod.child_seed(config.seed, "init-visual"),
    )
    pair = encoders.EncoderPair(query=query, key=query.copy(), momentum=config.momentum)
    text = encoders.init_params(
        [text_dim, *config.hidden_dims, config.embedding_dim],
        rng_mod.child_seed(config.seed, "init-text"),
    )

    k = config.clusters or len({item.identity for item in items})
    text_embeddings = encoders.forward(text, np.stack([item.text for item in items]))
    clusters = init_centers(
        text_embeddings, k, rng_mod.child_seed(config.seed, "init-centers"),
        alpha=config.cluster_alpha,
    )

    return TrainState(
        config=config,
        pair=pair,
        text=text,
        clusters=clusters,
        queue=KeyQueue.empty(config.queue_capacity, config.embedding_dim),
        opt_visual=AdamMoments.zeros_like(encoders.param_list(query)),
        opt_text=AdamMoments.zeros_like(encoders.param_list(text)),
        opt_centers=AdamMoments.zeros_like([clusters.centers]),
        iteration=0,
    )


def _check_finite(arrays, label: str) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFinite(f"{label} parameters went non-finite")


def _run(state: TrainState, dataset: FeatureDataset):
    config = state.config
    trace: list[tuple[int, float, float, float]] = []
    if config.mode == "baseline":
        return state, trace

    items = _train_items(config, dataset)
    visual_x = np.stack([item.visual for item in items])
    text_x = np.stack([item.text for item in items])
    augment = NoiseDropout(config.aug_sigma, config.aug_dropout)
    visual_cfg = VisualLossConfig(config.tau)
    text_cfg = TextLossConfig(config.eta, config.tau_instance, config.batch_size)

    pair, text_params = state.pair, state.text
    clusters, queue = state.clusters, state.queue
    opt_v, opt_t, opt_c = state.opt_visual, state.opt_text, state.opt_centers

    for t in range(state.iteration + 1, config.iterations + 1):
        batch_rng = rng_mod.stream(config.seed, "batch", t)
        if config.batch_size <= len(items):
            idx = batch_rng.choice(len(items), size=config.batch_size, replace=False)
        else:
            idx = batch_rng.integers(0, len(items), size=config.batch_size)
        run_visual = config.mode == "video_only" or (
            config.mode == "total" and t > config.text_warmup
        )
        run_text = config.mode in ("text_only", "total")

        loss_video = 0.0
        loss_text = 0.0
        if run_visual:
            loss_video, grads_q, queue, pair = visual_step(
                pair, queue, visual_x[idx], augment, visual_cfg,
                rng_mod.stream(config.seed, "aug-visual", t),
            )
        if run_text:
            loss_text, grads_t, grads_c = text_loss(
                text_x[idx], text_params, clusters, text_cfg,
                rng_mod.stream(config.seed, "aug-text", t), augment=augment,
            )
        loss = total_loss(loss_video, loss_text)

        if run_visual:
            new_q, opt_v = adam_step(
                encoders.param_list(pair.query), grads_q, opt_v,
                config.learning_rate, config.weight_decay_visual, t,
            )
            pair = replace(pair, query=encoders.with_param_list(pair.query, new_q))
            _check_finite(new_q, "query encoder")
        if run_text:
            new_t, opt_t = adam_step(
                encoders.param_list(text_params), grads_t, opt_t,
                config.learning_rate, config.weight_decay_text, t,
            )
            text_params = encoders.with_param_list(text_params, new_t)
            new_c, opt_c = adam_step(
                [clusters.centers], [grads_c], opt_c,
                config.learning_rate, config.weight_decay_text, t,
            )
            clusters = replace(clusters, centers=new_c[0])
            _check_finite(new_t + new_c, "text branch")

        trace.append((t, loss_video, loss_text, loss))

    final = TrainState(
        config=config, pair=pair, text=text_params, clusters=clusters, queue=queue,
        opt_visual=opt_v, opt_text=opt_t, opt_centers=opt_c,
        iteration=max(state.iteration, config.iterations),
    )
    return final, trace


def train(config: TrainConfig, dataset: FeatureDataset):
    """Run the full schedule from a fresh initialization.

    Returns (final_state, trace) where trace rows are
    (iteration, loss_video, loss_text, loss_total). Baseline mode performs
    no optimizer steps and returns the initial state with an empty trace.
    """
    return _run(initialize(config, dataset), dataset)


def resume(state: TrainState, dataset: FeatureDataset):
    """Continue a loaded state up to its configured iteration count."""
    return _run(state, dataset)


def embed_items(state: TrainState, dataset: FeatureDataset, stems,
                fusion_weight: float = 0.5) -> list[GalleryItem]:
    """Fused query-encoder/text-encoder embeddings for the given stems."""
    out = []
    for item in dataset.items_for(stems):
        visual = encoders.forward(state.pair.query, item.visual)
        text = encoders.forward(state.text, item.text)
        out.append(
            GalleryItem(item.stem, item.identity, item.camera,
                        fuse(visual, text, fusion_weight))
        )
    return out


def evaluate_state(state: TrainState, dataset: FeatureDataset,
                   fusion_weight: float = 0.5, ranks=(1, 5, 10),
                   filter_same_camera: bool = True) -> EvalMetrics:
    queries = embed_items(state, dataset, dataset.splits.query, fusion_weight)
    gallery = embed_items(state, dataset, dataset.splits.gallery, fusion_weight)
    if not queries or not gallery:
        raise EmptyDataset("query or gallery split is empty")
    return evaluate(queries, gallery, ranks, filter_same_camera)


def ablate(base_config: TrainConfig, dataset: FeatureDataset,
           fusion_weight: float = 0.5, ranks=(1, 5, 10),
           filter_same_camera: bool = True):
    """Train every mode from the same seed and report retrieval metrics.

    Returns a list of (mode, EvalMetrics) rows, one per mode in MODES
    order.
    """
    rows = []
    for mode in MODES:
        config = replace(base_config, mode=mode)
        state, _ = train(config, dataset)
        rows.append(
            (mode, evaluate_state(state, dataset, fusion_weight, ranks, filter_same_camera))
        )
    return rows
