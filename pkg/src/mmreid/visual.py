"""Visual branch: FIFO key dictionary and the temperature-scaled contrastive loss.

The dictionary queue holds embeddings produced by the key encoder on past
batches and serves them as negatives, which decouples the negative-set size
from the batch size. Queue entries are constants for gradient purposes; the
loss gradient flows only into the query side.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoders
from .errors import DimMismatch, EmptyInput, NotNormalized
from .numerics import log_sum_exp

# Loss inputs must arrive unit-norm. The slack leaves room for
# finite-difference probes (eps ~ 1e-5) without tripping the check.
LOSS_NORM_TOL = 1e-4
# Queue entries are pinned tighter; they are produced, not probed.
QUEUE_NORM_TOL = 1e-6


@dataclass(frozen=True)
class VisualLossConfig:
    tau: float = 0.07

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


@dataclass(frozen=True)
class KeyQueue:
    """Fixed-capacity FIFO of unit-norm key embeddings, oldest row first."""

    capacity: int
    dim: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("queue capacity must be at least 1")
        if self.entries.ndim != 2 or self.entries.shape[1] != self.dim:
            raise DimMismatch(f"queue entries shape {self.entries.shape} vs dim {self.dim}")
        if len(self) > self.capacity:
            raise ValueError("queue holds more entries than its capacity")

    @staticmethod
    def empty(capacity: int, dim: int) -> "KeyQueue":
        return KeyQueue(capacity, dim, np.empty((0, dim), dtype=np.float64))

    def __len__(self) -> int:
        return self.entries.shape[0]


def _check_unit(name: str, rows: np.ndarray, tol: float) -> None:
    norms = np.linalg.norm(np.atleast_2d(rows), axis=1)
    worst = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if worst > tol:
        raise NotNormalized(f"{name} deviates from unit norm by {worst:.3g}")


def enqueue_dequeue(queue: KeyQueue, batch_keys) -> KeyQueue:
    """Append keys in batch order, evicting the oldest rows beyond capacity."""
    keys = np.asarray(batch_keys, dtype=np.float64)
    if keys.size == 0:
        return queue
    keys = np.atleast_2d(keys)
    if keys.shape[1] != queue.dim:
        raise DimMismatch(f"key dim {keys.shape[1]} != queue dim {queue.dim}")
    _check_unit("enqueued key", keys, QUEUE_NORM_TOL)
    merged = np.vstack([queue.entries, keys])
    if merged.shape[0] > queue.capacity:
        merged = merged[-queue.capacity :]
    return KeyQueue(queue.capacity, queue.dim, merged)


def info_nce(q, k_plus, negatives, cfg: VisualLossConfig):
    """Contrastive loss over one positive key and the given negatives.

    Returns (loss, grad_q) where grad_q is the exact gradient of the loss
    with respect to q as a free vector. With no negatives the positive is
    the whole partition and the loss is exactly zero.
    """
    q = np.asarray(q, dtype=np.float64)
    k_plus = np.asarray(k_plus, dtype=np.float64)
    negs = np.asarray(negatives, dtype=np.float64)
    if negs.size == 0:
        negs = np.empty((0, q.shape[0]), dtype=np.float64)
    negs = np.atleast_2d(negs)
    if k_plus.shape != q.shape or negs.shape[1] != q.shape[0]:
        raise DimMismatch("query, positive and negatives must share one dimension")
    _check_unit("query", q, LOSS_NORM_TOL)
    _check_unit("positive key", k_plus, LOSS_NORM_TOL)
    _check_unit("negative key", negs, LOSS_NORM_TOL)

    keys = np.vstack([k_plus[None, :], negs])
    logits = keys @ q / cfg.tau
    lse = log_sum_exp(logits)
    loss = float(lse - logits[0])
    probs = np.exp(logits - lse)
    grad_q = (probs @ keys - k_plus) / cfg.tau
    return loss, grad_q


def visual_step(pair: encoders.EncoderPair, queue: KeyQueue, batch, augment, cfg, rng):
    """One contrastive step over a raw-feature batch.

    Per sample, two augmented views are drawn; the first goes through the
    query encoder, the second through the key encoder (no gradient). The
    loss is the batch mean of the contrastive loss with the current queue
    as negatives. Afterwards, in this order, the key encoder is
    momentum-updated and the fresh keys are enqueued.

    Returns (loss, query_grads, updated_queue, updated_pair) where
    query_grads aligns with encoders.param_list(pair.query).
    """
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[0] == 0:
        raise EmptyInput("visual step needs a non-empty batch")
    view_q = np.empty_like(x)
    view_k = np.empty_like(x)
    for i, row in enumerate(x):
        view_q[i] = augment(row, rng)
        view_k[i] = augment(row, rng)
    return visual_step_from_views(pair, queue, view_q, view_k, cfg)


def visual_step_from_views(pair, queue: KeyQueue, view_q, view_k, cfg: VisualLossConfig):
    """Deterministic core of visual_step, with the augmented views fixed."""
    q_emb, q_cache = encoders.forward_cached(pair.query, view_q)
    k_emb = encoders.forward(pair.key, view_k)
    if queue.dim != q_emb.shape[1]:
        raise DimMismatch(f"queue dim {queue.dim} != embedding dim {q_emb.shape[1]}")
    n = q_emb.shape[0]

    negs = queue.entries
    pos_logits = np.sum(q_emb * k_emb, axis=1) / cfg.tau
    logits = np.hstack([pos_logits[:, None], q_emb @ negs.T / cfg.tau])
    shift = logits.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    loss = float(np.mean(lse - pos_logits))

    probs = np.exp(logits - lse[:, None])
    grad_emb = (probs[:, :1] * k_emb + probs[:, 1:] @ negs - k_emb) / (cfg.tau * n)
    grads = encoders.backward(pair.query, q_cache, grad_emb)

    new_pair = encoders.momentum_update(pair)
    new_queue = enqueue_dequeue(queue, k_emb)
    return loss, grads, new_queue, new_pair
