"""Text branch: clustering head with a sharpened target plus an
instance-contrastive head, both on top of one encoder.

The clustering head softly assigns each clean embedding to trainable
centers with a Student-t kernel and is pulled toward a squared-and-
renormalized target recomputed from the batch every iteration. The
instance head applies a normalized-temperature cross entropy over two
augmented views per sample. The combined batch loss is

    mean_j KL(target_j || assign_j) + eta * mean_i view_loss_i
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoders
from .augment import NoiseDropout
from .errors import (
    DegenerateColumn,
    DimMismatch,
    EmptyInput,
    NotNormalized,
    OddCount,
    ShapeMismatch,
    TooFewSamples,
)
from .visual import LOSS_NORM_TOL


@dataclass(frozen=True)
class ClusterState:
    """Trainable cluster centers (K, d) and the Student-t kernel width."""

    centers: np.ndarray
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.centers.ndim != 2 or self.centers.shape[0] < 2:
            raise ValueError("need a (K, d) center matrix with K >= 2")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("cluster centers must be finite")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class TextLossConfig:
    eta: float = 10.0
    tau_instance: float = 0.5
    batch_size: int = 64

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.tau_instance <= 0:
            raise ValueError("instance temperature must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")


def soft_assign_rows(z_rows: np.ndarray, state: ClusterState) -> np.ndarray:
    """Row-wise Student-t soft assignments over the centers; rows sum to 1."""
    z_rows = np.atleast_2d(np.asarray(z_rows, dtype=np.float64))
    if z_rows.shape[1] != state.centers.shape[1]:
        raise DimMismatch(
            f"embedding dim {z_rows.shape[1]} != center dim {state.centers.shape[1]}"
        )
    d2 = ((z_rows[:, None, :] - state.centers[None, :, :]) ** 2).sum(axis=2)
    kernel = (1.0 + d2 / state.alpha) ** (-(state.alpha + 1.0) / 2.0)
    return kernel / kernel.sum(axis=1, keepdims=True)


def soft_assign(z: np.ndarray, state: ClusterState) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise DimMismatch("soft_assign takes a single embedding")
    return soft_assign_rows(z[None, :], state)[0]


def target_distribution(assignments: np.ndarray) -> np.ndarray:
    """Square each column, reweight by cluster frequency, renormalize rows.

    Sharpens confident assignments while damping the pull of large clusters.
    """
    q = np.atleast_2d(np.asarray(assignments, dtype=np.float64))
    freq = q.sum(axis=0)
    if np.any(freq <= 0.0):
        dead = int(np.argmin(freq))
        raise DegenerateColumn(f"cluster column {dead} has zero mass")
    sharpened = q * q / freq
    return sharpened / sharpened.sum(axis=1, keepdims=True)


def clustering_loss(target: np.ndarray, assignments: np.ndarray) -> float:
    """Mean row-wise KL(target || assignments); zero iff the rows agree."""
    p = np.atleast_2d(np.asarray(target, dtype=np.float64))
    q = np.atleast_2d(np.asarray(assignments, dtype=np.float64))
    if p.shape != q.shape:
        raise ShapeMismatch(f"target {p.shape} vs assignments {q.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * (np.log(p) - np.log(q)), 0.0)
    return float(terms.sum() / p.shape[0])


def clustering_grads(target: np.ndarray, z_rows: np.ndarray, state: ClusterState):
    """Clustering loss plus exact gradients through the soft assignment.

    The target rows are constants. Returns (loss, grad_embeddings,
    grad_centers); the 1/M batch normalization is included.
    """
    p = np.atleast_2d(np.asarray(target, dtype=np.float64))
    z_rows = np.atleast_2d(np.asarray(z_rows, dtype=np.float64))
    q = soft_assign_rows(z_rows, state)
    if p.shape != q.shape:
        raise ShapeMismatch(f"target {p.shape} vs assignments {q.shape}")
    loss = clustering_loss(p, q)

    diff = z_rows[:, None, :] - state.centers[None, :, :]  # (n, K, d)
    d2 = (diff**2).sum(axis=2)
    kernel_scale = ((state.alpha + 1.0) / state.alpha) / (1.0 + d2 / state.alpha)
    coeff = kernel_scale * (p - q) / p.shape[0]  # (n, K)
    weighted = coeff[:, :, None] * diff
    grad_z = weighted.sum(axis=1)
    grad_centers = -weighted.sum(axis=0)
    return loss, grad_z, grad_centers


def instance_cl_loss(views, cfg: TextLossConfig):
    """Normalized-temperature cross entropy over an augmented batch.

    views holds 2M unit-norm embeddings in pair order: view i's positive is
    view (i + M) mod 2M and every other view is a negative. Returns the
    mean per-view loss and the exact gradient for every view.
    """
    v = np.atleast_2d(np.asarray(views, dtype=np.float64))
    n = v.shape[0]
    if n % 2 != 0 or n == 0:
        raise OddCount(f"need an even, positive view count, got {n}")
    norms = np.linalg.norm(v, axis=1)
    worst = float(np.max(np.abs(norms - 1.0)))
    if worst > LOSS_NORM_TOL:
        raise NotNormalized(f"views deviate from unit norm by {worst:.3g}")
    half = n // 2
    partner = (np.arange(n) + half) % n

    sim = v @ v.T / cfg.tau_instance
    np.fill_diagonal(sim, -np.inf)  # a view never contrasts with itself
    shift = sim.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(sim - shift).sum(axis=1))
    pos = sim[np.arange(n), partner]
    loss = float(np.mean(lse - pos))

    coeff = np.exp(sim - lse[:, None])
    coeff[np.arange(n), partner] -= 1.0
    coeff /= n * cfg.tau_instance
    grads = coeff @ v + coeff.T @ v
    return loss, grads


def text_loss(raw_batch, encoder: encoders.EncoderParams, state: ClusterState,
              cfg: TextLossConfig, rng, augment=None):
    """Combined clustering + weighted instance loss over one raw batch.

    Two augmented views per sample feed the instance head; the clustering
    head sees the clean embeddings and its target is recomputed from this
    batch. Returns (loss, encoder_grads, center_grads) with encoder_grads
    aligned to encoders.param_list(encoder).
    """
    x = np.atleast_2d(np.asarray(raw_batch, dtype=np.float64))
    if x.shape[0] == 0:
        raise EmptyInput("text loss needs a non-empty batch")
    augment = augment or NoiseDropout()
    view_a = np.empty_like(x)
    view_b = np.empty_like(x)
    for i, row in enumerate(x):
        view_a[i] = augment(row, rng)
        view_b[i] = augment(row, rng)
    return text_loss_from_views(x, view_a, view_b, encoder, state, cfg)


def text_loss_from_views(clean, view_a, view_b, encoder, state, cfg, target=None):
    """Deterministic core of text_loss, with augmented views fixed.

    When target is None it is sharpened from this batch's assignments; pass
    an explicit matrix to hold it constant (as the gradients assume).
    """
    m = np.atleast_2d(clean).shape[0]
    z, z_cache = encoders.forward_cached(encoder, clean)
    z = np.atleast_2d(z)
    assignments = soft_assign_rows(z, state)
    p = target_distribution(assignments) if target is None else np.asarray(target)
    cluster_term, grad_z, grad_centers = clustering_grads(p, z, state)

    emb_a, cache_a = encoders.forward_cached(encoder, view_a)
    emb_b, cache_b = encoders.forward_cached(encoder, view_b)
    instance_term, grad_views = instance_cl_loss(
        np.vstack([np.atleast_2d(emb_a), np.atleast_2d(emb_b)]), cfg
    )
    grad_views = cfg.eta * grad_views

    loss = cluster_term + cfg.eta * instance_term
    enc_grads = encoders.backward(encoder, z_cache, grad_z)
    for part, cache in ((grad_views[:m], cache_a), (grad_views[m:], cache_b)):
        for acc, extra in zip(enc_grads, encoders.backward(encoder, cache, part)):
            acc += extra
    return loss, enc_grads, grad_centers


def init_centers(embeddings, k: int, seed: int, alpha: float = 1.0,
                 iterations: int = 50) -> ClusterState:
    """Seeded k-means++ start plus Lloyd refinement over the embeddings."""
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if k < 2:
        raise ValueError("need at least two clusters")
    if np.unique(x, axis=0).shape[0] < k:
        raise TooFewSamples(f"need at least {k} distinct embeddings")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(len(x))]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        centers[i] = x[rng.choice(len(x), p=d2 / d2.sum())]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))

    for _ in range(iterations):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        updated = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                updated[j] = x[members].mean(axis=0)
        if np.array_equal(updated, centers):
            break
        centers = updated
    return ClusterState(centers, alpha)
