"""Small tanh MLP encoders producing unit-norm embeddings.

The visual branch keeps two encoders of identical shape: a query encoder
trained by gradient and a key encoder that only ever moves as an
exponential moving average of the query weights. The text branch uses a
single encoder. Parameter containers are value objects; updates return new
instances instead of mutating.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimMismatch, EmptySpec, ShapeMismatch, ZeroVector
from .numerics import ZERO_NORM_FLOOR


@dataclass(frozen=True)
class EncoderParams:
    """Layer weights and biases; weights[i] has shape (fan_out, fan_in).

    Hidden layers apply tanh; the final layer is linear and its output is
    L2-normalized, so dot products between embeddings are cosine
    similarities.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if not self.weights or len(self.weights) != len(self.biases):
            raise EmptySpec("encoder needs matching, non-empty weight/bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeMismatch(f"layer {i} input dim {w.shape[1]} does not chain")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            tuple(w.copy() for w in self.weights),
            tuple(b.copy() for b in self.biases),
        )


@dataclass(frozen=True)
class EncoderPair:
    """Gradient-trained query encoder plus its momentum-tracked key twin."""

    query: EncoderParams
    key: EncoderParams
    momentum: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")
        q_shapes = [w.shape for w in self.query.weights]
        k_shapes = [w.shape for w in self.key.weights]
        if q_shapes != k_shapes:
            raise ShapeMismatch("query and key encoders must have identical shapes")


def init_params(dims: Sequence[int], seed: int) -> EncoderParams:
    """Xavier-uniform weights, zero biases, reproducible per seed."""
    if len(dims) < 2:
        raise EmptySpec("need at least an input and an output dimension")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(tuple(weights), tuple(biases))


def forward_cached(params: EncoderParams, x: np.ndarray):
    """Embed x and keep the activations needed for the backward pass.

    x may be a single vector or an (n, d) batch; the embedding mirrors the
    input's arity. Returns (embedding, cache).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    acts = [np.atleast_2d(x)]
    if acts[0].shape[1] != params.input_dim:
        raise DimMismatch(
            f"input dim {acts[0].shape[1]} != encoder input dim {params.input_dim}"
        )
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w.T + b
        acts.append(np.tanh(z) if i < last else z)
    out = acts[-1]
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    if np.any(norms < ZERO_NORM_FLOOR):
        raise ZeroVector("encoder produced a zero embedding")
    y = out / norms
    cache = (acts, norms, y, single)
    return (y[0] if single else y), cache


def forward(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Embed x into the unit sphere."""
    y, _ = forward_cached(params, x)
    return y


def backward(params: EncoderParams, cache, grad_out: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients given dLoss/dEmbedding.

    Returns arrays aligned with param_list(params). grad_out must match the
    arity of the forward input that produced the cache; batched gradients
    are summed over the batch.
    """
    acts, norms, y, single = cache
    g = np.asarray(grad_out, dtype=np.float64)
    g = g[None, :] if single else g
    # through the normalization: drop the radial component, scale by 1/norm
    gz = (g - np.sum(g * y, axis=1, keepdims=True) * y) / norms
    grad_w: list[np.ndarray] = []
    grad_b: list[np.ndarray] = []
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w.append(gz.T @ acts[i])
        grad_b.append(gz.sum(axis=0))
        if i > 0:
            ga = gz @ params.weights[i]
            gz = ga * (1.0 - acts[i] ** 2)  # acts[i] = tanh of layer i-1 output
    grad_w.reverse()
    grad_b.reverse()
    out: list[np.ndarray] = []
    for w, b in zip(grad_w, grad_b):
        out.extend((w, b))
    return out


def param_list(params: EncoderParams) -> list[np.ndarray]:
    """Flat [w0, b0, w1, b1, ...] view used by the optimizer."""
    out: list[np.ndarray] = []
    for w, b in zip(params.weights, params.biases):
        out.extend((w, b))
    return out


def with_param_list(params: EncoderParams, arrays: Sequence[np.ndarray]) -> EncoderParams:
    """Rebuild an EncoderParams from the flat array list of param_list."""
    if len(arrays) != 2 * len(params.weights):
        raise ShapeMismatch("flat parameter list has the wrong length")
    return EncoderParams(tuple(arrays[0::2]), tuple(arrays[1::2]))


def momentum_update(pair: EncoderPair) -> EncoderPair:
    """key <- m * key + (1 - m) * query, elementwise.

    The endpoints are special-cased so m=1 keeps the key bitwise unchanged
    and m=0 copies the query bitwise.
    """
    m = pair.momentum
    if m == 1.0:
        return pair
    if m == 0.0:
        return replace(pair, key=pair.query.copy())
    weights = tuple(
        m * kw + (1.0 - m) * qw for kw, qw in zip(pair.key.weights, pair.query.weights)
    )
    biases = tuple(
        m * kb + (1.0 - m) * qb for kb, qb in zip(pair.key.biases, pair.query.biases)
    )
    return replace(pair, key=EncoderParams(weights, biases))
