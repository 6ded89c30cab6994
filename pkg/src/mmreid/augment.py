"""Feature-space view augmentation for the contrastive heads.

Raw inputs here are pre-extracted feature vectors, so the usual image
transforms do not apply; the default policy perturbs coordinates instead.
Any callable with the same (vector, rng) signature can be plugged in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseDropout:
    """Additive Gaussian noise followed by random coordinate dropout.

    Two independent calls per sample produce the paired views the
    contrastive losses expect.
    """

    sigma: float = 0.1
    dropout: float = 0.1

    def __call__(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        noisy = x + rng.normal(0.0, self.sigma, size=x.shape)
        keep = rng.random(x.shape) >= self.dropout
        return noisy * keep
