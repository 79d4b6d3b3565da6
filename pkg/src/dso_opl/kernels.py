"""Smoothing kernels over sentence embeddings.

Both families integrate to one over R^d. The box kernel spans ``[-3*tau, 3*tau]``
per coordinate, which is the range a Gaussian of the same ``tau`` covers with
probability above 99%.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .types import Sentence

FAMILIES = ("gaussian", "uniform")
UNIFORM_HALF_WIDTH = 3.0  # in units of tau


@dataclass(frozen=True)
class KernelConfig:
    family: str = "gaussian"
    bandwidth: float = 1.0
    use_noisy_embedding: bool = False

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in FAMILIES:
            raise ValueError(f"kernel family must be one of {FAMILIES}, got {self.family!r}")
        object.__setattr__(self, "family", fam)
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")

    @property
    def half_width(self) -> float:
        """Per-coordinate support half-width of the box kernel."""
        return UNIFORM_HALF_WIDTH * self.bandwidth

    def evaluate(self, s, t) -> np.ndarray:
        """K(s, t) with numpy broadcasting over leading axes."""
        s = np.asarray(s, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if s.shape[-1] != t.shape[-1]:
            raise ValueError(f"embedding dims differ: {s.shape[-1]} vs {t.shape[-1]}")
        d = s.shape[-1]
        diff = t - s
        tau = self.bandwidth
        if self.family == "uniform":
            inside = np.all(np.abs(diff) <= self.half_width, axis=-1)
            return inside * (6.0 * tau) ** (-d)
        sq = np.sum(diff * diff, axis=-1)
        return (2.0 * math.pi * tau * tau) ** (-0.5 * d) * np.exp(-sq / (2.0 * tau * tau))

    def paired(self, S, T) -> np.ndarray:
        """``out[b, m] = K(S[b], T[b, m])``; the per-step hot path of DSO."""
        S = np.asarray(S, dtype=np.float64)
        T = np.asarray(T, dtype=np.float64)
        if T.ndim != 3 or S.ndim != 2 or T.shape[0] != S.shape[0] or T.shape[2] != S.shape[1]:
            raise ValueError(f"paired kernel needs S (B, d) and T (B, M, d); got {S.shape} and {T.shape}")
        return _kernels.paired_kernel(S, T, self.bandwidth, self.family == "uniform")

    def peak(self, dim: int) -> float:
        """K(s, s), the largest value the kernel takes."""
        tau = self.bandwidth
        if self.family == "uniform":
            return (6.0 * tau) ** (-dim)
        return (2.0 * math.pi * tau * tau) ** (-0.5 * dim)


def _embedding(s, use_noisy: bool) -> np.ndarray:
    if isinstance(s, Sentence):
        return s.for_kernel(use_noisy)
    return np.asarray(s, dtype=np.float64)


def kernel_eval(cfg: KernelConfig, s, s_prime) -> float:
    """Kernel density value between two sentences (or raw embeddings)."""
    a = _embedding(s, cfg.use_noisy_embedding)
    b = _embedding(s_prime, cfg.use_noisy_embedding)
    if a.shape != b.shape:
        raise ValueError(f"sentence dims differ: {a.shape} vs {b.shape}")
    return float(cfg.evaluate(a, b))


@dataclass(frozen=True)
class TableKernel:
    """Kernel over a finite sentence alphabet encoded as one-hot rows.

    ``matrix[j, i]`` is ``K(s_i, s_j)``, the weight sentence ``j`` contributes to
    the neighbourhood of sentence ``i``.
    """

    matrix: np.ndarray
    use_noisy_embedding: bool = False

    def evaluate(self, s, t) -> np.ndarray:
        i = np.argmax(np.asarray(s), axis=-1)
        j = np.argmax(np.asarray(t), axis=-1)
        return self.matrix[j, i]

    def paired(self, S, T) -> np.ndarray:
        return self.evaluate(np.asarray(S)[:, None, :], T)
