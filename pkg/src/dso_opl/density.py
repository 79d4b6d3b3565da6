"""Estimators of the logging policy's kernel-smoothed sentence density.

The target is ``pi_0(phi(s) | x) = E_{s' ~ pi_0(.|x)}[K(s, s')]``. Two variants:
a Monte-Carlo average over fresh logging-policy sentences, and an MLP regressed
onto kernel values between independent sentence pairs drawn at the same context.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernels import KernelConfig
from .nn import MlpParams, init_mlp, mlp_forward, softplus
from .regression import FitReport, train_mlp_regressor
from .types import Context, LoggedDataset, Sentence

DENSITY_FLOOR = 1e-6


class MissingSupportError(ValueError):
    """Raised when density fitting lacks independent sentence pairs."""


def _kernel_embedding(s, use_noisy: bool) -> np.ndarray:
    if isinstance(s, Sentence):
        return s.for_kernel(use_noisy)
    return np.asarray(s, dtype=np.float64)


def _context_matrix(x) -> np.ndarray:
    if isinstance(x, Context):
        return x.vector[None, :]
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def mc_marginal_density(sampler, kernel: KernelConfig, x, s, m: int, rng, floor: float = DENSITY_FLOOR) -> float:
    """``max(floor, mean_j K(s, s_j))`` with ``s_j ~ pi_0(. | x)`` drawn by ``sampler``."""
    if sampler is None:
        raise RuntimeError(
            "Monte-Carlo density needs a sampler for the logging policy's sentences; "
            "fit the function-approximation model (fit_density_model) instead"
        )
    if m < 1:
        raise ValueError("m must be at least 1")
    X = _context_matrix(x)
    S = _kernel_embedding(s, kernel.use_noisy_embedding)[None, :]
    emb, noisy = sampler(X, m, rng)
    T = noisy if kernel.use_noisy_embedding else emb
    return float(max(floor, kernel.paired(S, T).mean()))


@dataclass(frozen=True, eq=False)
class MCDensity:
    """Monte-Carlo density; a fresh generator seeded with ``seed`` per call keeps it reproducible."""

    sampler: object
    kernel: KernelConfig
    m: int = 100
    seed: int = 0
    floor: float = DENSITY_FLOOR

    def predict(self, X, S, chunk: int = 512) -> np.ndarray:
        if self.sampler is None:
            raise RuntimeError(
                "Monte-Carlo density needs a sampler for the logging policy's sentences; "
                "fit the function-approximation model (fit_density_model) instead"
            )
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        rng = np.random.default_rng(self.seed)
        out = np.empty(X.shape[0])
        for lo in range(0, X.shape[0], chunk):
            emb, noisy = self.sampler(X[lo : lo + chunk], self.m, rng)
            T = noisy if self.kernel.use_noisy_embedding else emb
            out[lo : lo + chunk] = self.kernel.paired(S[lo : lo + chunk], T).mean(axis=1)
        return np.maximum(out, self.floor)


@dataclass(frozen=True, eq=False)
class FADensity:
    """``f(x, s) = max(floor, scale * softplus(g(concat(x, s))))``."""

    mlp: MlpParams
    kernel: KernelConfig
    scale: float
    floor: float = DENSITY_FLOOR
    report: Optional[FitReport] = None

    def predict(self, X, S) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        if X.shape[1] + S.shape[1] != self.mlp.in_dim:
            raise ValueError(f"context dim {X.shape[1]} + sentence dim {S.shape[1]} != model input {self.mlp.in_dim}")
        raw, _ = mlp_forward(self.mlp, np.concatenate([X, S], axis=1))
        return np.maximum(self.scale * softplus(raw[:, 0]), self.floor)

    def to_dict(self) -> dict:
        return {
            "kind": "fa_density",
            "kernel": {
                "family": self.kernel.family,
                "bandwidth": self.kernel.bandwidth,
                "use_noisy_embedding": self.kernel.use_noisy_embedding,
            },
            "scale": self.scale,
            "floor": self.floor,
            "mlp": self.mlp.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "FADensity":
        return cls(MlpParams.from_dict(d["mlp"]), KernelConfig(**d["kernel"]), float(d["scale"]), float(d["floor"]))


@dataclass(frozen=True, eq=False)
class TableDensity:
    """Exact density table for one-hot contexts and sentences (oracle use)."""

    table: np.ndarray  # (|X|, |S|)

    def predict(self, X, S) -> np.ndarray:
        return self.table[np.argmax(np.atleast_2d(X), axis=1), np.argmax(np.atleast_2d(S), axis=1)]


def _pair_targets(dataset: LoggedDataset, kernel: KernelConfig):
    ctx, sent, target, group = [], [], [], []
    for i, rec in enumerate(dataset.records):
        pool = [rec.sentence] + list(rec.density_support_sentences or ())
        if len(pool) < 2:
            raise MissingSupportError(
                f"record {i} has a single sentence; collect the data with density_extra_m >= 1 "
                "so every context has independent logging-policy sentence pairs"
            )
        E = np.stack([s.for_kernel(kernel.use_noisy_embedding) for s in pool])
        K = kernel.evaluate(E[:, None, :], E[None, :, :])
        m = E.shape[0]
        # mean over ordered pairs (s, s') with s' != s
        tgt = (K.sum(axis=1) - np.diag(K)) / (m - 1)
        x = rec.context.vector
        for j in range(m):
            ctx.append(x)
            sent.append(E[j])
            target.append(tgt[j])
            group.append(i)
    return np.array(ctx), np.array(sent), np.array(target), np.array(group)


def fit_density_model(
    dataset: LoggedDataset,
    kernel: KernelConfig,
    *,
    lr: float = 1e-4,
    epochs: int = 50,
    batch_size: int = 256,
    validation_fraction: float = 0.1,
    hidden: int = 100,
    patience: int = 10,
    floor: float = DENSITY_FLOOR,
    rng=None,
) -> FADensity:
    """Regress ``f(x, s)`` onto ``K(s, s')`` over independent same-context pairs.

    For a fixed ``(x, s)`` the squared error summed over partners ``s'`` differs
    from the error against their mean kernel value only by a constant, so each
    sentence is fitted once against that mean.
    """
    rng = np.random.default_rng(rng)
    ctx, sent, target, _ = _pair_targets(dataset, kernel)
    scale = float(target.mean())
    if not np.isfinite(scale) or scale <= 0:
        scale = kernel.peak(sent.shape[1])
    inputs = np.concatenate([ctx, sent], axis=1)
    params = init_mlp(inputs.shape[1], 1, hidden, rng)
    # start from softplus(raw) = 1, i.e. the mean target
    params = MlpParams(params.W1, params.b1, params.W2, np.array([np.log(np.expm1(1.0))]))
    params, report = train_mlp_regressor(
        params,
        inputs,
        target / scale,
        lr=lr,
        epochs=epochs,
        batch_size=batch_size,
        validation_fraction=validation_fraction,
        patience=patience,
        positive=True,
        rng=rng,
    )
    s2 = scale**2
    report = FitReport(report.train_loss * s2, report.validation_loss * s2, report.epochs_run, report.best_epoch)
    return FADensity(params, kernel, scale, floor, report)


def density_predict(model, x, s) -> np.ndarray:
    """Density at ``(x, s)``; accepts a Context/Sentence pair or row arrays."""
    kernel = getattr(model, "kernel", None)
    use_noisy = bool(kernel is not None and kernel.use_noisy_embedding)
    if isinstance(s, Sentence):
        S = s.for_kernel(use_noisy)[None, :]
    else:
        S = np.atleast_2d(np.asarray(s, dtype=np.float64))
    out = model.predict(_context_matrix(x), S)
    return float(out[0]) if isinstance(s, Sentence) else out
