"""Policy-gradient estimators: online, regression, IS, DR, POTEC and DSO.

Every estimator reduces to a table ``G[b, a]`` of weights on the score
functions ``grad log pi(a | x_b)``; one batched backward pass then turns the
table into a parameter gradient (see :meth:`SoftmaxPolicy.weighted_score`).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .clustering import Clustering, cluster_actions  # noqa: F401  (re-export)
from .density import DENSITY_FLOOR
from .policies import SoftmaxPolicy, TwoStagePolicy, sample_action
from .types import GradientEstimate, LoggedBatch, as_batch

WEIGHT_CLIP = 200.0
METHODS = ("online", "regression", "is", "dr", "potec", "dso")


class DensityFloorWarning(UserWarning):
    """Most of a DSO batch has its logging density at the floor (a sign of missing support)."""


class ConfigurationError(ValueError):
    """A required estimator input (reward model, density, logging policy...) is missing."""


@dataclass(eq=False)
class EstimatorConfig:
    weight_clip: float = WEIGHT_CLIP
    kernel: object = None  # KernelConfig or TableKernel
    density: object = None  # anything with predict(X, S)
    n_augment: int = 8
    generator: object = None  # SentenceSampler-like: (X, actions (B, M), rng) -> (emb, noisy)
    clustering: Optional[Clustering] = None
    reward_model: object = None
    logging_policy: object = None

    def __post_init__(self):
        if not self.weight_clip > 0:
            raise ValueError("weight_clip must be positive")
        if self.n_augment < 1:
            raise ValueError("n_augment must be at least 1")


def _contexts_of(batch) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        return np.atleast_2d(batch)
    return as_batch(batch).contexts


def _qhat_table(batch, X, reward_model) -> np.ndarray:
    if isinstance(batch, LoggedBatch) and batch.qhat is not None:
        return batch.qhat
    if reward_model is None:
        raise ConfigurationError("this estimator needs a fitted reward model (qhat)")
    return np.asarray(reward_model.predict_all(X))


def _propensities(batch: LoggedBatch) -> np.ndarray:
    if batch.propensities is None:
        raise ValueError("importance weighting needs logged propensities on every record")
    p = batch.propensities
    bad = np.flatnonzero(~(p > 0))
    if bad.size:
        raise ValueError(f"record {int(bad[0])} has propensity {p[bad[0]]!r}; propensities must be positive")
    return p


def _estimate(policy, X, G, P, n) -> GradientEstimate:
    return GradientEstimate(policy.weighted_score(X, G, P), n)


def reinforce_gradient(policy: SoftmaxPolicy, X, actions, rewards, weights=None) -> GradientEstimate:
    """``(1/n) sum_i weight_i * r_i * grad log pi(a_i | x_i)``."""
    X = np.atleast_2d(X)
    n = X.shape[0]
    P = policy.action_probs(X)
    coef = np.asarray(rewards, dtype=np.float64) / n
    if weights is not None:
        coef = coef * weights
    G = np.zeros_like(P)
    np.add.at(G, (np.arange(n), np.asarray(actions)), coef)
    return _estimate(policy, X, G, P, n)


def grad_regression(policy: SoftmaxPolicy, batch, reward_model=None) -> GradientEstimate:
    """``(1/n) sum_i sum_a pi(a|x_i) qhat(x_i, a) grad log pi(a|x_i)`` (exact over actions)."""
    X = _contexts_of(batch)
    P = policy.action_probs(X)
    Q = _qhat_table(batch, X, reward_model)
    n = X.shape[0]
    return _estimate(policy, X, P * Q / n, P, n)


def importance_weights(policy, batch: LoggedBatch, clip: float = WEIGHT_CLIP, probs=None) -> np.ndarray:
    P = policy.action_probs(batch.contexts) if probs is None else probs
    p0 = _propensities(batch)
    return np.minimum(clip, P[np.arange(len(batch)), batch.actions] / p0)


def grad_is(policy: SoftmaxPolicy, batch, clip: float = WEIGHT_CLIP) -> GradientEstimate:
    """``(1/n) sum_i min(clip, pi/pi_0) r_i grad log pi(a_i|x_i)``."""
    batch = as_batch(batch)
    X = batch.contexts
    P = policy.action_probs(X)
    w = importance_weights(policy, batch, clip, P)
    n = len(batch)
    G = np.zeros_like(P)
    np.add.at(G, (np.arange(n), batch.actions), w * batch.rewards / n)
    return _estimate(policy, X, G, P, n)


def grad_dr(policy: SoftmaxPolicy, batch, reward_model=None, clip: float = WEIGHT_CLIP) -> GradientEstimate:
    """IS on the residual ``r - qhat`` plus the exact regression term."""
    batch = as_batch(batch)
    X = batch.contexts
    P = policy.action_probs(X)
    Q = _qhat_table(batch, X, reward_model)
    w = importance_weights(policy, batch, clip, P)
    n = len(batch)
    rows = np.arange(n)
    G = P * Q / n
    np.add.at(G, (rows, batch.actions), w * (batch.rewards - Q[rows, batch.actions]) / n)
    return _estimate(policy, X, G, P, n)


def grad_potec(
    two_stage: TwoStagePolicy,
    batch,
    reward_model=None,
    clip: float = WEIGHT_CLIP,
    logging_policy=None,
) -> GradientEstimate:
    """Cluster-level DR gradient for the first-stage parameters.

    The logging cluster propensity is ``sum_{a' in c(a_i)} pi_0(a'|x_i)``, so the
    full logging distribution at ``x_i`` is required (precomputed in
    ``batch.logging_probs`` or via ``logging_policy``).
    """
    batch = as_batch(batch)
    X = batch.contexts
    n = len(batch)
    rows = np.arange(n)
    Q = _qhat_table(batch, X, reward_model if reward_model is not None else two_stage.reward_model)
    if batch.logging_probs is not None:
        P0 = batch.logging_probs
    elif logging_policy is not None:
        P0 = logging_policy.action_probs(X)
    else:
        raise ConfigurationError("POTEC needs the logging policy's full action distribution (logging_policy)")
    first = two_stage.first_stage
    P1 = first.action_probs(X)
    assign = np.asarray(two_stage.clustering.assignments)
    P0c = P0 @ two_stage.clustering.one_hot()
    c = assign[batch.actions]
    w = np.minimum(clip, P1[rows, c] / P0c[rows, c])
    greedy = two_stage.greedy_actions(X, Q)
    G = P1 * Q[rows[:, None], greedy] / n
    np.add.at(G, (rows, c), w * (batch.rewards - Q[rows, batch.actions]) / n)
    return _estimate(first, X, G, P1, n)


def augment(policy: SoftmaxPolicy, X, generator, n_augment: int, rng, probs=None, use_noisy: bool = True):
    """Draw ``(a_j ~ pi(.|x), s'_j ~ p(.|x, a_j))`` pairs: actions ``(B, M)``, embeddings ``(B, M, d_s)``."""
    B = X.shape[0]
    P = policy.action_probs(X) if probs is None else probs
    actions = sample_action(policy, np.repeat(X, n_augment, axis=0), rng, probs=np.repeat(P, n_augment, axis=0))
    actions = actions.reshape(B, n_augment)
    emb, noisy = generator(X, actions, rng)
    return actions, (noisy if use_noisy and noisy is not None else emb)


def grad_dso(policy: SoftmaxPolicy, batch, cfg: EstimatorConfig, rng=None, augmented=None) -> GradientEstimate:
    """Kernel-marginalized sentence-space IS gradient.

    Per record: ``(1/M) sum_j min(clip, K(s_i, s'_j) / pi0_hat(phi(s_i)|x_i)) r_i grad log pi(a_j|x_i)``
    with ``(a_j, s'_j)`` drawn from the current policy and the generator.
    ``augmented=(actions, embeddings)`` replaces the random draw.
    """
    batch = as_batch(batch)
    if cfg.kernel is None:
        raise ConfigurationError("DSO needs a kernel")
    X = batch.contexts
    n = len(batch)
    P = policy.action_probs(X)
    use_noisy = bool(getattr(cfg.kernel, "use_noisy_embedding", False))
    if augmented is None:
        if cfg.generator is None:
            raise ConfigurationError("DSO needs a sentence generator to augment (action, sentence) pairs")
        actions, T = augment(policy, X, cfg.generator, cfg.n_augment, rng, P, use_noisy)
    else:
        actions, T = augmented
        actions = np.asarray(actions).reshape(n, -1)
        T = np.asarray(T, dtype=np.float64).reshape(n, actions.shape[1], -1)
    M = actions.shape[1]
    S = batch.kernel_sentences(use_noisy)
    if batch.density is not None:
        dens = batch.density
    elif cfg.density is not None:
        dens = cfg.density.predict(X, S)
    else:
        raise ConfigurationError("DSO needs a logging marginal density model")
    floored = np.mean(dens <= getattr(cfg.density, "floor", DENSITY_FLOOR) * (1 + 1e-9))
    if floored > 0.5:
        warnings.warn(
            f"{100 * floored:.0f}% of the batch sits at the density floor; the logging policy may lack support",
            DensityFloorWarning,
            stacklevel=2,
        )
    K = cfg.kernel.paired(S, T)
    W = np.minimum(cfg.weight_clip, K / dens[:, None])
    G = np.zeros_like(P)
    np.add.at(G, (np.repeat(np.arange(n), M), actions.ravel()), (W * batch.rewards[:, None]).ravel() / (M * n))
    return _estimate(policy, X, G, P, n)


def grad_online(policy: SoftmaxPolicy, env, batch_size: int, rng) -> GradientEstimate:
    """On-policy REINFORCE on fresh environment draws."""
    X = env.sample_contexts(batch_size, rng)
    P = policy.action_probs(X)
    a = sample_action(policy, X, rng, probs=P)
    S, _ = env.sample_sentences(X, policy.action_set.embeddings[a], rng)
    r = env.sample_rewards(X, S, rng)
    return reinforce_gradient(policy, X, a, r)


def estimate_gradient(method: str, policy, batch, cfg: EstimatorConfig, rng=None, env=None, batch_size=None):
    """Dispatch by method name."""
    if method == "online":
        if env is None:
            raise ConfigurationError("online policy gradient needs a live environment")
        return grad_online(policy, env, batch_size or 256, rng)
    if method == "regression":
        return grad_regression(policy, batch, cfg.reward_model)
    if method == "is":
        return grad_is(policy, batch, cfg.weight_clip)
    if method == "dr":
        return grad_dr(policy, batch, cfg.reward_model, cfg.weight_clip)
    if method == "potec":
        return grad_potec(policy, batch, cfg.reward_model, cfg.weight_clip, cfg.logging_policy)
    if method == "dso":
        return grad_dso(policy, batch, cfg, rng)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
