"""Stochastic prompt policies over a finite action set."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _kernels
from .nn import MlpParams, init_mlp, log_softmax, pair_backward, pair_forward, softmax
from .types import ActionSet, GradientEstimate


def _contexts(x) -> tuple:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    return np.atleast_2d(X), single


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """``pi(a|x) = softmax_a(beta * f(x, e_a))`` with ``f`` a scalar MLP on ``concat(x, e_a)``."""

    mlp: MlpParams
    action_set: ActionSet
    beta: float = 1.0

    @classmethod
    def initialize(cls, context_dim: int, action_set: ActionSet, beta: float = 1.0, hidden: int = 100, rng=None):
        return cls(init_mlp(context_dim + action_set.dim, 1, hidden, rng), action_set, beta)

    @property
    def n_actions(self) -> int:
        return len(self.action_set)

    @property
    def context_dim(self) -> int:
        return self.mlp.in_dim - self.action_set.dim

    def with_params(self, mlp: MlpParams) -> "SoftmaxPolicy":
        return replace(self, mlp=mlp)

    def logits(self, x) -> np.ndarray:
        X, single = _contexts(x)
        if X.shape[1] != self.context_dim:
            raise ValueError(f"context dim {X.shape[1]} != policy context dim {self.context_dim}")
        out = pair_forward(self.mlp, X, self.action_set.embeddings)
        return out[0] if single else out

    def action_probs(self, x) -> np.ndarray:
        return softmax(self.beta * self.logits(x))

    def log_probs(self, x) -> np.ndarray:
        return log_softmax(self.beta * self.logits(x))

    def weighted_score(self, x, weights, probs: Optional[np.ndarray] = None) -> MlpParams:
        """``sum_{b,a} weights[b, a] * grad log pi(a | x_b)`` in one backward pass.

        Uses ``grad log pi(a|x) = beta * (grad f(x,a) - sum_a' pi(a'|x) grad f(x,a'))``.
        """
        X, _ = _contexts(x)
        G = np.asarray(weights, dtype=np.float64).reshape(X.shape[0], self.n_actions)
        if probs is None:
            probs = self.action_probs(X)
        upstream = self.beta * (G - probs * G.sum(axis=1, keepdims=True))
        return pair_backward(self.mlp, X, self.action_set.embeddings, upstream)


@dataclass(frozen=True)
class UniformPolicy:
    n_actions: int

    def action_probs(self, x) -> np.ndarray:
        X, single = _contexts(x)
        P = np.full((X.shape[0], self.n_actions), 1.0 / self.n_actions)
        return P[0] if single else P


@dataclass(frozen=True, eq=False)
class EpsilonGreedyPolicy:
    """Greedy on a reward model with probability ``1 - epsilon``, uniform otherwise."""

    epsilon: float
    reward_model: object  # anything with predict_all(X) -> (B, |A|)
    n_actions: int

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    def action_probs(self, x) -> np.ndarray:
        X, single = _contexts(x)
        q = np.asarray(self.reward_model.predict_all(X))
        P = np.full((X.shape[0], self.n_actions), self.epsilon / self.n_actions)
        P[np.arange(X.shape[0]), np.argmax(q, axis=1)] += 1.0 - self.epsilon
        return P[0] if single else P


@dataclass(frozen=True, eq=False)
class TwoStagePolicy:
    """Stochastic cluster choice followed by greedy in-cluster action choice.

    ``pi(a|x) = pi1(c(a)|x)`` when ``a`` maximizes the reward model inside its
    cluster (lowest index on ties) and 0 otherwise.
    """

    first_stage: SoftmaxPolicy
    clustering: object  # Clustering
    reward_model: object = None

    @property
    def n_actions(self) -> int:
        return len(self.clustering.assignments)

    @property
    def n_clusters(self) -> int:
        return self.first_stage.n_actions

    def with_params(self, mlp: MlpParams) -> "TwoStagePolicy":
        return replace(self, first_stage=self.first_stage.with_params(mlp))

    def greedy_actions(self, X, qhat: Optional[np.ndarray] = None) -> np.ndarray:
        """``(B, k)`` table of the greedy action inside every cluster."""
        if qhat is None:
            if self.reward_model is None:
                raise ValueError("two-stage policy needs a reward model or a precomputed qhat table")
            qhat = self.reward_model.predict_all(X)
        qhat = np.atleast_2d(qhat)
        out = np.empty((qhat.shape[0], self.n_clusters), dtype=np.int64)
        assign = np.asarray(self.clustering.assignments)
        for c in range(self.n_clusters):
            members = np.flatnonzero(assign == c)
            out[:, c] = members[np.argmax(qhat[:, members], axis=1)]
        return out

    def action_probs(self, x, qhat: Optional[np.ndarray] = None) -> np.ndarray:
        X, single = _contexts(x)
        first = np.atleast_2d(self.first_stage.action_probs(X))
        greedy = self.greedy_actions(X, qhat)
        P = np.zeros((X.shape[0], self.n_actions))
        rows = np.repeat(np.arange(X.shape[0]), self.n_clusters)
        np.add.at(P, (rows, greedy.ravel()), first.ravel())
        return P[0] if single else P


def sample_action(policy, x, rng, probs: Optional[np.ndarray] = None):
    """Inverse-CDF draw from ``policy.action_probs(x)``; int for one context, array for a batch."""
    X, single = _contexts(x)
    P = np.atleast_2d(policy.action_probs(X) if probs is None else probs)
    idx = _kernels.sample_rows(P, rng.random(P.shape[0]))
    return int(idx[0]) if single else idx


def score_function(policy: SoftmaxPolicy, x, a: int) -> GradientEstimate:
    """Exact ``grad_theta log pi_theta(a|x)`` for one context."""
    if not 0 <= a < policy.n_actions:
        raise ValueError(f"action {a} outside [0, {policy.n_actions})")
    X, _ = _contexts(x)
    G = np.zeros((1, policy.n_actions))
    G[0, a] = 1.0
    return GradientEstimate(policy.weighted_score(X, G), 1)
