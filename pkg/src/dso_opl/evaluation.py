"""Ground-truth policy values and the normalized optimality metric.

Values use the closed-form ``E[r | x, a]`` of the synthetic environment, so the
only randomness is the draw of evaluation contexts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .types import ActionSet


class DegenerateEnvironmentError(ValueError):
    """Optimal and uniform values coincide, so optimality is undefined."""


@dataclass(frozen=True)
class EvalReport:
    policy_value: float
    standard_error: float
    n_eval: int
    optimal_value: float
    uniform_value: float
    optimality: float
    seed: Optional[int] = None


@dataclass(frozen=True, eq=False)
class EvalSet:
    """Shared evaluation contexts with their full expected-reward table ``(n_eval, |A|)``."""

    contexts: np.ndarray
    reward_table: np.ndarray
    seed: Optional[int] = None

    @property
    def n_eval(self) -> int:
        return self.contexts.shape[0]

    @property
    def optimal_value(self) -> float:
        return float(self.reward_table.max(axis=1).mean())

    @property
    def uniform_value(self) -> float:
        return float(self.reward_table.mean(axis=1).mean())

    def value(self, policy):
        """``(mean, standard error)`` of ``sum_a pi(a|x) q(x, a)`` over the shared contexts."""
        P = np.atleast_2d(policy.action_probs(self.contexts))
        per_context = np.einsum("ba,ba->b", P, self.reward_table)
        n = per_context.size
        se = float(per_context.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return float(per_context.mean()), se

    def evaluate(self, policy) -> EvalReport:
        v, se = self.value(policy)
        v_opt, v_unif = self.optimal_value, self.uniform_value
        return EvalReport(v, se, self.n_eval, v_opt, v_unif, optimality(v, v_opt, v_unif), self.seed)


def make_eval_set(env, action_set: ActionSet, n_eval: int = 2000, rng=None, seed: Optional[int] = None) -> EvalSet:
    if n_eval < 1:
        raise ValueError("n_eval must be at least 1")
    rng = np.random.default_rng(rng)
    X = env.sample_contexts(n_eval, rng)
    return EvalSet(X, env.expected_reward_table(X, action_set.embeddings), seed)


def _action_set_of(policy) -> ActionSet:
    if hasattr(policy, "action_set"):
        return policy.action_set
    model = getattr(policy, "reward_model", None)
    if hasattr(policy, "first_stage") and hasattr(model, "action_set"):
        return model.action_set
    raise ValueError("pass action_set explicitly for this policy type")


def policy_value(env, policy, n_eval: int = 2000, rng=None, action_set: Optional[ActionSet] = None):
    """``(value, standard error)`` of ``policy`` over ``n_eval`` fresh contexts."""
    action_set = action_set if action_set is not None else _action_set_of(policy)
    return make_eval_set(env, action_set, n_eval, rng).value(policy)


def optimal_value(env, n_eval: int = 2000, rng=None, action_set: Optional[ActionSet] = None) -> float:
    """Mean over contexts of ``max_a q(x, a)``."""
    if action_set is None:
        raise ValueError("optimal_value needs the action set")
    return make_eval_set(env, action_set, n_eval, rng).optimal_value


def optimality(v: float, v_opt: float, v_unif: float) -> float:
    """``(v - v_unif) / (v_opt - v_unif)``."""
    denom = v_opt - v_unif
    if denom == 0 or not np.isfinite(denom):
        raise DegenerateEnvironmentError(f"optimal value {v_opt!r} equals uniform value {v_unif!r}")
    return float((v - v_unif) / denom)
