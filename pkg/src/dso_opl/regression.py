"""MSE-trained MLP regressors shared by the reward models and the density model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn import (
    DivergenceError,
    MlpParams,
    init_mlp,
    make_optimizer,
    mlp_backward,
    mlp_forward,
    optimizer_step,
    pair_forward,
    sigmoid,
    softplus,
)
from .types import ActionSet


@dataclass(frozen=True)
class FitReport:
    train_loss: float
    validation_loss: float
    epochs_run: int
    best_epoch: int


def _split(n: int, validation_fraction: float, rng):
    perm = rng.permutation(n)
    n_val = int(round(validation_fraction * n)) if n >= 10 else 0
    return perm[n_val:], perm[:n_val]


def _mse(params, inputs, targets, positive):
    raw, _ = mlp_forward(params, inputs)
    pred = softplus(raw[:, 0]) if positive else raw[:, 0]
    return float(np.mean((pred - targets) ** 2))


def train_mlp_regressor(
    params: MlpParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    *,
    lr: float = 1e-4,
    epochs: int = 100,
    batch_size: int = 256,
    validation_fraction: float = 0.1,
    patience: int = 10,
    positive: bool = False,
    rng=None,
):
    """Minibatch Adam on the squared error; keeps the best-validation parameters.

    With ``positive`` the prediction is ``softplus(raw)``.
    """
    rng = np.random.default_rng(rng)
    n = inputs.shape[0]
    train_idx, val_idx = _split(n, validation_fraction, rng)
    state = make_optimizer("adam", params, lr)
    best = params
    best_val = np.inf
    best_epoch = 0
    stale = 0
    epoch = 0
    for epoch in range(1, epochs + 1):
        order = train_idx[rng.permutation(train_idx.size)]
        for lo in range(0, order.size, batch_size):
            idx = order[lo : lo + batch_size]
            x, y = inputs[idx], targets[idx]
            raw, cache = mlp_forward(params, x)
            if positive:
                pred = softplus(raw[:, 0])
                dpred = sigmoid(raw[:, 0])
            else:
                pred = raw[:, 0]
                dpred = 1.0
            resid = pred - y
            if not np.all(np.isfinite(resid)):
                raise DivergenceError(f"non-finite regression loss at epoch {epoch}")
            upstream = (2.0 / idx.size) * (resid * dpred)[:, None]
            params, state = optimizer_step(state, params, mlp_backward(params, x, cache, upstream))
        monitor = val_idx if val_idx.size else train_idx
        val = _mse(params, inputs[monitor], targets[monitor], positive)
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        if val < best_val:
            best, best_val, best_epoch, stale = params, val, epoch, 0
        else:
            stale += 1
            if stale >= patience:
                break
    train = _mse(best, inputs[train_idx], targets[train_idx], positive)
    return best, FitReport(train, best_val, epoch, best_epoch)


@dataclass(frozen=True, eq=False)
class RewardModel:
    """``qhat(x, a) = y_mean + y_std * g(concat(x, e_a))``; targets are standardized for fitting."""

    mlp: MlpParams
    action_set: ActionSet
    y_mean: float = 0.0
    y_std: float = 1.0

    @property
    def n_actions(self) -> int:
        return len(self.action_set)

    def predict_all(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.y_mean + self.y_std * pair_forward(self.mlp, X, self.action_set.embeddings)

    def predict(self, X, actions) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        inputs = np.concatenate([X, self.action_set.embeddings[np.asarray(actions)]], axis=1)
        out, _ = mlp_forward(self.mlp, inputs)
        return self.y_mean + self.y_std * out[:, 0]

    def logit_params(self) -> MlpParams:
        """Network parameters whose raw output equals ``qhat`` in reward units."""
        m = self.mlp
        return MlpParams(m.W1.copy(), m.b1.copy(), m.W2 * self.y_std, m.b2 * self.y_std + self.y_mean)


def fit_reward_model(
    contexts,
    actions,
    rewards,
    action_set: ActionSet,
    *,
    lr: float = 1e-4,
    epochs: int = 100,
    batch_size: int = 256,
    validation_fraction: float = 0.1,
    hidden: int = 100,
    patience: int = 10,
    rng=None,
):
    """Fit ``qhat`` by squared error on logged ``(x, a, r)``. Returns ``(model, FitReport)``."""
    rng = np.random.default_rng(rng)
    X = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    a = np.asarray(actions, dtype=np.int64)
    r = np.asarray(rewards, dtype=np.float64)
    y_mean = float(r.mean())
    y_std = float(r.std())
    if not np.isfinite(y_std) or y_std < 1e-12:
        y_std = 1.0
    inputs = np.concatenate([X, action_set.embeddings[a]], axis=1)
    params = init_mlp(inputs.shape[1], 1, hidden, rng)
    params, report = train_mlp_regressor(
        params,
        inputs,
        (r - y_mean) / y_std,
        lr=lr,
        epochs=epochs,
        batch_size=batch_size,
        validation_fraction=validation_fraction,
        patience=patience,
        rng=rng,
    )
    scale = y_std**2
    report = FitReport(report.train_loss * scale, report.validation_loss * scale, report.epochs_run, report.best_epoch)
    return RewardModel(params, action_set, y_mean, y_std), report


@dataclass(frozen=True, eq=False)
class TableRewardModel:
    """Precomputed ``qhat`` table indexed by the row position of one-hot contexts."""

    table: np.ndarray

    def predict_all(self, X) -> np.ndarray:
        return self.table[np.argmax(np.atleast_2d(X), axis=1)]


def true_reward_model(env, action_set: ActionSet):
    """Oracle ``q(x, a)`` from a synthetic environment, with the reward-model interface."""
    return _EnvRewardModel(env, action_set)


@dataclass(frozen=True, eq=False)
class _EnvRewardModel:
    env: object
    action_set: ActionSet

    def predict_all(self, X) -> np.ndarray:
        return self.env.expected_reward_table(np.atleast_2d(X), self.action_set.embeddings)

    def predict(self, X, actions) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.predict_all(X)[np.arange(X.shape[0]), np.asarray(actions)]


__all__ = [
    "FitReport",
    "RewardModel",
    "TableRewardModel",
    "fit_reward_model",
    "train_mlp_regressor",
    "true_reward_model",
]
