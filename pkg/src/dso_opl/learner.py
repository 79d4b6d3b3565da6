"""Training loops: reward-model regression and policy gradient ascent."""
from __future__ import annotations

import csv
import io
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .gradients import METHODS, ConfigurationError, DensityFloorWarning, EstimatorConfig, estimate_gradient
from .nn import DivergenceError, make_optimizer, optimizer_step
from .policies import TwoStagePolicy
from .regression import fit_reward_model
from .types import LoggedDataset

logger = logging.getLogger(__name__)


def fit_regression(
    dataset: LoggedDataset,
    *,
    lr: float = 1e-4,
    epochs: int = 100,
    batch_size: int = 256,
    validation_fraction: float = 0.1,
    hidden: int = 100,
    patience: int = 10,
    rng=None,
):
    """Fit ``qhat(x, a)`` on the logged ``(x, a, r)`` triples. Returns ``(RewardModel, FitReport)``."""
    b = dataset.batch
    return fit_reward_model(
        b.contexts,
        b.actions,
        b.rewards,
        dataset.action_set,
        lr=lr,
        epochs=epochs,
        batch_size=batch_size,
        validation_fraction=validation_fraction,
        hidden=hidden,
        patience=patience,
        rng=rng,
    )


@dataclass
class TrainConfig:
    method: str
    lr: float = 5e-4
    steps: int = 2000
    batch_size: int = 256
    eval_every: int = 0  # 0 disables intermediate evaluation
    seed: int = 0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    optimizer: str = "adam"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass(frozen=True)
class LogEntry:
    step: int
    grad_norm: float
    policy_value: float
    optimality: float


@dataclass
class TrainingLog:
    seed: int
    method: str
    entries: List[LogEntry] = field(default_factory=list)
    wall_clock: float = 0.0
    floor_warning_steps: int = 0  # DSO steps where most of the batch sat at the density floor

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "grad_norm", "policy_value", "optimality"])
        for e in self.entries:
            w.writerow([e.step, repr(e.grad_norm), repr(e.policy_value), repr(e.optimality)])
        return buf.getvalue()


def _prepare(method: str, data: LoggedDataset, cfg: EstimatorConfig, policy):
    """Precompute per-record columns that stay fixed during training."""
    batch = data.batch
    needs_q = method in ("regression", "dr", "potec")
    if needs_q:
        model = cfg.reward_model
        if model is None and isinstance(policy, TwoStagePolicy):
            model = policy.reward_model
        if model is None:
            raise ConfigurationError(f"method {method!r} needs a fitted reward model (estimator.reward_model)")
        batch = batch.replace(qhat=np.asarray(model.predict_all(batch.contexts)))
    if method == "potec":
        if not isinstance(policy, TwoStagePolicy):
            raise ConfigurationError("POTEC trains a TwoStagePolicy")
        if cfg.logging_policy is None:
            raise ConfigurationError("POTEC needs the logging policy handle (estimator.logging_policy)")
        batch = batch.replace(logging_probs=cfg.logging_policy.action_probs(batch.contexts))
    if method == "dso":
        if cfg.density is None or cfg.kernel is None or cfg.generator is None:
            raise ConfigurationError("DSO needs estimator.kernel, estimator.density and estimator.generator")
        S = batch.kernel_sentences(bool(getattr(cfg.kernel, "use_noisy_embedding", False)))
        batch = batch.replace(density=np.asarray(cfg.density.predict(batch.contexts, S)))
    return batch


def _params_of(policy):
    return policy.first_stage.mlp if isinstance(policy, TwoStagePolicy) else policy.mlp


def train_policy(config: TrainConfig, policy, data: Optional[LoggedDataset] = None, env=None, evaluator=None):
    """Gradient ascent on the policy value with the configured estimator.

    ``evaluator`` is an :class:`~dso_opl.evaluation.EvalSet` (or anything with
    ``evaluate(policy)``) used every ``eval_every`` steps and after the last step.
    Returns ``(policy, TrainingLog)``.
    """
    method = config.method
    cfg = config.estimator
    log = TrainingLog(config.seed, method)
    start = time.perf_counter()
    rng = np.random.default_rng([config.seed, 0x7EA1])
    if method == "online":
        if env is None:
            raise ConfigurationError("online policy gradient needs a live environment")
        batch = None
    else:
        if data is None:
            raise ConfigurationError(f"method {method!r} needs logged data")
        batch = _prepare(method, data, cfg, policy)

    def record(step, gnorm):
        if evaluator is None:
            return
        rep = evaluator.evaluate(policy)
        log.entries.append(LogEntry(step, gnorm, rep.policy_value, rep.optimality))

    params = _params_of(policy)
    state = make_optimizer(config.optimizer, params, config.lr)
    order = np.empty(0, dtype=np.int64)
    pos = 0
    gnorm = float("nan")
    if config.steps == 0 or config.eval_every:
        record(0, gnorm)
    for step in range(1, config.steps + 1):
        if batch is not None:
            n = len(batch)
            if pos >= order.size:
                order, pos = rng.permutation(n), 0
            idx = order[pos : pos + config.batch_size]
            pos += config.batch_size
            mb = batch.take(idx)
        else:
            mb = None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DensityFloorWarning)
            est = estimate_gradient(method, policy, mb, cfg, rng, env, config.batch_size)
        for w in caught:
            if issubclass(w.category, DensityFloorWarning):
                log.floor_warning_steps += 1
            else:
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
        if not est.is_finite():
            raise DivergenceError(f"non-finite {method} gradient at step {step}")
        gnorm = est.norm()
        params, state = optimizer_step(state, params, est.params.scale(-1.0))
        policy = policy.with_params(params)
        if config.eval_every and step % config.eval_every == 0 and step != config.steps:
            record(step, gnorm)
    if config.steps > 0:
        record(config.steps, gnorm)
    if log.floor_warning_steps:
        logger.warning(
            "%s: %d of %d steps had most of the batch at the density floor; the logging policy may lack support",
            method, log.floor_warning_steps, config.steps,
        )
    log.wall_clock = time.perf_counter() - start
    return policy, log
