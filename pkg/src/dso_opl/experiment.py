"""End-to-end synthetic experiment for one configuration point and seed.

Every random quantity is drawn from its own stream ``default_rng([seed, stream])``
so that, for instance, adding a method to a run never changes the logged data
or the evaluation contexts of the others.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .clustering import cluster_actions
from .density import MCDensity, fit_density_model
from .evaluation import EvalSet, make_eval_set
from .gradients import EstimatorConfig
from .kernels import KernelConfig
from .learner import TrainConfig, fit_regression, train_policy
from .nn import DivergenceError
from .policies import SoftmaxPolicy, TwoStagePolicy, UniformPolicy
from .synthetic import (
    LoggingPolicySpec,
    LoggingSentenceSampler,
    SentenceSampler,
    SyntheticEnv,
    build_logging_policy,
    collect_logged_data,
    sample_action_set,
)
from .types import ActionSet

logger = logging.getLogger(__name__)

TRAINED_METHODS = ("online", "regression", "is", "dr", "potec", "dso")
EVAL_ONLY_METHODS = ("uniform-eval-only", "logging-eval-only")
ALL_METHODS = TRAINED_METHODS + EVAL_ONLY_METHODS
DENSITY_VARIANTS = ("fa", "mc")

RESULT_COLUMNS = (
    "method",
    "n",
    "num_actions",
    "reward_std",
    "tau",
    "kernel",
    "density",
    "seed",
    "optimality",
    "policy_value",
    "seconds",
    "status",
)

# stream ids for default_rng([seed, stream])
_S_ACTIONS, _S_LOGGING, _S_DATA, _S_EVAL, _S_REG, _S_DENS, _S_CLUSTER, _S_INIT, _S_MC = range(1, 10)


@dataclass(frozen=True)
class RunPoint:
    """One point of the sweep grid."""

    n: int = 8000
    num_actions: int = 1000
    reward_std: float = 1.0
    tau: float = 1.0
    kernel: str = "gaussian"
    density: str = "fa"

    def __post_init__(self):
        if self.n < 1 or self.num_actions < 1:
            raise ValueError("n and num_actions must be positive")
        if self.reward_std < 0:
            raise ValueError("reward_std must be nonnegative")
        if self.density not in DENSITY_VARIANTS:
            raise ValueError(f"density must be one of {DENSITY_VARIANTS}, got {self.density!r}")
        KernelConfig(self.kernel, self.tau)  # validates family and bandwidth


@dataclass(frozen=True)
class Settings:
    """Hyperparameters shared by every run of a sweep."""

    steps: int = 2000
    batch_size: int = 256
    policy_lr: float = 5e-4
    n_eval: int = 2000
    n_augment: int = 8
    weight_clip: float = 200.0
    mc_samples: int = 100
    density_extra_m: int = 4
    density_epochs: int = 50
    regression_epochs: int = 100
    model_lr: float = 1e-4
    hidden: int = 100
    n_clusters: int = 10
    use_noisy_embedding: bool = True
    embedding_noise: float = 1.0
    logging: LoggingPolicySpec = field(default_factory=LoggingPolicySpec)


@dataclass(frozen=True)
class ResultRow:
    method: str
    n: int
    num_actions: int
    reward_std: float
    tau: float
    kernel: str
    density: str
    seed: int
    optimality: float
    policy_value: float
    seconds: float
    status: str = "ok"

    @property
    def key(self) -> Tuple:
        return (self.method, self.n, self.num_actions, float(self.reward_std), float(self.tau), self.kernel, self.density, self.seed)

    def as_dict(self) -> Dict:
        return asdict(self)


def row_key(method, point: RunPoint, seed: int) -> Tuple:
    return (method, point.n, point.num_actions, float(point.reward_std), float(point.tau), point.kernel, point.density, seed)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


@dataclass
class Fixture:
    """Everything that methods trained at one (point, seed) share."""

    point: RunPoint
    seed: int
    settings: Settings
    env: SyntheticEnv
    action_set: ActionSet
    logging_policy: SoftmaxPolicy
    data: object
    eval_set: EvalSet
    kernel: KernelConfig
    _reward_model: object = None
    _density: object = None
    _clustering: object = None

    def reward_model(self):
        if self._reward_model is None:
            s = self.settings
            self._reward_model, _ = fit_regression(
                self.data, lr=s.model_lr, epochs=s.regression_epochs, hidden=s.hidden, rng=_rng(self.seed, _S_REG)
            )
        return self._reward_model

    def density(self):
        if self._density is None:
            s = self.settings
            if self.point.density == "fa":
                self._density = fit_density_model(
                    self.data, self.kernel, lr=s.model_lr, epochs=s.density_epochs, hidden=s.hidden, rng=_rng(self.seed, _S_DENS)
                )
            else:
                sampler = LoggingSentenceSampler(self.env, self.logging_policy)
                self._density = MCDensity(sampler, self.kernel, s.mc_samples, seed=int(_rng(self.seed, _S_MC).integers(2**63)))
        return self._density

    def clustering(self):
        if self._clustering is None:
            k = min(self.settings.n_clusters, len(self.action_set))
            self._clustering = cluster_actions(self.action_set, k, _rng(self.seed, _S_CLUSTER))
        return self._clustering

    def initial_policy(self) -> SoftmaxPolicy:
        return SoftmaxPolicy.initialize(
            self.env.context_dim, self.action_set, 1.0, self.settings.hidden, _rng(self.seed, _S_INIT)
        )


def build_fixture(point: RunPoint, seed: int, settings: Settings = Settings(), need_support: bool = True) -> Fixture:
    env = SyntheticEnv(seed=seed, reward_std=point.reward_std, embedding_noise=settings.embedding_noise)
    action_set = sample_action_set(point.num_actions, _rng(seed, _S_ACTIONS), env.dim_action)
    logging_policy = build_logging_policy(env, action_set, settings.logging, _rng(seed, _S_LOGGING))
    extra = settings.density_extra_m if (need_support and point.density == "fa") else 0
    data = collect_logged_data(env, logging_policy, point.n, _rng(seed, _S_DATA), density_extra_m=extra, seed=seed)
    eval_set = make_eval_set(env, action_set, settings.n_eval, _rng(seed, _S_EVAL), seed)
    kernel = KernelConfig(point.kernel, point.tau, settings.use_noisy_embedding)
    return Fixture(point, seed, settings, env, action_set, logging_policy, data, eval_set, kernel)


def train_method(fx: Fixture, method: str, steps: Optional[int] = None):
    """Train one method on the fixture; returns ``(policy, TrainingLog)``."""
    s = fx.settings
    est = EstimatorConfig(weight_clip=s.weight_clip, n_augment=s.n_augment)
    policy = fx.initial_policy()
    if method in ("regression", "dr", "potec"):
        est = replace(est, reward_model=fx.reward_model())
    if method == "potec":
        cl = fx.clustering()
        first = SoftmaxPolicy.initialize(fx.env.context_dim, ActionSet(cl.centers), 1.0, s.hidden, _rng(fx.seed, _S_INIT))
        policy = TwoStagePolicy(first, cl, fx.reward_model())
        est = replace(est, clustering=cl, logging_policy=fx.logging_policy)
    if method == "dso":
        est = replace(est, kernel=fx.kernel, density=fx.density(), generator=SentenceSampler(fx.env, fx.action_set))
    cfg = TrainConfig(
        method=method,
        lr=s.policy_lr,
        steps=s.steps if steps is None else steps,
        batch_size=s.batch_size,
        seed=fx.seed,
        estimator=est,
    )
    return train_policy(cfg, policy, data=fx.data, env=fx.env)


def run_method(fx: Fixture, method: str) -> ResultRow:
    start = time.perf_counter()
    status = "ok"
    if method == "uniform-eval-only":
        policy = UniformPolicy(len(fx.action_set))
    elif method == "logging-eval-only":
        policy = fx.logging_policy
    elif method in TRAINED_METHODS:
        try:
            policy, _ = train_method(fx, method)
        except (DivergenceError, FloatingPointError) as err:
            logger.warning("%s diverged at seed %d: %s", method, fx.seed, err)
            policy, status = None, "diverged"
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {ALL_METHODS}")
    if policy is None:
        value = opt = float("nan")
    else:
        rep = fx.eval_set.evaluate(policy)
        value, opt = rep.policy_value, rep.optimality
    p = fx.point
    return ResultRow(
        method, p.n, p.num_actions, float(p.reward_std), float(p.tau), p.kernel, p.density, fx.seed,
        opt, value, time.perf_counter() - start, status,
    )


def run_point(point: RunPoint, seed: int, methods: Sequence[str], settings: Settings = Settings()) -> List[ResultRow]:
    """Train and evaluate every method at one (point, seed)."""
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {ALL_METHODS}")
    fx = build_fixture(point, seed, settings, need_support="dso" in methods)
    return [run_method(fx, m) for m in methods]
