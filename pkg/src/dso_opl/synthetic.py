"""Synthetic contextual bandit with sentence-like auxiliary outputs.

Sentences are ``s ~ N(c * sin(q M_q + e_a M_e), sigma_s^2)`` and rewards are
``r ~ N(((u M_u + q M_qr) M_s) . s, sigma_r^2)``. Because the reward mean is
linear in ``s``, ``E[r | x, a]`` has the closed form ``f_r(x, f_s(q, e_a))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .policies import SoftmaxPolicy, sample_action
from .regression import fit_reward_model
from .types import (
    ActionSet,
    Context,
    DatasetMetadata,
    Dims,
    LoggedDataset,
    LoggedRecord,
    Sentence,
)

_ENV_STREAM = 0x5E7


@dataclass(eq=False)
class SyntheticEnv:
    seed: int = 0
    dim_user: int = 5
    dim_query: int = 5
    dim_action: int = 5
    dim_sentence: int = 5
    scale: float = 5.0
    sentence_std: float = 1.0
    reward_std: float = 1.0
    embedding_noise: float = 1.0
    M_q: np.ndarray = field(init=False, repr=False)
    M_e: np.ndarray = field(init=False, repr=False)
    M_u: np.ndarray = field(init=False, repr=False)
    M_qr: np.ndarray = field(init=False, repr=False)
    M_s: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.sentence_std < 0 or self.reward_std < 0 or self.embedding_noise < 0:
            raise ValueError("noise scales must be nonnegative")
        rng = np.random.default_rng([self.seed, _ENV_STREAM])
        ds = self.dim_sentence
        self.M_q = rng.uniform(-1.0, 1.0, size=(self.dim_query, ds))
        self.M_e = rng.uniform(-1.0, 1.0, size=(self.dim_action, ds))
        self.M_u = rng.uniform(-1.0, 1.0, size=(self.dim_user, ds))
        self.M_qr = rng.uniform(-1.0, 1.0, size=(self.dim_query, ds))
        self.M_s = rng.uniform(-1.0, 1.0, size=(ds, ds))

    @property
    def context_dim(self) -> int:
        return self.dim_user + self.dim_query

    @property
    def dims(self) -> Dims:
        return Dims(self.dim_user, self.dim_query, self.dim_action, self.dim_sentence)

    def split(self, X):
        X = np.asarray(X, dtype=np.float64)
        return X[..., : self.dim_user], X[..., self.dim_user :]

    # -- generative pieces, vectorized over leading axes ---------------------

    def sample_contexts(self, n: int, rng) -> np.ndarray:
        U = rng.standard_normal((n, self.dim_user))
        Q = rng.standard_normal((n, self.dim_query))
        return np.concatenate([U, Q], axis=1)

    def sentence_mean(self, Q, E) -> np.ndarray:
        return self.scale * np.sin(np.asarray(Q) @ self.M_q + np.asarray(E) @ self.M_e)

    def sample_sentences(self, X, E, rng, noiseless: bool = False):
        """Sentences for contexts ``X (B, dx)`` and action embeddings ``E (B, de)`` or ``(B, M, de)``.

        Returns ``(embedding, noisy_embedding)`` with the shape of ``E`` but ``d_s`` columns.
        """
        _, Q = self.split(X)
        E = np.asarray(E, dtype=np.float64)
        if E.ndim == 3:
            Q = Q[:, None, :]
        mean = self.sentence_mean(Q, E)
        if noiseless or self.sentence_std == 0:
            emb = mean
        else:
            emb = mean + self.sentence_std * rng.standard_normal(mean.shape)
        noisy = emb + self.embedding_noise * rng.standard_normal(emb.shape)
        return emb, noisy

    def reward_weights(self, X) -> np.ndarray:
        U, Q = self.split(X)
        return (U @ self.M_u + Q @ self.M_qr) @ self.M_s

    def reward_mean(self, X, S) -> np.ndarray:
        W = self.reward_weights(X)
        S = np.asarray(S, dtype=np.float64)
        if S.ndim == W.ndim + 1:
            W = W[..., None, :]
        return np.sum(W * S, axis=-1)

    def sample_rewards(self, X, S, rng, noiseless: bool = False) -> np.ndarray:
        mean = self.reward_mean(X, S)
        if noiseless or self.reward_std == 0:
            return mean
        return mean + self.reward_std * rng.standard_normal(np.shape(mean))

    def expected_reward_table(self, X, E, chunk: int = 512) -> np.ndarray:
        """``q(x_b, a) = f_r(x_b, f_s(q_b, e_a))`` for every context row and action: ``(B, A)``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        E = np.atleast_2d(np.asarray(E, dtype=np.float64))
        _, Q = self.split(X)
        W = self.reward_weights(X)
        QM = Q @ self.M_q
        EM = E @ self.M_e
        out = np.empty((X.shape[0], E.shape[0]))
        for lo in range(0, X.shape[0], chunk):
            f_s = self.scale * np.sin(QM[lo : lo + chunk, None, :] + EM[None, :, :])
            out[lo : lo + chunk] = np.einsum("bak,bk->ba", f_s, W[lo : lo + chunk])
        return out


@dataclass(frozen=True, eq=False)
class SentenceSampler:
    """Draws sentences for given contexts from the environment's generator.

    Called as ``sampler(X, actions, rng)`` with ``actions`` of shape ``(B, M)``;
    returns ``(embedding, noisy_embedding)`` arrays of shape ``(B, M, d_s)``.
    """

    env: SyntheticEnv
    action_set: ActionSet

    def __call__(self, X, actions, rng):
        E = self.action_set.embeddings[np.asarray(actions)]
        return self.env.sample_sentences(X, E, rng)


@dataclass(frozen=True, eq=False)
class LoggingSentenceSampler:
    """Draws ``s ~ pi_0(s | x)`` by sampling actions from a policy then sentences."""

    env: SyntheticEnv
    policy: object

    def __call__(self, X, m: int, rng):
        X = np.atleast_2d(X)
        P = self.policy.action_probs(X)
        B = X.shape[0]
        actions = sample_action(self.policy, np.repeat(X, m, axis=0), rng, probs=np.repeat(P, m, axis=0))
        E = self.policy.action_set.embeddings[actions.reshape(B, m)]
        return self.env.sample_sentences(X, E, rng)


# -- module-level operations -------------------------------------------------


def sample_action_set(count: int, rng, dim: int = 5) -> ActionSet:
    """Action embeddings with i.i.d. standard normal entries."""
    if count < 1:
        raise ValueError("need at least one action")
    return ActionSet(rng.standard_normal((count, dim)))


def sample_context(env: SyntheticEnv, rng) -> Context:
    X = env.sample_contexts(1, rng)[0]
    u, q = env.split(X)
    return Context(u, q)


def generate_sentence(env: SyntheticEnv, q, e_a, rng, noiseless: bool = False) -> Sentence:
    q = np.asarray(q, dtype=np.float64)
    mean = env.sentence_mean(q, np.asarray(e_a, dtype=np.float64))
    emb = mean if noiseless else mean + env.sentence_std * rng.standard_normal(mean.shape)
    noisy = emb + env.embedding_noise * rng.standard_normal(emb.shape)
    return Sentence(emb, noisy)


def _context_vector(x) -> np.ndarray:
    return x.vector if isinstance(x, Context) else np.asarray(x, dtype=np.float64)


def simulate_reward(env: SyntheticEnv, x, s, rng, noiseless: bool = False) -> float:
    emb = s.embedding if isinstance(s, Sentence) else np.asarray(s, dtype=np.float64)
    mean = float(env.reward_mean(_context_vector(x), emb))
    if noiseless or env.reward_std == 0:
        return mean
    return mean + env.reward_std * float(rng.standard_normal())


def expected_reward(env: SyntheticEnv, x, e_a) -> float:
    X = _context_vector(x)
    return float(env.expected_reward_table(X[None, :], np.asarray(e_a)[None, :])[0, 0])


@dataclass(frozen=True)
class LoggingPolicySpec:
    n_pretrain: int = 10_000
    beta: float = 1.0
    lr: float = 1e-4
    epochs: int = 30
    batch_size: int = 256
    hidden: int = 100

    def __post_init__(self):
        if self.n_pretrain <= 0:
            raise ValueError("n_pretrain must be positive")


def build_logging_policy(env: SyntheticEnv, action_set: ActionSet, spec: LoggingPolicySpec, rng) -> SoftmaxPolicy:
    """Softmax over a base reward model fitted on uniformly-collected data."""
    X = env.sample_contexts(spec.n_pretrain, rng)
    actions = rng.integers(0, len(action_set), size=spec.n_pretrain)
    S, _ = env.sample_sentences(X, action_set.embeddings[actions], rng)
    r = env.sample_rewards(X, S, rng)
    model, _ = fit_reward_model(
        X,
        actions,
        r,
        action_set,
        lr=spec.lr,
        epochs=spec.epochs,
        batch_size=spec.batch_size,
        hidden=spec.hidden,
        patience=spec.epochs,
        rng=rng,
    )
    return SoftmaxPolicy(model.logit_params(), action_set, spec.beta)


def collect_logged_data(
    env: SyntheticEnv,
    policy,
    n: int,
    rng,
    density_extra_m: int = 0,
    seed: Optional[int] = None,
) -> LoggedDataset:
    """Roll out ``policy`` for ``n`` rounds and record ``(x, a, pi(a|x), s, r)``.

    With ``density_extra_m > 0`` every record also carries that many extra
    sentences drawn from the same policy at the same context.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    action_set = policy.action_set
    X = env.sample_contexts(n, rng)
    P = policy.action_probs(X)
    actions = sample_action(policy, X, rng, probs=P)
    E = action_set.embeddings[actions]
    S, S_noisy = env.sample_sentences(X, E, rng)
    rewards = env.sample_rewards(X, S, rng)
    expected = np.einsum("bk,bk->b", env.reward_weights(X), env.sentence_mean(env.split(X)[1], E))
    propensity = P[np.arange(n), actions]

    support = None
    if density_extra_m > 0:
        sampler = LoggingSentenceSampler(env, policy)
        support = sampler(X, density_extra_m, rng)

    records = []
    for i in range(n):
        u, q = env.split(X[i])
        extra = None
        if support is not None:
            extra = tuple(Sentence(support[0][i, j], support[1][i, j]) for j in range(density_extra_m))
        records.append(
            LoggedRecord(
                context=Context(u, q),
                action=int(actions[i]),
                sentence=Sentence(S[i], S_noisy[i]),
                reward=float(rewards[i]),
                propensity=float(propensity[i]),
                expected_reward=float(expected[i]),
                density_support_sentences=extra,
            )
        )
    meta = DatasetMetadata(
        size=n,
        action_set=action_set,
        dims=env.dims,
        reward_type="continuous",
        reward_std=float(env.reward_std),
        seed=seed,
    )
    return LoggedDataset(tuple(records), meta)
