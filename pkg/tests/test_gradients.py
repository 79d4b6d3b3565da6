"""Estimators against exact expectations on small discrete instances.

Each expectation is computed by enumeration: every (context, logged action,
logged sentence[, augmented action, augmented sentence]) combination becomes one
batch row whose reward is scaled by its probability times the number of rows.
All estimators are linear in the reward (and reward-model) columns, so the
batch average equals the exact expectation.
"""
import itertools
import warnings

import numpy as np
import pytest

from dso_opl.clustering import Clustering
from dso_opl.density import TableDensity
from dso_opl.gradients import (
    ConfigurationError,
    DensityFloorWarning,
    EstimatorConfig,
    estimate_gradient,
    grad_dr,
    grad_dso,
    grad_is,
    grad_online,
    grad_potec,
    grad_regression,
    reinforce_gradient,
)
from dso_opl.kernels import KernelConfig, TableKernel
from dso_opl.oracle import (
    complex_step_gradient,
    dso_expectation,
    is_expectation,
    policy_value as oracle_value,
    potec_expectation,
    random_instance,
    true_gradient,
    two_stage_value,
)
from dso_opl.policies import SoftmaxPolicy, TwoStagePolicy
from dso_opl.synthetic import SentenceSampler, SyntheticEnv, sample_action_set
from dso_opl.types import ActionSet, LoggedBatch

from helpers import DiscreteGenerator, discrete_batch, onehot_policy, theta_grad

NO_CLIP = 1e12
SEEDS = range(5)


def _instance(seed, **kw):
    return random_instance(np.random.default_rng(seed), 3, 4, 5, **kw)


def _enumerate(inst, with_augmentation=False):
    """Rows ``(x, a, t[, a', s'])`` with their probability under logging (and the current policy)."""
    nx, na, ns = inst.p_llm.shape
    pt = np.exp(inst.theta - inst.theta.max())
    pt /= pt.sum()
    rows, probs = [], []
    for x, a, t in itertools.product(range(nx), range(na), range(ns)):
        p = inst.p_x[x] * inst.pi0[x, a] * inst.p_llm[x, a, t]
        if not with_augmentation:
            rows.append((x, a, t))
            probs.append(p)
            continue
        for a2, s2 in itertools.product(range(na), range(ns)):
            rows.append((x, a, t, a2, s2))
            probs.append(p * pt[a2] * inst.p_llm[x, a2, s2])
    return np.array(rows), np.array(probs)


@pytest.mark.parametrize("seed", SEEDS)
def test_dso_matches_exact_expectation(seed):
    inst = _instance(seed)
    rows, w = _enumerate(inst, with_augmentation=True)
    x, a, t, a2, s2 = rows.T
    N = len(rows)
    batch = discrete_batch(inst, x, a, t, N * w * inst.q[x, t])
    cfg = EstimatorConfig(weight_clip=NO_CLIP, kernel=TableKernel(inst.K), density=TableDensity(inst.marginal_density()))
    pol = onehot_policy(inst.theta, 3)
    est = grad_dso(pol, batch, cfg, augmented=(a2[:, None], np.eye(5)[s2][:, None, :]))
    assert np.allclose(theta_grad(est), dso_expectation(inst), atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_dso_with_identity_kernel_and_disjoint_supports_is_unbiased(seed):
    inst = _instance(seed, kernel="identity", llm="disjoint")
    assert np.allclose(dso_expectation(inst), true_gradient(inst), atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_is_matches_exact_expectation_and_true_gradient(seed):
    inst = _instance(seed)
    rows, w = _enumerate(inst)
    x, a, t = rows.T
    N = len(rows)
    batch = discrete_batch(inst, x, a, t, N * w * inst.q[x, t], propensities=inst.pi0[x, a])
    est = grad_is(onehot_policy(inst.theta, 3), batch, clip=NO_CLIP)
    assert np.allclose(theta_grad(est), is_expectation(inst), atol=1e-12)
    assert np.allclose(theta_grad(est), true_gradient(inst), atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_regression_with_true_rewards_is_the_true_gradient(seed):
    inst = _instance(seed)
    qa = inst.action_rewards()
    X = np.eye(3)
    batch = LoggedBatch(X, np.zeros(3, dtype=np.int64), np.zeros(3), np.zeros((3, 5)), qhat=3 * inst.p_x[:, None] * qa)
    est = grad_regression(onehot_policy(inst.theta, 3), batch)
    assert np.allclose(theta_grad(est), true_gradient(inst), atol=1e-12)
    exact = complex_step_gradient(lambda th: oracle_value(inst, th), inst.theta)
    assert np.allclose(theta_grad(est), exact, atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_dr_is_unbiased_for_any_reward_model(seed):
    inst = _instance(seed)
    rows, w = _enumerate(inst)
    x, a, t = rows.T
    N = len(rows)
    qhat = np.random.default_rng(seed + 100).normal(size=(3, 4))
    c = (N * w)[:, None]
    batch = discrete_batch(inst, x, a, t, N * w * inst.q[x, t], propensities=inst.pi0[x, a], qhat=c * qhat[x])
    est = grad_dr(onehot_policy(inst.theta, 3), batch, clip=NO_CLIP)
    assert np.allclose(theta_grad(est), true_gradient(inst), atol=1e-12)


def _potec_setup(seed):
    inst = _instance(seed)
    rng = np.random.default_rng(seed + 50)
    assignments = np.array([0, 1, 0, 1])
    theta1 = rng.normal(size=2)
    return inst, assignments, theta1


@pytest.mark.parametrize("seed", SEEDS)
def test_potec_matches_exact_expectation(seed):
    inst, assignments, theta1 = _potec_setup(seed)
    qhat = np.random.default_rng(seed + 7).normal(size=(3, 4))
    rows, w = _enumerate(inst)
    x, a, t = rows.T
    N = len(rows)
    c = (N * w)[:, None]
    batch = discrete_batch(
        inst, x, a, t, N * w * inst.q[x, t], qhat=c * qhat[x], logging_probs=inst.pi0[x]
    )
    policy = TwoStagePolicy(onehot_policy(theta1, 3), Clustering(assignments, np.zeros((2, 1))))
    est = grad_potec(policy, batch, clip=NO_CLIP)
    assert np.allclose(theta_grad(est), potec_expectation(inst, theta1, assignments, qhat), atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_potec_with_true_rewards_is_the_two_stage_gradient(seed):
    inst, assignments, theta1 = _potec_setup(seed)
    qa = inst.action_rewards()
    exact = complex_step_gradient(lambda th: two_stage_value(inst, th, assignments, qa), theta1)
    assert np.allclose(potec_expectation(inst, theta1, assignments, qa), exact, atol=1e-12)


# -- degeneracies on the synthetic environment --------------------------------


def _synthetic(n=64, n_actions=6, seed=0):
    env = SyntheticEnv(seed=seed)
    rng = np.random.default_rng(seed)
    acts = sample_action_set(n_actions, rng)
    pol = SoftmaxPolicy.initialize(env.context_dim, acts, hidden=8, rng=rng)
    X = env.sample_contexts(n, rng)
    P = pol.action_probs(X)
    a = rng.choice(n_actions, size=n) if n_actions > 1 else np.zeros(n, dtype=np.int64)
    S, noisy = env.sample_sentences(X, acts.embeddings[a], rng)
    r = env.sample_rewards(X, S, rng)
    batch = LoggedBatch(X, a, r, S, P[np.arange(n), a], noisy)
    return env, acts, pol, batch


def test_on_policy_is_and_dr_reduce_to_reinforce():
    _, _, pol, batch = _synthetic()
    ref = reinforce_gradient(pol, batch.contexts, batch.actions, batch.rewards).params.flat()
    g_is = grad_is(pol, batch).params.flat()
    g_dr = grad_dr(pol, batch.replace(qhat=np.zeros((len(batch), 6)))).params.flat()
    assert np.max(np.abs(g_is - ref)) < 1e-10
    assert np.max(np.abs(g_dr - ref)) < 1e-10


def _all_estimates(env, acts, pol, batch, n_clusters=1):
    q = np.random.default_rng(0).normal(size=(len(batch), len(acts)))
    cfg = EstimatorConfig(
        kernel=KernelConfig("gaussian", 1.0),
        density=TableDensity(np.ones((len(batch), 1))),
        generator=SentenceSampler(env, acts),
    )
    b = batch.replace(qhat=q, logging_probs=np.full((len(batch), len(acts)), 1 / len(acts)), density=np.full(len(batch), 0.01))
    rng = np.random.default_rng(1)
    first = SoftmaxPolicy.initialize(env.context_dim, ActionSet(np.eye(n_clusters)), hidden=8, rng=2)
    two = TwoStagePolicy(first, Clustering(np.zeros(len(acts), dtype=np.int64), np.zeros((1, acts.dim))))
    return {
        "regression": grad_regression(pol, b),
        "is": grad_is(pol, b),
        "dr": grad_dr(pol, b),
        "dso": grad_dso(pol, b, cfg, rng),
        "online": grad_online(pol, env, 32, rng),
        "potec": grad_potec(two, b),
    }


def test_single_action_gives_zero_gradients():
    env, acts, pol, batch = _synthetic(n_actions=1)
    for name, est in _all_estimates(env, acts, pol, batch).items():
        assert np.all(est.params.flat() == 0), name


def test_single_cluster_potec_is_zero():
    env, acts, pol, batch = _synthetic()
    est = _all_estimates(env, acts, pol, batch)["potec"]
    assert np.all(est.params.flat() == 0)


def test_constant_reward_model_gives_zero_regression_gradient():
    _, _, pol, batch = _synthetic()
    est = grad_regression(pol, batch.replace(qhat=np.full((len(batch), 6), 3.7)))
    assert np.max(np.abs(est.params.flat())) < 1e-12


def test_uniform_kernel_with_distant_augmentation_is_zero():
    env, acts, pol, batch = _synthetic()
    cfg = EstimatorConfig(kernel=KernelConfig("uniform", 0.1, use_noisy_embedding=False), density=TableDensity(np.ones((1, 1))))
    far = batch.sentences[:, None, :] + 10.0
    est = grad_dso(pol, batch.replace(density=np.ones(len(batch))), cfg, augmented=(np.zeros((len(batch), 1), dtype=int), far))
    assert np.all(est.params.flat() == 0)


def test_more_augmentation_draws_reduce_variance():
    env, acts, pol, batch = _synthetic(n=8)
    b = batch.replace(density=np.full(len(batch), 0.01))
    norms = {}
    for M in (1, 64):
        cfg = EstimatorConfig(kernel=KernelConfig("gaussian", 1.0), n_augment=M, generator=SentenceSampler(env, acts))
        rng = np.random.default_rng(0)
        flats = np.array([grad_dso(pol, b, cfg, rng).params.flat() for _ in range(100)])
        assert np.all(np.isfinite(flats))
        norms[M] = flats.var(axis=0).sum()
    assert norms[64] < norms[1]


def test_online_gradient_zero_reward_and_determinism():
    env, acts, pol, _ = _synthetic()
    a = grad_online(pol, env, 16, np.random.default_rng(3)).params.flat()
    b = grad_online(pol, env, 16, np.random.default_rng(3)).params.flat()
    assert np.array_equal(a, b)
    silent = SyntheticEnv(seed=0, scale=0.0, sentence_std=0.0, reward_std=0.0)
    assert np.all(grad_online(pol, silent, 16, np.random.default_rng(3)).params.flat() == 0)


def test_weight_clip_bounds_importance_weights():
    _, _, pol, batch = _synthetic()
    tiny = batch.replace(propensities=np.full(len(batch), 1e-9))
    clipped = grad_is(pol, tiny, clip=5.0).params.flat()
    ref = reinforce_gradient(pol, batch.contexts, batch.actions, batch.rewards, np.full(len(batch), 5.0)).params.flat()
    assert np.allclose(clipped, ref, atol=1e-12)


def test_configuration_errors():
    env, acts, pol, batch = _synthetic()
    with pytest.raises(ConfigurationError):
        grad_regression(pol, batch)
    with pytest.raises(ConfigurationError):
        grad_dso(pol, batch, EstimatorConfig())
    with pytest.raises(ConfigurationError):
        grad_dso(pol, batch, EstimatorConfig(kernel=KernelConfig()))
    with pytest.raises(ConfigurationError):
        estimate_gradient("online", pol, batch, EstimatorConfig())
    with pytest.raises(ValueError, match="propensit"):
        grad_is(pol, batch.replace(propensities=None))
    with pytest.raises(ValueError):
        grad_is(pol, batch.replace(propensities=np.zeros(len(batch))))
    with pytest.raises(ValueError):
        estimate_gradient("magic", pol, batch, EstimatorConfig())
    with pytest.raises(ValueError):
        EstimatorConfig(weight_clip=0.0)


def test_density_floor_warning():
    env, acts, pol, batch = _synthetic()
    cfg = EstimatorConfig(kernel=KernelConfig(), generator=SentenceSampler(env, acts))
    with pytest.warns(DensityFloorWarning):
        grad_dso(pol, batch.replace(density=np.full(len(batch), 1e-6)), cfg, np.random.default_rng(0))
    with warnings.catch_warnings():
        warnings.simplefilter("error", DensityFloorWarning)
        grad_dso(pol, batch.replace(density=np.full(len(batch), 0.05)), cfg, np.random.default_rng(0))
