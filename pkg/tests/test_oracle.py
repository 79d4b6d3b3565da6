import dataclasses

import numpy as np
import pytest

from dso_opl.density import TableDensity
from dso_opl.gradients import EstimatorConfig, grad_dso
from dso_opl.kernels import TableKernel
from dso_opl.oracle import (
    IDENTITIES,
    SupportViolationError,
    check_support,
    complex_step_gradient,
    dso_expectation,
    instance_residuals,
    is_expectation,
    policy_value,
    random_instance,
    thm1_bias_terms,
    thm2_variance_terms,
    true_gradient,
    verify_theory,
)

from helpers import DiscreteGenerator, discrete_batch, onehot_policy, theta_grad


def test_verify_theory_passes():
    rep = verify_theory(20, tol=1e-10, seed=1)
    assert rep.passed, "\n".join(rep.lines())
    assert set(rep.residuals) == set(IDENTITIES)


@pytest.mark.parametrize("sizes", [(1, 2, 2), (2, 3, 7), (4, 6, 3)])
def test_identities_hold_across_sizes(sizes):
    assert verify_theory(5, sizes=sizes).passed


def test_complex_step_matches_analytic_softmax_gradient():
    theta = np.array([0.3, -1.2, 2.0])
    f = lambda t: np.log(np.exp(t).sum())  # noqa: E731
    p = np.exp(theta) / np.exp(theta).sum()
    assert np.allclose(complex_step_gradient(f, theta), p, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_identity_kernel_removes_all_bias(seed):
    inst = random_instance(np.random.default_rng(seed), kernel="identity")
    bias = thm1_bias_terms(inst)
    for term in (bias.reward_shift, bias.weighted_score_shift, bias.score_shift):
        assert np.max(np.abs(term)) < 1e-12
    assert np.allclose(dso_expectation(inst), true_gradient(inst), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_identity_kernel_reductions_vanish_only_with_disjoint_supports(seed):
    disjoint = thm2_variance_terms(random_instance(np.random.default_rng(seed), 3, 4, 8, kernel="identity", llm="disjoint"))
    assert np.max(np.abs(disjoint.weight_reduction)) < 1e-12
    assert np.max(np.abs(disjoint.score_reduction)) < 1e-12
    shared = thm2_variance_terms(random_instance(np.random.default_rng(seed), kernel="identity"))
    assert shared.weight_reduction.max() > 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_on_policy_removes_reward_shift(seed):
    inst = random_instance(np.random.default_rng(seed), 1, 4, 5)
    on_policy = inst.with_theta(np.log(inst.pi0[0]))
    assert np.max(np.abs(thm1_bias_terms(on_policy).reward_shift)) < 1e-12


def test_deterministic_generator_still_reduces_weight_variance():
    inst = random_instance(np.random.default_rng(3), 2, 5, 3, llm="deterministic")
    var = thm2_variance_terms(inst)
    assert var.weight_reduction.max() > 0
    assert np.all(var.weight_reduction >= -1e-12) and np.all(var.score_reduction >= -1e-12)


def test_reinforce_monte_carlo_matches_true_gradient():
    inst = random_instance(np.random.default_rng(4), 3, 4, 5)
    rng = np.random.default_rng(5)
    n = 1_000_000
    pt = np.exp(inst.theta) / np.exp(inst.theta).sum()
    x = rng.choice(3, size=n, p=inst.p_x)
    a = rng.choice(4, size=n, p=pt)
    cdf = np.cumsum(inst.p_llm[x, a], axis=1)
    s = np.minimum((cdf <= rng.random(n)[:, None]).sum(axis=1), 4)
    r = inst.q[x, s] + np.sqrt(inst.sigma2[x, s]) * rng.standard_normal(n)
    Z = r[:, None] * (np.eye(4)[a] - pt[None, :])
    mean, se = Z.mean(axis=0), Z.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(mean - true_gradient(inst)) < 4 * se)


def test_sampled_dso_estimator_matches_expectation():
    inst = random_instance(np.random.default_rng(6), 2, 3, 4)
    rng = np.random.default_rng(7)
    n_batches, size = 40, 5000
    cfg = EstimatorConfig(
        weight_clip=1e12,
        kernel=TableKernel(inst.K),
        density=TableDensity(inst.marginal_density()),
        n_augment=2,
        generator=DiscreteGenerator(inst),
    )
    pol = onehot_policy(inst.theta, 2)
    means = []
    for _ in range(n_batches):
        x = rng.choice(2, size=size, p=inst.p_x)
        a = (np.cumsum(inst.pi0[x], axis=1) <= rng.random(size)[:, None]).sum(axis=1).clip(max=2)
        s = (np.cumsum(inst.p_llm[x, a], axis=1) <= rng.random(size)[:, None]).sum(axis=1).clip(max=3)
        r = inst.q[x, s] + np.sqrt(inst.sigma2[x, s]) * rng.standard_normal(size)
        means.append(theta_grad(grad_dso(pol, discrete_batch(inst, x, a, s, r), cfg, rng)))
    means = np.array(means)
    se = means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    assert np.all(np.abs(means.mean(axis=0) - dso_expectation(inst)) < 4 * se + 1e-12)


def test_deficient_support_breaks_importance_sampling():
    inst = random_instance(np.random.default_rng(8), 2, 3, 3, kernel="identity", llm="disjoint")
    pi0 = inst.pi0.copy()
    pi0[:, 2] = 0.0
    pi0 /= pi0.sum(axis=1, keepdims=True)
    bad = dataclasses.replace(inst, pi0=pi0)
    assert np.max(np.abs(is_expectation(bad) - true_gradient(bad))) > 1e-3
    with pytest.raises(SupportViolationError, match="x=0"):
        check_support(bad)
    with pytest.raises(SupportViolationError):
        thm1_bias_terms(bad)


def test_instance_validation():
    inst = random_instance(np.random.default_rng(0))
    with pytest.raises(ValueError):
        dataclasses.replace(inst, K=inst.K * 1.1)
    with pytest.raises(ValueError):
        dataclasses.replace(inst, theta=np.zeros(2))
    with pytest.raises(ValueError):
        random_instance(0, 2, 4, 3, llm="disjoint")


def test_residuals_are_tiny_per_instance():
    res = instance_residuals(random_instance(np.random.default_rng(11)))
    assert max(res.values()) < 1e-10
    assert policy_value(random_instance(np.random.default_rng(11))).shape == ()
