import numpy as np
import pytest

from dso_opl.density import (
    DENSITY_FLOOR,
    FADensity,
    MCDensity,
    MissingSupportError,
    TableDensity,
    density_predict,
    fit_density_model,
    mc_marginal_density,
)
from dso_opl.kernels import KernelConfig, TableKernel
from dso_opl.oracle import random_instance
from dso_opl.types import Context, DatasetMetadata, Dims, LoggedDataset, LoggedRecord, ActionSet, Sentence

from helpers import DiscreteLoggingSampler, random_dataset


def _fixed_sampler(s_star, noisy=None):
    s_star = np.asarray(s_star, dtype=float)

    def sampler(X, m, rng):
        emb = np.broadcast_to(s_star, (np.atleast_2d(X).shape[0], m, s_star.size)).copy()
        return emb, (emb if noisy is None else np.broadcast_to(noisy, emb.shape).copy())

    return sampler


def _gauss_sampler(X, m, rng):
    return rng.normal(size=(np.atleast_2d(X).shape[0], m, 2)), None


def test_degenerate_sampler_returns_kernel_peak():
    k = KernelConfig("gaussian", 0.5)
    s = np.array([0.3, -1.0])
    v = mc_marginal_density(_fixed_sampler(s), k, np.zeros(3), s, 10, np.random.default_rng(0))
    assert v == pytest.approx(k.peak(2), rel=1e-12)


def test_mc_variance_shrinks_with_m():
    k = KernelConfig("gaussian", 1.0)
    rng = np.random.default_rng(0)
    variances = []
    for m in (1, 10, 100):
        vals = [mc_marginal_density(_gauss_sampler, k, np.zeros(1), np.zeros(2), m, rng) for _ in range(200)]
        variances.append(np.var(vals))
    assert variances[0] > variances[1] > variances[2]


def test_mc_matches_closed_form_gaussian_convolution():
    # s' ~ N(0, I_2), K Gaussian with tau = 1  =>  E K(0, s') = N(0; 0, 2 I) = 1 / (4 pi)
    k = KernelConfig("gaussian", 1.0)
    dens = MCDensity(_gauss_sampler, k, m=200_000, seed=1).predict(np.zeros((1, 1)), np.zeros((1, 2)))
    assert dens[0] == pytest.approx(1 / (4 * np.pi), rel=0.01)


def test_uniform_kernel_far_away_hits_floor():
    k = KernelConfig("uniform", 0.1)
    v = mc_marginal_density(_fixed_sampler([0.0, 0.0]), k, np.zeros(1), np.array([5.0, 5.0]), 20, np.random.default_rng(0))
    assert v == DENSITY_FLOOR


def test_mc_requires_sampler():
    with pytest.raises(RuntimeError, match="function-approximation"):
        mc_marginal_density(None, KernelConfig(), np.zeros(1), np.zeros(2), 5, np.random.default_rng(0))
    with pytest.raises(RuntimeError):
        MCDensity(None, KernelConfig()).predict(np.zeros((1, 1)), np.zeros((1, 2)))


def test_mc_density_is_seed_deterministic():
    d = MCDensity(_gauss_sampler, KernelConfig(), m=5, seed=3)
    X, S = np.zeros((4, 1)), np.ones((4, 2))
    assert np.array_equal(d.predict(X, S), d.predict(X, S))


def _identical_sentence_dataset(n=200, seed=0):
    rng = np.random.default_rng(seed)
    s = Sentence(np.array([0.5, -0.5]))
    records = tuple(
        LoggedRecord(Context(rng.normal(size=2), rng.normal(size=1)), 0, s, 0.0, density_support_sentences=(s, s))
        for _ in range(n)
    )
    meta = DatasetMetadata(n, ActionSet(np.zeros((1, 1))), Dims(2, 1, 1, 2))
    return LoggedDataset(records, meta)


def test_fa_density_on_identical_sentences_recovers_peak():
    k = KernelConfig("gaussian", 1.0, use_noisy_embedding=False)
    model = fit_density_model(_identical_sentence_dataset(), k, lr=1e-2, epochs=100, hidden=8, rng=0)
    pred = model.predict(np.random.default_rng(1).normal(size=(20, 3)), np.tile([0.5, -0.5], (20, 1)))
    assert np.allclose(pred, k.peak(2), rtol=0.05)
    assert density_predict(model, Context(np.zeros(2), np.zeros(1)), Sentence(np.array([0.5, -0.5]))) == pytest.approx(
        k.peak(2), rel=0.05
    )


def test_fa_density_fit_is_deterministic_and_floored():
    data = random_dataset(np.random.default_rng(0), n=30, support=2)
    k = KernelConfig("gaussian", 1.0)
    a = fit_density_model(data, k, epochs=3, hidden=8, rng=5)
    b = fit_density_model(data, k, epochs=3, hidden=8, rng=5)
    assert a.mlp.equal(b.mlp)
    m = a.mlp
    dead = FADensity(type(m)(m.W1, m.b1, np.zeros_like(m.W2), np.array([-1e3])), k, a.scale)
    assert np.all(dead.predict(np.zeros((3, 5)), np.zeros((3, 4))) == DENSITY_FLOOR)


def test_fa_density_needs_support_sentences():
    data = random_dataset(np.random.default_rng(0), n=3, support=0)
    with pytest.raises(MissingSupportError, match="record 0"):
        fit_density_model(data, KernelConfig(), epochs=1)


def test_fa_density_input_check():
    model = fit_density_model(_identical_sentence_dataset(20), KernelConfig(use_noisy_embedding=False), epochs=1, hidden=4, rng=0)
    with pytest.raises(ValueError):
        model.predict(np.zeros((1, 2)), np.zeros((1, 2)))


def test_discrete_density_table_matches_enumeration():
    inst = random_instance(np.random.default_rng(0), 3, 4, 5)
    table = inst.marginal_density()
    for x in range(3):
        for t in range(5):
            ref = sum(
                inst.pi0[x, a] * inst.p_llm[x, a, s] * inst.K[s, t] for a in range(4) for s in range(5)
            )
            assert table[x, t] == pytest.approx(ref, abs=1e-15)
    dens = TableDensity(table)
    assert dens.predict(np.eye(3)[[2]], np.eye(5)[[4]])[0] == table[2, 4]


def test_mc_density_is_unbiased_by_enumeration():
    # with m = 1 and a point-mass sampler the estimate equals K(s_t, s'); averaging over s' ~ pi_0(.|x) is exact
    inst = random_instance(np.random.default_rng(1), 2, 3, 4)
    kernel = TableKernel(inst.K)
    table = inst.marginal_density()
    ps = np.einsum("xa,xas->xs", inst.pi0, inst.p_llm)
    for x in range(2):
        for t in range(4):
            est = sum(
                ps[x, s] * mc_marginal_density(_fixed_sampler(np.eye(4)[s]), kernel, np.eye(2)[x], np.eye(4)[t], 1, None, floor=0.0)
                for s in range(4)
            )
            assert est == pytest.approx(table[x, t], abs=1e-15)


def test_mc_density_converges_on_discrete_instance():
    inst = random_instance(np.random.default_rng(2), 2, 3, 4)
    d = MCDensity(DiscreteLoggingSampler(inst), TableKernel(inst.K), m=20_000, seed=0, floor=0.0)
    X = np.repeat(np.eye(2), 4, axis=0)
    S = np.tile(np.eye(4), (2, 1))
    assert np.allclose(d.predict(X, S), inst.marginal_density().ravel(), atol=0.01)
