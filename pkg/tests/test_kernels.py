import math

import numpy as np
import pytest

from dso_opl import _kernels
from dso_opl.kernels import KernelConfig, TableKernel, kernel_eval
from dso_opl.types import Sentence


def test_gaussian_peak_1d():
    v = kernel_eval(KernelConfig("gaussian", 1.0), np.zeros(1), np.zeros(1))
    assert v == pytest.approx((2 * math.pi) ** -0.5, abs=1e-15)


def test_uniform_outside_box_is_zero():
    cfg = KernelConfig("uniform", 1.0)
    assert kernel_eval(cfg, np.zeros(2), np.array([3.0001, 0.0])) == 0.0
    assert kernel_eval(cfg, np.zeros(2), np.array([3.0, -3.0])) == pytest.approx(1 / 36)


def test_uniform_half_width_is_three_tau():
    for tau in (0.25, 0.5, 1.0, 4.0):
        cfg = KernelConfig("uniform", tau)
        assert cfg.half_width == 3 * tau
        assert kernel_eval(cfg, np.zeros(1), np.array([3 * tau])) > 0
        assert kernel_eval(cfg, np.zeros(1), np.array([np.nextafter(3 * tau, np.inf)])) == 0


def test_gaussian_1d_trapezoid_normalization():
    cfg = KernelConfig("gaussian", 1.0)
    grid = np.arange(-8.0, 8.0 + 1e-9, 1e-3)
    vals = cfg.evaluate(np.zeros((1, 1)), grid[:, None])
    assert np.trapezoid(vals, grid) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("family", ["gaussian", "uniform"])
@pytest.mark.parametrize("tau", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("dim", [1, 2])
def test_normalization_on_grid(family, tau, dim):
    cfg = KernelConfig(family, tau)
    h = 0.01 * tau
    axis = np.arange(-8 * tau, 8 * tau + h / 2, h)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    center = np.full(dim, 0.3 * tau)
    total = cfg.evaluate(center, pts).sum() * h**dim
    assert total == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("family", ["gaussian", "uniform"])
def test_symmetry_is_exact(family):
    rng = np.random.default_rng(0)
    cfg = KernelConfig(family, 0.7)
    for _ in range(100):
        s, t = rng.normal(size=(2, 5)) * 2
        assert kernel_eval(cfg, s, t) == kernel_eval(cfg, t, s)


def test_gaussian_decreases_with_distance():
    cfg = KernelConfig("gaussian", 1.0)
    d = np.linspace(0, 5, 50)
    vals = cfg.evaluate(np.zeros(1), d[:, None])
    assert np.all(np.diff(vals) < 0)


def test_noisy_embedding_switch():
    s = Sentence(np.zeros(2), np.ones(2))
    t = Sentence(np.zeros(2), np.zeros(2))
    clean = kernel_eval(KernelConfig("gaussian", 1.0, use_noisy_embedding=False), s, t)
    noisy = kernel_eval(KernelConfig("gaussian", 1.0, use_noisy_embedding=True), s, t)
    assert clean == pytest.approx(1 / (2 * math.pi))
    assert noisy < clean
    # missing noisy embedding falls back to the clean one
    assert kernel_eval(KernelConfig("gaussian", 1.0, True), Sentence(np.zeros(2)), Sentence(np.zeros(2))) == clean


def test_invalid_config():
    with pytest.raises(ValueError):
        KernelConfig("triangle", 1.0)
    with pytest.raises(ValueError):
        KernelConfig("gaussian", 0.0)
    with pytest.raises(ValueError):
        kernel_eval(KernelConfig(), np.zeros(2), np.zeros(3))


@pytest.mark.parametrize("family", ["gaussian", "uniform"])
def test_paired_matches_evaluate(backend, family):
    rng = np.random.default_rng(1)
    cfg = KernelConfig(family, 0.8)
    S = rng.normal(size=(6, 3))
    T = rng.normal(size=(6, 4, 3)) * 1.5
    ref = cfg.evaluate(S[:, None, :], T)
    assert np.allclose(cfg.paired(S, T), ref, rtol=1e-12, atol=0)


def test_table_kernel_indexing():
    M = np.array([[0.7, 0.3], [0.3, 0.7]])
    k = TableKernel(M)
    e = np.eye(2)
    assert k.evaluate(e[0], e[1]) == M[1, 0]
    assert np.array_equal(k.paired(e, np.stack([e, e])), np.array([[0.7, 0.3], [0.3, 0.7]]))


def test_backends_agree_on_all_kernels():
    from dso_opl import _accel

    if not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    rng = np.random.default_rng(2)
    X, E = rng.normal(size=(7, 4)), rng.normal(size=(9, 3))
    W1, b1, W2 = rng.normal(size=(5, 7)), rng.normal(size=5), rng.normal(size=(1, 5))
    U = rng.normal(size=(7, 9))
    P = rng.dirichlet(np.ones(9), size=7)
    u = rng.random(7)
    S, T = rng.normal(size=(7, 3)), rng.normal(size=(7, 5, 3))
    calls = [
        lambda: _kernels.pair_forward(X, E, W1, b1, W2, np.array([0.2])),
        lambda: _kernels.pair_backward(X, E, W1, b1, W2, U),
        lambda: _kernels.paired_kernel(S, T, 0.9, False),
        lambda: _kernels.paired_kernel(S, T, 0.9, True),
        lambda: _kernels.assign_nearest(E, E[:3]),
        lambda: _kernels.sample_rows(P, u),
    ]
    previous = _accel.get_backend()
    try:
        for call in calls:
            _accel.set_backend("numpy")
            a = call()
            _accel.set_backend("numba")
            b = call()
            for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
                assert np.allclose(x, y, rtol=1e-10, atol=1e-12)
    finally:
        _accel.set_backend(previous)


def test_env_flag_selects_numpy(monkeypatch):
    import subprocess
    import sys

    code = "from dso_opl import _accel; print(_accel.get_backend())"
    env = {"DSO_OPL_DISABLE_NUMBA": "1", "PATH": "/usr/bin:/bin"}
    import os

    env.update({k: v for k, v in os.environ.items() if k.startswith("PYTHON")})
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
