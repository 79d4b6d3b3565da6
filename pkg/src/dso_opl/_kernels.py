"""Hot numeric kernels with a numba path and a pure-numpy path.

Every public function here dispatches on :func:`dso_opl._accel.use_numba` at
call time, so both paths can be exercised and benchmarked in one process.
The two paths agree up to floating-point summation order.
"""
import math

import numpy as np

from ._accel import njit, use_numba

# bytes budget for the (rows, actions, hidden) intermediate of the numpy path
_CHUNK_ELEMS = 4_000_000


# ---------------------------------------------------------------------------
# pair MLP: logit(x_b, e_a) = w2 . relu(W1c x_b + W1e e_a + b1) + b2
# ---------------------------------------------------------------------------


def _pair_forward_numpy(Zc, Ze, w2, b2):
    B, H = Zc.shape
    A = Ze.shape[0]
    out = np.empty((B, A))
    step = max(1, _CHUNK_ELEMS // max(1, A * H))
    for lo in range(0, B, step):
        hidden = Zc[lo : lo + step, None, :] + Ze[None, :, :]
        np.maximum(hidden, 0.0, out=hidden)
        out[lo : lo + step] = hidden @ w2
    out += b2
    return out


@njit(fastmath=True)
def _pair_forward_numba(Zc, Ze, w2, b2):
    B, H = Zc.shape
    A = Ze.shape[0]
    out = np.empty((B, A))
    for b in range(B):
        zc = Zc[b]
        for a in range(A):
            ze = Ze[a]
            acc = 0.0
            for h in range(H):
                acc += w2[h] * max(zc[h] + ze[h], 0.0)
            out[b, a] = acc + b2
    return out


def _pair_backward_numpy(Zc, Ze, w2, U):
    B, H = Zc.shape
    A = Ze.shape[0]
    dw2 = np.zeros(H)
    dZc = np.empty((B, H))
    dZe = np.zeros((A, H))
    step = max(1, _CHUNK_ELEMS // max(1, A * H))
    for lo in range(0, B, step):
        z = Zc[lo : lo + step, None, :] + Ze[None, :, :]
        u = U[lo : lo + step]
        active = z > 0.0
        np.maximum(z, 0.0, out=z)
        dw2 += np.einsum("ba,bah->h", u, z)
        dz = u[:, :, None] * active * w2
        dZc[lo : lo + step] = dz.sum(axis=1)
        dZe += dz.sum(axis=0)
    return dw2, dZc, dZe


@njit(fastmath=True)
def _pair_backward_numba(Zc, Ze, w2, U):
    B, H = Zc.shape
    A = Ze.shape[0]
    dw2 = np.zeros(H)
    dZc = np.zeros((B, H))
    dZe = np.zeros((A, H))
    uw = np.empty(H)
    for b in range(B):
        zc = Zc[b]
        dzc = dZc[b]
        for a in range(A):
            u = U[b, a]
            if u == 0.0:
                continue
            ze = Ze[a]
            dze = dZe[a]
            for h in range(H):
                uw[h] = u * w2[h]
            for h in range(H):
                z = zc[h] + ze[h]
                on = 1.0 if z > 0.0 else 0.0
                dw2[h] += u * z * on
                g = uw[h] * on
                dzc[h] += g
                dze[h] += g
    return dw2, dZc, dZe


def pair_forward(X, E, W1, b1, W2, b2):
    """Scalar MLP output for every (context row, embedding row) pair.

    ``W1`` has ``X.shape[1] + E.shape[1]`` input columns; returns ``(B, A)``.
    """
    dx = X.shape[1]
    Zc = np.ascontiguousarray(X @ W1[:, :dx].T + b1)
    Ze = np.ascontiguousarray(E @ W1[:, dx:].T)
    w2 = np.ascontiguousarray(W2[0])
    if use_numba():
        return _pair_forward_numba(Zc, Ze, w2, float(b2[0]))
    return _pair_forward_numpy(Zc, Ze, w2, float(b2[0]))


def pair_backward(X, E, W1, b1, W2, U):
    """Gradient of ``sum(U * pair_forward(...))`` w.r.t. ``(W1, b1, W2, b2)``."""
    dx = X.shape[1]
    Zc = np.ascontiguousarray(X @ W1[:, :dx].T + b1)
    Ze = np.ascontiguousarray(E @ W1[:, dx:].T)
    w2 = np.ascontiguousarray(W2[0])
    U = np.ascontiguousarray(U, dtype=np.float64)
    if use_numba():
        dw2, dZc, dZe = _pair_backward_numba(Zc, Ze, w2, U)
    else:
        dw2, dZc, dZe = _pair_backward_numpy(Zc, Ze, w2, U)
    dW1 = np.concatenate([dZc.T @ X, dZe.T @ E], axis=1)
    db1 = dZc.sum(axis=0)
    return dW1, db1, dw2[None, :], np.array([U.sum()])


# ---------------------------------------------------------------------------
# smoothing kernels between a pivot row and a set of rows, K(s_b, t_bm)
# ---------------------------------------------------------------------------


def _paired_numpy(S, T, tau, uniform):
    d = S.shape[-1]
    diff = T - S[:, None, :]
    if uniform:
        inside = np.all(np.abs(diff) <= 3.0 * tau, axis=-1)
        return inside * (6.0 * tau) ** (-d)
    sq = np.einsum("bmd,bmd->bm", diff, diff)
    return (2.0 * math.pi * tau * tau) ** (-0.5 * d) * np.exp(-sq / (2.0 * tau * tau))


@njit
def _paired_numba(S, T, tau, uniform):
    B, M, d = T.shape
    out = np.empty((B, M))
    half = 3.0 * tau
    if uniform:
        height = (6.0 * tau) ** (-d)
    else:
        height = (2.0 * math.pi * tau * tau) ** (-0.5 * d)
    inv = 1.0 / (2.0 * tau * tau)
    for b in range(B):
        for m in range(M):
            if uniform:
                inside = True
                for k in range(d):
                    if abs(T[b, m, k] - S[b, k]) > half:
                        inside = False
                        break
                out[b, m] = height if inside else 0.0
            else:
                sq = 0.0
                for k in range(d):
                    g = T[b, m, k] - S[b, k]
                    sq += g * g
                out[b, m] = height * math.exp(-sq * inv)
    return out


def paired_kernel(S, T, tau, uniform):
    """``out[b, m] = K(S[b], T[b, m])`` for the Gaussian or box kernel."""
    S = np.ascontiguousarray(S, dtype=np.float64)
    T = np.ascontiguousarray(T, dtype=np.float64)
    if use_numba():
        return _paired_numba(S, T, float(tau), bool(uniform))
    return _paired_numpy(S, T, float(tau), bool(uniform))


# ---------------------------------------------------------------------------
# k-means assignment and categorical sampling
# ---------------------------------------------------------------------------


def _assign_numpy(X, C):
    sq = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)
    labels = np.argmin(sq, axis=1)
    return labels, sq[np.arange(X.shape[0]), labels]


@njit
def _assign_numba(X, C):
    N, d = X.shape
    k = C.shape[0]
    labels = np.empty(N, dtype=np.int64)
    best = np.empty(N)
    for i in range(N):
        bi = 0
        bv = np.inf
        for j in range(k):
            s = 0.0
            for t in range(d):
                g = X[i, t] - C[j, t]
                s += g * g
            if s < bv:
                bv = s
                bi = j
        labels[i] = bi
        best[i] = bv
    return labels, best


def assign_nearest(X, C):
    """Index of and squared distance to the nearest center (ties: lowest index)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if use_numba():
        return _assign_numba(X, C)
    return _assign_numpy(X, C)


def _sample_numpy(P, u):
    cdf = np.cumsum(P, axis=1)
    target = u * cdf[:, -1]
    idx = (cdf <= target[:, None]).sum(axis=1)
    return np.minimum(idx, P.shape[1] - 1)


@njit
def _sample_numba(P, u):
    B, A = P.shape
    out = np.empty(B, dtype=np.int64)
    for b in range(B):
        total = 0.0
        for a in range(A):
            total += P[b, a]
        target = u[b] * total
        acc = 0.0
        choice = A - 1
        for a in range(A):
            acc += P[b, a]
            if acc > target:
                choice = a
                break
        out[b] = choice
    return out


def sample_rows(P, u):
    """Inverse-CDF draw per row of ``P`` using uniforms ``u`` in [0, 1)."""
    P = np.ascontiguousarray(P, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if use_numba():
        return _sample_numba(P, u)
    return _sample_numpy(P, u)
