"""Two-layer ReLU perceptron with analytic gradients, Adam/Adagrad, softmax."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from . import _kernels

HIDDEN_DEFAULT = 100


@dataclass(frozen=True, eq=False)
class MlpParams:
    """``out = W2 @ relu(W1 @ x + b1) + b2``. Also used as the gradient container."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        H, _ = self.W1.shape
        if self.b1.shape != (H,) or self.W2.ndim != 2 or self.W2.shape[1] != H or self.b2.shape != (self.W2.shape[0],):
            raise ValueError(
                f"inconsistent shapes W1{self.W1.shape} b1{self.b1.shape} W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> Tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2)

    @classmethod
    def from_arrays(cls, arrays) -> "MlpParams":
        return cls(*[np.asarray(a, dtype=np.float64) for a in arrays])

    def map(self, fn) -> "MlpParams":
        return MlpParams.from_arrays([fn(a) for a in self.arrays()])

    def zeros_like(self) -> "MlpParams":
        return self.map(np.zeros_like)

    def copy(self) -> "MlpParams":
        return self.map(np.array)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vec: np.ndarray) -> "MlpParams":
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[pos : pos + a.size], dtype=np.float64).reshape(a.shape))
            pos += a.size
        return MlpParams.from_arrays(out)

    def __add__(self, other: "MlpParams") -> "MlpParams":
        return MlpParams.from_arrays([a + b for a, b in zip(self.arrays(), other.arrays())])

    def scale(self, c: float) -> "MlpParams":
        return self.map(lambda a: a * c)

    def allclose(self, other: "MlpParams", **kw) -> bool:
        return all(np.allclose(a, b, **kw) for a, b in zip(self.arrays(), other.arrays()))

    def equal(self, other: "MlpParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def to_dict(self) -> Dict[str, dict]:
        return {name: {"shape": list(a.shape), "data": a.ravel().tolist()} for name, a in zip(("W1", "b1", "W2", "b2"), self.arrays())}

    @classmethod
    def from_dict(cls, d) -> "MlpParams":
        return cls.from_arrays(
            [np.array(d[k]["data"], dtype=np.float64).reshape(d[k]["shape"]) for k in ("W1", "b1", "W2", "b2")]
        )


def init_mlp(in_dim: int, out_dim: int = 1, hidden: int = HIDDEN_DEFAULT, rng=None) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng)
    lim1 = np.sqrt(6.0 / (in_dim + hidden))
    lim2 = np.sqrt(6.0 / (hidden + out_dim))
    return MlpParams(
        W1=rng.uniform(-lim1, lim1, size=(hidden, in_dim)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-lim2, lim2, size=(out_dim, hidden)),
        b2=np.zeros(out_dim),
    )


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ValueError(f"input has {x.shape[-1]} features but the network expects {params.in_dim}")
    return x


def mlp_forward(params: MlpParams, x):
    """Forward pass for a vector ``(in,)`` or a batch ``(N, in)``.

    Returns the output and the pre-activation cache needed by :func:`mlp_backward`.
    """
    x = _check_input(params, x)
    z = x @ params.W1.T + params.b1
    out = np.maximum(z, 0.0) @ params.W2.T + params.b2
    return out, z


def mlp_backward(params: MlpParams, x, cache, upstream) -> MlpParams:
    """Exact gradient of ``sum(upstream * output)``; ReLU'(0) is taken as 0."""
    x = _check_input(params, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape[-1] != params.out_dim:
        raise ValueError(f"upstream has {upstream.shape[-1]} outputs but the network has {params.out_dim}")
    z = cache
    h = np.maximum(z, 0.0)
    if x.ndim == 1:
        dz = (params.W2.T @ upstream) * (z > 0)
        return MlpParams(np.outer(dz, x), dz, np.outer(upstream, h), upstream.copy())
    dz = (upstream @ params.W2) * (z > 0)
    return MlpParams(dz.T @ x, dz.sum(axis=0), upstream.T @ h, upstream.sum(axis=0))


def pair_forward(params: MlpParams, contexts, embeddings) -> np.ndarray:
    """Scalar output for all ``(context, embedding)`` pairs: shape ``(B, A)``."""
    if params.out_dim != 1:
        raise ValueError("pair evaluation needs a scalar-output network")
    X = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    E = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if X.shape[1] + E.shape[1] != params.in_dim:
        raise ValueError(f"context dim {X.shape[1]} + embedding dim {E.shape[1]} != network input {params.in_dim}")
    return _kernels.pair_forward(X, E, *params.arrays())


def pair_backward(params: MlpParams, contexts, embeddings, upstream) -> MlpParams:
    """Gradient of ``sum(upstream * pair_forward(...))``."""
    X = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    E = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    U = np.asarray(upstream, dtype=np.float64).reshape(X.shape[0], E.shape[0])
    return MlpParams(*_kernels.pair_backward(X, E, params.W1, params.b1, params.W2, U))


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient becomes non-finite."""


@dataclass(eq=False)
class OptimizerState:
    algorithm: str = "adam"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = None
    step: int = 0
    moments: List[List[np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ("adam", "adagrad"):
            raise ValueError(f"unknown optimizer {self.algorithm!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.eps is None:
            self.eps = 1e-8 if self.algorithm == "adam" else 1e-10


def make_optimizer(algorithm: str, params: MlpParams, lr: float) -> OptimizerState:
    state = OptimizerState(algorithm=algorithm, lr=lr)
    arrays = params.arrays()
    if state.algorithm == "adam":
        state.moments = [[np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays]]
    else:
        state.moments = [[np.zeros_like(a) for a in arrays]]
    return state


def optimizer_step(state: OptimizerState, params: MlpParams, grads: MlpParams):
    """One descent step. Returns ``(new_params, state)``; ``state`` is updated in place."""
    g_arrays = grads.arrays()
    p_arrays = params.arrays()
    for g, p in zip(g_arrays, p_arrays):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient passed to the optimizer")
    if not state.moments:
        state.moments = make_optimizer(state.algorithm, params, state.lr).moments
    state.step += 1
    new = []
    if state.algorithm == "adam":
        m, v = state.moments
        c1 = 1.0 - state.beta1**state.step
        c2 = 1.0 - state.beta2**state.step
        for i, (p, g) in enumerate(zip(p_arrays, g_arrays)):
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g
            new.append(p - state.lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + state.eps))
    else:
        (acc,) = state.moments
        for i, (p, g) in enumerate(zip(p_arrays, g_arrays)):
            acc[i] = acc[i] + g * g
            new.append(p - state.lr * g / (np.sqrt(acc[i]) + state.eps))
    return MlpParams.from_arrays(new), state
