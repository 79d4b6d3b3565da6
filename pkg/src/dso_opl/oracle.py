"""Exact enumeration on small discrete instances.

A :class:`DiscreteInstance` has finitely many contexts, actions and sentences,
a context-independent softmax target ``pi_theta(a) = softmax(theta)_a`` and a
discrete kernel ``K[s', t]``. The neighborhood ``phi`` is a latent variable with
``p(phi = t | s') = K[s', t]``, so that

* ``pi(phi_t | x) = sum_{s'} K[s', t] pi(s' | x)`` (the marginal density), and
* ``K[s', t]`` plays the role of ``K(s_t, s')`` in the continuous estimator.

``K`` must be doubly stochastic: columns summing to one is the discrete analogue
of a kernel integrating to one, and rows summing to one make ``phi`` a proper
random variable, which the bias and variance decompositions rely on.

Derivatives are checked against complex-step differentiation, which is exact to
machine precision and shares no code with the analytic score formulas.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence

import numpy as np

_NORM_TOL = 1e-12


class SupportViolationError(ValueError):
    """The target policy puts mass on a neighborhood the logging policy never reaches."""


def _safe_div(num, den):
    den = np.asarray(den, dtype=float)
    num = np.asarray(num)
    shape = np.broadcast(num, den).shape
    out = np.zeros(shape, dtype=np.result_type(num, den))
    np.divide(num, den, out=out, where=np.broadcast_to(den != 0, shape))
    return out


def softmax_vec(theta):
    """Softmax that also works on complex inputs (for complex-step derivatives)."""
    z = theta - np.max(np.real(theta))
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True, eq=False)
class DiscreteInstance:
    p_x: np.ndarray  # (nx,)
    p_llm: np.ndarray  # (nx, na, ns)
    q: np.ndarray  # (nx, ns) expected reward of a sentence
    sigma2: np.ndarray  # (nx, ns) reward noise variance
    pi0: np.ndarray  # (nx, na)
    K: np.ndarray  # (ns, ns), K[s', t]
    theta: np.ndarray  # (na,)

    def __post_init__(self):
        nx, na, ns = self.p_llm.shape
        checks = {
            "p_x": (self.p_x.shape == (nx,), self.p_x.sum()),
            "pi0": (self.pi0.shape == (nx, na), self.pi0.sum(axis=1)),
            "p_llm": (True, self.p_llm.sum(axis=2)),
            "K columns": (self.K.shape == (ns, ns), self.K.sum(axis=0)),
            "K rows": (True, self.K.sum(axis=1)),
        }
        for name, (shape_ok, sums) in checks.items():
            if not shape_ok:
                raise ValueError(f"{name} has the wrong shape")
            if np.max(np.abs(np.asarray(sums) - 1.0)) > _NORM_TOL:
                raise ValueError(f"{name} must sum to 1 (within {_NORM_TOL})")
        for name in ("p_x", "p_llm", "pi0", "K", "sigma2"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} has negative entries")
        if self.q.shape != (nx, ns) or self.sigma2.shape != (nx, ns) or self.theta.shape != (na,):
            raise ValueError("q, sigma2 or theta has the wrong shape")

    @property
    def n_contexts(self) -> int:
        return self.p_llm.shape[0]

    @property
    def n_actions(self) -> int:
        return self.p_llm.shape[1]

    @property
    def n_sentences(self) -> int:
        return self.p_llm.shape[2]

    def with_theta(self, theta) -> "DiscreteInstance":
        return replace(self, theta=np.asarray(theta, dtype=float))

    def action_rewards(self) -> np.ndarray:
        """``q(x, a) = sum_s p_llm(s|x,a) q(x, s)``: ``(nx, na)``."""
        return np.einsum("xas,xs->xa", self.p_llm, self.q)

    def marginal_density(self, policy_probs=None) -> np.ndarray:
        """``pi(phi_t | x)`` for the logging policy (default) or given ``(nx, na)`` probabilities."""
        P = self.pi0 if policy_probs is None else policy_probs
        return np.einsum("xa,xas,st->xt", P, self.p_llm, self.K)


def _doubly_stochastic_kernel(ns, rng, n_perm=3):
    weights = rng.dirichlet(np.ones(n_perm + 1))
    K = weights[0] * np.eye(ns)
    for w in weights[1:]:
        P = np.eye(ns)[rng.permutation(ns)]
        K = K + w * 0.5 * (P + P.T)
    return K


def random_instance(
    rng=None,
    n_contexts: int = 3,
    n_actions: int = 4,
    n_sentences: int = 5,
    kernel: str = "random",
    llm: str = "dirichlet",
) -> DiscreteInstance:
    """Random instance; ``kernel`` in {random, identity}, ``llm`` in {dirichlet, deterministic, disjoint}.

    ``disjoint`` gives every sentence a single producing action (needs
    ``n_sentences >= n_actions``); ``deterministic`` maps each ``(x, a)`` to one sentence.
    """
    rng = np.random.default_rng(rng)
    nx, na, ns = n_contexts, n_actions, n_sentences
    p_x = rng.dirichlet(np.ones(nx))
    if llm == "dirichlet":
        p_llm = rng.dirichlet(np.ones(ns), size=(nx, na))
    elif llm == "deterministic":
        p_llm = np.zeros((nx, na, ns))
        for x in range(nx):
            p_llm[x, np.arange(na), rng.integers(0, ns, size=na)] = 1.0
    elif llm == "disjoint":
        if ns < na:
            raise ValueError("disjoint supports need at least as many sentences as actions")
        owner = np.arange(ns) % na
        p_llm = np.zeros((nx, na, ns))
        for x in range(nx):
            for a in range(na):
                mine = np.flatnonzero(owner == a)
                p_llm[x, a, mine] = rng.dirichlet(np.ones(mine.size))
    else:
        raise ValueError(f"unknown llm mode {llm!r}")
    q = rng.uniform(-1.0, 1.0, size=(nx, ns))
    sigma2 = rng.uniform(0.0, 1.0, size=(nx, ns))
    pi0 = rng.dirichlet(np.ones(na), size=nx)
    if kernel == "random":
        K = _doubly_stochastic_kernel(ns, rng)
    elif kernel == "identity":
        K = np.eye(ns)
    else:
        raise ValueError(f"unknown kernel mode {kernel!r}")
    theta = rng.standard_normal(na)
    return DiscreteInstance(p_x, p_llm, q, sigma2, pi0, K, theta)


# ---------------------------------------------------------------------------
# per-context building blocks
# ---------------------------------------------------------------------------


@dataclass
class _Ctx:
    pt: np.ndarray  # pi_theta(a)
    p0: np.ndarray  # pi_0(a|x)
    S_a: np.ndarray  # (na, na) score of each action (rows)
    pis_t: np.ndarray  # pi_theta(s|x)
    pis_0: np.ndarray
    pphi_t: np.ndarray  # pi_theta(phi_t|x)
    pphi_0: np.ndarray
    post_t_s: np.ndarray  # pi_theta(a|x,s): (na, ns)
    post_t_phi: np.ndarray  # pi_theta(a|x,phi_t)
    post_0_phi: np.ndarray  # pi_0(a|x,phi_t)
    score_s: np.ndarray  # grad log pi_theta(s|x): (ns, na)
    score_phi: np.ndarray  # grad log pi_theta(phi_t|x)
    gbar0: np.ndarray  # E_{pi_0(a|x,phi_t)}[score_a]
    w_a: np.ndarray
    w_phi: np.ndarray
    q: np.ndarray
    sigma2: np.ndarray
    K: np.ndarray


def _context(inst: DiscreteInstance, x: int, theta) -> _Ctx:
    pt = softmax_vec(np.asarray(theta, dtype=float))
    p0 = inst.pi0[x]
    L = inst.p_llm[x]
    K = inst.K
    S_a = np.eye(len(pt)) - pt[None, :]
    LK = L @ K
    pis_t, pis_0 = pt @ L, p0 @ L
    pphi_t, pphi_0 = pt @ LK, p0 @ LK
    post_t_s = _safe_div(pt[:, None] * L, pis_t[None, :])
    post_t_phi = _safe_div(pt[:, None] * LK, pphi_t[None, :])
    post_0_phi = _safe_div(p0[:, None] * LK, pphi_0[None, :])
    return _Ctx(
        pt, p0, S_a, pis_t, pis_0, pphi_t, pphi_0, post_t_s, post_t_phi, post_0_phi,
        post_t_s.T @ S_a, post_t_phi.T @ S_a, post_0_phi.T @ S_a,
        _safe_div(pt, p0), _safe_div(pphi_t, pphi_0), inst.q[x], inst.sigma2[x], K,
    )


def _theta(inst, theta):
    return inst.theta if theta is None else np.asarray(theta, dtype=float)


def check_support(inst: DiscreteInstance, theta=None) -> None:
    """Raise if ``pi_theta(phi|x) > 0`` while ``pi_0(phi|x) = 0`` for some ``(x, phi)``."""
    theta = _theta(inst, theta)
    for x in range(inst.n_contexts):
        c = _context(inst, x, theta)
        bad = np.flatnonzero((c.pphi_t > 0) & (c.pphi_0 <= 0))
        if bad.size:
            raise SupportViolationError(
                f"similar sentence support fails at context x={x}, neighborhood phi(s={int(bad[0])})"
            )


def complex_step_gradient(f, theta, h: float = 1e-30) -> np.ndarray:
    """``grad f(theta)`` by the complex step ``Im f(theta + i h e_k) / h``."""
    theta = np.asarray(theta, dtype=float)
    out = np.empty(theta.size)
    for k in range(theta.size):
        t = theta.astype(complex)
        t[k] += 1j * h
        out[k] = np.imag(f(t)) / h
    return out


# ---------------------------------------------------------------------------
# exact gradients and expectations
# ---------------------------------------------------------------------------


def policy_value(inst: DiscreteInstance, theta=None):
    """``V(theta) = sum_x p(x) sum_a pi_theta(a) q(x, a)``; accepts complex ``theta``."""
    pt = softmax_vec(inst.theta if theta is None else np.asarray(theta))
    return np.sum(inst.p_x * (inst.action_rewards() @ pt))


def true_gradient(inst: DiscreteInstance, theta=None) -> np.ndarray:
    """``sum_{x,a,s} p(x) pi(a) p(s|x,a) score(a) q(x, s)``."""
    theta = _theta(inst, theta)
    pt = softmax_vec(theta)
    S_a = np.eye(len(pt)) - pt[None, :]
    qa = inst.action_rewards()
    return np.einsum("x,a,xa,ak->k", inst.p_x, pt, qa, S_a)


def is_expectation(inst: DiscreteInstance, theta=None) -> np.ndarray:
    """Exact expectation of the action-IS gradient (no clipping); actions with ``pi_0 = 0`` are never logged."""
    theta = _theta(inst, theta)
    pt = softmax_vec(theta)
    S_a = np.eye(len(pt)) - pt[None, :]
    qa = inst.action_rewards()
    w = _safe_div(pt[None, :], inst.pi0)
    return np.einsum("x,xa,xa,xa,ak->k", inst.p_x, inst.pi0, w, qa, S_a)


def dso_expectation(inst: DiscreteInstance, theta=None) -> np.ndarray:
    """Exact expectation of the DSO gradient over logged data and augmentation (no clipping).

    The augmentation average equals ``w(phi(s)) grad log pi_theta(phi(s))`` exactly,
    so this is ``sum_x p(x) sum_s pi_0(s|x) w(phi_s) g_phi(s) q(x, s)``.
    """
    theta = _theta(inst, theta)
    out = np.zeros(inst.n_actions)
    for x in range(inst.n_contexts):
        c = _context(inst, x, theta)
        out += inst.p_x[x] * np.einsum("s,s,sk,s->k", c.pis_0, c.w_phi, c.score_phi, c.q)
    return out


def dso_expectation_sampled_form(inst: DiscreteInstance, theta=None) -> np.ndarray:
    """The same expectation written with the augmentation draw made explicit."""
    theta = _theta(inst, theta)
    out = np.zeros(inst.n_actions)
    for x in range(inst.n_contexts):
        c = _context(inst, x, theta)
        L = inst.p_llm[x]
        for t in range(inst.n_sentences):  # logged sentence
            if c.pis_0[t] == 0:
                continue
            # E_{a ~ pi_theta, s' ~ p(.|x,a)}[K(s_t, s') score(a)] / pi_0(phi_t)
            aug = np.einsum("a,as,s,ak->k", c.pt, L, c.K[:, t], c.S_a) / c.pphi_0[t]
            out += inst.p_x[x] * c.pis_0[t] * aug * c.q[t]
    return out


@dataclass(frozen=True)
class BiasTerms:
    reward_shift: np.ndarray
    weighted_score_shift: np.ndarray
    score_shift: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.reward_shift + self.weighted_score_shift + self.score_shift


def thm1_bias_terms(inst: DiscreteInstance, theta=None) -> BiasTerms:
    """The three bias terms of DSO; their sum is ``dso_expectation - true_gradient``.

    * reward shift: ``E_{pi_theta(phi)}[g_phi (q^{pi_0}(phi) - q^{pi_theta}(phi))]``
    * weighted-score shift: ``E_{pi_0(phi) pi_0(s'|phi)}[(w(phi(s')) g(phi(s')) - w(phi) g(phi)) q(s')]``
    * score shift: ``E_{pi_theta(phi) pi_theta(s'|phi)}[(g(phi) - g(s')) q(s')]``
    """
    theta = _theta(inst, theta)
    check_support(inst, theta)
    t1 = np.zeros(inst.n_actions)
    t2 = np.zeros(inst.n_actions)
    t3 = np.zeros(inst.n_actions)
    for x in range(inst.n_contexts):
        c = _context(inst, x, theta)
        K = c.K
        q_pi0 = _safe_div((c.pis_0 * c.q) @ K, c.pphi_0)
        q_pit = _safe_div((c.pis_t * c.q) @ K, c.pphi_t)
        t1 += inst.p_x[x] * np.einsum("t,tk,t->k", c.pphi_t, c.score_phi, q_pi0 - q_pit)
        wg = c.w_phi[:, None] * c.score_phi  # (ns, na)
        diff2 = wg[:, None, :] - wg[None, :, :]  # [s', t, k]
        t2 += inst.p_x[x] * np.einsum("u,ut,utk,u->k", c.pis_0, K, diff2, c.q)
        diff3 = c.score_phi[None, :, :] - c.score_s[:, None, :]  # [s', t, k]
        t3 += inst.p_x[x] * np.einsum("u,ut,utk,u->k", c.pis_t, K, diff3, c.q)
    return BiasTerms(t1, t2, t3)


@dataclass(frozen=True)
class VarianceTerms:
    """Per-context (rows) coordinatewise quantities for the single-sample summands."""

    is_variance: np.ndarray  # (nx, na)
    dso_variance: np.ndarray  # (nx, na): Var_s(w g q) + E[w^2 g^2 sigma^2]
    dso_variance_direct: np.ndarray  # (nx, na): E[Z^2] - E[Z]^2
    weight_variance_action: np.ndarray  # (nx,)
    weight_variance_neighborhood: np.ndarray  # (nx,)
    weight_reduction: np.ndarray  # (nx,): E_{pi_0(phi)}[Var_{pi_0(a|phi)}(w(a))]
    score_variance_action: np.ndarray  # (nx, na)
    score_variance_neighborhood: np.ndarray  # (nx, na)
    score_reduction: np.ndarray  # (nx, na): E_{pi_0(phi)}[Var_{pi_0(a|phi)}(score(a))]
    weight_mean_residual: float  # max |w(phi) - E_{pi_0(a|phi)}[w(a)]|


def _var(p, v):
    """Variance of ``v`` (rows, trailing coordinates) under weights ``p``."""
    v = np.asarray(v)
    m = np.tensordot(p, v, axes=(0, 0))
    return np.tensordot(p, v * v, axes=(0, 0)) - m * m


def thm2_variance_terms(inst: DiscreteInstance, theta=None) -> VarianceTerms:
    theta = _theta(inst, theta)
    check_support(inst, theta)
    nx, na = inst.n_contexts, inst.n_actions
    out = {k: [] for k in VarianceTerms.__dataclass_fields__ if k != "weight_mean_residual"}
    resid = 0.0
    for x in range(nx):
        c = _context(inst, x, theta)
        L = inst.p_llm[x]
        # action IS summand Z = w(a) score(a) r
        pas = c.p0[:, None] * L  # (na, ns)
        mean_is = np.einsum("as,a,ak,s->k", pas, c.w_a, c.S_a, c.q)
        m2_is = np.einsum("as,a,ak,s->k", pas, c.w_a**2, c.S_a**2, c.q**2 + c.sigma2)
        out["is_variance"].append(m2_is - mean_is**2)
        # DSO summand Z = w(phi_s) g_phi(s) r
        wg = c.w_phi[:, None] * c.score_phi
        mean = np.einsum("s,sk,s->k", c.pis_0, wg, c.q)
        m2 = np.einsum("s,sk,s->k", c.pis_0, wg**2, c.q**2 + c.sigma2)
        out["dso_variance_direct"].append(m2 - mean**2)
        out["dso_variance"].append(_var(c.pis_0, wg * c.q[:, None]) + np.einsum("s,sk,s->k", c.pis_0, wg**2, c.sigma2))
        # weight reduction
        out["weight_variance_action"].append(_var(c.p0, c.w_a))
        out["weight_variance_neighborhood"].append(_var(c.pphi_0, c.w_phi))
        within_w = np.array([_var(c.post_0_phi[:, t], c.w_a) for t in range(inst.n_sentences)])
        out["weight_reduction"].append(c.pphi_0 @ within_w)
        live = c.pphi_0 > 0
        resid = max(resid, float(np.max(np.abs(c.w_phi[live] - (c.post_0_phi.T @ c.w_a)[live]), initial=0.0)))
        # score reduction, with the neighborhood-level score averaged under pi_0(a|x, phi)
        out["score_variance_action"].append(_var(c.p0, c.S_a))
        out["score_variance_neighborhood"].append(_var(c.pphi_0, c.gbar0))
        within_g = np.array([_var(c.post_0_phi[:, t], c.S_a) for t in range(inst.n_sentences)])
        out["score_reduction"].append(c.pphi_0 @ within_g)
    arrays = {k: np.array(v) for k, v in out.items()}
    return VarianceTerms(weight_mean_residual=resid, **arrays)


# ---------------------------------------------------------------------------
# identities in sentence space
# ---------------------------------------------------------------------------


def _log_sentence_prob(inst, x, s, kernel: bool):
    L = inst.p_llm[x] @ inst.K if kernel else inst.p_llm[x]

    def f(theta):
        return np.log(softmax_vec(theta) @ L[:, s])

    return f


def score_identity_residual(inst: DiscreteInstance, theta=None) -> float:
    """Max gap between ``E_{pi_theta(a|x,s)}[score(a)]`` and a complex-step ``grad log pi_theta(s|x)``.

    Checked for sentences and for kernel neighborhoods alike.
    """
    theta = _theta(inst, theta)
    worst = 0.0
    for x in range(inst.n_contexts):
        c = _context(inst, x, theta)
        for s in range(inst.n_sentences):
            if c.pis_t[s] > 0:
                ref = complex_step_gradient(_log_sentence_prob(inst, x, s, False), theta)
                worst = max(worst, float(np.max(np.abs(c.score_s[s] - ref))))
            if c.pphi_t[s] > 0:
                ref = complex_step_gradient(_log_sentence_prob(inst, x, s, True), theta)
                worst = max(worst, float(np.max(np.abs(c.score_phi[s] - ref))))
    return worst


def weight_identity_residual(inst: DiscreteInstance, theta=None) -> float:
    """Max gap in ``w(phi, x) = E_{pi_0(a|x,phi)}[w(a, x)]``."""
    theta = _theta(inst, theta)
    worst = 0.0
    for x in range(inst.n_contexts):
        c = _context(inst, x, theta)
        live = c.pphi_0 > 0
        worst = max(worst, float(np.max(np.abs(c.w_phi - c.post_0_phi.T @ c.w_a)[live], initial=0.0)))
    return worst


def weighted_score_identity_residual(inst: DiscreteInstance, theta=None) -> float:
    """Max gap between the augmentation form ``E_{pi_theta(a) p(s'|a)}[K score(a)] / pi_0(phi)``
    and ``w(phi) grad log pi_theta(phi)`` with the gradient taken by complex step."""
    theta = _theta(inst, theta)
    worst = 0.0
    for x in range(inst.n_contexts):
        c = _context(inst, x, theta)
        L = inst.p_llm[x]
        for t in range(inst.n_sentences):
            if c.pphi_0[t] <= 0:
                continue
            sampled = np.einsum("a,as,s,ak->k", c.pt, L, c.K[:, t], c.S_a) / c.pphi_0[t]
            ref = c.w_phi[t] * complex_step_gradient(_log_sentence_prob(inst, x, t, True), theta)
            worst = max(worst, float(np.max(np.abs(sampled - ref))))
    return worst


# ---------------------------------------------------------------------------
# two-stage (cluster-level) policies
# ---------------------------------------------------------------------------


def _greedy(qhat_x, assignments, k):
    return np.array([np.flatnonzero(assignments == c)[np.argmax(qhat_x[assignments == c])] for c in range(k)])


def two_stage_value(inst: DiscreteInstance, theta1, assignments, qhat):
    """Value of the policy that picks cluster ``c ~ softmax(theta1)`` then the greedy ``qhat`` action."""
    assignments = np.asarray(assignments)
    k = int(assignments.max()) + 1
    p1 = softmax_vec(theta1)
    qa = inst.action_rewards()
    total = 0.0
    for x in range(inst.n_contexts):
        g = _greedy(qhat[x], assignments, k)
        total = total + inst.p_x[x] * (p1 @ qa[x, g])
    return total


def potec_expectation(inst: DiscreteInstance, theta1, assignments, qhat) -> np.ndarray:
    """Exact expectation of the cluster-level DR gradient (no clipping)."""
    assignments = np.asarray(assignments)
    k = int(assignments.max()) + 1
    theta1 = np.asarray(theta1, dtype=float)
    p1 = softmax_vec(theta1)
    S1 = np.eye(k) - p1[None, :]
    onehot = np.eye(k)[assignments]  # (na, k)
    out = np.zeros(k)
    for x in range(inst.n_contexts):
        p0c = inst.pi0[x] @ onehot
        w1 = _safe_div(p1, p0c)
        qa_true = inst.p_llm[x] @ inst.q[x]
        c_a = assignments
        resid = qa_true - qhat[x]  # E_s[r | x, a] - qhat(x, a)
        dr = np.einsum("a,a,ak,a->k", inst.pi0[x], w1[c_a], S1[c_a], resid)
        g = _greedy(qhat[x], assignments, k)
        reg = np.einsum("c,ck,c->k", p1, S1, qhat[x, g])
        out += inst.p_x[x] * (dr + reg)
    return out


# ---------------------------------------------------------------------------
# batch verification
# ---------------------------------------------------------------------------

IDENTITIES = (
    "thm1_bias",
    "thm2_variance",
    "thm2_weight_reduction",
    "thm2_score_reduction",
    "score_identity",
    "weight_identity",
    "weighted_score_identity",
    "is_unbiased",
    "true_gradient",
)


@dataclass
class TheoryReport:
    n_instances: int
    tol: float
    residuals: Dict[str, float] = field(default_factory=dict)
    min_reduction: float = 0.0
    seconds: float = 0.0

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0

    @property
    def passed(self) -> bool:
        return self.max_residual < self.tol and self.min_reduction >= -self.tol

    def lines(self):
        for name in IDENTITIES:
            r = self.residuals.get(name, float("nan"))
            yield f"{name:<26} max residual {r:.3e}  {'PASS' if r < self.tol else 'FAIL'}"
        yield f"{'reduction terms >= 0':<26} min value    {self.min_reduction:.3e}  {'PASS' if self.min_reduction >= -self.tol else 'FAIL'}"
        yield f"overall max residual {self.max_residual:.3e} over {self.n_instances} instances ({self.seconds:.2f}s)"


def instance_residuals(inst: DiscreteInstance) -> Dict[str, float]:
    def gap(a, b):
        return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))

    tg = true_gradient(inst)
    bias = thm1_bias_terms(inst)
    var = thm2_variance_terms(inst)
    return {
        "thm1_bias": gap(dso_expectation(inst), tg + bias.total),
        "thm2_variance": gap(var.dso_variance, var.dso_variance_direct),
        "thm2_weight_reduction": max(
            gap(var.weight_variance_action - var.weight_variance_neighborhood, var.weight_reduction),
            var.weight_mean_residual,
        ),
        "thm2_score_reduction": gap(var.score_variance_action - var.score_variance_neighborhood, var.score_reduction),
        "score_identity": score_identity_residual(inst),
        "weight_identity": weight_identity_residual(inst),
        "weighted_score_identity": max(
            weighted_score_identity_residual(inst), gap(dso_expectation_sampled_form(inst), dso_expectation(inst))
        ),
        "is_unbiased": gap(is_expectation(inst), tg),
        "true_gradient": gap(tg, complex_step_gradient(lambda t: policy_value(inst, t), inst.theta)),
    }


def verify_theory(n_instances: int = 50, tol: float = 1e-10, seed: int = 0, sizes: Optional[Sequence[int]] = None) -> TheoryReport:
    """Check every identity on ``n_instances`` seeded random instances."""
    start = time.perf_counter()
    report = TheoryReport(n_instances, tol)
    worst: Dict[str, float] = {k: 0.0 for k in IDENTITIES}
    min_red = np.inf
    nx, na, ns = sizes or (3, 4, 5)
    for i in range(n_instances):
        inst = random_instance(np.random.default_rng([seed, i]), nx, na, ns)
        for k, v in instance_residuals(inst).items():
            worst[k] = max(worst[k], v)
        var = thm2_variance_terms(inst)
        min_red = min(min_red, float(var.weight_reduction.min()), float(var.score_reduction.min()))
    report.residuals = worst
    report.min_reduction = float(min_red) if n_instances else 0.0
    report.seconds = time.perf_counter() - start
    return report
