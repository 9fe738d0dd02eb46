"""Stage-2 Gaussian process regression on embedded networks.

The response is modeled as y_i = f(x_i) + eps_i with eps_i ~ N(0, tau^{-1})
and f a zero-mean GP over the embedding summary x_i = (U_i, a_i, z_i). The
covariance between subjects i and i' is

    K(i, i') = psi_1 * exp(-psi_u E_u - psi_a E_a - psi_z E_z)

with squared distances E_u = ||U_i - U_i'||_F^2, E_a = (a_i - a_i')^2,
E_z = ||z_i - z_i'||^2. Hyperparameters are handled on the log scale,
theta = (log tau, log psi_1, log psi_u, log psi_a, log psi_z), so positivity
is automatic. Two fitting routes:

* :func:`fit_mle` minimizes the negative log marginal likelihood
  O(theta) = 0.5 log|K + tau^{-1} I| + 0.5 y^T (K + tau^{-1} I)^{-1} y
  by gradient descent with an Armijo-style backtracking line search.
* :func:`gibbs_sample` runs Metropolis-within-Gibbs over (tau, psi_1,
  psi_u, psi_a, psi_z, phi) where phi holds the GP function values at the
  training subjects; :func:`node_selection_sample` extends the sampler with
  per-node inclusion indicators beta and their prior weight pi_star.

Prediction (:func:`predict`) returns means with central 95% intervals:
Gaussian intervals from the conditional covariance in MLE mode, empirical
2.5/97.5 percentiles of posterior-predictive draws in MCMC mode.
"""

import hashlib
import json
import os
import warnings
from dataclasses import dataclass, asdict

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.stats import norm

from ._linalg import FactorizationError, chol_jitter, logdet_from_chol
from .embed import Embedding

Z975 = float(norm.ppf(0.975))

_PSI_NAMES = ("psi_u", "psi_a", "psi_z")


# ---------------------------------------------------------------------------
# types


@dataclass
class GpHyperparams:
    """Log-scale hyperparameter vector (log tau, log psi_1, log psi_u,
    log psi_a, log psi_z)."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if self.theta.shape != (5,):
            raise ValueError("theta must have 5 entries")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")

    @property
    def tau(self):
        return float(np.exp(self.theta[0]))

    @property
    def psi1(self):
        return float(np.exp(self.theta[1]))

    @property
    def psi_u(self):
        return float(np.exp(self.theta[2]))

    @property
    def psi_a(self):
        return float(np.exp(self.theta[3]))

    @property
    def psi_z(self):
        return float(np.exp(self.theta[4]))


@dataclass
class GpPriors:
    a_tau: float = 1.0
    b_tau: float = 1.0
    a_psi1: float = 1.0
    b_psi1: float = 1.0
    a_pi: float = 1.0
    b_pi: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value <= 0:
                raise ValueError("prior %s must be positive" % name)


@dataclass
class GibbsConfig:
    iterations: int = 2000
    burnin: int = 500
    proposal_sd: float = 0.01
    thin: int = 1

    def __post_init__(self):
        if self.iterations <= self.burnin:
            raise ValueError("iterations must exceed burn-in")
        if self.burnin < 0 or self.thin < 1 or self.proposal_sd <= 0:
            raise ValueError("invalid sampler configuration")


class TrainingSet:
    """Embedded training subjects with responses and cached distances."""

    def __init__(self, embeddings, y, z=None, subject_ids=None):
        if not embeddings:
            raise ValueError("training set is empty")
        self.embeddings = list(embeddings)
        self.y = np.asarray(y, dtype=np.float64).reshape(-1)
        n = len(self.embeddings)
        if self.y.shape[0] != n:
            raise ValueError("responses and embeddings differ in length")
        self.z = None if z is None else np.asarray(z, dtype=np.float64).reshape(n, -1)
        self.subject_ids = list(subject_ids) if subject_ids is not None else list(range(n))
        if len(self.subject_ids) != n:
            raise ValueError("subject_ids and embeddings differ in length")
        if len({float(emb.b) for emb in self.embeddings}) != 1:
            raise ValueError("embeddings disagree on the pinned value b")
        self.E_u, self.E_a, self.E_z = distance_matrices(self.embeddings, self.z)

    @property
    def n(self):
        return len(self.embeddings)

    @property
    def d(self):
        return self.embeddings[0].d

    @property
    def b(self):
        return float(self.embeddings[0].b)


@dataclass
class Chains:
    """Retained Gibbs draws; beta and pi_star only under node selection."""

    tau: np.ndarray
    psi1: np.ndarray
    psi_u: np.ndarray
    psi_a: np.ndarray
    psi_z: np.ndarray
    phi: np.ndarray
    beta: np.ndarray = None
    pi_star: np.ndarray = None
    accept_rates: dict = None

    @property
    def n_draws(self):
        return self.tau.shape[0]

    def inclusion_probabilities(self):
        if self.beta is None:
            raise ValueError("chain has no node-selection draws")
        return self.beta.mean(axis=0)


@dataclass
class MleFit:
    hyperparams: GpHyperparams
    trace: np.ndarray
    status: str  # converged | maxiter | line_search_underflow

    @property
    def objective(self):
        return float(self.trace[-1])

    @property
    def iterations(self):
        return int(self.trace.shape[0] - 1)


class GpModel:
    """Fitted stage-2 model: training set plus MLE estimate, and the
    posterior chains when fitted by MCMC."""

    def __init__(self, training, mode, mle_fit, priors=None, sampler=None,
                 chains=None, seed=None):
        if mode not in ("mle", "mcmc"):
            raise ValueError("mode must be 'mle' or 'mcmc'")
        if mode == "mcmc" and chains is None:
            raise ValueError("mcmc mode requires chains")
        self.training = training
        self.mode = mode
        self.mle_fit = mle_fit
        self.priors = priors
        self.sampler = sampler
        self.chains = chains
        self.seed = seed

    @property
    def theta_hat(self):
        return self.mle_fit.hyperparams


# ---------------------------------------------------------------------------
# distances and kernel


def distance_matrices(embeddings, z=None):
    """Pairwise squared distances (E_u, E_a, E_z) between subjects.

    E_u is the squared Frobenius distance between latent-scale matrices, E_a
    the squared intercept difference, E_z the squared Euclidean covariate
    distance (zero matrix when no covariates). All symmetric with an exactly
    zero diagonal.
    """
    n = len(embeddings)
    d = embeddings[0].d
    p = embeddings[0].p
    for emb in embeddings:
        if emb.d != d or emb.p != p:
            raise ValueError("all embeddings must share (p, d)")
    flat = np.stack([emb.U.ravel() for emb in embeddings])
    E_u = _sq_dists(flat)
    a = np.asarray([emb.a for emb in embeddings], dtype=np.float64)
    E_a = (a[:, None] - a[None, :]) ** 2
    np.fill_diagonal(E_a, 0.0)
    if z is None:
        E_z = np.zeros((n, n))
    else:
        z = np.asarray(z, dtype=np.float64).reshape(n, -1)
        E_z = _sq_dists(z)
    return E_u, E_a, E_z


def _sq_dists(X):
    # Direct differences: relative accuracy for near-duplicate rows, where the
    # Gram expansion loses everything to cancellation and can leave exp(-g*D)
    # indefinite once the fitted inverse lengthscale g gets large.
    diff = X[:, None, :] - X[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(out, 0.0)
    return out


def cross_distance_matrices(test_embeddings, train_embeddings, z_test=None, z_train=None):
    """Rectangular (m, n) squared-distance matrices between test and train."""
    d = train_embeddings[0].d
    for emb in test_embeddings:
        if emb.d != d or emb.p != train_embeddings[0].p:
            raise ValueError("test embeddings must share (p, d) with training")
    Ft = np.stack([emb.U.ravel() for emb in test_embeddings])
    Fr = np.stack([emb.U.ravel() for emb in train_embeddings])
    E_u = _cross_sq(Ft, Fr)
    at = np.asarray([e.a for e in test_embeddings])
    ar = np.asarray([e.a for e in train_embeddings])
    E_a = (at[:, None] - ar[None, :]) ** 2
    if z_train is None:
        E_z = np.zeros((len(test_embeddings), len(train_embeddings)))
    else:
        if z_test is None:
            raise ValueError("training has covariates but no test covariates given")
        zt = np.asarray(z_test, dtype=np.float64).reshape(len(test_embeddings), -1)
        zr = np.asarray(z_train, dtype=np.float64).reshape(len(train_embeddings), -1)
        E_z = _cross_sq(zt, zr)
    return E_u, E_a, E_z


def _cross_sq(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _theta_vec(theta):
    if isinstance(theta, GpHyperparams):
        return theta.theta
    return np.asarray(theta, dtype=np.float64).reshape(-1)


def kernel_matrix(theta, E_u, E_a, E_z, include_noise=False):
    """Composite squared-exponential-type kernel.

    K = exp(theta_2 - e^{theta_3} E_u - e^{theta_4} E_a - e^{theta_5} E_z),
    plus e^{-theta_1} I when ``include_noise``. The noiseless diagonal equals
    psi_1 exactly (distances have zero diagonals).
    """
    t = _theta_vec(theta)
    with np.errstate(over="ignore", under="ignore"):
        expo = t[1] - np.exp(t[2]) * E_u - np.exp(t[3]) * E_a - np.exp(t[4]) * E_z
        K = np.exp(expo)
        if include_noise:
            K = K + np.exp(-t[0]) * np.eye(K.shape[0])
    return K


def neg_log_likelihood(theta, y, E_u, E_a, E_z):
    """0.5 log|K| + 0.5 y^T K^{-1} y with K = kernel + noise, via Cholesky."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    K = kernel_matrix(theta, E_u, E_a, E_z, include_noise=True)
    if not np.all(np.isfinite(K)):
        raise FactorizationError("kernel matrix is not finite")
    L, _ = chol_jitter(K)
    w = solve_triangular(L, y, lower=True)
    return 0.5 * logdet_from_chol(L) + 0.5 * float(w @ w)


def gradient(theta, y, E_u, E_a, E_z):
    """Analytic gradient of :func:`neg_log_likelihood` in theta.

    dO/dtheta_j = 0.5 tr[(K^{-1} - alpha alpha^T) dK/dtheta_j] with
    alpha = K^{-1} y; dK/dtheta_1 = -e^{-theta_1} I, dK/dtheta_2 = noiseless
    part, dK/dtheta_j = noiseless ⊙ (-e^{theta_j} E) for the lengthscales.
    """
    t = _theta_vec(theta)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = y.shape[0]
    Kn = kernel_matrix(t, E_u, E_a, E_z, include_noise=False)
    K = Kn + np.exp(-t[0]) * np.eye(n)
    if not np.all(np.isfinite(K)):
        raise FactorizationError("kernel matrix is not finite")
    L, _ = chol_jitter(K)
    alpha = cho_solve((L, True), y)
    Kinv = cho_solve((L, True), np.eye(n))
    M = Kinv - np.outer(alpha, alpha)
    grad = np.empty(5)
    grad[0] = -0.5 * np.exp(-t[0]) * float(np.trace(M))
    grad[1] = 0.5 * float(np.sum(M * Kn))
    for j, E in ((2, E_u), (3, E_a), (4, E_z)):
        grad[j] = -0.5 * np.exp(t[j]) * float(np.sum(M * (Kn * E)))
    return grad


# ---------------------------------------------------------------------------
# MLE route


def _default_init(E_u, E_a, E_z):
    # lengthscale rates at 1/median squared distance; unit noise and signal
    theta = np.zeros(5)
    for j, E in ((2, E_u), (3, E_a), (4, E_z)):
        off = E[np.triu_indices(E.shape[0], k=1)]
        med = float(np.median(off)) if off.size else 0.0
        if med > 0:
            theta[j] = -np.log(med)
    return theta


def fit_mle(y, E_u, E_a, E_z, init=None, maxiter=1000, tol=1e-8):
    """Gradient descent with backtracking (Armijo-style) line search.

    The step size starts at 1, grows by 1.5 after every accepted step, and
    halves until the objective decreases otherwise. Stops when an accepted
    step changes the objective by less than ``tol``, at ``maxiter``, or with
    status "line_search_underflow" if the step size drops below 1e-12
    without finding a decrease.

    Returns
    -------
    MleFit
        Log-scale estimate, objective trace (one entry per accepted step,
        leading with the initial objective), and a status string.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise ValueError("responses must be finite")

    def objective(t):
        try:
            return neg_log_likelihood(t, y, E_u, E_a, E_z)
        except FactorizationError:
            return np.inf

    theta = _default_init(E_u, E_a, E_z) if init is None else _theta_vec(init).copy()
    f = objective(theta)
    if not np.isfinite(f):
        raise FactorizationError("objective not finite at the starting point")
    trace = [f]
    lr = 1.0
    status = "maxiter"
    for _ in range(maxiter):
        df = gradient(theta, y, E_u, E_a, E_z)
        cand = theta - lr * df
        f_cand = objective(cand)
        if f_cand < f:
            theta = cand
            lr *= 1.5
        else:
            underflow = False
            while f_cand >= f:
                lr *= 0.5
                if lr < 1e-12:
                    underflow = True
                    break
                cand = theta - lr * df
                f_cand = objective(cand)
            if underflow:
                status = "line_search_underflow"
                warnings.warn("line search underflow; returning current point")
                break
            theta = cand
        trace.append(f_cand)
        if abs(f - f_cand) < tol:
            f = f_cand
            status = "converged"
            break
        f = f_cand
    return MleFit(GpHyperparams(theta), np.asarray(trace), status)


# ---------------------------------------------------------------------------
# Gibbs route


def _e0_matrix(psi_u, psi_a, psi_z, E_u, E_a, E_z):
    # correlation part of the kernel: unit diagonal
    with np.errstate(under="ignore"):
        return np.exp(-psi_u * E_u - psi_a * E_a - psi_z * E_z)


def _draw_tau(rng, y, phi, a_tau, b_tau):
    """Conjugate noise-precision draw: Gamma(a + n/2, rate b + 0.5||y-phi||^2)."""
    shape = a_tau + 0.5 * y.shape[0]
    rate = b_tau + 0.5 * float(np.sum((y - phi) ** 2))
    return float(rng.gamma(shape, 1.0 / rate))


def _draw_psi1(rng, phi, L0, a_psi1, b_psi1):
    """Conjugate scale draw: InvGamma(a + n/2, b + 0.5 phi^T E0^{-1} phi)."""
    w = solve_triangular(L0, phi, lower=True)
    shape = a_psi1 + 0.5 * phi.shape[0]
    rate = b_psi1 + 0.5 * float(w @ w)
    return float(rate / rng.gamma(shape, 1.0))


def _marginal_loglik(y, psi1, tau, E0):
    """log N(y | 0, psi1 E0 + tau^{-1} I) up to an additive constant."""
    C = psi1 * E0 + (1.0 / tau) * np.eye(y.shape[0])
    L, _ = chol_jitter(C)
    w = solve_triangular(L, y, lower=True)
    return -0.5 * logdet_from_chol(L) - 0.5 * float(w @ w)


def _draw_atoms(rng, y, tau, psi1, L0):
    """Draw phi ~ N(tau P^{-1} y, P^{-1}), P = psi1^{-1} E0^{-1} + tau I.

    Uses only factorizations: with E0 = L0 L0^T and
    M = psi1^{-1} I + tau L0^T L0, P^{-1} = L0 M^{-1} L0^T.
    """
    n = y.shape[0]
    M = (1.0 / psi1) * np.eye(n) + tau * (L0.T @ L0)
    LM, _ = chol_jitter(M)
    mean = tau * (L0 @ cho_solve((LM, True), L0.T @ y))
    z = rng.standard_normal(n)
    return mean + L0 @ solve_triangular(LM.T, z, lower=False)


def _inclusion_probability(pi_star, loglik_in, loglik_out):
    """P(beta_j = 1) = pi L1 / (pi L1 + (1-pi) L0), computed stably in logs."""
    if pi_star <= 0.0:
        return 0.0
    if pi_star >= 1.0:
        return 1.0
    with np.errstate(over="ignore"):
        ratio = np.exp(loglik_out - loglik_in)  # L0 / L1
    return float(1.0 / (1.0 + (1.0 - pi_star) / pi_star * ratio))


def node_distance_stacks(embeddings):
    """Per-node decomposition of E_u: D[j](i,i') = ||u_{ij} - u_{i'j}||^2.

    Summing D[j] over nodes j gives the full squared Frobenius distance, so
    zeroing node j's rows in every subject subtracts exactly D[j].
    """
    n = len(embeddings)
    p = embeddings[0].p
    rows = np.stack([emb.U for emb in embeddings])  # (n, p, d)
    D = np.empty((p, n, n))
    for j in range(p):
        D[j] = _sq_dists(np.ascontiguousarray(rows[:, j, :]))
    return D


def gibbs_sample(y, E_u, E_a, E_z, priors=None, config=None, init=None, rng=None):
    """Metropolis-within-Gibbs over (tau, psi_1, psi_u, psi_a, psi_z, phi).

    Each iteration, in order: conjugate Gamma draw of tau given the atoms;
    conjugate inverse-Gamma draw of psi_1; one log-normal random-walk
    Metropolis update per lengthscale rate, accepted with the marginal
    likelihood ratio (the proposal is symmetric on the log scale, so no
    correction term); a joint Gaussian draw of the atoms phi. Starts at the
    MLE (computed internally when ``init`` is omitted) with phi at its
    conditional mean.

    A proposal whose correlation matrix cannot be factorized even with
    jitter is rejected outright.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if init is None:
        init = fit_mle(y, E_u, E_a, E_z).hyperparams
    return _run_gibbs(y, E_u, E_a, E_z, priors or GpPriors(), config or GibbsConfig(),
                      init, rng or np.random.default_rng(0), node_ctx=None)


def node_selection_sample(y, embeddings, z=None, priors=None, config=None,
                          init=None, rng=None):
    """Gibbs sampling with per-node inclusion indicators.

    Extends :func:`gibbs_sample`: after the atoms update, each node indicator
    beta_j is redrawn from its Bernoulli conditional, comparing the marginal
    likelihood with node j's latent rows included versus zeroed (evaluated
    through the per-node distance decomposition), and the inclusion weight
    pi_star is redrawn from its Beta conditional. E_u always reflects the
    current beta.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    E_u, E_a, E_z = distance_matrices(embeddings, z)
    D = node_distance_stacks(embeddings)
    if init is None:
        init = fit_mle(y, E_u, E_a, E_z).hyperparams
    return _run_gibbs(y, E_u, E_a, E_z, priors or GpPriors(), config or GibbsConfig(),
                      init, rng or np.random.default_rng(0), node_ctx=D)


def _run_gibbs(y, E_u, E_a, E_z, priors, config, init, rng, node_ctx):
    n = y.shape[0]
    tau = init.tau
    psi1 = init.psi1
    log_psi = np.array([init.theta[2], init.theta[3], init.theta[4]])

    select = node_ctx is not None
    if select:
        D = node_ctx
        p = D.shape[0]
        beta = np.ones(p, dtype=np.int64)
        pi_star = priors.a_pi / (priors.a_pi + priors.b_pi)
        E_u_cur = D.sum(axis=0)
    else:
        E_u_cur = E_u

    psis = np.exp(log_psi)
    E0 = _e0_matrix(psis[0], psis[1], psis[2], E_u_cur, E_a, E_z)
    L0, _ = chol_jitter(E0)
    # atoms start at their conditional mean under the initial hyperparameters
    M = (1.0 / psi1) * np.eye(n) + tau * (L0.T @ L0)
    LM, _ = chol_jitter(M)
    phi = tau * (L0 @ cho_solve((LM, True), L0.T @ y))

    n_keep = (config.iterations - config.burnin + config.thin - 1) // config.thin
    out = {name: np.empty(n_keep) for name in ("tau", "psi1", "psi_u", "psi_a", "psi_z")}
    phi_draws = np.empty((n_keep, n))
    beta_draws = np.empty((n_keep, p), dtype=np.int64) if select else None
    pi_draws = np.empty(n_keep) if select else None
    accept = np.zeros(3)
    kept = 0

    for it in range(config.iterations):
        tau = _draw_tau(rng, y, phi, priors.a_tau, priors.b_tau)
        psi1 = _draw_psi1(rng, phi, L0, priors.a_psi1, priors.b_psi1)

        cur_ll = _marginal_loglik(y, psi1, tau, E0)
        changed = False
        for idx in range(3):
            cand = log_psi.copy()
            cand[idx] += config.proposal_sd * rng.standard_normal()
            c = np.exp(cand)
            try:
                E0_cand = _e0_matrix(c[0], c[1], c[2], E_u_cur, E_a, E_z)
                cand_ll = _marginal_loglik(y, psi1, tau, E0_cand)
            except FactorizationError:
                continue
            if np.log(rng.uniform()) < cand_ll - cur_ll:
                log_psi = cand
                E0 = E0_cand
                cur_ll = cand_ll
                accept[idx] += 1
                changed = True
        if changed:
            L0, _ = chol_jitter(E0)
        psis = np.exp(log_psi)

        phi = _draw_atoms(rng, y, tau, psi1, L0)

        if select:
            for j in range(p):
                base = E_u_cur - beta[j] * D[j]
                E0_out = _e0_matrix(psis[0], psis[1], psis[2], base, E_a, E_z)
                E0_in = _e0_matrix(psis[0], psis[1], psis[2], base + D[j], E_a, E_z)
                try:
                    ll_out = _marginal_loglik(y, psi1, tau, E0_out)
                    ll_in = _marginal_loglik(y, psi1, tau, E0_in)
                except FactorizationError:
                    continue  # keep beta[j]; E_u_cur already consistent
                prob = _inclusion_probability(pi_star, ll_in, ll_out)
                beta[j] = 1 if rng.uniform() < prob else 0
                E_u_cur = base + beta[j] * D[j]
            pi_star = float(rng.beta(priors.a_pi + beta.sum(), priors.b_pi + p - beta.sum()))
            E0 = _e0_matrix(psis[0], psis[1], psis[2], E_u_cur, E_a, E_z)
            L0, _ = chol_jitter(E0)

        if it >= config.burnin and (it - config.burnin) % config.thin == 0:
            out["tau"][kept] = tau
            out["psi1"][kept] = psi1
            out["psi_u"][kept] = psis[0]
            out["psi_a"][kept] = psis[1]
            out["psi_z"][kept] = psis[2]
            phi_draws[kept] = phi
            if select:
                beta_draws[kept] = beta
                pi_draws[kept] = pi_star
            kept += 1

    rates = {name: accept[i] / config.iterations for i, name in enumerate(_PSI_NAMES)}
    return Chains(
        tau=out["tau"], psi1=out["psi1"], psi_u=out["psi_u"], psi_a=out["psi_a"],
        psi_z=out["psi_z"], phi=phi_draws, beta=beta_draws, pi_star=pi_draws,
        accept_rates=rates,
    )


# ---------------------------------------------------------------------------
# prediction


def mle_predict(theta, y, E_u, E_a, E_z, Eu_x, Ea_x, Ez_x):
    """Plug-in GP prediction at the MLE with Gaussian 95% intervals.

    Mean K_* (K + tau^{-1} I)^{-1} y; variance from the conditional
    covariance diag(K_** + tau^{-1} I - K_* (K + tau^{-1} I)^{-1} K_*^T).
    """
    t = _theta_vec(theta)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    K = kernel_matrix(t, E_u, E_a, E_z, include_noise=True)
    Ks = kernel_matrix(t, Eu_x, Ea_x, Ez_x, include_noise=False)
    L, _ = chol_jitter(K)
    mean = Ks @ cho_solve((L, True), y)
    V = solve_triangular(L, Ks.T, lower=True)
    prior_var = np.exp(t[1]) + np.exp(-t[0])  # psi1 + tau^{-1}
    var = np.maximum(prior_var - np.sum(V * V, axis=0), 0.0)
    half = Z975 * np.sqrt(var)
    return mean, mean - half, mean + half


def mcmc_predict(chains, y, E_u, E_a, E_z, Eu_x, Ea_x, Ez_x, rng,
                 D_train=None, D_cross=None):
    """Posterior-predictive draws through the atoms representation.

    Per retained draw: y_* = K_* K^{-1} phi + N(0, tau^{-1}), with K the
    noiseless training kernel under that draw's hyperparameters (and node
    indicators, when present). Reports empirical mean and 2.5/97.5
    percentiles across draws.
    """
    m = Eu_x.shape[0]
    n_draws = chains.n_draws
    samples = np.empty((n_draws, m))
    select = chains.beta is not None
    if select and (D_train is None or D_cross is None):
        raise ValueError("node-selection chains require per-node distance stacks")
    for s in range(n_draws):
        if select:
            mask = chains.beta[s].astype(np.float64)
            Eu_s = np.tensordot(mask, D_train, axes=1)
            Eux_s = np.tensordot(mask, D_cross, axes=1)
        else:
            Eu_s, Eux_s = E_u, Eu_x
        psi1 = chains.psi1[s]
        E0 = _e0_matrix(chains.psi_u[s], chains.psi_a[s], chains.psi_z[s], Eu_s, E_a, E_z)
        C = psi1 * E0
        Ks = psi1 * _e0_matrix(chains.psi_u[s], chains.psi_a[s], chains.psi_z[s],
                               Eux_s, Ea_x, Ez_x)
        L, _ = chol_jitter(C)
        cond_mean = Ks @ cho_solve((L, True), chains.phi[s])
        samples[s] = cond_mean + rng.standard_normal(m) / np.sqrt(chains.tau[s])
    mean = samples.mean(axis=0)
    lower = np.percentile(samples, 2.5, axis=0)
    upper = np.percentile(samples, 97.5, axis=0)
    return mean, lower, upper


def predict(model, test_embeddings, z_test=None, rng=None):
    """Predict held-out responses from a fitted :class:`GpModel`.

    Returns (mean, lower95, upper95) arrays. Test embeddings must share the
    training latent dimension and pinned value.
    """
    train = model.training
    if not test_embeddings:
        return np.empty(0), np.empty(0), np.empty(0)
    for emb in test_embeddings:
        if emb.d != train.d:
            raise ValueError(
                "test embedding dimension %d differs from training %d" % (emb.d, train.d)
            )
        if emb.b != train.b:
            raise ValueError("test pinned value differs from training")
    Eu_x, Ea_x, Ez_x = cross_distance_matrices(
        test_embeddings, train.embeddings, z_test, train.z
    )
    if model.mode == "mle":
        return mle_predict(model.theta_hat, train.y, train.E_u, train.E_a,
                           train.E_z, Eu_x, Ea_x, Ez_x)
    if rng is None:
        rng = np.random.default_rng(0)
    D_train = D_cross = None
    if model.chains.beta is not None:
        D_train = node_distance_stacks(train.embeddings)
        D_cross = cross_node_distance_stacks(test_embeddings, train.embeddings)
    return mcmc_predict(model.chains, train.y, train.E_u, train.E_a, train.E_z,
                        Eu_x, Ea_x, Ez_x, rng, D_train, D_cross)


def cross_node_distance_stacks(test_embeddings, train_embeddings):
    """Per-node squared row distances between test and train subjects."""
    p = train_embeddings[0].p
    rows_t = np.stack([emb.U for emb in test_embeddings])
    rows_r = np.stack([emb.U for emb in train_embeddings])
    D = np.empty((p, rows_t.shape[0], rows_r.shape[0]))
    for j in range(p):
        D[j] = _cross_sq(np.ascontiguousarray(rows_t[:, j, :]),
                         np.ascontiguousarray(rows_r[:, j, :]))
    return D


# ---------------------------------------------------------------------------
# persistence


def chains_to_csv(chains, path):
    """One row per retained draw: tau, psi1, psi_u, psi_a, psi_z, phi_1..n
    (and beta_1..p, pi_star under node selection)."""
    n = chains.phi.shape[1]
    header = ["tau", "psi1", "psi_u", "psi_a", "psi_z"]
    header += ["phi_%d" % (i + 1) for i in range(n)]
    select = chains.beta is not None
    if select:
        header += ["beta_%d" % (j + 1) for j in range(chains.beta.shape[1])]
        header.append("pi_star")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for s in range(chains.n_draws):
            row = [repr(float(v)) for v in (chains.tau[s], chains.psi1[s],
                                            chains.psi_u[s], chains.psi_a[s],
                                            chains.psi_z[s])]
            row += [repr(float(v)) for v in chains.phi[s]]
            if select:
                row += [str(int(v)) for v in chains.beta[s]]
                row.append(repr(float(chains.pi_star[s])))
            fh.write(",".join(row) + "\n")


def chains_from_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    col = {name: i for i, name in enumerate(header)}
    n = sum(1 for h in header if h.startswith("phi_"))
    p = sum(1 for h in header if h.startswith("beta_"))
    phi0 = col["phi_1"]
    kwargs = dict(
        tau=data[:, col["tau"]], psi1=data[:, col["psi1"]],
        psi_u=data[:, col["psi_u"]], psi_a=data[:, col["psi_a"]],
        psi_z=data[:, col["psi_z"]], phi=data[:, phi0:phi0 + n],
    )
    if p:
        b0 = col["beta_1"]
        kwargs["beta"] = data[:, b0:b0 + p].astype(np.int64)
        kwargs["pi_star"] = data[:, col["pi_star"]]
    return Chains(**kwargs)


def training_hash(training):
    """Content hash of the training set (ids, embeddings, covariates, y)."""
    h = hashlib.sha256()
    h.update(json.dumps([str(s) for s in training.subject_ids]).encode())
    for emb in training.embeddings:
        h.update(np.ascontiguousarray(emb.U).tobytes())
        h.update(np.float64(emb.a).tobytes())
        h.update(np.float64(emb.b).tobytes())
    if training.z is not None:
        h.update(np.ascontiguousarray(training.z).tobytes())
    h.update(np.ascontiguousarray(training.y).tobytes())
    return "sha256:" + h.hexdigest()


def _chain_path(model_path):
    base = str(model_path)
    if base.endswith(".json"):
        base = base[: -len(".json")]
    return base + ".chains.csv"


def save_model(model, path, extra=None):
    """Persist a GpModel as JSON; MCMC chains go to a sibling CSV.

    The training set is embedded in full so prediction needs no other files;
    ``train_hash`` fingerprints it. ``extra`` lands under "meta" untouched
    (the CLI records its run configuration there).
    """
    training = model.training
    payload = {
        "mode": model.mode,
        "seed": model.seed,
        "theta_hat": [float(v) for v in model.theta_hat.theta],
        "mle": {
            "objective": model.mle_fit.objective,
            "iterations": model.mle_fit.iterations,
            "status": model.mle_fit.status,
            "trace": [float(v) for v in model.mle_fit.trace],
        },
        "train_hash": training_hash(training),
        "training": {
            "subject_ids": [str(s) for s in training.subject_ids],
            "p": int(training.embeddings[0].p),
            "d": int(training.d),
            "b": float(training.b),
            "a": [float(emb.a) for emb in training.embeddings],
            "U": [[float(v) for v in emb.U.ravel()] for emb in training.embeddings],
            "z": None if training.z is None else training.z.tolist(),
            "y": [float(v) for v in training.y],
        },
    }
    if model.priors is not None:
        payload["priors"] = asdict(model.priors)
    if model.sampler is not None:
        payload["sampler"] = asdict(model.sampler)
    if model.chains is not None:
        chain_path = _chain_path(path)
        chains_to_csv(model.chains, chain_path)
        payload["chain_file"] = os.path.basename(chain_path)
        payload["retained_draws"] = int(model.chains.n_draws)
        payload["accept_rates"] = model.chains.accept_rates
        payload["node_selection"] = model.chains.beta is not None
        payload["chain_summary"] = {
            name: {
                "mean": float(getattr(model.chains, name).mean()),
                "sd": float(getattr(model.chains, name).std(ddof=1)),
            }
            for name in ("tau", "psi1", "psi_u", "psi_a", "psi_z")
        }
        if model.chains.beta is not None:
            payload["inclusion_probabilities"] = [
                float(v) for v in model.chains.inclusion_probabilities()
            ]
    if extra is not None:
        payload["meta"] = extra
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_model(path):
    """Inverse of :func:`save_model`."""
    with open(path) as fh:
        payload = json.load(fh)
    tr = payload["training"]
    d = int(tr["d"])
    b = float(tr["b"])
    embeddings = [
        Embedding(a=float(a), U=np.asarray(flat, dtype=np.float64).reshape(-1, d), b=b)
        for a, flat in zip(tr["a"], tr["U"])
    ]
    training = TrainingSet(embeddings, np.asarray(tr["y"]), z=tr.get("z"),
                           subject_ids=tr["subject_ids"])
    mle = MleFit(
        GpHyperparams(np.asarray(payload["theta_hat"])),
        np.asarray(payload["mle"]["trace"], dtype=np.float64),
        payload["mle"]["status"],
    )
    priors = GpPriors(**payload["priors"]) if "priors" in payload else None
    sampler = GibbsConfig(**payload["sampler"]) if "sampler" in payload else None
    chains = None
    if payload.get("chain_file"):
        chain_path = os.path.join(os.path.dirname(os.path.abspath(path)),
                                  payload["chain_file"])
        chains = chains_from_csv(chain_path)
        chains.accept_rates = payload.get("accept_rates")
    return GpModel(training, payload["mode"], mle, priors=priors,
                   sampler=sampler, chains=chains, seed=payload.get("seed"))
