"""Synthetic data generation and baselines for the benchmark harness.

Scenario 1: per subject, an intercept a_i ~ N(0, intercept_sd^2) and latent
positions U_i (p x d0, iid standard normal) define edge probabilities
sigmoid(a_i + u_k . u_l); edges are independent Bernoulli draws. A single
active node set C (uniform ceil(S_p * p)-subset, shared by all subjects in
the dataset) drives the response:

    y_i = sum_{k<l, k,l in C} sin(pi_{i,kl} * eta_{i,kl}) + eps_i,

with eta ~ N(eta_mean, eta_sd^2) drawn per subject and pair and
eps ~ N(0, noise_sd^2). Responses are standardized by the training mean and
standard deviation. The response depends on the true probabilities, not the
sampled edges, so recovering it requires denoising the graphs.
"""

import math
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from . import gp
from .network import edge_vector_to_adjacency


@dataclass
class SimConfig:
    p: int
    d0: int
    s_p: float
    seed: int
    n_train: int = 50
    n_test: int = 50
    intercept_sd: float = 2.0
    eta_mean: float = 2.0
    eta_sd: float = 1.0
    noise_sd: float = 0.5

    def __post_init__(self):
        if self.p < 2 or self.d0 < 1:
            raise ValueError("need p >= 2 and d0 >= 1")
        if not 0.0 < self.s_p < 1.0:
            raise ValueError("sparsity s_p must be in (0, 1)")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("need at least one training and one test subject")
        if self.eta_sd < 0 or self.noise_sd < 0 or self.intercept_sd < 0:
            raise ValueError("standard deviations must be nonnegative")

    def to_dict(self):
        return asdict(self)


@dataclass
class SimDataset:
    networks: list  # adjacency matrices
    y: np.ndarray  # standardized responses
    y_raw: np.ndarray
    true_probs: np.ndarray  # (n, p(p-1)/2) edge probabilities
    active_nodes: np.ndarray
    split: list  # "train" / "test" per subject
    train_mean: float
    train_sd: float
    config: SimConfig = None

    @property
    def n(self):
        return len(self.networks)

    def train_indices(self):
        return [i for i, s in enumerate(self.split) if s == "train"]

    def test_indices(self):
        return [i for i, s in enumerate(self.split) if s == "test"]


@dataclass
class EvalReport:
    mse: float
    coverage: float
    width: float

    def to_dict(self):
        return asdict(self)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    t = np.exp(x[~pos])
    out[~pos] = t / (1.0 + t)
    return out


def generate_scenario1(cfg):
    """Draw one Scenario-1 dataset; bit-reproducible from cfg.seed.

    Per-subject draw order is fixed (intercept, latent matrix, edge uniforms,
    pair perturbations eta, response noise), so any prefix of subjects is
    stable under changes to later ones.
    """
    rng = np.random.default_rng(cfg.seed)
    p = cfg.p
    n = cfg.n_train + cfg.n_test
    c_size = math.ceil(cfg.s_p * p)
    if c_size < 2:
        raise ValueError(
            "active set has %d node(s); need >= 2 for any active pair" % c_size
        )
    active = np.sort(rng.choice(p, size=c_size, replace=False))
    iu = np.triu_indices(p, k=1)
    in_c = np.zeros(p, dtype=bool)
    in_c[active] = True
    pair_mask = in_c[iu[0]] & in_c[iu[1]]

    networks = []
    probs = np.empty((n, iu[0].size))
    y_raw = np.empty(n)
    for i in range(n):
        a_i = rng.normal(0.0, cfg.intercept_sd)
        U_i = rng.standard_normal((p, cfg.d0))
        pi = _sigmoid(a_i + (U_i @ U_i.T)[iu])
        edges = (rng.random(iu[0].size) < pi).astype(np.float64)
        networks.append(edge_vector_to_adjacency(edges, p))
        probs[i] = pi
        eta = rng.normal(cfg.eta_mean, cfg.eta_sd, size=int(pair_mask.sum()))
        eps = rng.normal(0.0, cfg.noise_sd)
        y_raw[i] = float(np.sum(np.sin(pi[pair_mask] * eta))) + eps

    mu = float(np.mean(y_raw[: cfg.n_train]))
    sd = float(np.std(y_raw[: cfg.n_train], ddof=1))
    if sd == 0.0:
        raise ValueError("training responses are constant; cannot standardize")
    y = (y_raw - mu) / sd
    split = ["train"] * cfg.n_train + ["test"] * cfg.n_test
    return SimDataset(
        networks=networks, y=y, y_raw=y_raw, true_probs=probs,
        active_nodes=active, split=split, train_mean=mu, train_sd=sd, config=cfg,
    )


def evaluate(predictions, intervals, truth):
    """Predictive MSE, interval coverage, and mean interval width.

    ``intervals`` is a (lower, upper) pair or None (methods without
    uncertainty quantification; coverage and width come back NaN).
    """
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if predictions.shape != truth.shape:
        raise ValueError("predictions and truth differ in length")
    mse = float(np.mean((predictions - truth) ** 2))
    if intervals is None:
        return EvalReport(mse=mse, coverage=float("nan"), width=float("nan"))
    lower = np.asarray(intervals[0], dtype=np.float64).reshape(-1)
    upper = np.asarray(intervals[1], dtype=np.float64).reshape(-1)
    if lower.shape != truth.shape or upper.shape != truth.shape:
        raise ValueError("interval bounds and truth differ in length")
    coverage = float(np.mean((lower <= truth) & (truth <= upper)))
    width = float(np.mean(upper - lower))
    return EvalReport(mse=mse, coverage=coverage, width=width)


# ---------------------------------------------------------------------------
# baselines on raw edge vectors


def _ridge_coef(Xc, yc, lam):
    n, q = Xc.shape
    if lam == 0.0:
        return np.linalg.lstsq(Xc, yc, rcond=None)[0]
    if q <= n:
        return np.linalg.solve(Xc.T @ Xc + lam * np.eye(q), Xc.T @ yc)
    # dual form: coefficients in the span of the rows
    return Xc.T @ np.linalg.solve(Xc @ Xc.T + lam * np.eye(n), yc)


def _ridge_fit_predict(X_train, y_train, X_test, lam):
    xm = X_train.mean(axis=0)
    ym = float(y_train.mean())
    coef = _ridge_coef(X_train - xm, y_train - ym, lam)
    return (X_test - xm) @ coef + ym


def ridge_baseline(X_train, y_train, X_test, lambdas=None, n_folds=5):
    """Ridge regression on edge vectors, intercept unpenalized via centering.

    The penalty is picked by deterministic k-fold cross-validation
    (contiguous-modulo folds) over a log-spaced grid, then the model is
    refitted on all training rows.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64).reshape(-1)
    if X_train.shape[0] != y_train.shape[0]:
        raise ValueError("X_train and y_train differ in length")
    if X_train.shape[1] != X_test.shape[1]:
        raise ValueError("train and test edge-vector lengths differ")
    if lambdas is None:
        lambdas = np.logspace(-3, 3, 13)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    n = X_train.shape[0]
    if len(lambdas) > 1:
        folds = np.arange(n) % min(n_folds, n)
        sse = np.zeros(len(lambdas))
        for f in range(int(folds.max()) + 1):
            hold = folds == f
            for i, lam in enumerate(lambdas):
                pred = _ridge_fit_predict(
                    X_train[~hold], y_train[~hold], X_train[hold], lam
                )
                sse[i] += float(np.sum((pred - y_train[hold]) ** 2))
        lam = float(lambdas[int(np.argmin(sse))])
    else:
        lam = float(lambdas[0])
    return _ridge_fit_predict(X_train, y_train, X_test, lam)


def pca_gpr_baseline(X_train, y_train, X_test, n_components=None):
    """GP regression on principal-component scores of the edge vectors.

    Training edges are centered and projected onto the leading right singular
    vectors; the GP from the gp module is fitted on score distances alone
    (one global lengthscale), giving the classical single-kernel GPR on a
    reduced linear representation. Returns (predictions, (lower, upper)).
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64).reshape(-1)
    n = X_train.shape[0]
    xm = X_train.mean(axis=0)
    Xc = X_train - xm
    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    rank = int(np.sum(S > S[0] * 1e-10)) if S.size and S[0] > 0 else 0
    if rank == 0:
        raise ValueError("training edge vectors have no variance")
    if n_components is None:
        var = S**2
        frac = np.cumsum(var) / float(var.sum())
        k = int(np.searchsorted(frac, 0.9) + 1)
        k = max(1, min(k, rank, max(n - 5, 1)))
    else:
        k = int(n_components)
        if k < 1:
            raise ValueError("n_components must be >= 1")
        if k > min(n, X_train.shape[1]):
            raise ValueError("n_components exceeds min(n_train, edge dimension)")
        if k > rank:
            warnings.warn(
                "requested %d components but rank is %d; reducing" % (k, rank)
            )
            k = rank
    basis = Vt[:k].T
    scores = Xc @ basis
    scores_test = (X_test - xm) @ basis
    E_s = gp._sq_dists(scores)
    zeros = np.zeros_like(E_s)
    fit = gp.fit_mle(y_train, E_s, zeros, zeros)
    Ex = gp._cross_sq(scores_test, scores)
    zx = np.zeros_like(Ex)
    mean, lower, upper = gp.mle_predict(
        fit.hyperparams, y_train, E_s, zeros, zeros, Ex, zx, zx
    )
    return mean, (lower, upper)
