"""Per-subject MAP embedding of a binary network into latent scales.

The model: edge (k,l) is Bernoulli with logit a + u_k . u_l, one intercept a
per subject, latent scale u_k in R^d per node. The first latent coordinate of
every node is pinned to a constant b for rotation identifiability; the
remaining coordinates get independent N(0, sigma_u_sq) priors and the
intercept a flat prior. Estimation is EM with a logistic data augmentation:
the E-step replaces each pair's augmentation variable by its conditional
expectation omega(delta) = tanh(delta/2)/(2 delta), making both M-steps
closed-form (a quadratic in the intercept, a ridge-type linear system per
node). Node updates run sequentially so later nodes see already-updated
earlier rows.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import _kernels, network

_PRIOR_MODES = ("verbatim", "single-copy")


class EmbeddingError(Exception):
    """Embedding failed numerically (non-finite objective)."""


@dataclass
class EmConfig:
    """Settings for :func:`embed_subject`.

    Attributes
    ----------
    d : int
        Latent dimension, at least 2 (column 0 is the pinned constant).
    sigma_u_sq : float
        Prior variance of each free latent coordinate.
    b : float
        Pinned value of the first latent coordinate.
    max_iters, rel_tol :
        EM stops when |LP_new - LP_old| / (|LP_old| + 1) < rel_tol, or after
        max_iters sweeps.
    prior_term_mode : {"verbatim", "single-copy"}
        How the prior precision enters the node update: "verbatim" adds
        sigma_u_sq^{-1} I once per neighbor term ((p-1) copies total),
        "single-copy" adds it once. Only "single-copy" makes each sweep a
        proper ascent step on the MAP objective.
    """

    d: int = 10
    sigma_u_sq: float = 0.2
    b: float = 0.5
    max_iters: int = 500
    rel_tol: float = 1e-6
    prior_term_mode: str = "verbatim"

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("latent dimension must be >= 2, got %d" % self.d)
        if self.sigma_u_sq <= 0:
            raise ValueError("sigma_u_sq must be positive")
        if not np.isfinite(self.b):
            raise ValueError("pinned value b must be finite")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.prior_term_mode not in _PRIOR_MODES:
            raise ValueError(
                "prior_term_mode must be one of %s" % (_PRIOR_MODES,)
            )

    def to_dict(self):
        return asdict(self)


@dataclass
class Embedding:
    """Fitted per-subject parameters: intercept ``a`` and latent scales ``U``
    (p x d, first column pinned at ``b``)."""

    a: float
    U: np.ndarray
    b: float = 0.5

    def __post_init__(self):
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        if self.U.ndim != 2:
            raise ValueError("U must be a p x d matrix")
        if not (np.isfinite(self.a) and np.all(np.isfinite(self.U))):
            raise ValueError("embedding entries must be finite")
        if np.any(self.U[:, 0] != self.b):
            raise ValueError("first column of U must equal the pinned value b")

    @property
    def p(self):
        return self.U.shape[0]

    @property
    def d(self):
        return self.U.shape[1]

    def to_dict(self):
        return {
            "a": float(self.a),
            "b": float(self.b),
            "d": int(self.d),
            "p": int(self.p),
            "U": [float(v) for v in self.U.ravel()],
        }

    @classmethod
    def from_dict(cls, payload):
        d = int(payload["d"])
        U = np.asarray(payload["U"], dtype=np.float64).reshape(-1, d)
        return cls(a=float(payload["a"]), U=U, b=float(payload["b"]))


def edge_probability(a, u_k, u_l):
    """sigmoid(a + u_k . u_l) for one node pair."""
    logit = a + float(np.dot(u_k, u_l))
    # stable sigmoid, never overflows
    if logit >= 0:
        return 1.0 / (1.0 + np.exp(-logit))
    t = np.exp(logit)
    return t / (1.0 + t)


def pg_expectation(delta):
    """E[omega | delta] for the logistic augmentation variable.

    Equals tanh(delta/2)/(2 delta) with the limit 1/4 at delta = 0; even,
    strictly decreasing in |delta|, range (0, 1/4].
    """
    arr = np.asarray(delta, dtype=np.float64)
    out = _kernels._em_numpy.pg_omega(arr.ravel()).reshape(arr.shape)
    if np.isscalar(delta) or arr.ndim == 0:
        return float(out)
    return out


def log_posterior(adj, emb, cfg):
    """Bernoulli log-likelihood over pairs plus the prior on free coordinates.

    The flat intercept prior contributes 0. This is the MAP objective whose
    ascent the single-copy EM mode guarantees.
    """
    adj = np.ascontiguousarray(adj, dtype=np.float64)
    return float(_kernels._em_numpy.log_posterior(adj, emb.U, emb.a, cfg.sigma_u_sq))


def em_update_intercept(e, omega, U):
    """Exact M-step maximizer of the augmented objective in the intercept.

    ``e`` and ``omega`` are per-pair vectors in upper-triangle order; inner
    products include the pinned coordinate.
    """
    e = np.asarray(e, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if np.any(omega <= 0):
        raise ValueError("augmentation weights must be positive")
    U = np.asarray(U, dtype=np.float64)
    ip = (U @ U.T)[np.triu_indices(U.shape[0], k=1)]
    return float(np.sum(e - 0.5 - omega * ip) / np.sum(omega))


def em_update_latent(k, e, omega, a, emb, cfg):
    """M-step update of node k's free coordinates, holding the rest fixed.

    Solves the ridge-type system: sum over neighbors j of
    [e_jk - 0.5 - (a + b^2) omega_jk] u_j(free) on the right, and
    sum_j omega_jk u_j(free) u_j(free)^T plus the prior precision on the
    left. Prior precision enters once per neighbor in "verbatim" mode and
    once in total in "single-copy" mode.
    """
    U = emb.U
    p, d = U.shape
    E = network.edge_vector_to_adjacency(e, p)
    W = network.edge_vector_to_adjacency(omega, p)
    c0 = a + emb.b**2
    V = U[:, 1:]
    idx = np.arange(p) != k
    wk = W[idx, k]
    resid = E[idx, k] - 0.5 - c0 * wk
    Vj = V[idx]
    rhs = resid @ Vj
    mat = Vj.T @ (wk[:, None] * Vj)
    scale = (p - 1) / cfg.sigma_u_sq if cfg.prior_term_mode == "verbatim" else 1.0 / cfg.sigma_u_sq
    mat[np.diag_indices(d - 1)] += scale
    return np.linalg.solve(mat, rhs)


def init_latent_scales(adj, cfg, rng=None):
    """Initial latent scales: classical MDS on hop distances, pinned column.

    Columns of the MDS output that carry no positive eigenvalue come out as
    zeros and would be a fixed point of the node updates; they are filled with
    small centered noise (sd 0.01) so EM can move them. The first column is
    then overwritten with the pinned value.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    dist = network.shortest_path_distances(adj)
    X = network.classical_mds(dist, cfg.d)
    norms = np.linalg.norm(X, axis=0)
    dead = norms <= 1e-8 * max(1.0, norms.max())
    for col in np.flatnonzero(dead):
        noise = rng.normal(0.0, 0.01, size=X.shape[0])
        X[:, col] = noise - noise.mean()
    X[:, 0] = cfg.b
    return X


def _initial_intercept(adj):
    # smoothed empirical logit; finite for empty and complete graphs
    p = adj.shape[0]
    n_pairs = p * (p - 1) / 2.0
    n_edges = float(np.sum(adj)) / 2.0
    return float(np.log((n_edges + 0.5) / (n_pairs - n_edges + 0.5)))


def embed_subject(adj, cfg=None, init=None, rng=None, backend=None):
    """MAP-embed one network by EM.

    Parameters
    ----------
    adj : (p, p) array_like
        Binary adjacency matrix.
    cfg : EmConfig, optional
    init : (p, d) array_like, optional
        Starting latent scales; the first column is overwritten with the
        pinned value. Defaults to classical MDS on hop distances.
    rng : numpy Generator, optional
        Only used for the rank-deficient MDS column fill.
    backend : {"cython", "numpy"}, optional
        Compute kernel override; default picks the compiled core if built.

    Returns
    -------
    (Embedding, trace) : trace is the per-iteration log-posterior, starting
        at the initial state, length 1 + number of sweeps performed.

    Raises
    ------
    EmbeddingError
        If the log-posterior turns non-finite (numerical blow-up).
    """
    if cfg is None:
        cfg = EmConfig()
    kern = _kernels.get_backend(backend)
    adj = np.ascontiguousarray(network.validate_adjacency(adj))
    p = adj.shape[0]
    if p < 2:
        raise ValueError("need at least 2 nodes to embed")
    if cfg.d > p:
        raise ValueError("latent dimension d=%d exceeds node count p=%d" % (cfg.d, p))

    if init is None:
        U = init_latent_scales(adj, cfg, rng=rng)
    else:
        U = np.array(init, dtype=np.float64)
        if U.shape != (p, cfg.d):
            raise ValueError("init must have shape (%d, %d)" % (p, cfg.d))
        U[:, 0] = cfg.b
    U = np.ascontiguousarray(U)

    a = _initial_intercept(adj)
    per_neighbor = cfg.prior_term_mode == "verbatim"
    inv_s2 = 1.0 / cfg.sigma_u_sq

    lp_prev = kern.log_posterior(adj, U, a, cfg.sigma_u_sq)
    if not np.isfinite(lp_prev):
        raise EmbeddingError("non-finite log-posterior at initialization")
    trace = [lp_prev]
    for _ in range(cfg.max_iters):
        a = kern.em_sweep(adj, U, a, cfg.b, inv_s2, per_neighbor)
        lp = kern.log_posterior(adj, U, a, cfg.sigma_u_sq)
        if not np.isfinite(lp):
            raise EmbeddingError(
                "non-finite log-posterior after %d iterations" % len(trace)
            )
        trace.append(lp)
        if abs(lp - lp_prev) / (abs(lp_prev) + 1.0) < cfg.rel_tol:
            break
        lp_prev = lp
    return Embedding(a=float(a), U=U, b=cfg.b), np.asarray(trace)


def fitted_edge_probabilities(emb):
    """Model edge probabilities for every pair, in upper-triangle order."""
    ip = emb.U @ emb.U.T
    logits = emb.a + ip[np.triu_indices(emb.p, k=1)]
    out = np.empty_like(logits)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    t = np.exp(logits[~pos])
    out[~pos] = t / (1.0 + t)
    return out
