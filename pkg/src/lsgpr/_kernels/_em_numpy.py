"""Pure numpy implementation of the embedding EM compute kernels.

Mirrors the compiled core in `_em_core.pyx`; used as the fallback backend and
as the reference in backend-equivalence tests.
"""

import numpy as np

BACKEND_NAME = "numpy"


def pg_omega(delta):
    """Conditional expectation of the logistic augmentation variable.

    omega(delta) = tanh(delta/2) / (2 delta), with the removable singularity
    at zero handled by a series branch below |delta| < 1e-4.
    """
    delta = np.asarray(delta, dtype=np.float64)
    out = np.empty_like(delta)
    small = np.abs(delta) < 1e-4
    d2 = delta[small] ** 2
    out[small] = 0.25 * (1.0 - d2 / 12.0 + d2 * d2 / 120.0)
    big = ~small
    out[big] = np.tanh(0.5 * delta[big]) / (2.0 * delta[big])
    return out


def log_posterior(adj, U, a, sigma_u_sq):
    """Bernoulli log-likelihood over pairs plus the N(0, sigma_u_sq) prior
    on the free (non-pinned) latent coordinates. Flat prior on the intercept
    contributes nothing."""
    p = U.shape[0]
    iu = np.triu_indices(p, k=1)
    delta = a + (U @ U.T)[iu]
    loglik = float(np.sum(adj[iu] * delta - np.logaddexp(0.0, delta)))
    free = U[:, 1:]
    prior = -0.5 * float(np.sum(free * free)) / sigma_u_sq
    prior -= 0.5 * free.size * np.log(2.0 * np.pi * sigma_u_sq)
    return loglik + prior


def em_sweep(adj, U, a, b, inv_sigma_u_sq, per_neighbor_prior):
    """One EM iteration: E-step weights from the current state, intercept
    update, then sequential in-place node updates (already-updated rows feed
    later nodes). Returns the new intercept; U is modified in place."""
    p, d = U.shape
    ip = U @ U.T
    omega = pg_omega(a + ip)
    iu = np.triu_indices(p, k=1)
    w = omega[iu]
    a_new = float(np.sum(adj[iu] - 0.5 - w * ip[iu]) / np.sum(w))

    c0 = a_new + b * b
    V = U[:, 1:]  # view: writes land in U
    dm = d - 1
    prior_scale = (p - 1) * inv_sigma_u_sq if per_neighbor_prior else inv_sigma_u_sq
    diag = np.diag_indices(dm)
    for k in range(p):
        wk = omega[k]
        ck = adj[k] - 0.5 - c0 * wk
        # full-row accumulation minus node k's own (adj[k,k]=0) contribution
        rhs = ck @ V - ck[k] * V[k]
        mat = V.T @ (wk[:, None] * V) - wk[k] * np.outer(V[k], V[k])
        mat[diag] += prior_scale
        V[k] = np.linalg.solve(mat, rhs)
    return a_new
