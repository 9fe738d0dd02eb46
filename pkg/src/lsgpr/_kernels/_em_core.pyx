# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled EM core for the latent-scale embedder.

Same contract as `_em_numpy`: pg_omega, log_posterior, em_sweep. The sweep
dominates embedding runtime (O(p^2 d + p d^3) per iteration, hundreds of
iterations, one run per subject), hence the typed loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, exp, fabs, log, log1p, sqrt, tanh

cnp.import_array()

BACKEND_NAME = "cython"


cdef inline double _pg(double delta) noexcept nogil:
    cdef double d2
    if fabs(delta) < 1e-4:
        d2 = delta * delta
        return 0.25 * (1.0 - d2 / 12.0 + d2 * d2 / 120.0)
    return tanh(0.5 * delta) / (2.0 * delta)


def pg_omega(delta):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(
        delta, dtype=np.float64
    ).ravel()
    cdef Py_ssize_t i, n = flat.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    for i in range(n):
        out[i] = _pg(flat[i])
    return out.reshape(np.shape(delta))


def log_posterior(double[:, ::1] adj, double[:, ::1] U, double a, double sigma_u_sq):
    cdef Py_ssize_t p = U.shape[0], d = U.shape[1]
    cdef Py_ssize_t k, l, m
    cdef double dot, delta, v
    cdef double loglik = 0.0, sq = 0.0
    for k in range(p):
        for l in range(k + 1, p):
            dot = 0.0
            for m in range(d):
                dot += U[k, m] * U[l, m]
            delta = a + dot
            # log(1+e^x) = max(x,0) + log1p(e^{-|x|})
            loglik += adj[k, l] * delta
            loglik -= (delta if delta > 0.0 else 0.0) + log1p(exp(-fabs(delta)))
        for m in range(1, d):
            v = U[k, m]
            sq += v * v
    cdef double n_free = p * (d - 1)
    return loglik - 0.5 * sq / sigma_u_sq - 0.5 * n_free * log(2.0 * M_PI * sigma_u_sq)


cdef int _chol_solve(double[:, ::1] A, double[::1] x, Py_ssize_t n) noexcept nogil:
    """In-place lower Cholesky of A, then solve A x = rhs (x holds rhs on
    entry, solution on exit). Returns -1 on a non-positive pivot."""
    cdef Py_ssize_t i, j, k
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= A[i, k] * A[j, k]
            if i == j:
                if s <= 0.0:
                    return -1
                A[i, i] = sqrt(s)
            else:
                A[i, j] = s / A[j, j]
    for i in range(n):
        s = x[i]
        for j in range(i):
            s -= A[i, j] * x[j]
        x[i] = s / A[i, i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= A[j, i] * x[j]
        x[i] = s / A[i, i]
    return 0


def em_sweep(double[:, ::1] adj, double[:, ::1] U, double a, double b,
             double inv_sigma_u_sq, bint per_neighbor_prior):
    cdef Py_ssize_t p = U.shape[0], d = U.shape[1], dm = d - 1
    cdef Py_ssize_t j, k, m, r, c
    cdef double dot, num = 0.0, den = 0.0, w, ck, a_new, c0, prior_scale

    om_arr = np.empty((p, p))
    cdef double[:, ::1] om = om_arr
    for k in range(p):
        for j in range(k, p):
            dot = 0.0
            for m in range(d):
                dot += U[k, m] * U[j, m]
            w = _pg(a + dot)
            om[k, j] = w
            om[j, k] = w
            if j > k:
                num += adj[k, j] - 0.5 - w * dot
                den += w
    a_new = num / den

    c0 = a_new + b * b
    prior_scale = (p - 1) * inv_sigma_u_sq if per_neighbor_prior else inv_sigma_u_sq
    mat_arr = np.empty((dm, dm))
    rhs_arr = np.empty(dm)
    cdef double[:, ::1] mat = mat_arr
    cdef double[::1] rhs = rhs_arr
    for k in range(p):
        for r in range(dm):
            rhs[r] = 0.0
            for c in range(r + 1):
                mat[r, c] = 0.0
        for j in range(p):
            if j == k:
                continue
            w = om[j, k]
            ck = adj[j, k] - 0.5 - c0 * w
            for r in range(dm):
                rhs[r] += ck * U[j, r + 1]
                for c in range(r + 1):
                    mat[r, c] += w * U[j, r + 1] * U[j, c + 1]
        for r in range(dm):
            mat[r, r] += prior_scale
        if _chol_solve(mat, rhs, dm) != 0:
            raise np.linalg.LinAlgError("singular node-update system")
        for r in range(dm):
            U[k, r + 1] = rhs[r]
    return a_new
