"""Shared dense linear algebra helpers."""

import numpy as np
from scipy.linalg import cholesky, cho_solve, solve_triangular  # noqa: F401


class FactorizationError(Exception):
    """A matrix that must be positive definite could not be factorized."""


def chol_jitter(mat, max_rel_jitter=1e-4):
    """Lower Cholesky factor of ``mat``, adding jitter only if needed.

    Tries the plain factorization first, then adds ``eps * mean(diag)`` to the
    diagonal with eps escalating from 1e-8 by factors of 10 up to
    ``max_rel_jitter``. Raises :class:`FactorizationError` once the budget is
    exhausted.

    Returns
    -------
    (L, jitter) : (ndarray, float)
        ``L`` lower triangular with ``L @ L.T ~= mat + jitter * I``.
    """
    diag_scale = float(np.mean(np.diag(mat)))
    if not np.isfinite(diag_scale):
        raise FactorizationError("matrix diagonal is not finite")
    eps = 0.0
    while True:
        try:
            shifted = mat if eps == 0.0 else mat + eps * diag_scale * np.eye(mat.shape[0])
            return cholesky(shifted, lower=True), eps * diag_scale
        except np.linalg.LinAlgError:
            pass
        except ValueError as exc:  # NaN/inf entries
            raise FactorizationError(str(exc)) from exc
        eps = 1e-8 if eps == 0.0 else eps * 10.0
        if eps > max_rel_jitter * (1.0 + 1e-12):
            raise FactorizationError(
                "Cholesky failed with relative jitter up to %g" % max_rel_jitter
            )


def logdet_from_chol(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))
