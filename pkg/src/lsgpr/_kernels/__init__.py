"""Backend selection for the embedding EM kernels.

The compiled core (`_em_core`, Cython) is used when its build is importable;
otherwise the pure numpy twin (`_em_numpy`). Force a choice globally with the
``LSGPR_BACKEND`` environment variable ("cython" or "numpy"), or per call via
the ``backend=`` argument on the embedding entry points.
"""

import os

from . import _em_numpy

try:
    from . import _em_core
except ImportError:
    _em_core = None

_BACKENDS = {"numpy": _em_numpy}
if _em_core is not None:
    _BACKENDS["cython"] = _em_core

#: Name of the backend picked at import time (env var wins if valid).
BACKEND = os.environ.get("LSGPR_BACKEND") or ("cython" if _em_core is not None else "numpy")
if BACKEND not in _BACKENDS:
    BACKEND = "cython" if _em_core is not None else "numpy"


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Resolve a backend module by name; None means the import-time default."""
    if name is None:
        return _BACKENDS[BACKEND]
    if name not in _BACKENDS:
        raise ValueError("unknown backend %r (available: %s)" % (name, available_backends()))
    return _BACKENDS[name]
