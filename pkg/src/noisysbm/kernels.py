"""Backend selection for the pairwise kernels.

The compiled Cython module is used when it was built; otherwise the numpy
fallback. Set ``NOISYSBM_BACKEND=python`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_requested = os.environ.get("NOISYSBM_BACKEND", "").lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"NOISYSBM_BACKEND={_requested!r} not available; have {sorted(BACKENDS)}")
BACKEND = _requested or ("cython" if _ckernels is not None else "python")
_impl = BACKENDS[BACKEND]


def get_backend(name=None):
    return _impl if name is None else BACKENDS[name]


def _prep(rows, cols):
    return (np.ascontiguousarray(rows, dtype=np.intp),
            np.ascontiguousarray(cols, dtype=np.intp))


def ve_fixed_point(d, rows, cols, log_pi, tau, max_iter, tol, damping, floor, backend=None):
    rows, cols = _prep(rows, cols)
    return get_backend(backend).ve_fixed_point(
        np.ascontiguousarray(d, dtype=float), rows, cols, log_pi, tau,
        int(max_iter), float(tol), float(damping), float(floor))


def pair_moments(x, rho, rows, cols, tau, backend=None):
    rows, cols = _prep(rows, cols)
    return get_backend(backend).pair_moments(
        np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(rho, dtype=float),
        rows, cols, np.ascontiguousarray(tau, dtype=float))


def pair_contract(c, rows, cols, tau, backend=None):
    rows, cols = _prep(rows, cols)
    return get_backend(backend).pair_contract(
        np.ascontiguousarray(c, dtype=float), rows, cols, np.ascontiguousarray(tau, dtype=float))
