"""Backend selection for the hot assembly kernel.

The compiled extension is used when it imports; set ``OWARR_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

import numpy as np

from . import _assemble_py

assemble_python = _assemble_py.assemble

try:
    from ._assemble_ext import assemble as _assemble_compiled
except ImportError:
    _assemble_compiled = None

assemble_compiled = _assemble_compiled

if _assemble_compiled is not None and not os.environ.get("OWARR_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"


def _prep(a, ndim):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if ndim == 2 and a.ndim == 1:
        a = a.reshape(-1, 1)
    return a


def assemble(Xs, ys, Xt, yt, mus, mut, wt, lam, gam, backend=None):
    """Dispatch to the selected backend; see ``_assemble_py.assemble``."""
    backend = backend or BACKEND
    if backend == "cython":
        if _assemble_compiled is None:
            raise RuntimeError("compiled kernel is not available")
        fn = _assemble_compiled
    else:
        fn = assemble_python
    d = np.shape(Xs)[1]
    Xs = _prep(Xs, 2)
    Xt = _prep(Xt, 2).reshape(-1, d)
    mus = np.ascontiguousarray(mus, dtype=np.float64)
    mut = np.ascontiguousarray(mut, dtype=np.float64)
    return fn(Xs, _prep(ys, 1), Xt, _prep(yt, 1), mus, mut,
              float(wt), float(lam), float(gam))
