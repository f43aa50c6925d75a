"""Selects the compiled kernels when available, else the numpy reference.

Set ``DTFA_PURE_PYTHON=1`` to force the reference implementation.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
newton_batch = _kernels_py.newton_batch

if os.environ.get("DTFA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        newton_batch = _kernels.newton_batch
        BACKEND = "cython"


def solve_batch(E, S, kd, kf, dmg, eps_n, omega_n, kappa_n, deps0,
                tol=1e-10, max_iter=50):
    """Newton solve with a staggered restart for the points that fail.

    Same outputs as ``newton_batch``.
    """
    out = list(newton_batch(E, S, kd, kf, dmg, eps_n, omega_n, kappa_n,
                            deps0, tol, max_iter))
    bad = np.flatnonzero(~out[4])
    if bad.size == 0:
        return tuple(out)
    sub = (eps_n[bad], omega_n[bad], kappa_n[bad], deps0[bad])
    lam, ok = _kernels_py.staggered_batch(E, S, kd, kf, dmg, *sub)
    if not ok.any():
        return tuple(out)
    good = bad[ok]
    sub = tuple(a[ok] for a in sub)
    res = newton_batch(E, S, kd, kf, dmg, *sub, tol, max_iter, lam[ok])
    for o, r in zip(out, res):
        o[good] = r
    return tuple(out)
