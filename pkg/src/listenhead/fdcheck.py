"""Central finite-difference gradients, for verifying analytic gradients.

Deliberately independent of the autodiff tape: these routines only call a
black-box scalar function, so agreement between the two is meaningful.
"""

from __future__ import annotations

import numpy as np

__all__ = ["fd_gradient", "relative_error"]


def fd_gradient(fn, arrays, step: float = 1e-5):
    """Gradient of scalar fn(*arrays) wrt each array, central differences.

    Perturbs the arrays in place (restoring each entry), so fn must read
    the same array objects it is handed. Returns one gradient per array.
    """
    grads = []
    for a in arrays:
        if a.dtype != np.float64:
            raise ValueError("fd_gradient requires float64 arrays")
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi = float(fn(*arrays))
            flat[i] = saved - step
            lo = float(fn(*arrays))
            flat[i] = saved
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(ga, gfd) -> float:
    """max-norm relative disagreement, guarded against tiny denominators."""
    ga = np.asarray(ga, dtype=np.float64)
    gfd = np.asarray(gfd, dtype=np.float64)
    num = np.abs(ga - gfd).max() if ga.size else 0.0
    den = max(np.abs(ga).max() if ga.size else 0.0, np.abs(gfd).max() if gfd.size else 0.0, 1e-8)
    return float(num / den)
