"""Recurrent sequence kernels with a compiled fast path.

The GRU layer loop is the pipeline's hot spot: it runs T sequential steps
per layer per direction and cannot be vectorized over time. A Cython
extension (`listenhead._gru_ext`) implements the same forward/backward
math with fused gate loops and BLAS matmuls; this module selects it at
import when the build produced it, and otherwise falls back to the pure
numpy implementation below. Set LISTENHEAD_NO_EXT=1 to force the fallback.

Both backends implement, per time step (gate order update/reset/candidate,
recurrent weights u_zr stacked [2H, H], candidate weights u_h [H, H]):

    a_zr = xw[t, :, :2H] + h @ u_zr.T
    z, r = sigmoid(a_zr[:, :H]), sigmoid(a_zr[:, H:])
    c    = tanh(xw[t, :, 2H:] + (r * h) @ u_h.T)
    h    = (1 - z) * h + z * c

xw carries the precomputed input projections plus biases, so the kernel
only owns the sequential recurrence.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["BACKEND", "gru_forward", "gru_backward", "gru_forward_numpy", "gru_backward_numpy"]


def gru_forward_numpy(xw, h0, u_zr, u_h):
    """Run one GRU direction; returns (h_seq, z_seq, r_seq, c_seq).

    xw: [T, B, 3H] float64, h0: [B, H], u_zr: [2H, H], u_h: [H, H].
    The gate activations are cached for the backward pass.
    """
    T, B, H3 = xw.shape
    H = H3 // 3
    h_seq = np.empty((T, B, H))
    z_seq = np.empty((T, B, H))
    r_seq = np.empty((T, B, H))
    c_seq = np.empty((T, B, H))
    u_zr_t = u_zr.T
    u_h_t = u_h.T
    h = h0
    for t in range(T):
        a_zr = xw[t, :, : 2 * H] + h @ u_zr_t
        z = 1.0 / (1.0 + np.exp(-a_zr[:, :H]))
        r = 1.0 / (1.0 + np.exp(-a_zr[:, H:]))
        c = np.tanh(xw[t, :, 2 * H :] + (r * h) @ u_h_t)
        h = (1.0 - z) * h + z * c
        z_seq[t] = z
        r_seq[t] = r
        c_seq[t] = c
        h_seq[t] = h
    return h_seq, z_seq, r_seq, c_seq


def gru_backward_numpy(g, xw, h0, u_zr, u_h, h_seq, z_seq, r_seq, c_seq):
    """Backprop through time for one direction.

    g: [T, B, H] gradient wrt h_seq. Returns (dxw, dh0, du_zr, du_h).
    """
    T, B, H3 = xw.shape
    H = H3 // 3
    dxw = np.zeros((T, B, H3))
    du_zr = np.zeros_like(u_zr)
    du_h = np.zeros_like(u_h)
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh + g[t]
        h_prev = h_seq[t - 1] if t > 0 else h0
        z = z_seq[t]
        r = r_seq[t]
        c = c_seq[t]
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)
        da_h = dc * (1.0 - c * c)
        drh = da_h @ u_h
        dr = drh * h_prev
        dh_prev += drh * r
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        da_zr = np.concatenate([da_z, da_r], axis=1)
        dh_prev += da_zr @ u_zr
        rh = r * h_prev
        du_zr += da_zr.T @ h_prev
        du_h += da_h.T @ rh
        dxw[t, :, : 2 * H] = da_zr
        dxw[t, :, 2 * H :] = da_h
        dh = dh_prev
    return dxw, dh, du_zr, du_h


BACKEND = "numpy"
gru_forward = gru_forward_numpy
gru_backward = gru_backward_numpy

if not os.environ.get("LISTENHEAD_NO_EXT"):
    try:
        from . import _gru_ext

        gru_forward = _gru_ext.gru_forward
        gru_backward = _gru_ext.gru_backward
        BACKEND = "ext"
    except ImportError:
        pass
