# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled GRU sequence kernels.

Same contract as the numpy reference in listenhead.kernels: the gate math
is fused into C loops and the recurrent matmuls go through BLAS dgemm.
All arrays are float64; gate order is (update, reset, candidate).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, tanh as c_tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sig(double x) noexcept nogil:
    return 1.0 / (1.0 + c_exp(-x))


def gru_forward(xw_in, h0_in, u_zr_in, u_h_in):
    cdef double[:, :, ::1] xw = np.ascontiguousarray(xw_in, dtype=np.float64)
    cdef double[:, ::1] h0 = np.ascontiguousarray(h0_in, dtype=np.float64)
    cdef double[:, ::1] u_zr = np.ascontiguousarray(u_zr_in, dtype=np.float64)
    cdef double[:, ::1] u_h = np.ascontiguousarray(u_h_in, dtype=np.float64)

    cdef Py_ssize_t T = xw.shape[0], B = xw.shape[1], H3 = xw.shape[2]
    cdef Py_ssize_t H = H3 // 3, H2 = 2 * (H3 // 3)

    h_seq_arr = np.empty((T, B, H))
    z_arr = np.empty((T, B, H))
    r_arr = np.empty((T, B, H))
    c_arr = np.empty((T, B, H))
    azr_arr = np.empty((B, H2))
    ah_arr = np.empty((B, H))
    rh_arr = np.empty((B, H))
    h_arr = np.array(h0, dtype=np.float64)

    cdef double[:, :, ::1] h_seq = h_seq_arr
    cdef double[:, :, ::1] zs = z_arr
    cdef double[:, :, ::1] rs = r_arr
    cdef double[:, :, ::1] cs = c_arr
    cdef double[:, ::1] azr = azr_arr
    cdef double[:, ::1] ah = ah_arr
    cdef double[:, ::1] rh = rh_arr
    cdef double[:, ::1] h = h_arr

    cdef Py_ssize_t t, b, j
    cdef double z, r, c
    cdef char ct = b'T', cn = b'N'
    cdef int m, n, k, lda, ldb, ldc
    cdef int iB = <int> B, iH = <int> H, iH2 = <int> H2
    cdef double one = 1.0

    if B == 0 or H == 0:
        return h_seq_arr, z_arr, r_arr, c_arr

    with nogil:
        for t in range(T):
            for b in range(B):
                for j in range(H2):
                    azr[b, j] = xw[t, b, j]
            # azr += h @ u_zr.T
            m = iH2; n = iB; k = iH; lda = iH; ldb = iH; ldc = iH2
            dgemm(&ct, &cn, &m, &n, &k, &one, &u_zr[0, 0], &lda,
                  &h[0, 0], &ldb, &one, &azr[0, 0], &ldc)
            for b in range(B):
                for j in range(H):
                    z = _sig(azr[b, j])
                    r = _sig(azr[b, H + j])
                    zs[t, b, j] = z
                    rs[t, b, j] = r
                    rh[b, j] = r * h[b, j]
                    ah[b, j] = xw[t, b, H2 + j]
            # ah += rh @ u_h.T
            m = iH; n = iB; k = iH; lda = iH; ldb = iH; ldc = iH
            dgemm(&ct, &cn, &m, &n, &k, &one, &u_h[0, 0], &lda,
                  &rh[0, 0], &ldb, &one, &ah[0, 0], &ldc)
            for b in range(B):
                for j in range(H):
                    c = c_tanh(ah[b, j])
                    cs[t, b, j] = c
                    h[b, j] = (1.0 - zs[t, b, j]) * h[b, j] + zs[t, b, j] * c
                    h_seq[t, b, j] = h[b, j]

    return h_seq_arr, z_arr, r_arr, c_arr


def gru_backward(g_in, xw_in, h0_in, u_zr_in, u_h_in, h_seq_in, z_in, r_in, c_in):
    cdef double[:, :, ::1] g = np.ascontiguousarray(g_in, dtype=np.float64)
    cdef double[:, ::1] h0 = np.ascontiguousarray(h0_in, dtype=np.float64)
    cdef double[:, ::1] u_zr = np.ascontiguousarray(u_zr_in, dtype=np.float64)
    cdef double[:, ::1] u_h = np.ascontiguousarray(u_h_in, dtype=np.float64)
    cdef double[:, :, ::1] h_seq = np.ascontiguousarray(h_seq_in, dtype=np.float64)
    cdef double[:, :, ::1] zs = np.ascontiguousarray(z_in, dtype=np.float64)
    cdef double[:, :, ::1] rs = np.ascontiguousarray(r_in, dtype=np.float64)
    cdef double[:, :, ::1] cs = np.ascontiguousarray(c_in, dtype=np.float64)

    cdef Py_ssize_t T = g.shape[0], B = g.shape[1], H = g.shape[2]
    cdef Py_ssize_t H2 = 2 * H, H3 = 3 * H

    dxw_arr = np.zeros((T, B, H3))
    du_zr_arr = np.zeros((H2, H))
    du_h_arr = np.zeros((H, H))
    dh_arr = np.zeros((B, H))
    dhp_arr = np.zeros((B, H))
    drh_arr = np.empty((B, H))
    rh_arr = np.empty((B, H))

    cdef double[:, :, ::1] dxw = dxw_arr
    cdef double[:, ::1] du_zr = du_zr_arr
    cdef double[:, ::1] du_h = du_h_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] dhp = dhp_arr
    cdef double[:, ::1] drh = drh_arr
    cdef double[:, ::1] rh = rh_arr
    cdef double[:, ::1] hp
    cdef double[:, ::1] swap

    cdef Py_ssize_t t, b, j
    cdef double z, r, c, dht, dz, dc, dah
    cdef char ct = b'T', cn = b'N'
    cdef int m, n, k, lda, ldb, ldc
    cdef int iB = <int> B, iH = <int> H, iH2 = <int> H2, iH3 = <int> H3
    cdef double one = 1.0, zero = 0.0

    if B == 0 or H == 0:
        return dxw_arr, dh_arr, du_zr_arr, du_h_arr

    with nogil:
        for t in range(T - 1, -1, -1):
            if t > 0:
                hp = h_seq[t - 1]
            else:
                hp = h0
            for b in range(B):
                for j in range(H):
                    dht = dh[b, j] + g[t, b, j]
                    z = zs[t, b, j]
                    r = rs[t, b, j]
                    c = cs[t, b, j]
                    dz = dht * (c - hp[b, j])
                    dc = dht * z
                    dhp[b, j] = dht * (1.0 - z)
                    dah = dc * (1.0 - c * c)
                    dxw[t, b, H2 + j] = dah
                    dxw[t, b, j] = dz * z * (1.0 - z)
                    rh[b, j] = r * hp[b, j]
            # drh = da_h @ u_h
            m = iH; n = iB; k = iH; lda = iH; ldb = iH3; ldc = iH
            dgemm(&cn, &cn, &m, &n, &k, &one, &u_h[0, 0], &lda,
                  &dxw[t, 0, H2], &ldb, &zero, &drh[0, 0], &ldc)
            for b in range(B):
                for j in range(H):
                    r = rs[t, b, j]
                    dhp[b, j] += drh[b, j] * r
                    # da_r into the reset slot of dxw
                    dxw[t, b, H + j] = drh[b, j] * hp[b, j] * r * (1.0 - r)
            # dh_prev += da_zr @ u_zr
            m = iH; n = iB; k = iH2; lda = iH; ldb = iH3; ldc = iH
            dgemm(&cn, &cn, &m, &n, &k, &one, &u_zr[0, 0], &lda,
                  &dxw[t, 0, 0], &ldb, &one, &dhp[0, 0], &ldc)
            # du_zr += da_zr.T @ h_prev
            m = iH; n = iH2; k = iB; lda = iH; ldb = iH3; ldc = iH
            dgemm(&cn, &ct, &m, &n, &k, &one, &hp[0, 0], &lda,
                  &dxw[t, 0, 0], &ldb, &one, &du_zr[0, 0], &ldc)
            # du_h += da_h.T @ (r * h_prev)
            m = iH; n = iH; k = iB; lda = iH; ldb = iH3; ldc = iH
            dgemm(&cn, &ct, &m, &n, &k, &one, &rh[0, 0], &lda,
                  &dxw[t, 0, H2], &ldb, &one, &du_h[0, 0], &ldc)
            swap = dh
            dh = dhp
            dhp = swap

    # After T swaps the accumulated h0 gradient sits in dhp_arr when T is
    # odd and in dh_arr when T is even.
    if T % 2 == 1:
        return dxw_arr, dhp_arr, du_zr_arr, du_h_arr
    return dxw_arr, dh_arr, du_zr_arr, du_h_arr
