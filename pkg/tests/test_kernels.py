"""Compiled and numpy GRU kernels must agree on forward and backward."""

import numpy as np
import pytest

from listenhead import kernels


def make_case(seed, T, B, H, scale=0.6):
    rng = np.random.default_rng(seed)
    xw = rng.normal(size=(T, B, 3 * H)) * scale
    h0 = rng.normal(size=(B, H)) * scale
    u_zr = rng.normal(size=(2 * H, H)) * scale
    u_h = rng.normal(size=(H, H)) * scale
    g = rng.normal(size=(T, B, H))
    return xw, h0, u_zr, u_h, g


@pytest.mark.parametrize("T,B,H", [(1, 1, 1), (3, 2, 4), (7, 5, 8), (16, 1, 6)])
def test_backend_parity(T, B, H):
    xw, h0, u_zr, u_h, g = make_case(7, T, B, H)
    fwd_np = kernels.gru_forward_numpy(xw, h0, u_zr, u_h)
    fwd = kernels.gru_forward(xw, h0, u_zr, u_h)
    for a, b in zip(fwd_np, fwd):
        np.testing.assert_allclose(a, b, atol=1e-12)
    bwd_np = kernels.gru_backward_numpy(g, xw, h0, u_zr, u_h, *fwd_np)
    bwd = kernels.gru_backward(g, xw, h0, u_zr, u_h, *fwd)
    for a, b in zip(bwd_np, bwd):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_zero_params_halve_hidden_state():
    # sigmoid(0) = 0.5 gates with a zero candidate leave h' = 0.5 h_prev
    T, B, H = 3, 2, 4
    xw = np.zeros((T, B, 3 * H))
    h0 = np.arange(B * H, dtype=np.float64).reshape(B, H)
    u = np.zeros((2 * H, H))
    uh = np.zeros((H, H))
    h_seq, _, _, _ = kernels.gru_forward(xw, h0, u, uh)
    for t in range(T):
        np.testing.assert_allclose(h_seq[t], h0 * 0.5 ** (t + 1), rtol=1e-12)


def test_forward_determinism():
    xw, h0, u_zr, u_h, _ = make_case(11, 5, 3, 4)
    a = kernels.gru_forward(xw, h0, u_zr, u_h)
    b = kernels.gru_forward(xw, h0, u_zr, u_h)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_backward_matches_finite_differences():
    from listenhead.fdcheck import fd_gradient, relative_error

    xw, h0, u_zr, u_h, g = make_case(3, 4, 2, 3, scale=0.4)
    fwd = kernels.gru_forward(xw, h0, u_zr, u_h)
    grads = kernels.gru_backward(g, xw, h0, u_zr, u_h, *fwd)

    def f(xw_, h0_, uzr_, uh_):
        h_seq, _, _, _ = kernels.gru_forward(xw_, h0_, uzr_, uh_)
        return float((h_seq * g).sum())

    fd = fd_gradient(f, [xw, h0, u_zr, u_h], step=1e-5)
    for ga, gf in zip(grads, fd):
        assert relative_error(ga, gf) < 1e-6


def test_noncontiguous_inputs_accepted():
    xw, h0, u_zr, u_h, _ = make_case(5, 4, 2, 3)
    stacked = np.stack([xw, xw])
    view = stacked[1]
    ref = kernels.gru_forward_numpy(xw, h0, u_zr, u_h)
    got = kernels.gru_forward(view[::1], h0, u_zr, u_h)
    np.testing.assert_allclose(ref[0], got[0], atol=1e-12)
