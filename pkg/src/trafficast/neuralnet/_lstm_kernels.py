"""Compiled LSTM recurrences (time-major, gate order i, f, g, o).

The per-step elementwise work is fused into explicit loops; the recurrent
matrix products stay as BLAS calls.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def cell_update(g, c_prev, c):
    """Turn tanh(z/2) in the sigmoid blocks into sigmoids and form the new cell state.

    ``g`` holds tanh(z/2) for the i, f, o blocks and tanh(z) for the candidate block.
    """
    n, four = g.shape
    H = four // 4
    for b in range(n):
        for j in range(H):
            i = 0.5 * (1.0 + g[b, j])
            f = 0.5 * (1.0 + g[b, H + j])
            o = 0.5 * (1.0 + g[b, 3 * H + j])
            g[b, j] = i
            g[b, H + j] = f
            g[b, 3 * H + j] = o
            c[b, j] = f * c_prev[b, j] + i * g[b, 2 * H + j]


def lstm_forward(gates, Wh, hs, cs, tanh_c):
    """``gates`` holds x @ Wx + b on entry and the activated gates on exit."""
    T = gates.shape[0]
    H = Wh.shape[0]
    # sigmoid(z) = (1 + tanh(z / 2)) / 2, so one vectorised tanh covers all four blocks
    scale = np.full(4 * H, 0.5)
    scale[2 * H:3 * H] = 1.0
    for t in range(T):
        g = gates[t]
        g += hs[t] @ Wh
        g *= scale
        np.tanh(g, out=g)
        cell_update(g, cs[t], cs[t + 1])
        np.tanh(cs[t + 1], out=tanh_c[t])
        np.multiply(g[:, 3 * H:], tanh_c[t], out=hs[t + 1])


@njit(cache=True)
def lstm_backward(dyt, last_only, gates, cs, tanh_c, WhT, dz_all):
    """Fill ``dz_all`` with pre-activation gradients.

    ``dyt`` is (T, n, H) for sequence outputs, or (1, n, H) holding the
    gradient of the final hidden state when ``last_only`` is set.
    """
    T, n, four = gates.shape
    H = four // 4
    dh_next = np.zeros((n, H))
    dc = np.zeros((n, H))
    for t in range(T - 1, -1, -1):
        for b in range(n):
            for j in range(H):
                if last_only:
                    dh = dh_next[b, j] + (dyt[0, b, j] if t == T - 1 else 0.0)
                else:
                    dh = dh_next[b, j] + dyt[t, b, j]
                i = gates[t, b, j]
                f = gates[t, b, H + j]
                g = gates[t, b, 2 * H + j]
                o = gates[t, b, 3 * H + j]
                tc = tanh_c[t, b, j]
                d = dc[b, j] + dh * o * (1.0 - tc * tc)
                dz_all[t, b, j] = d * g * i * (1.0 - i)
                dz_all[t, b, H + j] = d * cs[t, b, j] * f * (1.0 - f)
                dz_all[t, b, 2 * H + j] = d * i * (1.0 - g * g)
                dz_all[t, b, 3 * H + j] = dh * tc * o * (1.0 - o)
                dc[b, j] = d * f
        dh_next = np.dot(dz_all[t], WhT)
