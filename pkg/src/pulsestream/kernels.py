"""Hot numeric kernels: LSTM sequence forward and backpropagation through time.

Compiled with numba's @njit by default. Set PULSESTREAM_NO_NUMBA=1 to run the
same functions as plain numpy/Python (slower, bit-for-bit the same math);
benchmarks/bench_kernels.py compares the two paths.

Gate layout in all packed arrays is [input, forget, cell, output], each of
width H, so packed weights are [in_dim, 4H] and packed gate activations 4H.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_enabled() -> bool:
    if os.environ.get("PULSESTREAM_NO_NUMBA", "") not in ("", "0"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _numba_enabled()

if NUMBA_ENABLED:
    from numba import njit

    _jit = njit(cache=True)
else:
    def _jit(f):
        return f


@_jit
def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@_jit
def lstm_forward_batch(emb, lens, Wx, Wh, b):
    """Run the LSTM recurrence over each sequence up to its true length.

    emb:  [B, T, D] embedded tokens
    lens: [B] int64 true lengths (pad positions are never visited)
    Wx:   [D, 4H] packed input weights, Wh: [H, 4H], b: [4H]

    Returns (hs, cs, gates): hidden states [B, T+1, H] (index t+1 holds the
    state after step t; index 0 is the zero initial state), cell states with
    the same layout, and packed gate activations [B, T, 4H].
    """
    B, T, D = emb.shape
    H = Wh.shape[0]
    hs = np.zeros((B, T + 1, H))
    cs = np.zeros((B, T + 1, H))
    gates = np.zeros((B, T, 4 * H))
    for bi in range(B):
        for t in range(lens[bi]):
            a = emb[bi, t] @ Wx + hs[bi, t] @ Wh + b
            i = _sigmoid(a[:H])
            f = _sigmoid(a[H:2 * H])
            g = np.tanh(a[2 * H:3 * H])
            o = _sigmoid(a[3 * H:])
            c = f * cs[bi, t] + i * g
            cs[bi, t + 1] = c
            hs[bi, t + 1] = o * np.tanh(c)
            gates[bi, t, :H] = i
            gates[bi, t, H:2 * H] = f
            gates[bi, t, 2 * H:3 * H] = g
            gates[bi, t, 3 * H:] = o
    return hs, cs, gates


@_jit
def lstm_backward_batch(emb, lens, Wx, Wh, hs, cs, gates, dh_last):
    """Backpropagation through time from a gradient on each final hidden state.

    dh_last: [B, H] gradient w.r.t. hs[bi, lens[bi]] (already batch-scaled).
    Returns (demb [B, T, D], dWx, dWh, db) summed over the batch.
    """
    B, T, D = emb.shape
    H = Wh.shape[0]
    demb = np.zeros((B, T, D))
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * H)
    for bi in range(B):
        dh = dh_last[bi].copy()
        dc = np.zeros(H)
        for t in range(lens[bi] - 1, -1, -1):
            i = gates[bi, t, :H]
            f = gates[bi, t, H:2 * H]
            g = gates[bi, t, 2 * H:3 * H]
            o = gates[bi, t, 3 * H:]
            tc = np.tanh(cs[bi, t + 1])
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * cs[bi, t]
            da = np.empty(4 * H)
            da[:H] = di * i * (1.0 - i)
            da[H:2 * H] = df * f * (1.0 - f)
            da[2 * H:3 * H] = dg * (1.0 - g * g)
            da[3 * H:] = do * o * (1.0 - o)
            dWx += np.outer(emb[bi, t], da)
            dWh += np.outer(hs[bi, t], da)
            db += da
            demb[bi, t] = da @ Wx.T
            dh = da @ Wh.T
            dc = dc * f
    return demb, dWx, dWh, db
