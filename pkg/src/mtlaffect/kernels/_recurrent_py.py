"""Numpy reference kernels for the GRU and LSTM recurrences.

Inputs are time-major: ``gx`` holds the input projections ``x @ W_ih + b_ih``
for every step, shape (T, B, G*H). Gate order is (r, z, n) for the GRU and
(i, f, g, o) for the LSTM.
"""
import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(gx, h0, w_hh, b_hh):
    T, B, G = gx.shape
    H = G // 3
    hs = np.empty((T, B, H))
    r = np.empty((T, B, H))
    z = np.empty((T, B, H))
    n = np.empty((T, B, H))
    hn = np.empty((T, B, H))
    h = h0
    for t in range(T):
        gh = h @ w_hh + b_hh
        r[t] = _sigmoid(gx[t, :, :H] + gh[:, :H])
        z[t] = _sigmoid(gx[t, :, H:2 * H] + gh[:, H:2 * H])
        hn[t] = gh[:, 2 * H:]
        n[t] = np.tanh(gx[t, :, 2 * H:] + r[t] * hn[t])
        h = (1.0 - z[t]) * n[t] + z[t] * h
        hs[t] = h
    return hs, (r, z, n, hn)


def gru_backward(dhs, h0, hs, cache, w_hh):
    r, z, n, hn = cache
    T, B, H = dhs.shape
    dgx = np.empty((T, B, 3 * H))
    dw_hh = np.zeros((H, 3 * H))
    db_hh = np.zeros(3 * H)
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else h0
        dh = dhs[t] + dh_next
        dn = dh * (1.0 - z[t])
        dz = dh * (h_prev - n[t])
        dn_pre = dn * (1.0 - n[t] * n[t])
        dr = dn_pre * hn[t]
        dr_pre = dr * r[t] * (1.0 - r[t])
        dz_pre = dz * z[t] * (1.0 - z[t])
        dgx[t, :, :H] = dr_pre
        dgx[t, :, H:2 * H] = dz_pre
        dgx[t, :, 2 * H:] = dn_pre
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r[t]], axis=1)
        dw_hh += h_prev.T @ dgh
        db_hh += dgh.sum(axis=0)
        dh_next = dh * z[t] + dgh @ w_hh.T
    return dgx, dh_next, dw_hh, db_hh


def lstm_forward(gx, h0, c0, w_hh, b_hh):
    T, B, G = gx.shape
    H = G // 4
    hs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    i = np.empty((T, B, H))
    f = np.empty((T, B, H))
    g = np.empty((T, B, H))
    o = np.empty((T, B, H))
    tc = np.empty((T, B, H))
    h, c = h0, c0
    for t in range(T):
        pre = gx[t] + h @ w_hh + b_hh
        i[t] = _sigmoid(pre[:, :H])
        f[t] = _sigmoid(pre[:, H:2 * H])
        g[t] = np.tanh(pre[:, 2 * H:3 * H])
        o[t] = _sigmoid(pre[:, 3 * H:])
        c = f[t] * c + i[t] * g[t]
        tc[t] = np.tanh(c)
        h = o[t] * tc[t]
        hs[t] = h
        cs[t] = c
    return hs, cs, (i, f, g, o, tc)


def lstm_backward(dhs, h0, c0, hs, cs, cache, w_hh):
    i, f, g, o, tc = cache
    T, B, H = dhs.shape
    dgx = np.empty((T, B, 4 * H))
    dw_hh = np.zeros((H, 4 * H))
    db_hh = np.zeros(4 * H)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else h0
        c_prev = cs[t - 1] if t > 0 else c0
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o[t] * (1.0 - tc[t] * tc[t])
        di = dc * g[t] * i[t] * (1.0 - i[t])
        df = dc * c_prev * f[t] * (1.0 - f[t])
        dg = dc * i[t] * (1.0 - g[t] * g[t])
        do = dh * tc[t] * o[t] * (1.0 - o[t])
        dpre = np.concatenate([di, df, dg, do], axis=1)
        dgx[t] = dpre
        dw_hh += h_prev.T @ dpre
        db_hh += dpre.sum(axis=0)
        dh_next = dpre @ w_hh.T
        dc_next = dc * f[t]
    return dgx, dh_next, dc_next, dw_hh, db_hh
