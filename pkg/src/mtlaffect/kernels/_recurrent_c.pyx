# Compiled GRU/LSTM recurrences. Same contract as _recurrent_py.
# Recurrent matrix products go through BLAS dgemm; arrays are C-contiguous
# float64, so each row-major product is issued as its column-major transpose.
import numpy as np
from libc.math cimport tanh
from scipy.linalg.cython_blas cimport dgemm


cdef inline double _sig(double x) nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))


cdef void _mm(double* a, double* w, double* out, int rows, int inner, int cols, double beta) nogil:
    # out[rows, cols] = a[rows, inner] @ w[inner, cols] + beta * out
    cdef char tn = b'N'
    cdef double one = 1.0
    dgemm(&tn, &tn, &cols, &rows, &inner, &one, w, &cols, a, &inner, &beta, out, &cols)


cdef void _mm_at(double* a, double* d, double* out, int rows, int inner, int cols) nogil:
    # out[inner, cols] += a[rows, inner].T @ d[rows, cols]
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    dgemm(&tn, &tt, &cols, &inner, &rows, &one, d, &cols, a, &inner, &one, out, &cols)


cdef void _mm_bt(double* d, double* w, double* out, int rows, int cols, int inner) nogil:
    # out[rows, inner] += d[rows, cols] @ w[inner, cols].T
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    dgemm(&tt, &tn, &inner, &rows, &cols, &one, w, &cols, d, &cols, &one, out, &inner)


def gru_forward(gx_in, h0_in, w_hh_in, b_hh_in):
    cdef double[:, :, ::1] gx = np.ascontiguousarray(gx_in, dtype=np.float64)
    cdef double[:, ::1] h0 = np.ascontiguousarray(h0_in, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef double[::1] bh = np.ascontiguousarray(b_hh_in, dtype=np.float64)
    cdef int T = gx.shape[0], B = gx.shape[1], H = gx.shape[2] // 3
    hs_a = np.empty((T, B, H))
    r_a = np.empty((T, B, H))
    z_a = np.empty((T, B, H))
    n_a = np.empty((T, B, H))
    hn_a = np.empty((T, B, H))
    gh_a = np.empty((B, 3 * H))
    cdef double[:, :, ::1] hs = hs_a, r = r_a, z = z_a, n = n_a, hn = hn_a
    cdef double[:, ::1] gh = gh_a
    cdef double* hp
    cdef int t, b, j
    cdef double rv, zv, nv, hprev
    if T == 0:
        return hs_a, (r_a, z_a, n_a, hn_a)
    with nogil:
        for t in range(T):
            hp = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            _mm(hp, &w[0, 0], &gh[0, 0], B, H, 3 * H, 0.0)
            for b in range(B):
                for j in range(H):
                    rv = _sig(gx[t, b, j] + gh[b, j] + bh[j])
                    zv = _sig(gx[t, b, H + j] + gh[b, H + j] + bh[H + j])
                    hn[t, b, j] = gh[b, 2 * H + j] + bh[2 * H + j]
                    nv = tanh(gx[t, b, 2 * H + j] + rv * hn[t, b, j])
                    hprev = hp[b * H + j]
                    r[t, b, j] = rv
                    z[t, b, j] = zv
                    n[t, b, j] = nv
                    hs[t, b, j] = (1.0 - zv) * nv + zv * hprev
    return hs_a, (r_a, z_a, n_a, hn_a)


def gru_backward(dhs_in, h0_in, hs_in, cache, w_hh_in):
    r_in, z_in, n_in, hn_in = cache
    cdef double[:, :, ::1] dhs = np.ascontiguousarray(dhs_in, dtype=np.float64)
    cdef double[:, ::1] h0 = np.ascontiguousarray(h0_in, dtype=np.float64)
    cdef double[:, :, ::1] hs = np.ascontiguousarray(hs_in, dtype=np.float64)
    cdef double[:, :, ::1] r = np.ascontiguousarray(r_in), z = np.ascontiguousarray(z_in)
    cdef double[:, :, ::1] n = np.ascontiguousarray(n_in), hn = np.ascontiguousarray(hn_in)
    cdef double[:, ::1] w = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef int T = dhs.shape[0], B = dhs.shape[1], H = dhs.shape[2]
    dgx_a = np.empty((T, B, 3 * H))
    dw_a = np.zeros((H, 3 * H))
    db_a = np.zeros(3 * H)
    dnext_a = np.zeros((B, H))
    dgh_a = np.empty((B, 3 * H))
    dh_a = np.empty((B, H))
    cdef double[:, :, ::1] dgx = dgx_a
    cdef double[:, ::1] dw = dw_a, dnext = dnext_a, dgh = dgh_a, dh = dh_a
    cdef double[::1] db = db_a
    cdef double* hp
    cdef int t, b, j
    cdef double dhv, dn, dz, dnp, drp, dzp, rv, zv, nv
    with nogil:
        for t in range(T - 1, -1, -1):
            hp = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            for b in range(B):
                for j in range(H):
                    rv = r[t, b, j]
                    zv = z[t, b, j]
                    nv = n[t, b, j]
                    dhv = dhs[t, b, j] + dnext[b, j]
                    dh[b, j] = dhv
                    dn = dhv * (1.0 - zv)
                    dz = dhv * (hp[b * H + j] - nv)
                    dnp = dn * (1.0 - nv * nv)
                    drp = dnp * hn[t, b, j] * rv * (1.0 - rv)
                    dzp = dz * zv * (1.0 - zv)
                    dgx[t, b, j] = drp
                    dgx[t, b, H + j] = dzp
                    dgx[t, b, 2 * H + j] = dnp
                    dgh[b, j] = drp
                    dgh[b, H + j] = dzp
                    dgh[b, 2 * H + j] = dnp * rv
                    db[j] += drp
                    db[H + j] += dzp
                    db[2 * H + j] += dnp * rv
            _mm_at(hp, &dgh[0, 0], &dw[0, 0], B, H, 3 * H)
            for b in range(B):
                for j in range(H):
                    dnext[b, j] = dh[b, j] * z[t, b, j]
            _mm_bt(&dgh[0, 0], &w[0, 0], &dnext[0, 0], B, 3 * H, H)
    return dgx_a, dnext_a, dw_a, db_a


def lstm_forward(gx_in, h0_in, c0_in, w_hh_in, b_hh_in):
    cdef double[:, :, ::1] gx = np.ascontiguousarray(gx_in, dtype=np.float64)
    cdef double[:, ::1] h0 = np.ascontiguousarray(h0_in, dtype=np.float64)
    cdef double[:, ::1] c0 = np.ascontiguousarray(c0_in, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef double[::1] bh = np.ascontiguousarray(b_hh_in, dtype=np.float64)
    cdef int T = gx.shape[0], B = gx.shape[1], H = gx.shape[2] // 4
    hs_a = np.empty((T, B, H))
    cs_a = np.empty((T, B, H))
    i_a = np.empty((T, B, H))
    f_a = np.empty((T, B, H))
    g_a = np.empty((T, B, H))
    o_a = np.empty((T, B, H))
    tc_a = np.empty((T, B, H))
    pre_a = np.empty((B, 4 * H))
    cdef double[:, :, ::1] hs = hs_a, cs = cs_a, ig = i_a, fg = f_a, gg = g_a, og = o_a, tc = tc_a
    cdef double[:, ::1] pre = pre_a
    cdef double* hp
    cdef double* cp
    cdef int t, b, j
    cdef double iv, fv, gv, ov, cv
    if T == 0:
        return hs_a, cs_a, (i_a, f_a, g_a, o_a, tc_a)
    with nogil:
        for t in range(T):
            hp = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            cp = &c0[0, 0] if t == 0 else &cs[t - 1, 0, 0]
            _mm(hp, &w[0, 0], &pre[0, 0], B, H, 4 * H, 0.0)
            for b in range(B):
                for j in range(H):
                    iv = _sig(gx[t, b, j] + pre[b, j] + bh[j])
                    fv = _sig(gx[t, b, H + j] + pre[b, H + j] + bh[H + j])
                    gv = tanh(gx[t, b, 2 * H + j] + pre[b, 2 * H + j] + bh[2 * H + j])
                    ov = _sig(gx[t, b, 3 * H + j] + pre[b, 3 * H + j] + bh[3 * H + j])
                    cv = fv * cp[b * H + j] + iv * gv
                    ig[t, b, j] = iv
                    fg[t, b, j] = fv
                    gg[t, b, j] = gv
                    og[t, b, j] = ov
                    cs[t, b, j] = cv
                    tc[t, b, j] = tanh(cv)
                    hs[t, b, j] = ov * tc[t, b, j]
    return hs_a, cs_a, (i_a, f_a, g_a, o_a, tc_a)


def lstm_backward(dhs_in, h0_in, c0_in, hs_in, cs_in, cache, w_hh_in):
    i_in, f_in, g_in, o_in, tc_in = cache
    cdef double[:, :, ::1] dhs = np.ascontiguousarray(dhs_in, dtype=np.float64)
    cdef double[:, ::1] h0 = np.ascontiguousarray(h0_in, dtype=np.float64)
    cdef double[:, ::1] c0 = np.ascontiguousarray(c0_in, dtype=np.float64)
    cdef double[:, :, ::1] hs = np.ascontiguousarray(hs_in), cs = np.ascontiguousarray(cs_in)
    cdef double[:, :, ::1] ig = np.ascontiguousarray(i_in), fg = np.ascontiguousarray(f_in)
    cdef double[:, :, ::1] gg = np.ascontiguousarray(g_in), og = np.ascontiguousarray(o_in)
    cdef double[:, :, ::1] tc = np.ascontiguousarray(tc_in)
    cdef double[:, ::1] w = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef int T = dhs.shape[0], B = dhs.shape[1], H = dhs.shape[2]
    dgx_a = np.empty((T, B, 4 * H))
    dw_a = np.zeros((H, 4 * H))
    db_a = np.zeros(4 * H)
    dhn_a = np.zeros((B, H))
    dcn_a = np.zeros((B, H))
    dpre_a = np.empty((B, 4 * H))
    cdef double[:, :, ::1] dgx = dgx_a
    cdef double[:, ::1] dw = dw_a, dhn = dhn_a, dcn = dcn_a, dpre = dpre_a
    cdef double[::1] db = db_a
    cdef double* hp
    cdef double* cp
    cdef int t, b, j
    cdef double dhv, dc, iv, fv, gv, ov, tv, di, df, dg, do
    with nogil:
        for t in range(T - 1, -1, -1):
            hp = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            cp = &c0[0, 0] if t == 0 else &cs[t - 1, 0, 0]
            for b in range(B):
                for j in range(H):
                    iv = ig[t, b, j]
                    fv = fg[t, b, j]
                    gv = gg[t, b, j]
                    ov = og[t, b, j]
                    tv = tc[t, b, j]
                    dhv = dhs[t, b, j] + dhn[b, j]
                    dc = dcn[b, j] + dhv * ov * (1.0 - tv * tv)
                    di = dc * gv * iv * (1.0 - iv)
                    df = dc * cp[b * H + j] * fv * (1.0 - fv)
                    dg = dc * iv * (1.0 - gv * gv)
                    do = dhv * tv * ov * (1.0 - ov)
                    dpre[b, j] = di
                    dpre[b, H + j] = df
                    dpre[b, 2 * H + j] = dg
                    dpre[b, 3 * H + j] = do
                    dgx[t, b, j] = di
                    dgx[t, b, H + j] = df
                    dgx[t, b, 2 * H + j] = dg
                    dgx[t, b, 3 * H + j] = do
                    db[j] += di
                    db[H + j] += df
                    db[2 * H + j] += dg
                    db[3 * H + j] += do
                    dcn[b, j] = dc * fv
                    dhn[b, j] = 0.0
            _mm_at(hp, &dpre[0, 0], &dw[0, 0], B, H, 4 * H)
            _mm_bt(&dpre[0, 0], &w[0, 0], &dhn[0, 0], B, 4 * H, H)
    return dgx_a, dhn_a, dcn_a, dw_a, db_a
