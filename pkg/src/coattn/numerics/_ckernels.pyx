# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels mirroring ``_pykernels`` loop for loop.

Reductions run in ascending index order so results are reproducible.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, INFINITY

cnp.import_array()

NAME = "cython"


cdef inline void _softmax_row(double[:, ::1] x, double[:, ::1] y, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t j, n = x.shape[1]
    cdef double m = x[i, 0], s = 0.0
    for j in range(1, n):
        if x[i, j] > m:
            m = x[i, j]
    for j in range(n):
        y[i, j] = exp(x[i, j] - m)
        s += y[i, j]
    for j in range(n):
        y[i, j] = y[i, j] / s


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t i
    out = np.empty((x.shape[0], x.shape[1]))
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(x.shape[0]):
            _softmax_row(x, y, i)
    return out


def softmax_rows_backward(double[:, ::1] y, double[:, ::1] gy):
    cdef Py_ssize_t i, j, r = y.shape[0], c = y.shape[1]
    cdef double dot
    out = np.empty((r, c))
    cdef double[:, ::1] gx = out
    with nogil:
        for i in range(r):
            dot = 0.0
            for j in range(c):
                dot += gy[i, j] * y[i, j]
            for j in range(c):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return out


def layer_norm_forward(double[:, ::1] x, double[:, ::1] scale, double[:, ::1] shift, double eps):
    cdef Py_ssize_t i, j, r = x.shape[0], c = x.shape[1]
    cdef double mu, var, d, istd
    y_arr = np.empty((r, c))
    xhat_arr = np.empty((r, c))
    inv_arr = np.empty(r)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv_std = inv_arr
    with nogil:
        for i in range(r):
            mu = 0.0
            for j in range(c):
                mu += x[i, j]
            mu = mu / c
            var = 0.0
            for j in range(c):
                d = x[i, j] - mu
                var += d * d
            var = var / c
            istd = 1.0 / sqrt(var + eps)
            inv_std[i] = istd
            for j in range(c):
                xhat[i, j] = (x[i, j] - mu) * istd
                y[i, j] = xhat[i, j] * scale[0, j] + shift[0, j]
    return y_arr, xhat_arr, inv_arr


def layer_norm_backward(double[:, ::1] gy, double[:, ::1] xhat, double[::1] inv_std, double[:, ::1] scale):
    cdef Py_ssize_t i, j, r = gy.shape[0], c = gy.shape[1]
    cdef double m1, m2, g
    gx_arr = np.empty((r, c))
    gscale_arr = np.zeros((1, c))
    gshift_arr = np.zeros((1, c))
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gscale = gscale_arr
    cdef double[:, ::1] gshift = gshift_arr
    with nogil:
        for i in range(r):
            m1 = 0.0
            m2 = 0.0
            for j in range(c):
                g = gy[i, j] * scale[0, j]
                m1 += g
                m2 += g * xhat[i, j]
                gscale[0, j] += gy[i, j] * xhat[i, j]
                gshift[0, j] += gy[i, j]
            m1 = m1 / c
            m2 = m2 / c
            for j in range(c):
                gx[i, j] = inv_std[i] * (gy[i, j] * scale[0, j] - m1 - xhat[i, j] * m2)
    return gx_arr, gscale_arr, gshift_arr


def attention_forward(double[:, ::1] q, double[:, ::1] k, double[:, ::1] v, double inv_scale):
    cdef Py_ssize_t i, j, l, nq = q.shape[0], nk = k.shape[0], dk = q.shape[1], dv = v.shape[1]
    cdef double acc
    logits_arr = np.empty((nq, nk))
    w_arr = np.empty((nq, nk))
    out_arr = np.zeros((nq, dv))
    cdef double[:, ::1] logits = logits_arr
    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(nq):
            for j in range(nk):
                acc = 0.0
                for l in range(dk):
                    acc += q[i, l] * k[j, l]
                logits[i, j] = acc * inv_scale
            _softmax_row(logits, w, i)
            for j in range(nk):
                for l in range(dv):
                    out[i, l] += w[i, j] * v[j, l]
    return out_arr, w_arr


def attention_backward(double[:, ::1] gout, double[:, ::1] q, double[:, ::1] k,
                       double[:, ::1] v, double[:, ::1] w, double inv_scale):
    cdef Py_ssize_t i, j, l, nq = q.shape[0], nk = k.shape[0], dk = q.shape[1], dv = v.shape[1]
    cdef double acc, dot
    gq_arr = np.zeros((nq, dk))
    gk_arr = np.zeros((nk, dk))
    gv_arr = np.zeros((nk, dv))
    gl_arr = np.empty((nq, nk))
    cdef double[:, ::1] gq = gq_arr
    cdef double[:, ::1] gk = gk_arr
    cdef double[:, ::1] gv = gv_arr
    cdef double[:, ::1] gl = gl_arr
    with nogil:
        for i in range(nq):
            dot = 0.0
            for j in range(nk):
                acc = 0.0
                for l in range(dv):
                    acc += gout[i, l] * v[j, l]
                    gv[j, l] += w[i, j] * gout[i, l]
                gl[i, j] = acc
                dot += acc * w[i, j]
            for j in range(nk):
                gl[i, j] = w[i, j] * (gl[i, j] - dot) * inv_scale
                for l in range(dk):
                    gq[i, l] += gl[i, j] * k[j, l]
                    gk[j, l] += gl[i, j] * q[i, l]
    return gq_arr, gk_arr, gv_arr


def nt_xent_forward(double[:, ::1] sim, double inv_t, bint include_positive):
    cdef Py_ssize_t i, j, b = sim.shape[0]
    cdef double m, s, z, total = 0.0
    probs_arr = np.zeros((b, b))
    cdef double[:, ::1] p = probs_arr
    with nogil:
        for i in range(b):
            m = -INFINITY
            for j in range(b):
                if include_positive or j != i:
                    z = sim[i, j] * inv_t
                    if z > m:
                        m = z
            s = 0.0
            for j in range(b):
                if include_positive or j != i:
                    p[i, j] = exp(sim[i, j] * inv_t - m)
                    s += p[i, j]
            for j in range(b):
                p[i, j] = p[i, j] / s
            total += m + log(s) - sim[i, i] * inv_t
    return total / b, probs_arr


def nt_xent_backward(double[:, ::1] probs, double inv_t, double gscalar):
    cdef Py_ssize_t i, j, b = probs.shape[0]
    cdef double f = gscalar * inv_t / b
    out = np.empty((b, b))
    cdef double[:, ::1] g = out
    with nogil:
        for i in range(b):
            for j in range(b):
                g[i, j] = probs[i, j] * f
            g[i, i] = (probs[i, i] - 1.0) * f
    return out


cdef void _mm(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out) noexcept nogil:
    # out = a @ b
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for l in range(a.shape[1]):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc


cdef void _mm_tn_acc(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out) noexcept nogil:
    # out += a.T @ b
    cdef Py_ssize_t i, j, l
    for l in range(a.shape[0]):
        for i in range(a.shape[1]):
            for j in range(b.shape[1]):
                out[i, j] += a[l, i] * b[l, j]


cdef void _mm_nt_acc(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out) noexcept nogil:
    # out += a @ b.T
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            acc = 0.0
            for l in range(a.shape[1]):
                acc += a[i, l] * b[j, l]
            out[i, j] += acc


def mha_forward(double[:, ::1] qs, double[:, ::1] ks, double[:, ::1] vs,
                list wq, list wk, list wv, double[:, ::1] wo):
    """Multi-head attention; returns (output, cache for the backward pass)."""
    cdef Py_ssize_t h = len(wq), i, r, c, col = 0
    cdef Py_ssize_t nq = qs.shape[0], dout = wo.shape[1]
    cdef double[:, ::1] qi, ki, vi, oi, cat_v
    heads = []
    cat = np.empty((nq, wo.shape[0]))
    cat_v = cat
    for i in range(h):
        qi_a = np.empty((nq, wq[i].shape[1]))
        ki_a = np.empty((ks.shape[0], wk[i].shape[1]))
        vi_a = np.empty((vs.shape[0], wv[i].shape[1]))
        qi = qi_a
        ki = ki_a
        vi = vi_a
        _mm(qs, wq[i], qi)
        _mm(ks, wk[i], ki)
        _mm(vs, wv[i], vi)
        oi_a, wi_a = attention_forward(qi, ki, vi, 1.0 / sqrt(qi.shape[1]))
        oi = oi_a
        for r in range(nq):
            for c in range(oi.shape[1]):
                cat_v[r, col + c] = oi[r, c]
        col += oi.shape[1]
        heads.append((qi_a, ki_a, vi_a, wi_a))
    out = np.empty((nq, dout))
    _mm(cat_v, wo, out)
    return out, (heads, cat)


def mha_backward(double[:, ::1] g, double[:, ::1] qs, double[:, ::1] ks, double[:, ::1] vs,
                 list wq, list wk, list wv, double[:, ::1] wo, tuple cache):
    heads, cat = cache
    cdef Py_ssize_t i, r, c, col = 0, width
    cdef double[:, ::1] gcat_v, gslice
    gcat = np.zeros((g.shape[0], wo.shape[0]))
    gcat_v = gcat
    _mm_nt_acc(g, wo, gcat_v)
    gwo = np.zeros((wo.shape[0], wo.shape[1]))
    _mm_tn_acc(cat, g, gwo)
    gqs = np.zeros((qs.shape[0], qs.shape[1]))
    gks = np.zeros((ks.shape[0], ks.shape[1]))
    gvs = np.zeros((vs.shape[0], vs.shape[1]))
    gwq, gwk, gwv = [], [], []
    for i in range(len(heads)):
        qi_a, ki_a, vi_a, wi_a = heads[i]
        width = vi_a.shape[1]
        gslice_a = np.empty((g.shape[0], width))
        gslice = gslice_a
        for r in range(g.shape[0]):
            for c in range(width):
                gslice[r, c] = gcat_v[r, col + c]
        col += width
        gqi, gki, gvi = attention_backward(gslice, qi_a, ki_a, vi_a, wi_a, 1.0 / sqrt(qi_a.shape[1]))
        a = np.zeros((qs.shape[1], width)); _mm_tn_acc(qs, gqi, a); gwq.append(a)
        b = np.zeros((ks.shape[1], width)); _mm_tn_acc(ks, gki, b); gwk.append(b)
        d = np.zeros((vs.shape[1], width)); _mm_tn_acc(vs, gvi, d); gwv.append(d)
        _mm_nt_acc(gqi, wq[i], gqs)
        _mm_nt_acc(gki, wk[i], gks)
        _mm_nt_acc(gvi, wv[i], gvs)
    return gqs, gks, gvs, gwq, gwk, gwv, gwo
