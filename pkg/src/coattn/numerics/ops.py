"""Differentiable matrix operations.

Each op computes its forward value eagerly and, when a tape is active and
some input needs a gradient, records a closure mapping the output gradient
to input gradients.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from coattn.errors import ConfigurationError, DegenerateInputError, DimensionError
from coattn.numerics import kernels
from coattn.numerics.tensor import Tensor, current_tape

LAYER_NORM_EPS = 1e-5


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(value: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._raw(value, needs)
    if needs:
        tape.record(out, tuple(inputs), backward)
    return out


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")

    def back(g):
        return g @ bv.T, av.T @ g

    return _emit(av @ bv, (a, b), back)


def transpose(a) -> Tensor:
    a = _wrap(a)
    return _emit(np.ascontiguousarray(a.value.T), (a,), lambda g: (np.ascontiguousarray(g.T),))


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may be a single row broadcast over ``a``'s rows."""
    a, b = _wrap(a), _wrap(b)
    if a.cols != b.cols or (b.rows != a.rows and b.rows != 1):
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")
    broadcast = b.rows != a.rows

    def back(g):
        return g, (g.sum(axis=0, keepdims=True) if broadcast else g)

    return _emit(a.value + b.value, (a, b), back)


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return _emit(a.value * c, (a,), lambda g: (g * c,))


def sum_all(a) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    return _emit(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean_rows(a) -> Tensor:
    """Average over rows, giving a 1 x cols matrix."""
    a = _wrap(a)
    n = a.rows

    def back(g):
        return (np.repeat(g / n, n, axis=0),)

    return _emit(a.value.mean(axis=0, keepdims=True), (a,), back)


def concat_cols(parts: Sequence) -> Tensor:
    parts = [_wrap(p) for p in parts]
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise DimensionError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def back(g):
        return tuple(np.ascontiguousarray(g[:, bounds[i]:bounds[i + 1]]) for i in range(len(parts)))

    return _emit(np.concatenate([p.value for p in parts], axis=1), parts, back)


def concat_rows(parts: Sequence) -> Tensor:
    parts = [_wrap(p) for p in parts]
    cols = parts[0].cols
    if any(p.cols != cols for p in parts):
        raise DimensionError(f"concat_rows column mismatch: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def back(g):
        return tuple(np.ascontiguousarray(g[bounds[i]:bounds[i + 1]]) for i in range(len(parts)))

    return _emit(np.concatenate([p.value for p in parts], axis=0), parts, back)


def softmax_rows(x) -> Tensor:
    x = _wrap(x)
    k = kernels.backend
    y = k.softmax_rows(x.value)
    return _emit(y, (x,), lambda g: (k.softmax_rows_backward(y, np.ascontiguousarray(g)),))


def layer_norm(x, scale, shift, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Row-wise normalisation over the feature axis, then affine transform."""
    x, scale, shift = _wrap(x), _wrap(scale), _wrap(shift)
    cols = x.value.shape[1]
    if scale.value.shape != (1, cols) or shift.value.shape != (1, cols):
        raise DimensionError(
            f"layer_norm expects scale/shift of shape (1, {cols}), got {scale.shape} and {shift.shape}"
        )
    if not eps > 0:
        raise ConfigurationError(f"layer_norm epsilon must be positive, got {eps}")
    k = kernels.backend
    y, xhat, inv_std = k.layer_norm_forward(x.value, scale.value, shift.value, float(eps))
    sv = scale.value

    def back(g):
        return k.layer_norm_backward(np.ascontiguousarray(g), xhat, inv_std, sv)

    return _emit(y, (x, scale, shift), back)


def attention(q, k, v) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v, fused into one recorded op."""
    q, k, v = _wrap(q), _wrap(k), _wrap(v)
    if q.cols != k.cols:
        raise DimensionError(f"attention query/key width mismatch: q {q.shape}, k {k.shape}")
    if k.rows != v.rows:
        raise DimensionError(f"attention key/value length mismatch: k {k.shape}, v {v.shape}")
    kern = kernels.backend
    inv_scale = 1.0 / math.sqrt(q.cols)
    out, w = kern.attention_forward(q.value, k.value, v.value, inv_scale)
    qv, kv, vv = q.value, k.value, v.value

    def back(g):
        return kern.attention_backward(np.ascontiguousarray(g), qv, kv, vv, w, inv_scale)

    return _emit(out, (q, k, v), back)


def multi_head_attention(q_src, k_src, v_src, wq: Sequence, wk: Sequence, wv: Sequence, w_o) -> Tensor:
    """Concat_i(attention(q_src wq_i, k_src wk_i, v_src wv_i)) @ w_o as one recorded op."""
    q_src, k_src, v_src, w_o = _wrap(q_src), _wrap(k_src), _wrap(v_src), _wrap(w_o)
    wq, wk, wv = [_wrap(w) for w in wq], [_wrap(w) for w in wk], [_wrap(w) for w in wv]
    h = len(wq)
    if not (h == len(wk) == len(wv)) or h < 1:
        raise ConfigurationError(f"inconsistent head counts: {len(wq)}, {len(wk)}, {len(wv)}")
    (nq, d), (nk, dk_src), (nv, dv_src) = q_src.value.shape, k_src.value.shape, v_src.value.shape
    if d != dk_src or nk != nv:
        raise DimensionError(f"multi-head sources disagree: q {q_src.shape}, k {k_src.shape}, v {v_src.shape}")
    width = 0
    for a, b, c in zip(wq, wk, wv):
        sa, sb, sc = a.value.shape, b.value.shape, c.value.shape
        if sa[0] != d or sb[0] != d or sc[0] != dv_src or sa[1] != sb[1]:
            raise DimensionError(f"head projections {sa}, {sb}, {sc} do not fit sources of width {d}")
        width += sc[1]
    if w_o.value.shape[0] != width:
        raise DimensionError(f"concatenated heads have width {width}, w_o expects {w_o.value.shape[0]}")
    kern = kernels.backend
    qs, ks, vs = q_src.value, k_src.value, v_src.value
    wqv, wkv, wvv = [w.value for w in wq], [w.value for w in wk], [w.value for w in wv]
    wov = w_o.value
    out, cache = kern.mha_forward(qs, ks, vs, wqv, wkv, wvv, wov)

    def back(g):
        gqs, gks, gvs, gwq, gwk, gwv, gwo = kern.mha_backward(
            np.ascontiguousarray(g), qs, ks, vs, wqv, wkv, wvv, wov, cache)
        return (gqs, gks, gvs, *gwq, *gwk, *gwv, gwo)

    return _emit(out, (q_src, k_src, v_src, *wq, *wk, *wv, w_o), back)


def attention_weights(q, k) -> np.ndarray:
    """The softmax weight matrix of :func:`attention` (not differentiable)."""
    q, k = _wrap(q), _wrap(k)
    return kernels.backend.softmax_rows((q.value @ k.value.T) * (1.0 / math.sqrt(q.cols)))


def l2_normalize_rows(x) -> Tensor:
    x = _wrap(x)
    norms = np.sqrt((x.value * x.value).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms[:, 0] == 0.0)[0])
        raise DegenerateInputError(f"row {bad} has zero norm; cosine similarity is undefined")
    y = x.value / norms

    def back(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return _emit(y, (x,), back)


def nt_xent(sim, temperature: float, include_positive: bool) -> Tensor:
    """Mean over rows of -log softmax of the diagonal entry.

    Row ``i`` uses logits ``sim[i, :] / temperature``; the denominator skips the
    diagonal unless ``include_positive``.
    """
    sim = _wrap(sim)
    kern = kernels.backend
    value, probs = kern.nt_xent_forward(sim.value, 1.0 / temperature, bool(include_positive))
    inv_t = 1.0 / temperature

    def back(g):
        return (kern.nt_xent_backward(probs, inv_t, float(g[0, 0])),)

    return _emit(np.array([[value]]), (sim,), back)
