"""Reference numpy kernels. Selected when the compiled extension is unavailable.

Every function takes and returns C-contiguous float64 arrays; shapes are checked
by the callers in :mod:`coattn.numerics.ops`.
"""
import numpy as np

NAME = "python"


def softmax_rows(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def layer_norm_forward(x, scale, shift, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * scale + shift, xhat, inv_std[:, 0].copy()


def layer_norm_backward(gy, xhat, inv_std, scale):
    gshift = gy.sum(axis=0, keepdims=True)
    gscale = (gy * xhat).sum(axis=0, keepdims=True)
    gxhat = gy * scale
    gx = inv_std[:, None] * (
        gxhat
        - gxhat.mean(axis=1, keepdims=True)
        - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
    )
    return gx, gscale, gshift


def attention_forward(q, k, v, inv_scale):
    w = softmax_rows((q @ k.T) * inv_scale)
    return w @ v, w


def attention_backward(gout, q, k, v, w, inv_scale):
    gw = gout @ v.T
    gv = w.T @ gout
    glogits = softmax_rows_backward(w, gw) * inv_scale
    return glogits @ k, glogits.T @ q, gv


def nt_xent_forward(sim, inv_t, include_positive):
    """Row-wise contrastive loss; returns (batch mean, denominator weights)."""
    b = sim.shape[0]
    logits = sim * inv_t
    if not include_positive:
        logits = logits.copy()
        np.fill_diagonal(logits, -np.inf)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    lse = m[:, 0] + np.log(s[:, 0])
    per_row = lse - np.diagonal(sim) * inv_t
    return float(per_row.sum() / b), probs


def nt_xent_backward(probs, inv_t, gscalar):
    b = probs.shape[0]
    g = probs.copy()
    g[np.diag_indices(b)] -= 1.0
    return g * (gscalar * inv_t / b)


def mha_forward(qs, ks, vs, wq, wk, wv, wo):
    """Multi-head attention; returns (output, cache for the backward pass)."""
    heads = []
    for i in range(len(wq)):
        qi, ki, vi = qs @ wq[i], ks @ wk[i], vs @ wv[i]
        oi, wi = attention_forward(qi, ki, vi, 1.0 / np.sqrt(qi.shape[1]))
        heads.append((qi, ki, vi, wi))
    cat = np.concatenate([w @ v for (_, _, v, w) in heads], axis=1)
    return cat @ wo, (heads, cat)


def mha_backward(g, qs, ks, vs, wq, wk, wv, wo, cache):
    heads, cat = cache
    gcat = g @ wo.T
    gwo = cat.T @ g
    gqs, gks, gvs = np.zeros_like(qs), np.zeros_like(ks), np.zeros_like(vs)
    gwq, gwk, gwv = [], [], []
    col = 0
    for i, (qi, ki, vi, wi) in enumerate(heads):
        width = vi.shape[1]
        gqi, gki, gvi = attention_backward(
            gcat[:, col:col + width], qi, ki, vi, wi, 1.0 / np.sqrt(qi.shape[1]))
        col += width
        gwq.append(qs.T @ gqi)
        gwk.append(ks.T @ gki)
        gwv.append(vs.T @ gvi)
        gqs += gqi @ wq[i].T
        gks += gki @ wk[i].T
        gvs += gvi @ wv[i].T
    return gqs, gks, gvs, gwq, gwk, gwv, gwo
