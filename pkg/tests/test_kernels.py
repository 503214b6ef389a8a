import os
import subprocess
import sys

import numpy as np
import pytest

from coattn.numerics import _pykernels, kernels

compiled = [m for m in kernels.available_backends() if m.NAME == "cython"]
needs_ext = pytest.mark.skipif(not compiled, reason="compiled kernels not built")
TOL = 1e-12


def pair():
    return _pykernels, compiled[0]


def close(a, b):
    np.testing.assert_allclose(a, b, rtol=TOL, atol=TOL)


@needs_ext
def test_softmax_agrees(rng):
    py, cy = pair()
    x = rng.standard_normal((5, 7)) * 10
    y = py.softmax_rows(x)
    close(y, cy.softmax_rows(x))
    g = rng.standard_normal((5, 7))
    close(py.softmax_rows_backward(y, g), cy.softmax_rows_backward(y, g))


@needs_ext
def test_layer_norm_agrees(rng):
    py, cy = pair()
    x = rng.standard_normal((4, 6))
    s, b = rng.standard_normal((1, 6)), rng.standard_normal((1, 6))
    fp, fc = py.layer_norm_forward(x, s, b, 1e-5), cy.layer_norm_forward(x, s, b, 1e-5)
    for a, c in zip(fp, fc):
        close(a, c)
    g = rng.standard_normal((4, 6))
    for a, c in zip(py.layer_norm_backward(g, fp[1], fp[2], s), cy.layer_norm_backward(g, fp[1], fp[2], s)):
        close(a, c)


@needs_ext
def test_attention_agrees(rng):
    py, cy = pair()
    q, k, v = rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), rng.standard_normal((5, 2))
    op, wp = py.attention_forward(q, k, v, 0.5)
    oc, wc = cy.attention_forward(q, k, v, 0.5)
    close(op, oc)
    close(wp, wc)
    g = rng.standard_normal((3, 2))
    for a, c in zip(py.attention_backward(g, q, k, v, wp, 0.5), cy.attention_backward(g, q, k, v, wp, 0.5)):
        close(a, c)


@needs_ext
@pytest.mark.parametrize("include_positive", [False, True])
def test_nt_xent_agrees(rng, include_positive):
    py, cy = pair()
    sim = np.tanh(rng.standard_normal((6, 6)))
    lp, pp = py.nt_xent_forward(sim, 1 / 0.07, include_positive)
    lc, pc = cy.nt_xent_forward(sim, 1 / 0.07, include_positive)
    assert abs(lp - lc) <= TOL * max(1.0, abs(lp))
    close(pp, pc)
    close(py.nt_xent_backward(pp, 1 / 0.07, 0.3), cy.nt_xent_backward(pp, 1 / 0.07, 0.3))


@needs_ext
def test_mha_agrees(rng):
    py, cy = pair()
    d, h = 8, 2
    qs, ks, vs = rng.standard_normal((3, d)), rng.standard_normal((5, d)), rng.standard_normal((5, d))
    wq = [rng.standard_normal((d, d // h)) for _ in range(h)]
    wk = [rng.standard_normal((d, d // h)) for _ in range(h)]
    wv = [rng.standard_normal((d, d // h)) for _ in range(h)]
    wo = rng.standard_normal((d, d))
    op, cp_ = py.mha_forward(qs, ks, vs, wq, wk, wv, wo)
    oc, cc = cy.mha_forward(qs, ks, vs, wq, wk, wv, wo)
    close(op, oc)
    g = rng.standard_normal((3, d))
    gp = py.mha_backward(g, qs, ks, vs, wq, wk, wv, wo, cp_)
    gc = cy.mha_backward(g, qs, ks, vs, wq, wk, wv, wo, cc)
    for a, c in zip(gp, gc):
        if isinstance(a, list):
            for x, y in zip(a, c):
                close(x, y)
        else:
            close(a, c)


def test_use_switches_and_rejects_unknown():
    before = kernels.backend.NAME
    try:
        assert kernels.use("python") is _pykernels
        assert kernels.backend is _pykernels
        with pytest.raises(ImportError):
            kernels.use("fortran")
    finally:
        kernels.use(before)


def test_env_forces_fallback():
    env = dict(os.environ, COATTN_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", "from coattn.numerics import kernels; print(kernels.backend.NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
def test_auto_prefers_compiled():
    env = {k: v for k, v in os.environ.items() if k != "COATTN_KERNELS"}
    out = subprocess.run([sys.executable, "-c", "from coattn.numerics import kernels; print(kernels.backend.NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "cython"
