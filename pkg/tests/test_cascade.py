import numpy as np
import pytest

import oracles
from coattn.attention import self_attention_block
from coattn.cascade import (
    CascadeConfig,
    CascadeParams,
    CascadeState,
    cascade_forward,
    iterating_forward,
    single_module,
    stacking_forward,
    text_tower,
)
from coattn.errors import ConfigurationError, DimensionError


def setup(variant, depth, dim=8, heads=2, seed=0):
    cfg = CascadeConfig(variant, depth, dim, heads)
    return cfg, CascadeParams.init(cfg, np.random.default_rng(seed))


def inputs(rng, frames=3, dim=8):
    return rng.standard_normal((frames, dim)), rng.standard_normal((1, dim))


def test_single_frame_is_finite(backend, rng):
    cfg, params = setup("single", 1)
    out = cascade_forward(*inputs(rng, frames=1), cfg, params)
    assert out.audio.shape == (1, 8) and out.text.shape == (1, 8)
    assert np.all(np.isfinite(out.audio.value)) and np.all(np.isfinite(out.text.value))


def test_single_matches_oracle(backend, rng):
    cfg, params = setup("single", 1, dim=4)
    a, t = inputs(rng, dim=4)
    out = single_module(a, t, params.layers[0])
    ea, et = oracles.single(a, t, params.layers[0])
    np.testing.assert_allclose(out.audio.value, ea, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(out.text.value, et, rtol=1e-10, atol=1e-12)


def test_zero_value_projection_leaves_normalised_stream(backend, rng):
    cfg, params = setup("single", 1, dim=4)
    layer = params.layers[0]
    layer.ga_audio.proj.w_v.value[:] = 0.0
    a, t = inputs(rng, dim=4)
    out = single_module(a, t, layer)
    a1 = self_attention_block(a, layer.sa_audio).value
    want = oracles.layer_norm(a1, layer.ga_audio.out_scale.value, layer.ga_audio.out_shift.value)
    np.testing.assert_allclose(out.audio.value, want, rtol=1e-10, atol=1e-12)


def test_depth_one_stacking_equals_single_bitwise(backend, rng):
    cfg, params = setup("stacking", 1)
    a, t = inputs(rng)
    s = single_module(a, t, params.layers[0])
    out = stacking_forward(a, t, cfg, params)
    assert np.array_equal(out.audio.value, s.audio.value)
    assert np.array_equal(out.text.value, s.text.value)


def test_depth_one_iterating_equals_single(backend, rng):
    cfg, params = setup("iterating", 1)
    a, t = inputs(rng)
    s = single_module(a, t, params.layers[0])
    out = iterating_forward(a, t, cfg, params)
    np.testing.assert_allclose(out.audio.value, s.audio.value, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.text.value, s.text.value, rtol=0, atol=1e-12)


def test_depth_two_stacking_is_composition(backend, rng):
    cfg, params = setup("stacking", 2)
    a, t = inputs(rng)
    first = single_module(a, t, params.layers[0])
    second = single_module(first.audio, first.text, params.layers[1])
    out = stacking_forward(a, t, cfg, params)
    np.testing.assert_allclose(out.audio.value, second.audio.value, atol=1e-12)
    np.testing.assert_allclose(out.text.value, second.text.value, atol=1e-12)


@pytest.mark.parametrize("variant", ["stacking", "iterating"])
def test_depth_five_bounded(backend, rng, variant):
    cfg, params = setup(variant, 5)
    a, t = inputs(rng)
    out = cascade_forward(a, t, cfg, params)
    for got, x in ((out.audio.value, a), (out.text.value, t)):
        assert np.all(np.isfinite(got))
        assert np.linalg.norm(got) <= 100 * np.linalg.norm(x)


def test_text_tower_ignores_audio(backend, rng):
    cfg, params = setup("iterating", 3)
    a, t = inputs(rng)
    ref = iterating_forward(a, t, cfg, params).text.value
    for frames in (1, 2, 5):
        other = rng.standard_normal((frames, 8)) * 3
        assert np.array_equal(iterating_forward(other, t, cfg, params).text.value, ref)


def test_iterating_matches_loop_oracle(backend, rng):
    cfg, params = setup("iterating", 3, dim=8)
    a, t = inputs(rng, frames=4)
    out = iterating_forward(a, t, cfg, params)
    ea, et = oracles.iterating(a, t, params.layers)
    np.testing.assert_allclose(out.text.value, et, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(out.audio.value, ea, rtol=1e-9, atol=1e-9)


def test_precomputed_text_tower(backend, rng):
    cfg, params = setup("iterating", 2)
    a, t = inputs(rng)
    t_n = text_tower(t, cfg, params)
    assert np.array_equal(iterating_forward(a, t, cfg, params, text_final=t_n).audio.value,
                          iterating_forward(a, t, cfg, params).audio.value)


@pytest.mark.parametrize("variant,depth", [("single", 1), ("stacking", 1), ("stacking", 3),
                                           ("iterating", 1), ("iterating", 4)])
def test_output_shapes(backend, rng, variant, depth):
    cfg, params = setup(variant, depth)
    state = CascadeState()
    out = cascade_forward(*inputs(rng, frames=5), cfg, params, state)
    assert out.audio.shape == (5, 8) and out.text.shape == (1, 8)
    assert len(state.audio) == depth + 1


@pytest.mark.parametrize("kwargs", [
    dict(variant="single", depth=2), dict(variant="stacking", depth=0),
    dict(variant="iterating", depth=9), dict(variant="bogus", depth=1),
    dict(variant="iterating", depth=1, dim=6, heads=4),
])
def test_config_errors(kwargs):
    with pytest.raises(ConfigurationError):
        CascadeConfig(**kwargs)


def test_variant_mismatch_rejected(rng):
    cfg, params = setup("iterating", 1)
    with pytest.raises(ConfigurationError):
        stacking_forward(*inputs(rng), cfg, params)


def test_input_shape_errors(rng):
    cfg, params = setup("stacking", 1)
    with pytest.raises(DimensionError):
        stacking_forward(np.ones((3, 8)), np.ones((2, 8)), cfg, params)
    with pytest.raises(DimensionError):
        stacking_forward(np.ones((3, 6)), np.ones((1, 6)), cfg, params)


def test_parameter_names_unique():
    _, params = setup("iterating", 3)
    names = [p.name for p in params.parameters()]
    assert len(names) == len(set(names))
