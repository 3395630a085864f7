import numpy as np
import pytest

from privmotion import tensor as tc
from privmotion.errors import DimensionError
from privmotion.gcn import EVAL, NUM_BLOCKS, CodecSpec, Mode, codec_forward, gc_layer, init_codec, residual_block
from privmotion.networks import NetSpec


def _nodes(g, params):
    return {k: g.param(k, v) for k, v in params.items()}


def test_gc_layer_identity_adjacency_weights(rng):
    h = rng.normal(size=(4, 4))
    g = tc.Graph()
    out = gc_layer(g.const(h), g.const(np.eye(4)), g.const(np.eye(4)), "tanh")
    np.testing.assert_allclose(out.value, np.tanh(h), atol=1e-15)


def test_gc_layer_matches_loop(rng):
    A, h, W = rng.normal(size=(3, 3)), rng.normal(size=(3, 5)), rng.normal(size=(5, 2))
    g = tc.Graph()
    out = gc_layer(g.const(h), g.const(A), g.const(W), "none").value
    for i in range(3):
        for j in range(2):
            acc = 0.0
            for a in range(3):
                for b in range(5):
                    acc += A[i, a] * h[a, b] * W[b, j]
            assert abs(out[i, j] - acc) < 1e-12


def test_gc_layer_shape_errors():
    g = tc.Graph()
    with pytest.raises(DimensionError):
        gc_layer(g.const(np.ones((3, 4))), g.const(np.eye(2)), g.const(np.ones((4, 4))))
    with pytest.raises(DimensionError):
        gc_layer(g.const(np.ones((3, 4))), g.const(np.eye(3)), g.const(np.ones((5, 4))))


def test_zero_params_give_zero_output(rng):
    spec = CodecSpec("x", 6, 8, 16, 8)
    params = {k: np.zeros(s) for k, s in spec.param_shapes().items()}
    g = tc.Graph()
    out = codec_forward(g.const(rng.normal(size=(6, 8))), spec, _nodes(g, params))
    assert np.all(out.value == 0)


def test_zero_weight_residual_block_is_identity(rng):
    spec = CodecSpec("x", 5, 4, 7, 4)
    params = {k: np.zeros(s) for k, s in spec.param_shapes().items()}
    h = rng.normal(size=(5, 7))
    g = tc.Graph()
    nodes = _nodes(g, params)
    for b in range(NUM_BLOCKS):
        np.testing.assert_array_equal(residual_block(g.const(h), spec, b, nodes).value, h)


def test_codec_reproducible_from_seed(rng):
    spec = CodecSpec("x", 6, 8, 8, 8)
    h = rng.normal(size=(6, 8))
    outs = []
    for _ in range(2):
        params = init_codec(spec, np.random.default_rng(3))
        g = tc.Graph()
        outs.append(codec_forward(g.const(h), spec, _nodes(g, params)).value)
    assert outs[0].tobytes() == outs[1].tobytes()


def test_init_bounds():
    spec = CodecSpec("x", 9, 16, 32, 16)
    params = init_codec(spec, np.random.default_rng(0))
    for name, value in params.items():
        bound = 1 / 3 if name.endswith(".A") else 1 / np.sqrt(value.shape[0])
        assert np.all(np.abs(value) <= bound)
        assert np.abs(value).max() > 0.8 * bound


def test_seeds_give_different_params():
    spec = NetSpec("fp", 6, 8, 16)
    assert not spec.init(0).equals(spec.init(1))
    assert spec.init(5).equals(spec.init(5))


def test_dropout_skips_output_layer(rng):
    spec = CodecSpec("x", 4, 4, 4, 4, "none")
    params = init_codec(spec, np.random.default_rng(0))
    g = tc.Graph()
    mode = Mode(True, 0.5, np.random.default_rng(0))
    out = codec_forward(g.const(rng.normal(size=(4, 4))), spec, _nodes(g, params), mode)
    # an output-layer mask would zero whole entries with probability 1/2
    assert np.count_nonzero(out.value) == out.value.size


def test_eval_mode_ignores_dropout(rng):
    spec = CodecSpec("x", 4, 4, 4, 4)
    params = init_codec(spec, np.random.default_rng(0))
    h = rng.normal(size=(4, 4))
    g = tc.Graph()
    a = codec_forward(g.const(h), spec, _nodes(g, params), EVAL).value
    b = codec_forward(g.const(h), spec, _nodes(g, params), Mode(False, 0.5, np.random.default_rng(1))).value
    np.testing.assert_array_equal(a, b)


def counting_oracle(k, c, hidden):
    """Hand count of one codec: input layer, 4 blocks x 2 layers, output layer."""
    layer_in = k * k + c * hidden
    blocks = 4 * 2 * (k * k + hidden * hidden)
    layer_out = k * k + hidden * c
    return layer_in + blocks + layer_out


def test_param_count_formula_at_full_width():
    codec = CodecSpec("c", 32, 60, 256, 60)
    expected = 32 * 32 + 60 * 256 + 4 * 2 * (32 * 32 + 256 * 256) + 32 * 32 + 256 * 60
    assert codec.param_count() == counting_oracle(32, 60, 256) == expected == 565_248
    # encoders end in the 256-wide latent, decoders start there
    assert CodecSpec("e", 32, 60, 256, 256).param_count() == expected - 256 * 60 + 256 * 256
    assert CodecSpec("d", 32, 256, 256, 60, "none").param_count() == expected - 60 * 256 + 256 * 256


@pytest.mark.parametrize("kind", ["itp", "fp", "psl"])
def test_network_param_count(kind):
    spec = NetSpec(kind, 6, 8, 16)
    enc = 36 + 8 * 16 + 8 * (36 + 256) + 36 + 256
    dec = 36 + 256 + 8 * (36 + 256) + 36 + 16 * 8
    encoders = 1 if kind == "psl" else 2
    assert sum(int(np.prod(s)) for s in spec.param_shapes().values()) == encoders * enc + dec


def test_full_width_model_size_order():
    total = sum(int(np.prod(s)) for kind in ("itp", "fp")
                for s in NetSpec(kind, 32, 60, 256).param_shapes().values())
    assert 2.0e6 < total < 4.0e6
