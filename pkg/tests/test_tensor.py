import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from privmotion import tensor as tc
from privmotion.errors import ConfigError, ContractError, DimensionError, FormatError

from conftest import numeric_grads, rel_error


def schoolbook(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


# ------------------------------------------------------------------- matmul

def test_matmul_identity(rng):
    g = tc.Graph()
    m = rng.normal(size=(3, 4))
    out = tc.matmul(g.const(np.eye(3)), g.const(m))
    np.testing.assert_array_equal(out.value, m)


def test_matmul_hand_arithmetic():
    g = tc.Graph()
    out = tc.matmul(g.const([[1, 2], [3, 4]]), g.const([[1], [1]]))
    np.testing.assert_array_equal(out.value, [[3], [7]])


def test_matmul_matches_schoolbook(rng):
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    g = tc.Graph()
    out = tc.matmul(g.const(a), g.const(b)).value
    np.testing.assert_allclose(out, schoolbook(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    g = tc.Graph()
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        tc.matmul(g.const(np.ones((2, 3))), g.const(np.ones((2, 3))))


def test_batched_matmul_gradient_sums_over_batch(rng):
    A = rng.normal(size=(4, 4))
    h = rng.normal(size=(3, 4, 2))
    g = tc.Graph()
    a = g.param("A", A)
    loss = tc.sum_all(tc.matmul(a, g.const(h)))
    grads = tc.backward(g, loss)
    expected = sum(np.ones((4, 2)) @ h[i].T for i in range(3))
    np.testing.assert_allclose(grads["A"], expected, atol=1e-12)


# ------------------------------------------------------------ affine / tanh

def test_affine_identity_cases(rng):
    x = rng.normal(size=(4, 4))
    g = tc.Graph()
    xn = g.const(x)
    np.testing.assert_array_equal(tc.affine_combine(1, xn, 1, g.const(np.zeros((4, 4)))).value, x)
    np.testing.assert_allclose(tc.affine_combine(0.7, xn, 0.3, xn).value, x, atol=1e-15)


def test_affine_matches_scalar_loop(rng):
    h_obs, h_priv = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    g = tc.Graph()
    out = tc.affine_combine(0.7, g.const(h_obs), 0.3, g.const(h_priv)).value
    for i in range(4):
        for j in range(4):
            assert abs(out[i, j] - (0.7 * h_obs[i, j] + 0.3 * h_priv[i, j])) <= 1e-12


def test_affine_shape_mismatch():
    g = tc.Graph()
    with pytest.raises(DimensionError):
        tc.affine_combine(1, g.const(np.ones((2, 2))), 1, g.const(np.ones((2, 3))))


def test_tanh_zero_and_saturation():
    g = tc.Graph()
    assert np.all(tc.tanh_act(g.const(np.zeros((2, 2)))).value == 0)
    x = g.param("x", [[50.0, -50.0]])
    y = tc.tanh_act(x)
    np.testing.assert_allclose(y.value, [[1.0, -1.0]], atol=1e-15)
    grads = tc.backward(g, tc.sum_all(y))
    np.testing.assert_allclose(grads["x"], 0.0, atol=1e-15)


def test_tanh_gradient_matches_finite_differences(rng):
    store = tc.ParamStore({"x": rng.normal(size=(3, 3))})
    w = rng.normal(size=(3, 3))

    def build(s):
        g = tc.Graph()
        loss = tc.sum_all(tc.mul(tc.tanh_act(g.param("x", s["x"])), g.const(w)))
        return g, loss

    g, loss = build(store)
    analytic = tc.backward(g, loss)["x"]
    numeric = numeric_grads(lambda s: float(build(s)[1].value), store)["x"]
    assert np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-12)) < 1e-6


# ------------------------------------------------------------------ dropout

def test_dropout_identity_cases(rng):
    g = tc.Graph()
    x = g.const(rng.normal(size=(3, 3)))
    assert tc.dropout_apply(x, 0.0, True, rng) is x
    assert tc.dropout_apply(x, 0.5, False, rng) is x


def test_dropout_rate_validation(rng):
    g = tc.Graph()
    with pytest.raises(ConfigError):
        tc.dropout_apply(g.const(np.ones((2, 2))), 1.0, True, rng)


def test_dropout_monte_carlo(rng):
    g = tc.Graph()
    x = np.full((100, 100), 2.0)
    out = tc.dropout_apply(g.const(x), 0.5, True, rng).value
    survivors = np.count_nonzero(out) / out.size
    assert abs(survivors - 0.5) < 0.02
    np.testing.assert_allclose(out[out != 0], 4.0)
    assert abs(out.mean() - 2.0) < 0.08


def test_dropout_gradient_routes_through_survivors(rng):
    g = tc.Graph()
    x = g.param("x", np.ones((20, 20)))
    y = tc.dropout_apply(x, 0.5, True, rng)
    grads = tc.backward(g, tc.sum_all(y))
    np.testing.assert_array_equal(grads["x"] != 0, y.value != 0)


# ------------------------------------------------------------------- losses

@pytest.mark.parametrize("kind", tc.LOSS_KINDS)
def test_loss_reduce_zero(kind):
    g = tc.Graph()
    assert float(tc.loss_reduce(kind, g.const(np.zeros((4, 3)))).value) == 0.0


def test_l2_rows_345():
    g = tc.Graph()
    assert float(tc.loss_reduce("l2_rows", g.const([[3.0, 4.0, 0.0]])).value) == 5.0


def test_l2_rows_needs_three_columns():
    g = tc.Graph()
    with pytest.raises(DimensionError):
        tc.loss_reduce("l2_rows", g.const(np.ones((2, 4))))


def test_frobenius_matches_loop(rng):
    x = rng.normal(size=(6, 6))
    acc = 0.0
    for v in x.ravel():
        acc += v * v
    g = tc.Graph()
    assert abs(float(tc.loss_reduce("frobenius", g.const(x)).value) - acc ** 0.5) < 1e-12


def test_zero_point_gradients_are_zero():
    g = tc.Graph()
    x = g.param("x", np.zeros((2, 3)))
    loss = tc.add(tc.add(tc.loss_reduce("l1_sum", x), tc.loss_reduce("frobenius", x)), tc.loss_reduce("l2_rows", x))
    grads = tc.backward(g, loss)
    assert np.all(grads["x"] == 0)


# ----------------------------------------------------------------- backward

def test_backward_sum_gives_ones(rng):
    g = tc.Graph()
    x = g.param("x", rng.normal(size=(3, 2)))
    np.testing.assert_array_equal(tc.backward(g, tc.sum_all(x))["x"], np.ones((3, 2)))


def test_backward_frobenius_squared(rng):
    xv = rng.normal(size=(4, 3))
    g = tc.Graph()
    x = g.param("x", xv)
    f = tc.loss_reduce("frobenius", x)
    grads = tc.backward(g, tc.mul(f, f))
    np.testing.assert_allclose(grads["x"], 2 * xv, atol=1e-12)


def test_backward_requires_scalar():
    g = tc.Graph()
    x = g.param("x", np.ones((2, 2)))
    with pytest.raises(ContractError):
        tc.backward(g, x)


def test_backward_repeatable_and_fills_every_reachable_node(rng):
    g = tc.Graph()
    x = g.param("x", rng.normal(size=(3, 3)))
    y = tc.tanh_act(tc.matmul(x, x))
    loss = tc.loss_reduce("frobenius", y)
    first = tc.backward(g, loss)
    for node in (x, y, loss):
        assert g.grads[node.index].shape == node.shape
    second = tc.backward(g, loss)
    np.testing.assert_array_equal(first["x"], second["x"])


def test_backward_linearity(rng):
    g = tc.Graph()
    x = g.param("x", rng.normal(size=(4, 3)))
    l1 = tc.loss_reduce("l2_rows", tc.tanh_act(x))
    l2 = tc.loss_reduce("frobenius", tc.matmul(x, g.const(rng.normal(size=(3, 3)))))
    both = tc.backward(g, tc.add(l1, l2))["x"]
    separate = tc.backward(g, l1)["x"] + tc.backward(g, l2)["x"]
    np.testing.assert_allclose(both, separate, rtol=0, atol=1e-12)


def test_unreachable_parameter_gets_zero_gradient():
    g = tc.Graph()
    x = g.param("x", np.ones((2, 2)))
    g.param("unused", np.ones((3, 1)))
    grads = tc.backward(g, tc.sum_all(x))
    np.testing.assert_array_equal(grads["unused"], np.zeros((3, 1)))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-3, 3)),
       arrays(np.float64, (4, 3), elements=st.floats(-3, 3)))
def test_composite_gradients_match_finite_differences(a, b):
    store = tc.ParamStore({"a": a, "b": b})

    def build(s):
        g = tc.Graph()
        pa, pb = g.param("a", s["a"]), g.param("b", s["b"])
        h = tc.tanh_act(tc.matmul(pa, pb))
        out = tc.affine_combine(0.7, h, 0.3, tc.transpose(h))
        return g, tc.add(tc.sum_all(tc.mul(out, out)), tc.scale(tc.sum_all(h), 0.5))

    g, loss = build(store)
    analytic = tc.backward(g, loss)
    numeric = numeric_grads(lambda s: float(build(s)[1].value), store)
    for name in store:
        assert rel_error(analytic[name], numeric[name]) < 1e-3


def test_take_cols_and_reshape_gradients(rng):
    store = tc.ParamStore({"x": rng.normal(size=(3, 6))})

    def build(s):
        g = tc.Graph()
        x = g.param("x", s["x"])
        part = tc.reshape(tc.take_cols(x, 1, 4), (3, 3))
        return g, tc.loss_reduce("l2_rows", part)

    g, loss = build(store)
    analytic = tc.backward(g, loss)["x"]
    numeric = numeric_grads(lambda s: float(build(s)[1].value), store)["x"]
    assert rel_error(analytic, numeric) < 1e-6
    assert np.all(analytic[:, [0, 4, 5]] == 0)


# --------------------------------------------------------------------- adam

def test_adam_zero_gradient_leaves_params():
    store = tc.ParamStore({"w": np.array([[1.0, -2.0]])})
    before = store["w"].copy()
    tc.adam_step(store, {"w": np.zeros((1, 2))}, lr=0.1)
    np.testing.assert_array_equal(store["w"], before)
    assert store.step == 1


def test_adam_first_step_moves_by_lr():
    store = tc.ParamStore({"p": [[0.0]]})
    tc.adam_step(store, {"p": np.array([[1.0]])}, lr=0.01, clip_norm=None)
    assert abs(store["p"][0, 0] + 0.01) < 1e-10


def test_adam_descends_quadratic():
    store = tc.ParamStore({"p": [[0.0]]})
    losses = []
    for _ in range(10):
        g = tc.Graph()
        d = tc.sub(g.param("p", store["p"]), g.const([[3.0]]))
        loss = tc.mul(d, d)
        losses.append(float(loss.value.sum()))
        grads = tc.backward(g, tc.sum_all(loss))
        tc.adam_step(store, grads, lr=0.1)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_missing_gradient_named():
    store = tc.ParamStore({"w": np.ones((1, 1)), "v": np.ones((1, 1))})
    with pytest.raises(ContractError, match="'v'"):
        tc.adam_step(store, {"w": np.ones((1, 1))}, lr=0.1)


def test_adam_clips_global_norm():
    a = tc.ParamStore({"w": [[0.0, 0.0]]})
    b = tc.ParamStore({"w": [[0.0, 0.0]]})
    tc.adam_step(a, {"w": np.array([[30.0, 40.0]])}, lr=0.1, clip_norm=1.0)
    tc.adam_step(b, {"w": np.array([[0.6, 0.8]])}, lr=0.1, clip_norm=None)
    np.testing.assert_array_equal(a.m["w"], b.m["w"])
    np.testing.assert_array_equal(a["w"], b["w"])


def test_adam_deterministic(rng):
    grads = {"w": rng.normal(size=(3, 3))}
    a = tc.ParamStore({"w": np.ones((3, 3))})
    b = a.copy()
    for _ in range(3):
        tc.adam_step(a, grads, 0.01)
        tc.adam_step(b, grads, 0.01)
    assert a.equals(b) and a.step == b.step == 3


# ------------------------------------------------------------ serialization

def test_params_roundtrip_bit_exact(rng, tmp_path):
    store = tc.ParamStore({"a.W": rng.normal(size=(3, 5)), "b.A": rng.normal(size=(2, 2))})
    tc.adam_step(store, {"a.W": rng.normal(size=(3, 5)), "b.A": rng.normal(size=(2, 2))}, 0.01)
    path = tc.save_params(tmp_path / "x.pkck", store, {"stage": "ITP"})
    loaded, meta = tc.load_params(path)
    assert loaded.names() == store.names()
    for k in store:
        assert loaded[k].tobytes() == store[k].tobytes()
        assert loaded.m[k].tobytes() == store.m[k].tobytes()
        assert loaded.v[k].tobytes() == store.v[k].tobytes()
    assert loaded.step == 1 and meta == {"stage": "ITP"}


def test_params_container_layout():
    store = tc.ParamStore({"w": [[1.5]]})
    blob = tc.dump_params(store, with_optimizer=False)
    assert blob[:4] == b"PKG1"
    assert blob[4:8] == (1).to_bytes(4, "little")
    assert blob[8:12] == (1).to_bytes(4, "little") and blob[12:13] == b"w"
    assert blob[13:21] == (1).to_bytes(4, "little") * 2
    assert np.frombuffer(blob[21:29], "<f8")[0] == 1.5


def test_bad_magic_and_truncation(tmp_path):
    blob = tc.dump_params(tc.ParamStore({"w": np.ones((2, 2))}))
    with pytest.raises(FormatError, match="magic"):
        tc.parse_params(b"XXXX" + blob[4:])
    with pytest.raises(FormatError) as info:
        tc.parse_params(blob[:30])
    assert info.value.offset is not None
    with pytest.raises(FormatError, match="trailing"):
        tc.parse_params(blob + b"\0")
