"""Gradient, optimizer, and container checks for the autodiff core."""

import numpy as np
import pytest

from opirl import autodiff as ad
from opirl.errors import ContractError, DimensionError, ParseError


def params_flat(params):
    return np.concatenate([p.value.reshape(-1) for p in params.values()])


def test_identity_net_passthrough():
    net = ad.Mlp([2, 2], ["identity"], rng=np.random.default_rng(0))
    net.weights[0].value = np.eye(2)
    net.biases[0].value = np.zeros((1, 2))
    out = net.apply(np.array([[1.0, 2.0]]))
    assert np.array_equal(out, [[1.0, 2.0]])


def test_relu_definition():
    x = ad.constant([[-1.0, 3.0]])
    assert np.array_equal(ad.relu(x).value, [[0.0, 3.0]])


def test_relu_subgradient_zero_at_kink():
    p = ad.Parameter([[0.0]])
    out = ad.relu(p)
    ad.backward(out)
    assert p.grad[0, 0] == 0.0


def test_square_gradient():
    p = ad.Parameter([[3.0]])
    ad.backward(ad.square(p))
    assert p.grad[0, 0] == pytest.approx(6.0)


def test_abs_pow_gradient():
    p = ad.Parameter([[4.0]])
    ad.backward(ad.abs_pow(p, 1.5))
    assert p.grad[0, 0] == pytest.approx(3.0)  # 1.5 * 4^0.5


def test_abs_pow_zero_case():
    p = ad.Parameter([[0.0]])
    out = ad.abs_pow(p, 1.5)
    assert out.value[0, 0] == 0.0
    ad.backward(out)
    assert p.grad[0, 0] == 0.0


def test_backward_requires_scalar():
    p = ad.Parameter([[1.0, 2.0]])
    with pytest.raises(ContractError):
        ad.backward(ad.square(p))


def test_matmul_shape_error_names_shapes():
    a = ad.constant(np.ones((2, 3)))
    b = ad.constant(np.ones((2, 3)))
    with pytest.raises(DimensionError, match="2, 3"):
        ad.matmul(a, b)


def test_forward_input_dim_mismatch():
    net = ad.Mlp([3, 4, 1], rng=np.random.default_rng(0))
    with pytest.raises(DimensionError, match="3"):
        net.forward(np.ones((2, 5)))


def test_gradient_accumulation_idempotent_after_zero():
    p = ad.Parameter([[2.0]])
    ad.backward(ad.square(p))
    first = p.grad.copy()
    ad.zero_grad([p])
    ad.backward(ad.square(p))
    assert np.array_equal(p.grad, first)


def test_sum_of_identical_subgraphs_scales_gradient():
    # integer-valued data keeps the float accumulation exact
    p = ad.Parameter([[2.0]])
    single = ad.square(p)
    ad.backward(single)
    g1 = p.grad.copy()
    ad.zero_grad([p])
    total = ad.add(ad.add(ad.square(p), ad.square(p)),
                   ad.add(ad.square(p), ad.square(p)))
    ad.backward(total)
    assert np.array_equal(p.grad, 4.0 * g1)


def test_forward_deterministic_bit_identical():
    net = ad.Mlp([3, 16, 1], rng=np.random.default_rng(5))
    x = np.random.default_rng(6).standard_normal((4, 3))
    a = net.apply(x)
    b = net.apply(x)
    assert np.array_equal(a, b)


def test_two_layer_net_gradient_vs_finite_differences():
    rng = np.random.default_rng(7)
    net = ad.Mlp([3, 8, 1], ["relu", "identity"], rng=rng)
    x = rng.standard_normal((16, 3))
    assert ad.finite_diff_check(net, x, 1e-4) < 1e-4


def test_tanh_net_gradient_vs_finite_differences():
    rng = np.random.default_rng(8)
    net = ad.Mlp([2, 6, 1], ["tanh", "identity"], rng=rng)
    x = rng.standard_normal((8, 2))
    assert ad.finite_diff_check(net, x, 1e-4) < 1e-4


def test_linear_net_finite_differences_exact():
    rng = np.random.default_rng(9)
    net = ad.Mlp([4, 1], ["identity"], rng=rng)
    x = rng.standard_normal((5, 4))
    assert ad.finite_diff_check(net, x, 1e-4) < 1e-8


def test_relu_net_away_from_kinks():
    rng = np.random.default_rng(10)
    net = ad.Mlp([3, 8, 1], ["relu", "identity"], rng=rng)
    rows = []
    while len(rows) < 6:
        x = rng.standard_normal((1, 3)) * 2.0
        z = x @ net.weights[0].value + net.biases[0].value
        if np.min(np.abs(z)) > 0.1:
            rows.append(x[0])
    assert ad.finite_diff_check(net, np.stack(rows), 1e-4) < 1e-4


def test_primitive_gradients_random_seeds():
    # every differentiable primitive against central differences
    ops = {
        "tanh": ad.tanh,
        "exp": ad.exp,
        "square": ad.square,
        "softplus": ad.softplus,
        "log_sigmoid": ad.log_sigmoid,
        "sqrt": lambda n: ad.sqrt(ad.add(ad.square(n), ad.constant(np.full((1, 1), 0.5)))),
        "abs_pow": lambda n: ad.abs_pow(n, 2.5),
        "log": lambda n: ad.log(ad.add(ad.square(n), ad.constant(np.full((1, 1), 1.0)))),
    }
    h = 1e-5
    for seed in range(100):
        rng = np.random.default_rng(seed)
        name, op = list(ops.items())[seed % len(ops)]
        x = rng.standard_normal((2, 3)) * 1.5
        p = ad.Parameter(x)
        ad.backward(ad.total_sum(op(p)))
        analytic = p.grad.copy()

        def f(v):
            q = ad.Parameter(v)
            return float(op(q).value.sum())

        for i in range(x.size):
            pert = x.copy().reshape(-1)
            pert[i] += h
            up = f(pert.reshape(x.shape))
            pert[i] -= 2 * h
            down = f(pert.reshape(x.shape))
            numeric = (up - down) / (2 * h)
            err = abs(analytic.reshape(-1)[i] - numeric) / (abs(numeric) + 1e-8)
            assert err < 1e-4, f"{name} seed {seed} entry {i}: {err}"


def test_minimum_routes_gradient_to_smaller_side():
    a = ad.Parameter([[1.0, 5.0]])
    b = ad.Parameter([[2.0, 3.0]])
    ad.backward(ad.total_sum(ad.minimum(a, b)))
    assert np.array_equal(a.grad, [[1.0, 0.0]])
    assert np.array_equal(b.grad, [[0.0, 1.0]])


def test_input_gradient_matches_numeric():
    rng = np.random.default_rng(11)
    for acts in (["relu", "relu", "identity"], ["tanh", "tanh", "identity"]):
        net = ad.Mlp([3, 8, 8, 1], acts, rng=rng)
        x = rng.standard_normal((4, 3))
        g = net.input_gradient(x).value
        h = 1e-6
        for r in range(4):
            for c in range(3):
                up, down = x.copy(), x.copy()
                up[r, c] += h
                down[r, c] -= h
                numeric = (net.apply(up).sum() - net.apply(down).sum()) / (2 * h)
                assert abs(g[r, c] - numeric) < 1e-5


# -- Adam ----------------------------------------------------------------------


def test_adam_zero_gradient_no_change():
    p = ad.Parameter([[1.0, -2.0]])
    state = ad.AdamState({"w": p}, lr=0.1)
    ad.adam_step({"w": p}, {"w": np.zeros((1, 2))}, state)
    assert np.array_equal(p.value, [[1.0, -2.0]])
    assert state.step_count == 1


def test_adam_first_step_is_lr_times_sign():
    p = ad.Parameter([[1.0, 1.0]])
    state = ad.AdamState({"w": p}, lr=0.1)
    g = np.array([[0.3, -7.0]])
    ad.adam_step({"w": p}, {"w": g}, state)
    delta = p.value - np.array([[1.0, 1.0]])
    assert np.allclose(delta, -0.1 * np.sign(g), rtol=1e-3)


def test_adam_quadratic_bowl_converges():
    p = ad.Parameter([[1.0]])
    opt = ad.Adam({"w": p}, lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        ad.backward(ad.square(p))
        opt.step()
    assert abs(p.value[0, 0]) < 1e-2


def test_adam_missing_gradient_key():
    p = ad.Parameter([[1.0]])
    state = ad.AdamState({"w": p}, lr=0.1)
    with pytest.raises(ContractError, match="w"):
        ad.adam_step({"w": p}, {}, state)


def test_xor_fit():
    rng = np.random.default_rng(12)
    net = ad.Mlp([2, 8, 1], ["tanh", "identity"], rng=rng)
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([[0.0], [1.0], [1.0], [0.0]])
    opt = ad.Adam(net.parameters(), lr=1e-2)
    for _ in range(2000):
        opt.zero_grad()
        loss = ad.mean(ad.square(ad.sub(net.forward(x), ad.constant(y))))
        ad.backward(loss)
        opt.step()
    assert float(loss.value[0, 0]) < 0.05


# -- parameter container ----------------------------------------------------------


def test_params_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(13)
    arrays = {"w0": rng.standard_normal((3, 4)),
              "b0": rng.standard_normal((1, 4)) * 1e-17}
    path = tmp_path / "ckpt.txt"
    ad.save_params(path, arrays, {"kind": "test"})
    loaded, meta = ad.load_params(path)
    assert meta == {"kind": "test"}
    for k in arrays:
        assert np.array_equal(arrays[k], loaded[k])


def test_params_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not-a-header\n")
    with pytest.raises(ParseError, match="line 1"):
        ad.load_params(path)


def test_params_truncated_record(tmp_path):
    path = tmp_path / "trunc.txt"
    path.write_text("params-v1\n{}\nw0 2 2\n0x1p+0 0x1p+0\n")
    with pytest.raises(ParseError, match="w0"):
        ad.load_params(path)
