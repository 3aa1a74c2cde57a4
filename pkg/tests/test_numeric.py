import numpy as np
import pytest

from highlight_stgcn import numeric as nm


def test_primitive_examples():
    t = nm.Tape()
    assert nm.sigmoid(t.const(0.0)).value == 0.5
    np.testing.assert_array_equal(nm.smooth_l1(t.const([0.5, 2.0, -2.0])).value, [0.125, 1.5, 1.5])
    np.testing.assert_array_equal(nm.hadamard(t.const([1.0, 2.0]), t.const([3.0, 4.0])).value, [3.0, 8.0])


def test_sigmoid_stays_finite():
    s = nm.sigmoid(nm.Tape().const([-1000.0, 1000.0])).value
    assert np.all(np.isfinite(s)) and s[0] == 0.0 and s[1] == 1.0


def test_shape_errors_name_primitive():
    t = nm.Tape()
    with pytest.raises(ValueError, match="matmul"):
        nm.matmul(t.const(np.ones((2, 3))), t.const(np.ones((2, 3))))
    with pytest.raises(ValueError, match="hadamard"):
        nm.hadamard(t.const(np.ones(3)), t.const(np.ones(4)))
    with pytest.raises(ValueError, match="mix"):
        nm.mix(t.const(np.ones((2, 3))), np.eye(3), (0,))


def test_max_reduce_routes_to_first_argmax():
    t = nm.Tape()
    x = t.var(np.array([[1.0, 3.0, 3.0], [2.0, 0.0, 2.0]]))
    out = nm.max_reduce(x, axes=(1,))
    np.testing.assert_array_equal(out.value, [[3.0], [2.0]])
    t.backward(nm.sum_reduce(out))
    np.testing.assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])


def test_backward_visits_each_record_once():
    t = nm.Tape()
    x = t.var(np.array([1.0, 2.0]))
    y = nm.sum_reduce(nm.hadamard(x, x))
    assert len(t.records) == 2
    t.backward(y)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])
    assert t.records == []


def test_check_finite_mode():
    t = nm.Tape(check_finite=True)
    with pytest.raises(FloatingPointError):
        nm.scale(t.const([1.0]), np.inf)


def test_mix_matches_dense_kron(rng):
    x = rng.normal(size=(3, 4, 2, 5))
    S = rng.normal(size=(6, 6))
    # rows ordered p * N + n
    flat = x.transpose(2, 0, 1, 3).reshape(6, -1)
    expected = (S @ flat).reshape(2, 3, 4, 5).transpose(1, 2, 0, 3)
    np.testing.assert_allclose(nm.mix(nm.Tape().const(x), S, (2, 0)).value, expected)
    Tm = rng.normal(size=(4, 4))
    np.testing.assert_allclose(nm.mix(nm.Tape().const(x), Tm, (1,)).value, np.einsum("st,ntpc->nspc", Tm, x))


UNARY = {
    "sigmoid": lambda t, x: nm.sum_reduce(nm.sigmoid(x)),
    "relu": lambda t, x: nm.sum_reduce(nm.hadamard(nm.relu(x), x)),
    "smooth_l1": lambda t, x: nm.smooth_l1_norm(nm.scale(x, 1.7)),
    "max_reduce": lambda t, x: nm.sum_reduce(nm.hadamard(nm.max_reduce(x, (0, 2)), t.const(np.arange(1.0, 4.0)[None, :, None]))),
    "reshape": lambda t, x: nm.sum_reduce(nm.hadamard(nm.reshape(x, (6, 2)), nm.reshape(x, (6, 2)))),
    "sum_reduce": lambda t, x: nm.scale(nm.sum_reduce(x), 3.0),
    "mix_spatial": lambda t, x: nm.smooth_l1_norm(nm.mix(x, np.arange(16.0).reshape(4, 4) / 8 - 1, (2, 0))),
    "mix_temporal": lambda t, x: nm.smooth_l1_norm(nm.mix(x, np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]]), (1,))),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitives_grad_check(name, rng):
    for _ in range(5):
        point = rng.normal(size=(2, 3, 2))
        rep = nm.grad_check(UNARY[name], point)
        assert rep.max_rel_error < 1e-4, (name, rep.max_rel_error)


BINARY = {
    "add": lambda t, a, b: nm.add(a, b),
    "sub": lambda t, a, b: nm.sub(a, b),
    "hadamard": lambda t, a, b: nm.hadamard(a, b),
    "matmul": lambda t, a, b: nm.matmul(a, b),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("which", [0, 1])
def test_binary_primitives_grad_check(name, which, rng):
    for _ in range(5):
        a = rng.normal(size=(2, 3, 3))
        b = rng.normal(size=(3, 3)) if name != "hadamard" else rng.normal(size=(1, 3, 3))
        other = [a, b][1 - which]
        weight = rng.normal(size=(2, 3, 3))

        def fn(t, x):
            args = [x, t.const(other)] if which == 0 else [t.const(other), x]
            return nm.sum_reduce(nm.hadamard(BINARY[name](t, *args), t.const(weight)))

        rep = nm.grad_check(fn, [a, b][which])
        assert rep.max_rel_error < 1e-4, (name, which, rep.max_rel_error)


def test_grad_check_quadratic():
    rep = nm.grad_check(lambda t, x: nm.sum_reduce(nm.hadamard(x, x)), np.array([1.0, 2.0]), h=1e-4)
    np.testing.assert_allclose(rep.analytic, [2.0, 4.0])
    np.testing.assert_allclose(rep.numeric, [2.0, 4.0], atol=1e-6)
    assert rep.passed


def test_grad_check_sigmoid_sum(rng):
    rep = nm.grad_check(lambda t, x: nm.sum_reduce(nm.sigmoid(x)), rng.normal(size=(2, 2, 2, 2)))
    assert rep.max_rel_error < 1e-4


def test_grad_check_flags_ties():
    rep = nm.grad_check(lambda t, x: nm.sum_reduce(nm.max_reduce(x, (0,))), np.array([1.0, 1.0, 0.0]))
    assert rep.passed
    assert set(rep.tie_sensitive) >= {(0,), (1,)}


def test_grad_check_non_finite():
    with pytest.raises(nm.GradCheckError):
        nm.grad_check(lambda t, x: nm.scale(nm.sum_reduce(x), np.inf), np.ones(2))


def test_adam_zero_gradient_only_decays():
    state = nm.AdamState(lr=0.1, weight_decay=0.01)
    p = {"w": np.array([1.0, -2.0])}
    out = nm.adam_step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_allclose(out["w"], p["w"] * (1 - 0.1 * 0.01))
    assert state.step == 1


def test_adam_single_step_closed_form():
    state = nm.AdamState(lr=1e-3, weight_decay=0.0)
    out = nm.adam_step({"w": np.array([0.5])}, {"w": np.array([1.0])}, state)
    np.testing.assert_allclose(out["w"], 0.5 - 1e-3 / (1 + 1e-8))


def test_adam_unit_step_property():
    state = nm.AdamState(lr=1e-3, weight_decay=0.0)
    p = {"w": np.array([0.0])}
    for _ in range(1000):
        prev = p["w"].copy()
        p = nm.adam_step(p, {"w": np.array([0.37])}, state)
    delta = abs(p["w"][0] - prev[0])
    assert 0.9e-3 <= delta <= 1.1e-3


def test_adam_rejects_non_finite_without_mutating():
    state = nm.AdamState()
    with pytest.raises(FloatingPointError):
        nm.adam_step({"w": np.ones(2)}, {"w": np.array([1.0, np.nan])}, state)
    assert state.step == 0 and not state.m


def test_adam_keeps_dtype():
    out = nm.adam_step({"w": np.ones(3, np.float32)}, {"w": np.ones(3)}, nm.AdamState())
    assert out["w"].dtype == np.float32
