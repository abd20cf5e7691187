import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from leap_avvp import tensor as tn
from leap_avvp.tensor import Adam, AdamState, ShapeError, Tensor, adam_step, check_gradients

from oracles import central_difference


# -- matmul ------------------------------------------------------------------


def test_matmul_identity_and_basis():
    m = Tensor([[1, 2], [3, 4]])
    assert np.array_equal(tn.matmul(Tensor(np.eye(2)), m).data, m.data)
    assert tn.matmul(Tensor([[1, 0]]), Tensor([[5], [7]])).data.tolist() == [[5.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        tn.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient_matches_finite_differences(rng):
    A = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    B = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    tn.total(A @ B).backward()
    numeric = central_difference(lambda: (A.data @ B.data).sum(), A.data)
    rel = np.abs(A.grad - numeric) / np.maximum(1e-8, np.abs(A.grad) + np.abs(numeric))
    assert rel.max() < 1e-5


# -- softmax / sigmoid ---------------------------------------------------------


def test_softmax_examples():
    assert np.allclose(tn.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    assert np.allclose(tn.softmax_rows(Tensor([[np.log(2), 0.0]])).data, [[2 / 3, 1 / 3]])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    s = tn.softmax_rows(Tensor(x)).data
    assert np.all(np.abs(s.sum(axis=1) - 1) < 1e-9)
    assert np.all((s >= 0) & (s <= 1))


def test_softmax_stable_for_large_logits():
    s = tn.softmax_rows(Tensor([[1000.0, 999.0]])).data
    assert np.all(np.isfinite(s))


def test_sigmoid_examples():
    assert tn.sigmoid(Tensor(0.0)).item() == 0.5
    low = tn.sigmoid(Tensor(-100.0)).item()
    assert 0 < low <= 1e-40


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-30, 30)))
def test_sigmoid_strictly_inside_unit_interval(x):
    s = tn.sigmoid(Tensor(x)).data
    assert np.all((s > 0) & (s < 1))


def test_sigmoid_gradient_is_s_times_one_minus_s(rng):
    x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    s = tn.sigmoid(x)
    tn.total(s).backward()
    assert np.allclose(x.grad, s.data * (1 - s.data), atol=1e-15)


# -- layer norm -------------------------------------------------------------------


def test_layer_norm_constant_row_is_zero():
    out = tn.layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 3))))
    assert out.data.tolist() == [[0.0, 0.0, 0.0]]


def test_layer_norm_symmetric_row():
    out = tn.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 2))))
    assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-5)


def test_layer_norm_zero_mean_rows(rng):
    x = rng.normal(size=(4, 6)) * 3 + 2
    out = tn.layer_norm(Tensor(x), Tensor(np.ones((1, 6))), Tensor(np.zeros((1, 6))))
    assert np.abs(out.data.mean(axis=1)).max() < 1e-9


def test_layer_norm_rejects_bad_affine_shape():
    with pytest.raises(ShapeError):
        tn.layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 3))))


# -- losses ---------------------------------------------------------------------


def test_bce_examples():
    assert tn.bce_loss(Tensor(0.5), [[1]]).item() == pytest.approx(np.log(2), abs=1e-12)
    assert tn.bce_loss(Tensor(1 - 1e-7), [[1]]).item() == pytest.approx(0.0, abs=1e-6)


def test_bce_rejects_non_binary_targets_and_shape_mismatch():
    with pytest.raises(ValueError):
        tn.bce_loss(Tensor([[0.5]]), [[0.3]])
    with pytest.raises(ShapeError):
        tn.bce_loss(Tensor([[0.5, 0.5]]), [[1]])


def test_bce_finite_at_saturation():
    assert np.isfinite(tn.bce_loss(Tensor([[0.0, 1.0]]), [[1, 0]]).item())


def test_mse_examples(rng):
    a = rng.normal(size=(2, 2))
    assert tn.mse_loss(Tensor(a), a).item() == 0.0
    assert tn.mse_loss(Tensor([[1.0]]), [[0.0]]).item() == 1.0
    x = Tensor(a, requires_grad=True)
    b = rng.normal(size=(2, 2))
    tn.mse_loss(x, b).backward()
    assert np.allclose(x.grad, 2 * (a - b) / 4)
    with pytest.raises(ShapeError):
        tn.mse_loss(Tensor(a), np.zeros((1, 2)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(0.001, 0.999)),
       arrays(np.int64, (2, 3), elements=st.integers(0, 1)))
def test_losses_nonnegative(p, y):
    assert tn.bce_loss(Tensor(p), y).item() >= 0
    assert tn.mse_loss(Tensor(p), y.astype(float)).item() >= 0


# -- backward ---------------------------------------------------------------------


def test_backward_sum_and_double():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    tn.total(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))
    x.zero_grad()
    tn.total(x * 2).backward()
    assert np.array_equal(x.grad, np.full((2, 3), 2.0))


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 2)), requires_grad=True).backward()


def test_repeated_backward_accumulates():
    x = Tensor(np.ones((1, 2)), requires_grad=True)
    loss = tn.total(x * 3)
    loss.backward()
    loss.backward()
    assert np.array_equal(x.grad, np.full((1, 2), 6.0))


def test_diamond_graph_sums_both_paths(rng):
    x0 = rng.normal(size=(2, 3))
    w = rng.normal(size=(3, 3))

    def f(x):
        h = tn.sigmoid(x)
        return tn.total(tn.mul(h @ Tensor(w), h @ Tensor(w.T)))

    assert check_gradients(f, [Tensor(x0)]) < 1e-5


def test_backward_visits_each_node_once():
    x = Tensor([[1.0]], requires_grad=True)
    y = x
    for _ in range(200):
        y = y + y * 0.0  # deep chain of diamonds
    y.backward()
    assert x.grad[0, 0] == 1.0


def test_no_grad_records_nothing():
    x = Tensor([[1.0]], requires_grad=True)
    with tn.no_grad():
        y = x * 2
    assert not y.requires_grad


def test_deterministic_bitwise(rng):
    x = rng.normal(size=(4, 5))
    w = rng.normal(size=(5, 3))
    a = tn.softmax_rows(Tensor(x) @ Tensor(w)).data
    b = tn.softmax_rows(Tensor(x) @ Tensor(w)).data
    assert a.tobytes() == b.tobytes()


# -- gradient checker ------------------------------------------------------------


def test_check_gradients_sum_of_squares(rng):
    x = Tensor(rng.normal(size=(3, 3)))
    assert check_gradients(lambda t: tn.total(tn.mul(t, t)), [x], 1e-5) < 1e-7


def test_check_gradients_bce_after_sigmoid(rng):
    y = (rng.random((3, 4)) > 0.5).astype(float)
    x = Tensor(rng.normal(size=(3, 4)))
    assert check_gradients(lambda t: tn.bce_loss(tn.sigmoid(t), y), [x]) < 1e-5


def test_check_gradients_constant_function():
    x = Tensor(np.ones((2, 2)))
    assert check_gradients(lambda t: Tensor(3.0), [x]) == 0.0


def test_check_gradients_rejects_non_scalar():
    with pytest.raises(ShapeError):
        check_gradients(lambda t: t * 2, [Tensor(np.ones((2, 2)))])


def test_check_gradients_flags_a_wrong_gradient():
    def bad(x):
        out = tn._node(x.data * 3, (x,), lambda g: (g * 2,))
        return tn.total(out)

    assert check_gradients(bad, [Tensor(np.ones((1, 2)))]) > 0.1


# -- adam -------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params_and_decays_moments():
    p = {"w": np.array([[1.0, -2.0]])}
    before = p["w"].copy()
    state = AdamState(learning_rate=0.1)
    adam_step(p, {"w": np.zeros((1, 2))}, state)
    assert np.array_equal(p["w"], before)

    state = AdamState(learning_rate=0.1)
    state.first_moment["w"] = np.array([[0.5, 0.5]])
    state.second_moment["w"] = np.array([[0.5, 0.5]])
    adam_step({"w": before.copy()}, {"w": np.zeros((1, 2))}, state)
    assert np.all(state.first_moment["w"] < 0.5) and np.all(state.second_moment["w"] < 0.5)
    assert state.step_count == 1


def test_adam_first_step_moves_by_learning_rate():
    p = {"w": np.array([[1.0]])}
    state = AdamState(learning_rate=0.1, beta1=0.9, beta2=0.999, epsilon=1e-8)
    adam_step(p, {"w": np.array([[1.0]])}, state)
    assert p["w"][0, 0] == pytest.approx(0.9, abs=1e-6)


def test_adam_descends_quadratic():
    x = Tensor([[3.0, -2.0]], requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    losses = []
    for _ in range(3):
        opt.zero_grad()
        loss = tn.total(tn.mul(x, x))
        losses.append(loss.item())
        loss.backward()
        opt.step()
    assert losses[2] < losses[1] < losses[0]
    assert opt.state.step_count == 3
    assert all(np.all(v >= 0) for v in opt.state.second_moment.values())


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros((2, 2))}, {"w": np.zeros((2, 1))}, AdamState())
