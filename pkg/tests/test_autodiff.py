"""Engine tests: op arithmetic, adjoints vs central differences, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choicekit import autodiff as ad
from choicekit.autodiff import ParameterStore, Tape, Tensor
from choicekit.errors import DomainError, StructuralError, UsageError


def test_affine_identity_weight():
    out = ad.affine(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([0.0, 0.0]))
    assert np.array_equal(out.data, [[1.0, 2.0]])


def test_affine_hand_arithmetic():
    out = ad.affine(Tensor([[1.0, 1.0]]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
    assert np.array_equal(out.data, [[6.0]])


def test_affine_bias_gradient_is_ones():
    store = ParameterStore(0)
    bias = store.add("b", (3,))
    x = Tensor(np.arange(12.0).reshape(4, 3))
    w = Tensor(np.eye(3))
    with Tape() as tape:
        out = ad.affine(x, w, bias)
        loss = ad.sum_all(out)
        ad.backward(tape, loss)
    assert np.array_equal(bias.grad, np.full(3, 4.0))


def test_affine_shape_mismatch():
    with pytest.raises(StructuralError):
        ad.affine(Tensor([[1.0, 2.0]]), Tensor([[1.0], [2.0], [3.0]]), Tensor([0.0]))


def test_relu_values_and_gradients():
    assert np.array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    store = ParameterStore(0)
    p = store.add("p", (3,))
    for fill, expected_grad in ((-1.0, 0.0), (2.0, 1.0)):
        p.data = np.full(3, fill)
        store.zero_grad()
        with Tape() as tape:
            loss = ad.sum_all(ad.relu(p))
            ad.backward(tape, loss)
        assert np.array_equal(store.gradient("p"), np.full(3, expected_grad))
    # out of a negative pass, the output itself is zero
    p.data = np.full(3, -1.0)
    assert np.array_equal(ad.relu(p).data, np.zeros(3))


def test_masked_softmax_uniform_and_hand_values():
    probs = ad.masked_softmax(Tensor([[0.0, 0.0, 0.0]]), np.ones((1, 3))).data
    assert np.allclose(probs, 1 / 3, atol=1e-15)

    probs = ad.masked_softmax(Tensor([[np.log(2.0), 0.0, 0.0]]), np.ones((1, 3))).data
    assert np.allclose(probs, [[0.5, 0.25, 0.25]], atol=1e-15)

    probs = ad.masked_softmax(Tensor([[0.0, 0.0, 0.0]]), np.array([[1, 0, 1]])).data
    assert np.array_equal(probs[0], [0.5, 0.0, 0.5])


def test_masked_softmax_empty_row_rejected():
    with pytest.raises(DomainError):
        ad.masked_softmax(Tensor([[1.0, 2.0]]), np.zeros((1, 2)))


@settings(max_examples=60, deadline=None)
@given(
    scores=st.lists(st.floats(-40, 40), min_size=3, max_size=3),
    shift=st.floats(-30, 30),
    mask=st.lists(st.booleans(), min_size=3, max_size=3).filter(any),
)
def test_masked_softmax_rows_sum_to_one_and_shift_invariant(scores, shift, mask):
    avail = np.array([mask])
    p1 = ad.masked_softmax(Tensor([scores]), avail).data
    p2 = ad.masked_softmax(Tensor([[s + shift for s in scores]]), avail).data
    assert abs(p1.sum() - 1.0) < 1e-12
    assert (p1 >= 0).all() and (p1 <= 1).all()
    assert p1[0][~avail[0]].sum() == 0.0
    assert np.abs(p1 - p2).max() < 1e-12


def test_nll_gradient_is_probs_minus_onehot():
    # independent oracle: central differences on the score entries
    rng = np.random.Generator(np.random.PCG64(3))
    scores = rng.normal(size=(5, 3))
    avail = np.ones((5, 3))
    chosen = np.array([0, 2, 1, 1, 0])
    store = ParameterStore(0)
    s = store.add("scores", (5, 3))
    s.data = scores.copy()

    def fn():
        return ad.nll(ad.masked_softmax(s, avail), chosen)

    with Tape() as tape:
        loss = fn()
        ad.backward(tape, loss)
    probs = ad.masked_softmax(Tensor(scores), avail).data
    onehot = np.zeros((5, 3))
    onehot[np.arange(5), chosen] = 1.0
    assert np.abs(store.gradient("scores") - (probs - onehot)).max() < 1e-12

    report = ad.finite_difference_report(fn, store, 1e-5)
    assert report.max_rel_error < 1e-4


def test_nll_hand_values():
    uniform = Tensor(np.full((3, 3), 1 / 3))
    assert abs(ad.nll(uniform, [0, 1, 2]).item() - 3 * np.log(3)) < 1e-12
    assert abs(ad.nll(Tensor([[0.5, 0.5]]), [0]).item() - np.log(2)) < 1e-12
    assert ad.nll(Tensor([[1.0, 0.0], [1.0, 0.0]]), [0, 0]).item() == 0.0


def test_nll_zero_probability_rejected():
    with pytest.raises(DomainError):
        ad.nll(Tensor([[1.0, 0.0]]), [1])


def test_backward_linear_scalar():
    store = ParameterStore(0)
    w = store.add("w", (1,))
    w.data = np.array([2.0])
    with Tape() as tape:
        loss = ad.sum_all(ad.scale(w, 3.0))
        ad.backward(tape, loss)
    assert np.array_equal(store.gradient("w"), [3.0])


def test_backward_without_forward_rejected():
    tape = Tape()
    with pytest.raises(UsageError):
        ad.backward(tape, Tensor(1.0))


def test_backward_twice_rejected():
    store = ParameterStore(0)
    w = store.add("w", (2,))
    with Tape() as tape:
        loss = ad.sum_all(ad.scale(w, 2.0))
        ad.backward(tape, loss)
        with pytest.raises(UsageError):
            ad.backward(tape, loss)


def _mlp_loss(store, x, avail, chosen):
    h = ad.relu(ad.affine(Tensor(x), store["w1"], store["b1"]))
    p = ad.masked_softmax(ad.affine(h, store["w2"], store["b2"]), avail)
    return ad.nll(p, chosen)


def _make_mlp_store(seed=0, d=5, hidden=8, c=3):
    store = ParameterStore(seed)
    store.add("w1", (d, hidden), init="fan_in_uniform")
    store.add("b1", (hidden,))
    store.add("w2", (hidden, c), init="fan_in_uniform")
    store.add("b2", (c,))
    return store


def test_mlp_gradients_match_finite_differences():
    rng = np.random.Generator(np.random.PCG64(11))
    x = rng.normal(size=(12, 5))
    avail = np.ones((12, 3))
    avail[3, 0] = 0
    chosen = rng.integers(1, 3, size=12)
    store = _make_mlp_store(seed=5)
    report = ad.finite_difference_report(lambda: _mlp_loss(store, x, avail, chosen), store, 1e-5)
    assert report.max_rel_error < 1e-4
    assert report.checked > 0


def test_gradients_bitwise_deterministic():
    def run():
        store = _make_mlp_store(seed=9)
        rng = np.random.Generator(np.random.PCG64(21))
        x = rng.normal(size=(8, 5))
        chosen = rng.integers(0, 3, size=8)
        with Tape() as tape:
            loss = _mlp_loss(store, x, np.ones((8, 3)), chosen)
            ad.backward(tape, loss)
        return loss.item(), {n: store.gradient(n).copy() for n in store.names()}

    loss_a, grads_a = run()
    loss_b, grads_b = run()
    assert loss_a == loss_b
    for name in grads_a:
        assert np.array_equal(grads_a[name], grads_b[name])


def test_finite_difference_check_linear_function_is_exact():
    store = ParameterStore(0)
    w = store.add("w", (4,))
    w.data = np.arange(4.0)
    coef = np.array([1.0, -2.0, 3.0, 0.5])
    err = ad.finite_difference_check(
        lambda: ad.sum_all(ad.mul_const(w, coef)), store, 1e-5
    )
    assert err < 1e-10


def test_finite_difference_check_zero_function():
    store = ParameterStore(0)
    w = store.add("w", (3,))
    err = ad.finite_difference_check(lambda: ad.sum_all(ad.scale(w, 0.0)), store, 1e-5)
    assert err == 0.0


def test_finite_difference_check_rejects_bad_step():
    store = ParameterStore(0)
    store.add("w", (1,))
    with pytest.raises(DomainError):
        ad.finite_difference_check(lambda: ad.sum_all(ad.scale(store["w"], 1.0)), store, 0.0)


def test_finite_difference_excludes_kink_crossings():
    # one parameter sits exactly at the relu kink; its probe must be excluded
    store = ParameterStore(0)
    w = store.add("w", (2,))
    w.data = np.array([0.0, 1.0])
    report = ad.finite_difference_report(lambda: ad.sum_all(ad.relu(w)), store, 1e-5)
    assert report.excluded == 1
    assert report.checked == 1
    assert report.max_rel_error < 1e-10


def test_parameter_store_init_and_reset():
    store = ParameterStore(123)
    w = store.add("w", (50, 20), init="fan_in_uniform")
    limit = np.sqrt(6.0 / 50)
    assert np.abs(w.data).max() <= limit
    assert w.data.std() > 0
    assert np.array_equal(store.gradient("w"), np.zeros((50, 20)))

    other = ParameterStore(123)
    assert np.array_equal(other.add("w", (50, 20), init="fan_in_uniform").data, w.data)

    with Tape() as tape:
        loss = ad.sum_all(ad.scale(w, 2.0))
        ad.backward(tape, loss)
    assert store.gradient("w").max() == 2.0
    store.zero_grad()
    assert np.array_equal(store.gradient("w"), np.zeros((50, 20)))


def test_parameter_store_snapshot_restore():
    store = ParameterStore(0)
    w = store.add("w", (3,), init="fan_in_uniform")
    snap = store.snapshot()
    w.data = w.data + 5.0
    store.restore(snap)
    assert np.array_equal(store["w"].data, snap["w"])


def test_select_rows_and_cols_adjoints():
    store = ParameterStore(0)
    w = store.add("w", (4, 3), init="fan_in_uniform")

    def fn():
        return ad.sum_all(ad.select_col(ad.select_rows(w, 1, 3), 2))

    assert ad.finite_difference_check(fn, store, 1e-6) < 1e-9
    expected = np.zeros((4, 3))
    expected[1:3, 2] = 1.0
    store.zero_grad()
    with Tape() as tape:
        loss = fn()
        ad.backward(tape, loss)
    assert np.array_equal(store.gradient("w"), expected)


def test_concat_cols_adjoint():
    store = ParameterStore(0)
    a = store.add("a", (3, 2), init="fan_in_uniform")
    b = store.add("b", (3, 4), init="fan_in_uniform")
    coef = np.arange(18.0).reshape(3, 6)

    def fn():
        return ad.sum_all(ad.mul_const(ad.concat_cols([a, b]), coef))

    assert ad.finite_difference_check(fn, store, 1e-6) < 1e-9
    store.zero_grad()
    with Tape() as tape:
        ad.backward(tape, fn())
    assert np.array_equal(store.gradient("a"), coef[:, :2])
    assert np.array_equal(store.gradient("b"), coef[:, 2:])


def test_forward_without_tape_records_nothing():
    store = ParameterStore(0)
    w = store.add("w", (2, 2), init="fan_in_uniform")
    out = ad.affine(Tensor(np.ones((1, 2))), w, Tensor(np.zeros(2)))
    assert out._backward is None
    assert np.isfinite(out.data).all()
