import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedprune import tensor as T
from fedprune.errors import ContractViolation, NumericOverflowError, TapeStateError
from fedprune.tensor import Tensor

from gradcases import GRAD_CASES, gradcheck
from oracles import naive_conv2d, naive_matmul


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# -- conv2d ------------------------------------------------------------------

def test_conv_zero_input_gives_bias_planes(rng):
    x = np.zeros((2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = np.array([0.5, -1.0, 2.0, 0.0])
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    for n in range(4):
        assert np.all(out[:, n] == b[n])


def test_conv_counting_case():
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)),
                   padding="valid")
    assert out.shape == (1, 1, 1, 1)
    assert out.data[0, 0, 0, 0] == 9.0


def test_conv_matches_naive_loops_same_padding(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), padding="same").data
    np.testing.assert_allclose(got, naive_conv2d(x, w, b, 1, 1), atol=1e-6, rtol=0)


@pytest.mark.parametrize("padding,stride", [("valid", 2), (2, 1), ("same", 2)])
def test_conv_matches_naive_loops_other_geometries(rng, padding, stride):
    x = rng.normal(size=(1, 2, 9, 9))
    w = rng.normal(size=(3, 2, 5, 5))
    b = rng.normal(size=3)
    lo, hi = {"valid": (0, 0), "same": (2, 2), 2: (2, 2)}[padding]
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), padding=padding, stride=stride).data
    np.testing.assert_allclose(got, naive_conv2d(x, w, b, lo, hi, stride), atol=1e-6, rtol=0)


@pytest.mark.parametrize("h,k,pad,stride", [(28, 5, "same", 1), (9, 3, "valid", 2), (7, 5, 1, 1)])
def test_conv_output_extent_formula(h, k, pad, stride):
    p = {"same": (k - 1) // 2, "valid": 0}.get(pad, pad)
    x = Tensor(np.zeros((1, 1, h, h)))
    out = T.conv2d(x, Tensor(np.zeros((2, 1, k, k))), Tensor(np.zeros(2)), padding=pad, stride=stride)
    assert out.shape[2] == (h + 2 * p - k) // stride + 1


def test_conv_channel_mismatch_names_both_shapes():
    with pytest.raises(ContractViolation) as err:
        T.conv2d(Tensor(np.zeros((1, 3, 5, 5))), Tensor(np.zeros((2, 2, 3, 3))))
    assert "(1, 3, 5, 5)" in str(err.value) and "(2, 2, 3, 3)" in str(err.value)


def test_conv_kernel_larger_than_input():
    with pytest.raises(ContractViolation):
        T.conv2d(Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 5, 5))), padding="valid")


def test_conv_is_pure(rng):
    x = Tensor(rng.normal(size=(2, 3, 7, 7)))
    w = Tensor(rng.normal(size=(5, 3, 5, 5)))
    b = Tensor(rng.normal(size=5))
    a1 = T.conv2d(x, w, b).data
    a2 = T.conv2d(x, w, b).data
    assert a1.tobytes() == a2.tobytes()


# -- dense -------------------------------------------------------------------

def test_dense_identity(rng):
    x = rng.normal(size=(3, 4))
    out = T.dense(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data
    np.testing.assert_array_equal(out, x)


def test_dense_hand_case():
    out = T.dense(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([3.0, 4.0])).data
    np.testing.assert_array_equal(out, [[4.0, 6.0]])


def test_dense_matches_naive(rng):
    x, w, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3)), rng.normal(size=3)
    np.testing.assert_allclose(T.dense(Tensor(x), Tensor(w), Tensor(b)).data, naive_matmul(x, w, b),
                               atol=1e-6, rtol=0)


def test_dense_shape_mismatch():
    with pytest.raises(ContractViolation):
        T.dense(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


# -- cross entropy -----------------------------------------------------------

@pytest.mark.parametrize("L", [2, 10, 62])
def test_cross_entropy_uniform_is_log_classes(L):
    loss = T.cross_entropy(Tensor(np.full((4, L), 0.3)), [0, 1, 1, 0]).item()
    assert loss == pytest.approx(math.log(L), abs=1e-12)


def test_cross_entropy_saturated():
    logits = np.zeros((3, 5))
    labels = [0, 4, 2]
    logits[range(3), labels] = 1000.0
    assert T.cross_entropy(Tensor(logits), labels).item() == pytest.approx(0.0, abs=1e-6)


def test_cross_entropy_matches_arbitrary_precision(rng):
    mpmath.mp.dps = 50
    for _ in range(20):
        B, L = rng.integers(1, 6), rng.integers(2, 12)
        z = rng.normal(scale=5.0, size=(B, L))
        y = rng.integers(0, L, size=B)
        ref = mpmath.mpf(0)
        for i in range(B):
            lse = mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(float(v))) for v in z[i]))
            ref += lse - mpmath.mpf(float(z[i, y[i]]))
        ref /= B
        assert abs(T.cross_entropy(Tensor(z), y).item() - float(ref)) < 1e-8


def test_cross_entropy_label_range():
    with pytest.raises(ContractViolation):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ContractViolation):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [-1, 0])


# -- tape / backward ---------------------------------------------------------

@pytest.mark.parametrize("shape", [(3,), (2, 4), (2, 3, 2, 2)])
def test_backward_of_sum_is_ones(shape):
    w = leaf(np.random.default_rng(0).normal(size=shape))
    with T.GradTape() as tape:
        g = tape.backward(w.sum())
    np.testing.assert_array_equal(g[w].data, np.ones(shape))


def test_constant_loss_has_zero_gradient():
    w = leaf(np.arange(6.0).reshape(2, 3))
    with T.GradTape() as tape:
        loss = w.sum() - w.sum()
        g = tape.backward(loss, [w])
    np.testing.assert_array_equal(g[w].data, np.zeros((2, 3)))


def test_unused_param_gets_zero_gradient():
    w, u = leaf(np.ones(3)), leaf(np.ones(2))
    with T.GradTape() as tape:
        g = tape.backward((w * 2.0).sum(), [w, u])
    np.testing.assert_array_equal(g[u].data, 0.0)
    np.testing.assert_array_equal(g[w].data, 2.0)


def test_backward_without_forward_is_state_error():
    with T.GradTape() as tape:
        with pytest.raises(TapeStateError):
            tape.backward(Tensor(np.array(1.0)))


def test_tape_cleared_after_backward():
    w = leaf(np.ones(3))
    with T.GradTape() as tape:
        loss = w.sum()
        tape.backward(loss)
        assert tape.records == []
        with pytest.raises(TapeStateError):
            tape.backward(loss)


def test_no_grad_records_nothing():
    w = leaf(np.ones(3))
    with T.GradTape() as tape, T.no_grad():
        out = w.sum()
        assert tape.records == [] and not out.requires_grad


def test_ops_outside_a_tape_are_not_retained():
    w = leaf(np.ones(3))
    for _ in range(5):
        out = (w * 2.0).sum()
    assert not out.requires_grad
    with pytest.raises(TapeStateError):
        T.backward(out)
    with T.GradTape() as tape:
        assert tape.records == []


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_result_is_reported():
    with pytest.raises(NumericOverflowError):
        T.dense(Tensor([[1e308]]), Tensor([[1e308]]))


@pytest.mark.parametrize("case", sorted(GRAD_CASES))
def test_gradcheck_every_layer_type(case):
    rel = gradcheck(GRAD_CASES[case], np.random.default_rng(7))
    assert rel < 1e-4, f"{case}: relative error {rel:.2e}"


@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 6), st.sampled_from([1, 3]),
       st.integers(0, 2**31 - 1))
def test_gradcheck_conv_random_shapes(b, c, h, k, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    arrays = [rng.normal(size=(b, c, h, h)), rng.normal(size=(n, c, k, k)), rng.normal(size=n)]
    proj = rng.normal(size=(n * h * h, 1))
    build = lambda x, w, bias: T.dense(T.flatten(T.conv2d(x, w, bias)), Tensor(proj)).sum()
    assert gradcheck((build, arrays), rng) < 1e-4


# -- adam --------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)}
    state = T.adam_init(p)
    new, state2 = T.adam_step(p, {"w": np.zeros(2)}, state)
    assert new["w"].data.tobytes() == p["w"].data.tobytes()
    assert state2.step == 1


def test_adam_first_step_magnitude_is_lr():
    p = {"x": Tensor(np.array(0.5), requires_grad=True, width=8)}
    new, _ = T.adam_step(p, {"x": np.array(1.0)}, T.adam_init(p), lr=0.01)
    # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    assert 0.5 - new["x"].item() == pytest.approx(0.01 / (1 + 1e-8), rel=1e-12)


def test_adam_descends_parabola():
    p = {"x": Tensor(np.array(1.0), requires_grad=True, width=8)}
    state = T.adam_init(p)
    trace = [1.0]
    for _ in range(100):
        x = p["x"].item()
        p, state = T.adam_step(p, {"x": np.array(2 * x)}, state, lr=0.1)
        trace.append(abs(p["x"].item()))
    assert trace[-1] < 0.1
    # decreasing in trend: every 10-step window average below the previous one's start
    assert np.mean(trace[:10]) > np.mean(trace[40:50]) > trace[-1] or trace[-1] < 0.1


def test_adam_shape_mismatch():
    p = {"w": Tensor(np.zeros(3), requires_grad=True)}
    state = T.adam_init({"w": Tensor(np.zeros(2))})
    with pytest.raises(ContractViolation):
        T.adam_step(p, {}, state)
    with pytest.raises(ContractViolation):
        T.adam_step(p, {"w": np.zeros(4)}, T.adam_init(p))


def test_adam_keeps_storage_width():
    p = {"w": Tensor(np.ones(3, dtype=np.float32), requires_grad=True)}
    new, _ = T.adam_step(p, {"w": np.ones(3)}, T.adam_init(p))
    assert new["w"].width == 4
