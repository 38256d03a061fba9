import math

import numpy as np
import pytest

from topicrec import autodiff as ad
from topicrec.errors import DegenerateInputError, DimensionError, NumericError


def test_matvec_identity():
    out = ad.matvec(np.eye(2), np.array([3.0, 5.0]))
    np.testing.assert_allclose(out.data, [3.0, 5.0])


def test_matvec_hand_product():
    # oracle: [[1,2],[3,4]] @ [1,1] worked out by hand
    out = ad.matvec(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, 1.0]))
    np.testing.assert_allclose(out.data, [3.0, 7.0])


def test_matvec_zero_matrix_annihilates():
    rng = np.random.default_rng(0)
    v = rng.normal(size=5)
    out = ad.matvec(np.zeros((4, 5)), v)
    np.testing.assert_array_equal(out.data, np.zeros(4))


def test_matvec_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError) as exc:
        ad.matvec(np.zeros((2, 3)), np.zeros(4))
    assert "(2, 3)" in str(exc.value) and "(4,)" in str(exc.value)


def test_matvec_backward_both_arguments():
    m = ad.Parameter(np.array([[1.0, 2.0], [3.0, 4.0]]), name="m")
    v = ad.Parameter(np.array([5.0, 6.0]), name="v")
    ad.tsum(ad.matvec(m, v)).backward()
    np.testing.assert_allclose(m.grad, [[5.0, 6.0], [5.0, 6.0]])
    np.testing.assert_allclose(v.grad, [4.0, 6.0])  # column sums of m


def test_masked_softmax_symmetry():
    out = ad.masked_softmax(np.array([0.0, 0.0]), [True, True])
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_masked_softmax_mask_zeroes_positions():
    out = ad.masked_softmax(np.array([1.0, 1.0, 1.0]), [True, False, True])
    np.testing.assert_allclose(out.data, [0.5, 0.0, 0.5])
    assert out.data[1] == 0.0


def test_masked_softmax_closed_form():
    logits = np.log(np.array([1.0, 2.0, 3.0]))
    out = ad.masked_softmax(logits, [True] * 3)
    np.testing.assert_allclose(out.data, np.array([1, 2, 3]) / 6.0, atol=1e-12)


def test_masked_softmax_all_masked_is_degenerate():
    with pytest.raises(DegenerateInputError):
        ad.masked_softmax(np.array([1.0, 2.0]), [False, False])


def test_masked_softmax_probability_vector_and_shift_invariance():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = rng.integers(1, 9)
        logits = rng.normal(scale=5.0, size=n)
        mask = rng.random(n) < 0.7
        if not mask.any():
            mask[rng.integers(0, n)] = True
        out = ad.masked_softmax(logits, mask).data
        assert (out >= 0).all()
        assert abs(out.sum() - 1.0) <= 1e-12
        assert (out[~mask] == 0.0).all()
        c = rng.uniform(-50, 50)
        shifted = ad.masked_softmax(logits + c, mask).data
        np.testing.assert_allclose(shifted, out, atol=1e-12)


def test_elementwise_analytic_values():
    assert ad.elementwise("tanh", ad.as_tensor(0.0)).item() == 0.0
    assert ad.elementwise("sigmoid", ad.as_tensor(0.0)).item() == 0.5


def test_elementwise_hadamard_and_add():
    out = ad.elementwise("hadamard", np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    np.testing.assert_allclose(out.data, [3.0, 8.0])
    x = np.array([1.5, -2.0, 0.25])
    np.testing.assert_array_equal(ad.elementwise("add", x, np.zeros(3)).data, x)


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.add(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        ad.elementwise("cosh", ad.as_tensor(1.0))


def test_forward_values_stay_finite():
    rng = np.random.default_rng(3)
    x = rng.normal(scale=50.0, size=(4, 4))
    y = rng.normal(scale=50.0, size=(4, 4))
    for t in (ad.tanh(x), ad.sigmoid(x), ad.hadamard(x, y), ad.add(x, y),
              ad.scale(ad.as_tensor(x), 3.0), ad.matmul(x, y),
              ad.masked_softmax(x, np.ones((4, 4), dtype=bool))):
        assert np.isfinite(t.data).all()


# ---------------------------------------------------------------------------
# gradient accumulation semantics
# ---------------------------------------------------------------------------

def test_reused_parameter_grads_add():
    w = ad.Parameter(np.array([1.0, 2.0]), name="w")
    # y = sum(w * a) + sum(w * b): grad must be a + b
    a, b = np.array([3.0, 4.0]), np.array([10.0, 20.0])
    ad.add(ad.tsum(ad.hadamard(w, a)), ad.tsum(ad.hadamard(w, b))).backward()
    np.testing.assert_allclose(w.grad, a + b)


def test_grads_accumulate_across_backwards_until_reset():
    w = ad.Parameter(np.array([2.0]), name="w")
    ad.tsum(ad.hadamard(w, w)).backward()
    first = w.grad.copy()
    ad.tsum(ad.hadamard(w, w)).backward()
    np.testing.assert_allclose(w.grad, 2 * first)
    w.zero_grad()
    assert w.grad is None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_is_fixed_point():
    p = ad.Parameter(np.array([1.0, -2.0]), name="p")
    state = ad.AdamState.for_parameter(p)
    p.grad = np.zeros(2)
    before = p.data.copy()
    ad.adam_step(p, state, 1e-3)
    np.testing.assert_array_equal(p.data, before)
    np.testing.assert_array_equal(state.first_moment, np.zeros(2))


def test_adam_first_step_matches_hand_formula():
    # t=1: m_hat = g, v_hat = g^2, delta = -lr * g / (|g| + eps)
    p = ad.Parameter(np.array([0.0]), name="p")
    state = ad.AdamState.for_parameter(p)
    p.grad = np.array([1.0])
    ad.adam_step(p, state, 1e-3)
    expected_delta = -1e-3 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data, [expected_delta], rtol=0, atol=1e-15)


def _reference_adam(x0, grad_fn, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    # independent scalar Adam recurrence, plain floats
    x, m, v = x0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        x -= lr * (m / (1 - beta1 ** t)) / (math.sqrt(v / (1 - beta2 ** t)) + eps)
    return x


def test_adam_two_steps_descend_quadratic():
    p = ad.Parameter(np.array([1.0]), name="x")
    state = ad.AdamState.for_parameter(p)
    losses = []
    for _ in range(2):
        p.zero_grad()
        loss = ad.tsum(ad.hadamard(p, p))
        loss.backward()
        losses.append(loss.item())
        ad.adam_step(p, state, 0.1)
    assert float(ad.hadamard(p, p).data[0]) < losses[0]
    expected = _reference_adam(1.0, lambda x: 2 * x, 0.1, steps=2)
    np.testing.assert_allclose(p.data, [expected], atol=1e-12)


def test_adam_rejects_non_finite_gradient():
    p = ad.Parameter(np.array([1.0]), name="exploding")
    state = ad.AdamState.for_parameter(p)
    p.grad = np.array([np.nan])
    with pytest.raises(NumericError, match="exploding"):
        ad.adam_step(p, state, 1e-3)


def test_clip_global_norm():
    p = ad.Parameter(np.array([3.0, 4.0]), name="p")
    p.grad = np.array([3.0, 4.0])
    norm = ad.clip_global_norm([p], 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(np.linalg.norm(p.grad), 1.0)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def test_fd_check_linear_loss():
    rng = np.random.default_rng(11)
    x = ad.Parameter(rng.normal(size=6), name="x")
    err = ad.finite_difference_check(lambda: ad.tsum(x), [x])
    assert err < 1e-9
    # analytic gradient of sum is all ones
    x.zero_grad()
    ad.tsum(x).backward()
    np.testing.assert_allclose(x.grad, np.ones(6))


def _random_composite_losses(rng):
    """One loss builder per op family; dims <= 8 everywhere."""
    n = int(rng.integers(2, 9))
    m = int(rng.integers(2, 9))

    def linear_chain():
        w = ad.Parameter(rng.normal(size=(m, n)), name="w")
        x = ad.Parameter(rng.normal(size=n), name="x")
        return [w, x], lambda: ad.tsum(ad.tanh(ad.matvec(w, x)))

    def softmax_head():
        logits = ad.Parameter(rng.normal(size=n), name="logits")
        mix = rng.normal(size=n)
        mask = rng.random(n) < 0.8
        mask[int(rng.integers(0, n))] = True
        return [logits], lambda: ad.tsum(ad.hadamard(ad.masked_softmax(logits, mask), mix))

    def pointwise():
        a = ad.Parameter(rng.normal(size=(n, m)), name="a")
        b = ad.Parameter(rng.normal(size=(n, m)), name="b")
        return [a, b], lambda: ad.tsum(ad.sigmoid(ad.add(ad.hadamard(a, b), ad.scale(a, 0.5))))

    def batched_matmul():
        a = ad.Parameter(rng.normal(size=(2, n, m)), name="a")
        b = ad.Parameter(rng.normal(size=(m, 3)), name="b")
        return [a, b], lambda: ad.tsum(ad.tanh(ad.matmul(a, b)))

    def embedding_gather():
        table = ad.Parameter(rng.normal(size=(n, m)), name="table")
        idx = rng.integers(0, n, size=(2, 3))
        mix = rng.normal(size=(2, 3, m))
        return [table], lambda: ad.tsum(ad.hadamard(ad.tanh(ad.gather(table, idx)), mix))

    def lse_margin():
        scores = ad.Parameter(rng.normal(size=(3, n)), name="scores")
        return [scores], lambda: ad.tsum(ad.sub(ad.logsumexp(scores, axis=-1), ad.select(scores, 0, axis=1)))

    def shaped():
        a = ad.Parameter(rng.normal(size=(n, m)), name="a")
        return [a], lambda: ad.tsum(ad.tanh(ad.reshape(ad.transpose(a, (1, 0)), (n * m,))))

    return [linear_chain, softmax_head, pointwise, batched_matmul, embedding_gather, lse_margin, shaped]


def test_gradients_match_finite_differences_over_random_trials():
    rng = np.random.default_rng(2024)
    trials = 0
    while trials < 105:
        for build in _random_composite_losses(rng):
            params, loss_fn = build()
            err = ad.finite_difference_check(loss_fn, params, h=1e-5)
            assert err < 1e-4, f"{build.__name__}: rel err {err}"
            trials += 1


def test_dropout_eval_mode_is_identity_train_mode_scales():
    rng = np.random.default_rng(5)
    x = ad.as_tensor(np.ones((1000,)))
    assert ad.dropout(x, 0.2, rng, training=False) is x
    out = ad.dropout(x, 0.2, np.random.default_rng(5), training=True)
    values = set(np.unique(out.data).tolist())
    assert values <= {0.0, 1.0 / 0.8}
    # inverted dropout keeps the expectation near 1
    assert abs(out.data.mean() - 1.0) < 0.05
