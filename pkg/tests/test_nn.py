"""GRU cell, dense layer, losses and the RMSprop optimiser."""

import math

import numpy as np
import pytest

from sggru.graph import graph_spectrum, random_geometric_graph
from sggru.nn import (
    DenseParams,
    GruParams,
    NumericalError,
    OptimizerState,
    dense_backward,
    dense_forward,
    gru_cell_forward,
    gru_sequence_backward,
    gru_sequence_forward,
    interpolated_target,
    loss_semisupervised,
    loss_supervised,
    max_relative_error,
    numerical_gradient,
    rmsprop_step,
    sigmoid,
)
from sggru.sampling import select_plan


def _scalar_cell(x, h, p):
    """Textbook single-sample GRU step written with Python floats."""
    d = len(x)
    act = (lambda v: 1 / (1 + math.exp(-v))) if p.candidate_activation == "sigmoid" else math.tanh
    sig = lambda v: 1 / (1 + math.exp(-v))
    q = [sig(sum(p.w_q[i, j] * x[j] + p.v_q[i, j] * h[j] for j in range(d)) + p.b_q[i]) for i in range(d)]
    r = [sig(sum(p.w_r[i, j] * x[j] + p.v_r[i, j] * h[j] for j in range(d)) + p.b_r[i]) for i in range(d)]
    c = [act(sum(p.w_c[i, j] * x[j] + p.v_c[i, j] * h[j] * r[j] for j in range(d)) + p.b_c[i]) for i in range(d)]
    return [q[i] * c[i] + (1 - q[i]) * h[i] for i in range(d)]


class TestGruCell:
    @pytest.mark.parametrize("act", ["sigmoid", "tanh"])
    def test_matches_scalar_loop(self, rng, act):
        p = GruParams.init(4, rng, act)
        x, h = rng.normal(size=4), rng.normal(size=4)
        out, _ = gru_cell_forward(x[None], h[None], p)
        np.testing.assert_allclose(out[0], _scalar_cell(x, h, p), atol=1e-14)

    def test_zero_parameters(self):
        p = GruParams.zeros(3)
        out, _ = gru_cell_forward(np.ones((1, 3)), np.zeros((1, 3)), p)
        # q = r = c = 0.5, so h = 0.25
        np.testing.assert_allclose(out, 0.25)

    def test_state_is_convex_combination(self, rng):
        p = GruParams.init(5, rng, "sigmoid")
        h = rng.uniform(0, 1, size=(4, 5))
        out, _ = gru_cell_forward(rng.normal(size=(4, 5)), h, p)
        assert np.all(out > 0) and np.all(out < 1)

    def test_shape_validation(self, rng):
        with pytest.raises(ValueError):
            GruParams(**{n: np.zeros((2, 2)) if not n.startswith("b_") else np.zeros(3)
                         for n in ("w_q", "v_q", "b_q", "w_r", "v_r", "b_r", "w_c", "v_c", "b_c")})
        with pytest.raises(ValueError):
            GruParams.zeros(2, "relu")

    def test_sequence_squeezed_layout(self, rng):
        p = GruParams.init(3, rng)
        xs = rng.normal(size=(4, 3))
        out1, _ = gru_sequence_forward(xs, p)
        out2, _ = gru_sequence_forward(xs[:, None, :], p)
        np.testing.assert_array_equal(out1, out2[:, 0])

    def test_overflowing_inputs_raise(self, rng):
        p = GruParams.init(2, rng, "tanh")
        p.w_c[...] = np.nan
        with pytest.raises(NumericalError):
            gru_sequence_forward(np.ones((2, 2)), p)


@pytest.mark.parametrize("act", ["sigmoid", "tanh"])
def test_bptt_matches_finite_differences(act):
    rng = np.random.default_rng(8)
    p = GruParams.init(3, rng, act)
    xs = rng.normal(size=(4, 2, 3))
    h0 = rng.normal(size=(2, 3)) * 0.3
    w = rng.normal(size=(4, 2, 3))
    _, tr = gru_sequence_forward(xs, p, h0)
    grads, dx, dh0 = gru_sequence_backward(tr, w)
    f = lambda: float(np.sum(w * gru_sequence_forward(xs, p, h0)[0]))
    for name, arr in p.arrays().items():
        assert max_relative_error(grads[name], numerical_gradient(f, arr)) < 1e-6
    assert max_relative_error(dx, numerical_gradient(f, xs)) < 1e-6
    assert max_relative_error(dh0, numerical_gradient(f, h0)) < 1e-6


def test_dense_forward_backward(rng):
    p = DenseParams.init(2, 3, rng)
    x = rng.normal(size=(4, 3))
    np.testing.assert_allclose(dense_forward(x, p), x @ p.weight.T + p.bias)
    w = rng.normal(size=(4, 2))
    g, dx = dense_backward(x, p, w)
    f = lambda: float(np.sum(w * dense_forward(x, p)))
    assert max_relative_error(g["weight"], numerical_gradient(f, p.weight)) < 1e-8
    assert max_relative_error(dx, numerical_gradient(f, x)) < 1e-8


class TestLosses:
    def test_supervised_value_and_gradient(self):
        pred = np.array([[1.0, 2.0], [3.0, 5.0]])
        lab = np.array([[0.0, 2.0], [3.0, 3.0]])
        loss, grad = loss_supervised(pred, lab)
        assert loss == pytest.approx((1 + 4) / 4)
        np.testing.assert_allclose(grad, 2 * (pred - lab) / 4)

    def test_mask_excludes_entries(self):
        pred = np.array([[1.0, 100.0]])
        lab = np.array([[0.0, 0.0]])
        loss, grad = loss_supervised(pred, lab, mask=np.array([[True, False]]))
        assert loss == 1.0
        assert grad[0, 1] == 0.0

    def test_interpolated_target_keeps_samples(self):
        spec = graph_spectrum(random_geometric_graph(12, seed=1))
        plan = select_plan(spec, 6, [0, 1])
        xs = np.random.default_rng(0).normal(size=(3, 6))
        target = interpolated_target(xs, plan)
        np.testing.assert_array_equal(target[:, list(plan.sample_nodes)], xs)
        np.testing.assert_allclose(target[:, plan.hidden_nodes], (xs @ plan.interpolator.T)[:, plan.hidden_nodes])

    def test_semisupervised_gradient(self, rng):
        spec = graph_spectrum(random_geometric_graph(9, seed=2))
        plan = select_plan(spec, 4, [0])
        pred = rng.normal(size=(2, 9))
        xs = rng.normal(size=(2, 4))
        _, g = loss_semisupervised(pred, xs, plan)
        num = numerical_gradient(lambda: loss_semisupervised(pred, xs, plan)[0], pred)
        assert max_relative_error(g, num) < 1e-7

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_supervised(np.zeros((2, 3)), np.zeros((2, 4)))


class TestRmsprop:
    def test_single_step_by_hand(self):
        p = {"w": np.array([1.0, -2.0])}
        g = {"w": np.array([0.5, 0.0])}
        state = OptimizerState(learning_rate=0.1)
        rmsprop_step(p, g, state)
        acc = 0.01 * 0.25
        assert p["w"][0] == pytest.approx(1.0 - 0.1 * 0.5 / (math.sqrt(acc) + 1e-8), rel=1e-14)
        assert p["w"][1] == -2.0
        np.testing.assert_allclose(state.accumulators["w"], [acc, 0.0])

    def test_accumulator_recursion(self):
        p = {"w": np.zeros(1)}
        state = OptimizerState(learning_rate=1e-3)
        acc = 0.0
        for g in (1.0, -2.0, 0.5):
            rmsprop_step(p, {"w": np.array([g])}, state)
            acc = 0.99 * acc + 0.01 * g * g
        assert state.accumulators["w"][0] == pytest.approx(acc, rel=1e-14)

    def test_schedule_halves_every_ten_epochs(self):
        state = OptimizerState(learning_rate=1e-4)
        rates = []
        for _ in range(25):
            rates.append(state.learning_rate)
            state.end_epoch()
        assert rates[:10] == [1e-4] * 10
        assert rates[10:20] == [5e-5] * 10
        assert rates[20:] == [2.5e-5] * 5

    def test_nonfinite_gradient_rejected(self):
        with pytest.raises(NumericalError):
            rmsprop_step({"w": np.zeros(2)}, {"w": np.array([np.inf, 0])}, OptimizerState())

    def test_state_round_trip(self):
        state = OptimizerState(learning_rate=3e-3, epoch=4)
        rmsprop_step({"w": np.zeros(3)}, {"w": np.ones(3)}, state)
        back = OptimizerState.from_dict(state.to_dict())
        assert back.learning_rate == 3e-3 and back.epoch == 4
        np.testing.assert_array_equal(back.accumulators["w"], state.accumulators["w"])


def test_sigmoid_saturates_without_warnings():
    with np.errstate(all="raise"):
        np.testing.assert_allclose(sigmoid(np.array([-1000.0, 0.0, 1000.0])), [0.0, 0.5, 1.0])
