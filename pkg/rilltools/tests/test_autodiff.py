import numpy as np
import pytest

from rilltools import autodiff
from rilltools.autodiff import Tape, finite_difference_check
from rilltools.errors import DomainError, ShapeError
from rilltools.fuzzy import Reichenbach, Sigmoidal, Valuation
from rilltools.learner import MLP, MLPSpec, forward, valuation_from_outputs
from rilltools.logic import Atom, Constant
from rilltools.losses import Hinge, NegLogBase2, empirical_logic_risk
from rilltools.tests.factory import implication_kb

#: Smooth expressions of two variables, (x, y) sampled in (0.1, 0.9)
SMOOTH_EXPRESSIONS = (
    lambda t, v: 1.0 - v[0] + v[0] * v[1],
    lambda t, v: autodiff.log2(v[0] + 1.0) * v[1],
    lambda t, v: autodiff.ln(v[0]) - autodiff.exp(v[1]) / (v[0] + 2.0),
    lambda t, v: autodiff.sigmoid(v[0] * 3.0 - v[1]) * autodiff.square(v[1]),
    lambda t, v: 1.0 / (v[0] + v[1]),
    lambda t, v: autodiff.relu(v[0] - 0.5) + autodiff.minimum(v[0], v[1]),
    lambda t, v: autodiff.maximum(v[0], v[1]) * 2.0 - v[0],
    lambda t, v: Sigmoidal(8.0)(v[0], v[1]),
    lambda t, v: 1.0 - autodiff.log2(Reichenbach()(v[0], v[1]) + 1.0),
    lambda t, v: -(v[0] - v[1]) * (v[0] + v[1]),
)


class TestTape(object):

    def test_backward_of_reichenbach_matches_hand_partials(self):
        tape = Tape()
        x, y = tape.variable(0.3), tape.variable(0.6)
        grads = tape.backward(1.0 - x + x * y)
        assert grads[x.node] == pytest.approx(0.6 - 1.0, abs=1e-15)
        assert grads[y.node] == pytest.approx(0.3, abs=1e-15)

    def test_shared_subexpressions_accumulate(self):
        tape = Tape()
        x = tape.variable(2.0)
        y = x * x + x
        grad, = tape.gradient(y, [x])
        assert grad == pytest.approx(5.0)

    def test_unreached_leaves_get_zero_gradients(self):
        tape = Tape()
        x, unused = tape.variable(1.0), tape.variable(np.ones(3))
        grads = tape.backward(x * 2.0)
        assert np.array_equal(grads[unused.node], np.zeros(3))

    def test_constants_never_receive_gradients(self):
        tape = Tape()
        c = tape.constant(3.0)
        assert c.is_constant
        assert (c * c).is_constant
        assert tape.gradient(c * 2.0, [c])[0] == 0.0

    def test_backward_needs_scalar_root(self):
        tape = Tape()
        x = tape.variable(np.ones(3))
        with pytest.raises(ShapeError):
            tape.backward(x * 2.0)

    def test_domain_errors(self):
        tape = Tape()
        for value in (0.0, -1.0):
            with pytest.raises(DomainError):
                autodiff.log2(tape.variable(value))
            with pytest.raises(DomainError):
                autodiff.ln(tape.variable(value))
        with pytest.raises(DomainError):
            tape.variable(1.0) / 0.0
        with pytest.raises(DomainError):
            autodiff.exp(tape.variable(1000.0))
        with pytest.raises(DomainError):
            tape.variable(float('nan'))

    def test_shape_errors(self):
        tape = Tape()
        with pytest.raises(ShapeError):
            tape.variable(np.ones(3)) + tape.variable(np.ones(2))
        with pytest.raises(ShapeError):
            tape.variable(np.ones((2, 3))) @ tape.variable(np.ones((2, 3)))
        with pytest.raises(ShapeError):
            autodiff.cross_entropy_row(tape.variable(np.ones((2, 3))), [0, 1, 2])

    def test_unknown_kind_and_foreign_tapes(self):
        tape, other = Tape(), Tape()
        with pytest.raises(ValueError):
            tape.record('cube', tape.variable(1.0))
        with pytest.raises(ValueError):
            tape.variable(1.0) + other.variable(1.0)

    def test_min_ties_take_the_left_argument(self):
        tape = Tape()
        a, b = tape.variable(0.5), tape.variable(0.5)
        grad_a, grad_b = tape.gradient(autodiff.minimum(a, b), [a, b])
        assert (grad_a, grad_b) == (1.0, 0.0)
        assert tape.min_margin == 0.0

    def test_indicator_gate_passes_gradient_on_active_branch_only(self):
        tape = Tape()
        loss = tape.variable(np.array([0.05, 0.5]))
        gated = autodiff.indicator_gate(loss, 0.1, loss, 'gt')
        assert np.array_equal(gated.value, [0.0, 0.5])
        grad, = tape.gradient(autodiff.total(gated), [loss])
        assert np.array_equal(grad, [0.0, 1.0])

        below = autodiff.indicator_gate(loss, 0.1, loss, 'le')
        grad, = tape.gradient(autodiff.total(below), [loss])
        assert np.array_equal(grad, [1.0, 0.0])
        with pytest.raises(ValueError):
            autodiff.indicator_gate(loss, 0.1, loss, 'lt')

    def test_softmax_rows_sum_to_one_and_cross_entropy_gradient(self):
        tape = Tape()
        logits = tape.variable(np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]))
        probs = autodiff.softmax_row(logits)
        assert np.allclose(probs.value.sum(axis=1), 1.0)
        loss = autodiff.mean(autodiff.cross_entropy_row(logits, [2, 0]))
        grad, = tape.gradient(loss, [logits])
        expected = probs.value.copy()
        expected[[0, 1], [2, 0]] -= 1.0
        assert np.allclose(grad, expected / 2.0)

    def test_wmc_of_implication_is_reichenbach(self):
        tape = Tape()
        p, q = tape.variable(0.3), tape.variable(0.6)
        models = np.array([[False, False], [False, True], [True, True]])
        wmc = tape.record('wmc', p, q, models=models)
        assert wmc.item() == pytest.approx(1.0 - 0.3 + 0.3 * 0.6, abs=1e-12)
        grad_p, grad_q = tape.gradient(wmc, [p, q])
        assert grad_p == pytest.approx(0.6 - 1.0)
        assert grad_q == pytest.approx(0.3)


class TestFiniteDifferences(object):

    def test_smooth_expressions_agree_with_central_differences(self):
        rng = np.random.default_rng(2020)
        for expression in SMOOTH_EXPRESSIONS:
            for _ in range(10):
                point = rng.uniform(0.1, 0.9, size=2)
                assert finite_difference_check(expression, point, seed=1) < 1e-4

    def test_batched_expression_agrees_with_central_differences(self):
        def batched(tape, variables):
            x = variables[0] * np.ones(4) * np.linspace(0.2, 0.8, 4)
            y = variables[1] * np.ones(4)
            return autodiff.mean(Hinge(0.05)(NegLogBase2()(Reichenbach()(x, y))))

        assert finite_difference_check(batched, [0.7, 0.4]) < 1e-4

    def test_reichenbach_loss_is_checked_tightly(self):
        def loss(tape, variables):
            return 1.0 - autodiff.log2(Reichenbach()(variables[0], variables[1]) + 1.0)

        assert finite_difference_check(loss, [0.3, 0.6]) < 1e-6

    def test_error_on_a_small_partial_is_relative(self):
        # the constant hides half of the true slope from the tape
        def leaky(tape, variables):
            x = variables[0]
            return x * 1e-6 + tape.constant(1e-6 * x.item()) + variables[1]

        assert finite_difference_check(leaky, [0.5, 0.5]) == pytest.approx(0.5, rel=1e-3)

    def test_mlp_with_logic_loss_objective(self):
        # three dense layers (two hidden, one head) under task + logic risk
        spec = MLPSpec(3, (4, 4), (('y', 2),))
        model = MLP(spec, seed=7)
        names = list(model.params)
        shapes = [model.params[n].shape for n in names]
        sizes = [int(np.prod(s)) for s in shapes]
        point = np.concatenate([model.params[n].ravel() for n in names])
        inputs = np.random.default_rng(3).normal(size=(5, 3))
        kb = implication_kb()
        predicates = {'P': ('y', 1), 'Q': ('y', 0)}

        def objective(tape, variables):
            bound, offset = {}, 0
            for name, shape, size in zip(names, shapes, sizes):
                flat = variables[offset:offset + size]
                values = np.array([v.value for v in flat]).reshape(shape)
                # rebuild the parameter from its scalar leaves
                matrix = tape.constant(np.zeros(shape))
                for k, v in enumerate(flat):
                    unit = np.zeros(size)
                    unit[k] = 1.0
                    matrix = matrix + v * unit.reshape(shape)
                assert np.allclose(matrix.value, values)
                bound[name] = matrix
                offset += size
            x = tape.constant(inputs)
            logits = model.logits(x, bound)['y']
            task = autodiff.mean(autodiff.cross_entropy_row(logits, [0, 1, 0, 1, 1]))
            rows = {'s': forward(model, x, bound)}
            valuation = valuation_from_outputs(rows, predicates, [Atom('P', (Constant('s'),)),
                                                                  Atom('Q', (Constant('s'),))])
            logic = empirical_logic_risk(Reichenbach(), NegLogBase2(),
                                         Hinge(0.001), kb, [valuation])
            return task + logic * 0.7

        assert finite_difference_check(objective, point, seed=2) < 1e-4


def test_valuation_rejects_plain_numbers():
    with pytest.raises(TypeError):
        Valuation({Atom('P'): 0.5})
