import csv

import numpy as np
import pytest

from rilltools import autodiff, learner
from rilltools.autodiff import Tape
from rilltools.datasets import Dataset, addition_kb
from rilltools.errors import (DivergenceError, FormatError, InsufficientDataError, ShapeError,
                              UnmappedPredicateError)
from rilltools.learner import (MLP, EpochMetrics, LogicSpec, MLPSpec, OptimizerSpec,
                               ScheduleSpec, TrainConfig)
from rilltools.logic import Atom, Constant
from rilltools.losses import L2, Hinge, Identity, L2Hinge, NegLogBase2, empirical_logic_risk
from rilltools.tests.factory import implication_kb, two_blob_task

#: schedule, epoch, learning rate for a base rate of 1
VALID_LEARNING_RATES = (
    (ScheduleSpec(), 0, 1.0),
    (ScheduleSpec(), 59, 1.0),
    (ScheduleSpec(), 60, 0.7),
    (ScheduleSpec(), 120, 0.49),
    (ScheduleSpec(kind='warmup', warmup_epochs=5), 0, 0.2),
    (ScheduleSpec(kind='warmup', warmup_epochs=5), 4, 1.0),
    (ScheduleSpec(kind='warmup', warmup_epochs=5), 5, 1.0),
)

#: Fast configuration for the two blob task
QUICK = TrainConfig(epochs=20, batch_size=16, seed=3, hidden=(16,),
                    optimizer=OptimizerSpec(lr=1e-2), logic=LogicSpec(method='vanilla'))


def _task_loss(model, task):
    tape = Tape()
    logits = model.logits(tape.constant(task.test.inputs), model.bind(tape, trainable=False))
    return autodiff.mean(autodiff.cross_entropy_row(logits['y'], task.test.labels['y'])).item()


@pytest.fixture(scope='module')
def sharp_classifier():
    """A perfectly separating model whose head is scaled up until the test
    cross entropy drops below 1e-6."""
    task = two_blob_task()
    model = learner.train(QUICK.replace(epochs=40), task).model
    assert learner.evaluate(model, task.test).accuracy['y'] == 1.0
    for _ in range(30):
        if _task_loss(model, task) < 1e-6:
            break
        for name in ('head.y.weight', 'head.y.bias'):
            model.params[name] = model.params[name] * 2.0
    return model, task


class TestSpecs(object):

    def test_invalid_specs_raise(self):
        for kwargs in ({'inputs': 0}, {'inputs': 2, 'hidden': ()},
                       {'inputs': 2, 'heads': (('y', 1),)}):
            with pytest.raises(ValueError):
                MLPSpec(**kwargs)
        for kwargs in ({'kind': 'rmsprop'}, {'lr': 0.0}, {'momentum': 1.0}):
            with pytest.raises(ValueError):
                OptimizerSpec(**kwargs)
        for kwargs in ({'kind': 'cosine'}, {'decay_rate': 0.0}, {'decay_step': 0}):
            with pytest.raises(ValueError):
                ScheduleSpec(**kwargs)
        for kwargs in ({'method': 'bogus'}, {'method': 'rill_hinge'}, {'lam': -1.0},
                       {'completeness': 0.0}, {'operator': 'goedel'}, {'outer_map': 'exp'}):
            with pytest.raises(ValueError):
                LogicSpec(**kwargs)
        for kwargs in ({'epochs': -1}, {'batch_size': 0}):
            with pytest.raises(ValueError):
                TrainConfig(**kwargs)

    def test_logic_spec_properties(self):
        assert LogicSpec(method='rill_hinge', epsilon=0.1).transform == 'hinge'
        assert LogicSpec(method='semantic').transform is None
        assert LogicSpec().uses_logic
        assert not LogicSpec(method='vanilla').uses_logic
        assert not LogicSpec(lam=0.0).uses_logic

    def test_replace_reaches_nested_fields(self):
        config = TrainConfig()
        changed = config.replace(epochs=3, logic__lam=0.0, optimizer__kind='sgd')
        assert (changed.epochs, changed.logic.lam, changed.optimizer.kind) == (3, 0.0, 'sgd')
        assert changed.logic.method == config.logic.method
        assert config.logic.lam == 0.7
        assert learner.config_hash(changed) != learner.config_hash(config)
        assert learner.config_hash(TrainConfig()) == learner.config_hash(config)

    def test_learning_rate_schedules(self):
        for schedule, epoch, expected in VALID_LEARNING_RATES:
            assert learner.learning_rate(schedule, 1.0, epoch) == pytest.approx(expected)


class TestModel(object):

    def test_parameter_layout_and_initialisation(self):
        model = MLP(MLPSpec(3, (5,), (('a', 2), ('b', 4))), seed=1)
        assert list(model.params) == ['hidden0.weight', 'hidden0.bias', 'head.a.weight',
                                      'head.a.bias', 'head.b.weight', 'head.b.bias']
        assert model.params['hidden0.weight'].shape == (3, 5)
        assert model.params['head.b.bias'].shape == (4,)
        assert np.all(np.abs(model.params['hidden0.weight']) <= np.sqrt(2.0))
        assert not model.params['head.a.bias'].any()
        same = MLP(MLPSpec(3, (5,), (('a', 2), ('b', 4))), seed=1)
        assert all(np.array_equal(model.params[n], same.params[n]) for n in model.params)

    def test_forward_rows_are_distributions(self):
        model = MLP(MLPSpec(3, (5, 5), (('a', 2), ('b', 4))), seed=1)
        probs = learner.predict_proba(model, np.random.default_rng(0).normal(size=(6, 3)))
        assert probs['a'].shape == (6, 2) and probs['b'].shape == (6, 4)
        assert np.allclose(probs['b'].sum(axis=1), 1.0)

        tape = Tape()
        with pytest.raises(ShapeError):
            learner.forward(model, tape.constant(np.ones((2, 4))))

    def test_from_parameters_checks_the_layout(self):
        model = MLP(MLPSpec(3, (5,), (('a', 2),)), seed=1)
        params = dict(model.params)
        params['head.a.bias'] = np.zeros(3)
        with pytest.raises(FormatError):
            MLP.from_parameters(model.heads, params)
        with pytest.raises(FormatError):
            MLP.from_parameters(model.heads, {'head.a.bias': np.zeros(2)})


class TestOptimizers(object):

    def test_first_adamw_step_moves_by_the_learning_rate(self):
        optimizer = learner.AdamW(OptimizerSpec(weight_decay=0.0))
        params = {'w': np.array([1.0, -2.0])}
        optimizer.step(params, {'w': np.array([0.5, -0.1])}, 0.1)
        assert params['w'] == pytest.approx([0.9, -1.9], rel=1e-6)

    def test_adamw_decay_is_decoupled(self):
        optimizer = learner.AdamW(OptimizerSpec(weight_decay=0.5))
        params = {'w': np.array([2.0])}
        optimizer.step(params, {'w': np.array([0.0])}, 0.1)
        assert params['w'] == pytest.approx([2.0 - 0.1 * 0.5 * 2.0])

    def test_momentum_sgd_accumulates_velocity(self):
        optimizer = learner.make_optimizer(OptimizerSpec(kind='sgd', weight_decay=0.0))
        params = {'w': np.array([1.0])}
        grads = {'w': np.array([1.0])}
        optimizer.step(params, grads, 0.1)
        optimizer.step(params, grads, 0.1)
        assert params['w'] == pytest.approx([1.0 - 0.1 - 0.19])

    def test_momentum_sgd_ignores_weight_decay(self):
        optimizer = learner.make_optimizer(OptimizerSpec(kind='sgd', weight_decay=0.5))
        params = {'w': np.array([2.0])}
        optimizer.step(params, {'w': np.array([0.0])}, 0.1)
        assert params['w'].tolist() == [2.0]


class TestValuations(object):

    def test_valuation_reads_the_mapped_class_column(self):
        tape = Tape()
        rows = {'a': {'y': tape.constant(np.array([[0.2, 0.8], [0.6, 0.4]]))}}
        v = learner.valuation_from_outputs(rows, {'P': ('y', 1), 'N': ('y', 0)})
        assert v[Atom('P', (Constant('a'),))].value.tolist() == [0.8, 0.4]
        assert v[Atom('N', (Constant('a'),))].value.tolist() == [0.2, 0.6]
        assert v.domain == (Constant('a'),)

    def test_unmapped_and_non_unary_atoms(self):
        tape = Tape()
        rows = {'a': {'y': tape.constant(np.array([[0.2, 0.8]]))}}
        with pytest.raises(UnmappedPredicateError):
            learner.valuation_from_outputs(rows, {'P': ('y', 1)}, [Atom('R', (Constant('a'),))])
        with pytest.raises(ShapeError):
            learner.valuation_from_outputs(rows, {'P': ('y', 1)},
                                           [Atom('P', (Constant('a'), Constant('a')))])
        with pytest.raises(UnmappedPredicateError):
            learner.check_predicates(implication_kb('P', 'R'), {'P': ('y', 1)})

    def test_needed_atoms_follow_slot_bindings(self):
        bindings = {'x{0:d}'.format(k): ('s{0:d}'.format(k),) for k in range(1, 5)}
        atoms = learner.needed_atoms(addition_kb(), ('s1', 's2', 's3', 's4'), bindings)
        assert len(atoms) == 32
        assert Atom('D3_1', (Constant('s3'),)) in atoms
        assert Atom('D3_2', (Constant('s3'),)) not in atoms
        assert Atom('D1_0', (Constant('s2'),)) not in atoms


class TestEvaluation(object):

    def test_accuracy_frequencies_and_confusion_agree(self):
        task = two_blob_task()
        model = MLP(MLPSpec(2, (4,), task.heads), seed=5)
        evaluation = learner.evaluate(model, task.test)
        predicted = np.argmax(learner.predict_proba(model, task.test.inputs)['y'], axis=1)
        assert evaluation.accuracy['y'] == pytest.approx(np.mean(predicted == task.test.labels['y']))
        assert evaluation.frequencies['y'].sum() == pytest.approx(1.0)
        assert evaluation.confusion['y'].sum() == len(task.test)
        assert np.trace(evaluation.confusion['y']) / len(task.test) == \
            pytest.approx(evaluation.accuracy['y'])

        empty = Dataset(np.zeros((0, 2)), {'y': np.zeros(0, dtype=np.int64)}, {},
                        np.zeros((0, 1), dtype=np.int64))
        with pytest.raises(ValueError):
            learner.evaluate(model, empty)

    def test_metrics_writer_appends_under_a_single_header(self, workspace):
        path = workspace.join('metrics.csv')
        metrics = EpochMetrics(0, 0.1, 0.5, 0.25, {'y': 0.75}, {'y': [0.5, 0.5]})
        with learner.MetricsWriter(path) as writer:
            writer.write(metrics)
            writer.write(metrics)
        with learner.MetricsWriter(path) as writer:
            writer.write(metrics)
        with open(path, newline='') as f:
            rows = list(csv.reader(f))
        assert rows[0] == ['epoch', 'lr', 'task_loss', 'logic_loss', 'acc_y', 'freq_y_0',
                           'freq_y_1']
        assert len(rows) == 4


class TestTraining(object):

    def test_training_is_deterministic(self):
        task = two_blob_task()
        config = QUICK.replace(epochs=3, logic=LogicSpec(method='rill_hinge', epsilon=0.1))
        first, second = learner.train(config, task), learner.train(config, task)
        assert all(np.array_equal(first.model.params[n], second.model.params[n])
                   for n in first.model.params)
        assert [m.as_row() for m in first.history] == [m.as_row() for m in second.history]
        assert len(first.history) == 3

    def test_zero_task_loss_means_zero_logic_risk(self, operator, sharp_classifier):
        # P and Q read the same class, so the rule holds on every sample
        model, task = sharp_classifier
        tape = Tape()
        inputs = tape.constant(task.test.inputs)
        assert _task_loss(model, task) < 1e-6
        v = learner.valuation_from_outputs({'s': learner.forward(model, inputs)}, task.predicates)
        for transform in (Identity(), L2(), Hinge(0.1), L2Hinge(0.1)):
            risk = empirical_logic_risk(operator, NegLogBase2(), transform, task.kb, [v])
            assert risk.item() < 1e-6

    def test_rule_phase_gets_a_fresh_optimizer(self, monkeypatch):
        made = []
        make_optimizer = learner.make_optimizer

        def recording(spec):
            made.append(make_optimizer(spec))
            return made[-1]

        monkeypatch.setattr(learner, 'make_optimizer', recording)
        task = two_blob_task()
        learner.train(QUICK.replace(epochs=1), task)
        assert len(made) == 1
        learner.train(QUICK.replace(epochs=1, pretrain_epochs=2), task)
        assert len(made) == 3

    def test_every_method_trains(self):
        task = two_blob_task(labelled=False)
        for method in ('fuzzy', 'semantic', 'rill_l2', 'rill_hinge', 'rill_l2hinge'):
            logic = LogicSpec(method=method, epsilon=0.1)
            result = learner.train(QUICK.replace(epochs=2, logic=logic), task)
            assert len(result.history) == 2
            assert all(np.isfinite(m.logic_loss) for m in result.history)

    def test_nothing_to_learn_from(self):
        with pytest.raises(InsufficientDataError):
            learner.train(QUICK, two_blob_task(labelled=False))

    def test_unmapped_predicate(self):
        task = two_blob_task(kb=implication_kb('P', 'R'))
        with pytest.raises(UnmappedPredicateError):
            learner.train(QUICK.replace(logic__method='fuzzy'), task)

    def test_divergence(self):
        config = QUICK.replace(batch_size=32, optimizer__lr=1e200)
        with pytest.raises(DivergenceError):
            learner.train(config, two_blob_task())

    def test_metrics_reach_the_writer(self, workspace):
        path = workspace.join('metrics.csv')
        with learner.MetricsWriter(path) as writer:
            learner.train(QUICK.replace(epochs=2), two_blob_task(), writer=writer)
        with open(path, newline='') as f:
            assert len(list(csv.reader(f))) == 3


class TestCheckpoints(object):

    def test_round_trip(self, workspace):
        model = MLP(MLPSpec(3, (5, 4), (('a', 2), ('b', 3))), seed=9)
        path = workspace.join('model.ckpt')
        digest = learner.save_checkpoint(model, QUICK, path)
        loaded, loaded_digest = learner.load_checkpoint(path)
        assert digest == loaded_digest == learner.config_hash(QUICK)
        assert loaded.heads == model.heads
        assert loaded.spec == model.spec
        assert all(np.array_equal(loaded.params[n], model.params[n]) for n in model.params)

    def test_corrupt_files(self, workspace):
        model = MLP(MLPSpec(3, (5,), (('a', 2),)), seed=9)
        path = workspace.join('model.ckpt')
        learner.save_checkpoint(model, QUICK, path)
        with open(path, 'rb') as f:
            data = f.read()
        corrupt = (b'NOTACKPT' + data[8:],
                   data[:8] + b'\x02\x00' + data[10:],
                   data[:-3],
                   data[:20],
                   data + b'\x00')
        for i, payload in enumerate(corrupt):
            broken = workspace.write_bytes('broken{0:d}.ckpt'.format(i), payload)
            with pytest.raises(FormatError):
                learner.load_checkpoint(broken)
