"""Losses built on top of logic likelihoods.

A rule's logic loss is ``g(s)`` with the outer map ``g(s) = 1 - log2(s + 1)``,
which is 0 for a satisfied rule and 1 for a violated one. The base-2
logarithm is what makes ``g(1) = 0`` hold.

The RILL transforms reshape that loss to suppress the gradient it still
emits for almost satisfied rules:

=========  =====================================
identity   ``ℓ``
l2         ``ℓ²``
hinge      ``ℓ`` if ``ℓ > ε`` else ``0``
l2hinge    ``ℓ²`` if ``ℓ <= ε`` else ``ℓ``
=========  =====================================
"""
from dataclasses import dataclass
from itertools import product
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from rilltools import autodiff, logic
from rilltools.autodiff import DiffScalar, Tape, Var
from rilltools.errors import DomainError, MissingAtomError
from rilltools.fuzzy import FuzzyOperator, Valuation, logic_likelihood
from rilltools.logic import Atom, Formula, KnowledgeBase

#: Most atoms the enumeration based semantic loss accepts
MAX_ENUMERATION_ATOMS = 20


class NegLogBase2(object):
    """``g(s) = 1 - log2(s + 1)``"""
    name = 'neglog2'

    def __call__(self, s: DiffScalar) -> DiffScalar:
        return 1.0 - autodiff.log2(s + 1.0)

    def __repr__(self):
        return 'NegLogBase2()'


OUTER_MAPS = {NegLogBase2.name: NegLogBase2}


class LossTransform(object):
    name = None
    epsilon = None

    def __call__(self, loss: DiffScalar) -> DiffScalar:
        raise NotImplementedError

    def __repr__(self):
        if self.epsilon is None:
            return '{0}()'.format(type(self).__name__)
        return '{0}(epsilon={1!r})'.format(type(self).__name__, self.epsilon)


class Identity(LossTransform):
    name = 'identity'

    def __call__(self, loss):
        return loss


class L2(LossTransform):
    name = 'l2'

    def __call__(self, loss):
        return autodiff.square(loss)


class _Thresholded(LossTransform):

    def __init__(self, epsilon: float):
        if not 0.0 < epsilon < 1.0:
            raise ValueError('epsilon must be in (0, 1), given: {0!r}'.format(epsilon))
        self.epsilon = float(epsilon)


class Hinge(_Thresholded):
    """Zeroes the loss, and its gradient, wherever ``ℓ <= ε``."""
    name = 'hinge'

    def __call__(self, loss):
        return autodiff.indicator_gate(loss, self.epsilon, loss, 'gt')


class L2Hinge(_Thresholded):
    """Squares the loss up to ``ε`` and keeps it above. The result jumps
    from ``ε²`` to ``ε`` at the threshold."""
    name = 'l2hinge'

    def __call__(self, loss):
        below = autodiff.indicator_gate(loss, self.epsilon, autodiff.square(loss), 'le')
        return below + autodiff.indicator_gate(loss, self.epsilon, loss, 'gt')


TRANSFORMS = {t.name: t for t in (Identity, L2, Hinge, L2Hinge)}


def make_transform(name: str, epsilon: Optional[float] = None) -> LossTransform:
    """Builds a transform by its config name; ``hinge`` and ``l2hinge``
    require ``epsilon``."""
    try:
        cls = TRANSFORMS[name.lower()]
    except KeyError:
        raise ValueError('Unknown transform: {0!r}, expected one of {1}'.format(
            name, ', '.join(TRANSFORMS)))
    if issubclass(cls, _Thresholded):
        if epsilon is None:
            raise ValueError('Transform {0!r} requires epsilon'.format(name))
        return cls(epsilon)
    return cls()


@dataclass(frozen=True)
class RiskWeights(object):
    #: Coefficient of the logic risk
    lam: float = 0.7

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError('lambda must be non-negative, given: {0!r}'.format(self.lam))


def logic_loss(op: FuzzyOperator, g: NegLogBase2, f: Formula, v: Valuation) -> DiffScalar:
    return g(logic_likelihood(op, f, v))


def rill(t: LossTransform, loss: DiffScalar) -> DiffScalar:
    return t(loss)


def _mean_over(losses: Sequence[DiffScalar]) -> DiffScalar:
    # mean over every (sample, rule) element, whatever the batch shapes
    total, count = None, 0
    for loss in losses:
        part = autodiff.total(loss)
        total = part if total is None else total + part
        count += max(loss.value.size, 1)
    return total.tape.record('scale', total, factor=1.0 / count)


def empirical_logic_risk(op: FuzzyOperator, g: NegLogBase2, t: LossTransform,
                         kb: KnowledgeBase, batch: Sequence[Valuation]) -> DiffScalar:
    """Mean of ``t(g(s(r, v)))`` over every rule ``r`` of the knowledge base
    and every sample of the batch. A valuation with batched values counts as
    one sample per entry.

    :raises ValueError: If the batch or the knowledge base is empty.
    """
    if not batch:
        raise ValueError('Empty batch')
    if not len(kb):
        raise ValueError('Empty knowledge base')
    return _mean_over([t(logic_loss(op, g, rule, v)) for v in batch for rule in kb.rules])


def combined_objective(task_risk: DiffScalar, logic_risk: DiffScalar,
                       w: RiskWeights) -> DiffScalar:
    """``task_risk + λ * logic_risk``"""
    if w.lam == 0:
        return task_risk
    return task_risk + logic_risk.tape.record('scale', logic_risk, factor=w.lam)


# Semantic loss
# -----------------------------------------------------------------------------

def model_table(f: Formula, symbols: Sequence[Atom]) -> np.ndarray:
    """Satisfying assignments of a quantifier-free formula, one boolean row
    per model over ``symbols``."""
    rows = [bits for bits in product((False, True), repeat=len(symbols))
            if logic.truth_value(f, dict(zip(symbols, bits)))]
    return np.array(rows, dtype=bool).reshape(len(rows), len(symbols))


def semantic_loss_bruteforce(f: Formula,
                             probs: Mapping[Atom, Union[Var, float]]) -> DiffScalar:
    """``-ln WMC(f)``, the weighted model count taken by enumerating every
    assignment of the formula's atoms.

      >>> p, q = logic.Atom('p'), logic.Atom('q')
      >>> loss = semantic_loss_bruteforce(logic.Implies(logic.AtomRef(p), logic.AtomRef(q)),
      ...                                 {p: 0.3, q: 0.6})
      >>> round(loss.item(), 5)
      0.12783

    :param f: Quantifier-free formula over ground atoms.
    :param probs: Atom → probability of being true; plain numbers are taken
        as constants.
    :raises ValueError: If the formula has more than
        :data:`MAX_ENUMERATION_ATOMS` atoms.
    :raises MissingAtomError: If an atom has no probability.
    :raises DomainError: If a probability lies outside [0, 1] or the
        weighted model count is zero.
    """
    symbols = logic.atoms(f)
    if len(symbols) > MAX_ENUMERATION_ATOMS:
        raise ValueError('Semantic loss enumerates at most {0:d} atoms, given: {1:d}'.format(
            MAX_ENUMERATION_ATOMS, len(symbols)))
    missing = [str(a) for a in symbols if a not in probs]
    if missing:
        raise MissingAtomError('No probability for atoms {0}'.format(', '.join(missing)))

    tapes = [p.tape for p in probs.values() if isinstance(p, Var)]
    tape = tapes[0] if tapes else Tape()
    inputs = [tape.lift(probs[a]) for a in symbols]
    for a, p in zip(symbols, inputs):
        if np.any(p.value < 0) or np.any(p.value > 1):
            raise DomainError('Probability of {0} must lie in [0, 1]'.format(a))

    if inputs:
        wmc = tape.record('wmc', *inputs, models=model_table(f, symbols))
    else:
        wmc = tape.constant(1.0 if logic.truth_value(f, {}) else 0.0)
    return -autodiff.ln(wmc)


def semantic_rule_loss(f: Formula, v: Valuation) -> DiffScalar:
    """Semantic loss of a rule grounded over the valuation's domain."""
    return semantic_loss_bruteforce(logic.ground(f, v.domain, v.bindings), v.values)


def empirical_semantic_risk(kb: KnowledgeBase, batch: Sequence[Valuation]) -> DiffScalar:
    """Semantic-loss counterpart of :func:`empirical_logic_risk`."""
    if not batch:
        raise ValueError('Empty batch')
    if not len(kb):
        raise ValueError('Empty knowledge base')
    return _mean_over([semantic_rule_loss(rule, v) for v in batch for rule in kb.rules])
