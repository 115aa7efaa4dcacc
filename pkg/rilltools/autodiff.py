"""Reverse-mode automatic differentiation on a recording tape.

Every differentiable quantity is a :class:`Var` bound to a :class:`Tape`.
A Var's payload is a float64 numpy array of one of three shapes:

* ``()`` a scalar (a *DiffScalar*),
* ``(n,)`` one scalar per sample of a batch, combined element by element
  (a batched DiffScalar),
* ``(rows, cols)`` a dense matrix (a *DiffMatrix*).

Operations append a node to the tape holding the forward value, the ids of
their inputs and one vector-Jacobian function per input. Because a node can
only refer to nodes recorded before it, the tape order is a topological order
and :meth:`Tape.backward` is a single reverse sweep.

    >>> tape = Tape()
    >>> x, y = tape.variable(0.3), tape.variable(0.6)
    >>> root = 1 - x + x * y
    >>> grads = tape.backward(root)
    >>> grads[x.node]
    array(-0.4)
"""
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from rilltools.errors import DomainError, ShapeError

LN2 = math.log(2.0)

#: Op kinds understood by :meth:`Tape.record`
KINDS = ('add', 'sub', 'mul', 'div', 'neg', 'log2', 'ln', 'exp', 'min', 'max', 'relu',
         'sigmoid', 'square', 'scale', 'matmul', 'add_bias', 'column', 'softmax_row',
         'cross_entropy_row', 'indicator_gate', 'mean', 'sum', 'wmc')


class Var(object):
    """A value recorded on a tape. ``node`` is ``None`` for constants, which
    take part in the forward computation but never receive a gradient.

    Arithmetic operators record ``add``, ``sub``, ``mul``, ``div`` and
    ``neg``; plain numbers are promoted to constants.
    """
    __slots__ = ('tape', 'value', 'node')

    def __init__(self, tape: 'Tape', value: np.ndarray, node: Optional[int]):
        self.tape = tape
        self.value = value
        self.node = node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def is_constant(self) -> bool:
        return self.node is None

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return 'Var(value={0!r}, node={1!r})'.format(self.value, self.node)

    def __add__(self, other):
        return self.tape.record('add', self, other)

    def __radd__(self, other):
        return self.tape.record('add', other, self)

    def __sub__(self, other):
        return self.tape.record('sub', self, other)

    def __rsub__(self, other):
        return self.tape.record('sub', other, self)

    def __mul__(self, other):
        return self.tape.record('mul', self, other)

    def __rmul__(self, other):
        return self.tape.record('mul', other, self)

    def __truediv__(self, other):
        return self.tape.record('div', self, other)

    def __rtruediv__(self, other):
        return self.tape.record('div', other, self)

    def __neg__(self):
        return self.tape.record('neg', self)

    def __matmul__(self, other):
        return self.tape.record('matmul', self, other)


#: Type aliases used in signatures across the package
DiffScalar = Var
DiffMatrix = Var

_Vjp = Callable[[np.ndarray], np.ndarray]


def _as_array(value) -> np.ndarray:
    return np.array(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # only 0-d operands are ever broadcast against a larger partner
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=np.float64).reshape(shape)


def _check_elementwise(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError('{0}: shapes {1} and {2} do not match'.format(kind, a.shape, b.shape))


class Tape(object):
    """Append-only record of operations.

    A tape is meant to be written by a single thread (one tape per training
    step or per data shard); combining gradients of several tapes is a plain
    sum done by the caller.

    ``min_margin`` tracks how close any recorded ``min``/``max``/``relu``/
    ``indicator_gate`` came to its switching point, so gradient checks can
    avoid kinks.
    """

    def __init__(self):
        self.values: List[np.ndarray] = []
        self.kinds: List[str] = []
        self._parents: List[Tuple[Optional[int], ...]] = []
        self._vjps: List[Tuple[Optional[_Vjp], ...]] = []
        self.min_margin = math.inf

    def __len__(self) -> int:
        return len(self.values)

    # Leaves
    # -------------------------------------------------------------------------

    def variable(self, value) -> Var:
        """A differentiable leaf (model parameter, scan input)."""
        array = _as_array(value)
        self._check_finite('variable', array)
        return self._append('variable', array, (), ())

    def constant(self, value) -> Var:
        array = _as_array(value)
        self._check_finite('constant', array)
        return Var(self, array, None)

    def leaves(self) -> List[int]:
        return [i for i, kind in enumerate(self.kinds) if kind == 'variable']

    # Recording
    # -------------------------------------------------------------------------

    def lift(self, value) -> Var:
        if isinstance(value, Var):
            if value.tape is not self:
                raise ValueError('Inputs live on different tapes')
            return value
        return self.constant(value)

    def record(self, kind: str, *inputs, **params) -> Var:
        """Computes the forward value of ``kind`` applied to ``inputs`` and
        records the node with its local partials.

        :param kind: One of :data:`KINDS`.
        :param inputs: Vars of this tape or plain numbers/arrays (constants).
        :param params: Non-differentiable arguments (``labels`` of
            cross_entropy_row, ``index`` of column, ``factor`` of scale,
            ``models`` of wmc, ``cond``/``threshold``/``mode`` of
            indicator_gate).
        :return: The recorded Var; a constant when no input is differentiable.
        :raises DomainError: On log of a non-positive value, division by zero
            or a non-finite result.
        :raises ShapeError: On incompatible shapes.
        """
        try:
            forward = _FORWARD[kind]
        except KeyError:
            raise ValueError('Unknown op kind: {0!r}'.format(kind))
        inputs = tuple(self.lift(v) for v in inputs)
        value, vjps = forward(*(v.value for v in inputs), tape=self, **params)
        self._check_finite(kind, value)
        if all(v.node is None for v in inputs):
            return Var(self, value, None)
        return self._append(kind, value, tuple(v.node for v in inputs), vjps)

    def _append(self, kind, value, parents, vjps) -> Var:
        self.values.append(value)
        self.kinds.append(kind)
        self._parents.append(parents)
        self._vjps.append(vjps)
        return Var(self, value, len(self.values) - 1)

    @staticmethod
    def _check_finite(kind: str, value: np.ndarray) -> None:
        if not np.all(np.isfinite(value)):
            raise DomainError('{0} produced a non-finite value'.format(kind))

    def note_margin(self, margin) -> None:
        margin = np.abs(np.asarray(margin, dtype=np.float64))
        if margin.size:
            self.min_margin = min(self.min_margin, float(margin.min()))

    # Backward pass
    # -------------------------------------------------------------------------

    def backward(self, root: Var) -> Dict[int, np.ndarray]:
        """Reverse accumulation from a scalar root.

        :return: Mapping node id → gradient of ``root`` w.r.t. that node. Every
            variable leaf of the tape has an entry (zeros when unreachable).
        :raises ShapeError: If ``root`` is not a 0-d scalar.
        """
        if root.shape != ():
            raise ShapeError('backward needs a scalar root, got shape {0}'.format(root.shape))

        grads: Dict[int, np.ndarray] = {}
        if root.node is not None:
            grads[root.node] = np.ones((), dtype=np.float64)
            for node in range(root.node, -1, -1):
                grad = grads.get(node)
                if grad is None:
                    continue
                for parent, vjp in zip(self._parents[node], self._vjps[node]):
                    if parent is None or vjp is None:
                        continue
                    contribution = vjp(grad)
                    if parent in grads:
                        grads[parent] = grads[parent] + contribution
                    else:
                        grads[parent] = contribution

        for leaf in self.leaves():
            if leaf not in grads:
                grads[leaf] = np.zeros_like(self.values[leaf])
        return grads

    def gradient(self, root: Var, wrt: Sequence[Var]) -> List[np.ndarray]:
        grads = self.backward(root)
        return [grads[v.node] if v.node is not None else np.zeros_like(v.value) for v in wrt]


# Forward functions return (value, per-input vjp functions)
# -----------------------------------------------------------------------------

def _add(a, b, tape):
    _check_elementwise('add', a, b)
    return a + b, (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape))


def _sub(a, b, tape):
    _check_elementwise('sub', a, b)
    return a - b, (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape))


def _mul(a, b, tape):
    _check_elementwise('mul', a, b)
    return a * b, (lambda g: _unbroadcast(g * b, a.shape), lambda g: _unbroadcast(g * a, b.shape))


def _div(a, b, tape):
    _check_elementwise('div', a, b)
    if np.any(b == 0):
        raise DomainError('Division by zero')
    out = a / b
    return out, (lambda g: _unbroadcast(g / b, a.shape),
                 lambda g: _unbroadcast(-g * out / b, b.shape))


def _neg(a, tape):
    return -a, (lambda g: -g,)


def _log2(a, tape):
    if np.any(a <= 0):
        raise DomainError('log2 of a non-positive value')
    return np.log2(a), (lambda g: g / (a * LN2),)


def _ln(a, tape):
    if np.any(a <= 0):
        raise DomainError('ln of a non-positive value')
    return np.log(a), (lambda g: g / a,)


def _exp(a, tape):
    out = np.exp(a)
    return out, (lambda g: g * out,)


def _min(a, b, tape):
    _check_elementwise('min', a, b)
    tape.note_margin(a - b)
    # exact ties take the left argument
    left = (a <= b).astype(np.float64)
    return np.where(left > 0, a, b) * np.ones(np.broadcast(a, b).shape), (
        lambda g: _unbroadcast(g * left, a.shape),
        lambda g: _unbroadcast(g * (1.0 - left), b.shape))


def _max(a, b, tape):
    _check_elementwise('max', a, b)
    tape.note_margin(a - b)
    left = (a >= b).astype(np.float64)
    return np.where(left > 0, a, b) * np.ones(np.broadcast(a, b).shape), (
        lambda g: _unbroadcast(g * left, a.shape),
        lambda g: _unbroadcast(g * (1.0 - left), b.shape))


def _relu(a, tape):
    tape.note_margin(a)
    active = (a > 0).astype(np.float64)
    return a * active, (lambda g: g * active,)


def _sigmoid(a, tape):
    out = np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))),
                   np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))
    return out, (lambda g: g * out * (1.0 - out),)


def _square(a, tape):
    return a * a, (lambda g: g * 2.0 * a,)


def _scale(a, tape, factor: float):
    return a * factor, (lambda g: g * factor,)


def _matmul(a, b, tape):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul: shapes {0} and {1} do not align'.format(a.shape, b.shape))
    return a @ b, (lambda g: g @ b.T, lambda g: a.T @ g)


def _add_bias(m, bias, tape):
    if m.ndim != 2 or bias.shape != (m.shape[1],):
        raise ShapeError('add_bias: shapes {0} and {1} do not align'.format(m.shape, bias.shape))
    return m + bias, (lambda g: g, lambda g: g.sum(axis=0))


def _column(m, tape, index: int):
    if m.ndim != 2:
        raise ShapeError('column: expected a matrix, got shape {0}'.format(m.shape))

    def vjp(g):
        out = np.zeros_like(m)
        out[:, index] = g
        return out

    return m[:, index].copy(), (vjp,)


def _softmax(m: np.ndarray) -> np.ndarray:
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_row(m, tape):
    if m.ndim != 2:
        raise ShapeError('softmax_row: expected a matrix, got shape {0}'.format(m.shape))
    out = _softmax(m)
    return out, (lambda g: out * (g - (g * out).sum(axis=1, keepdims=True)),)


def _cross_entropy_row(logits, tape, labels):
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError('cross_entropy_row: logits {0} and labels {1} do not align'.format(
            logits.shape, labels.shape))
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(logits.shape[0])
    losses = log_z - shifted[rows, labels]
    probs = _softmax(logits)

    def vjp(g):
        out = probs.copy()
        out[rows, labels] -= 1.0
        return out * g[:, None]

    return losses, (vjp,)


def _indicator_gate(payload, tape, cond, threshold: float, mode: str):
    cond = np.asarray(cond, dtype=np.float64)
    if not np.all(np.isfinite(cond)):
        raise DomainError('indicator_gate condition must be finite')
    tape.note_margin(cond - threshold)
    if mode == 'gt':
        active = (cond > threshold)
    elif mode == 'le':
        active = (cond <= threshold)
    else:
        raise ValueError('Unknown gate mode: {0!r}'.format(mode))
    active = np.broadcast_to(active, np.broadcast(payload, cond).shape).astype(np.float64)
    return payload * active, (lambda g: _unbroadcast(g * active, payload.shape),)


def _mean(a, tape):
    if a.size == 0:
        raise ShapeError('mean of an empty value')
    return np.asarray(a.mean()), (lambda g: np.full(a.shape, g / a.size),)


def _sum(a, tape):
    return np.asarray(a.sum()), (lambda g: np.full(a.shape, g),)


def _wmc(*probs, tape, models):
    models = np.asarray(models, dtype=bool)
    if models.ndim != 2 or models.shape[1] != len(probs):
        raise ShapeError('wmc: model table {0} does not match {1:d} atoms'.format(
            models.shape, len(probs)))
    shape = np.broadcast(*probs).shape if probs else ()
    p = np.stack([np.broadcast_to(x, shape) for x in probs]) if probs else np.zeros((0,))
    # factors[r, i, ...] = p_i when atom i is true in model r, else 1 - p_i
    bits = models.reshape(models.shape + (1,) * len(shape))
    factors = np.where(bits, p[None], 1.0 - p[None])
    value = factors.prod(axis=1).sum(axis=0) if models.shape[0] else np.zeros(shape)

    def vjp_for(i):
        def vjp(g):
            others = np.delete(factors, i, axis=1).prod(axis=1)
            sign = np.where(bits[:, i], 1.0, -1.0)
            return _unbroadcast(g * (sign * others).sum(axis=0), probs[i].shape)
        return vjp

    return np.asarray(value, dtype=np.float64), tuple(vjp_for(i) for i in range(len(probs)))


_FORWARD = {
    'add': _add, 'sub': _sub, 'mul': _mul, 'div': _div, 'neg': _neg,
    'log2': _log2, 'ln': _ln, 'exp': _exp, 'min': _min, 'max': _max, 'relu': _relu,
    'sigmoid': _sigmoid, 'square': _square, 'scale': _scale, 'matmul': _matmul,
    'add_bias': _add_bias, 'column': _column, 'softmax_row': _softmax_row,
    'cross_entropy_row': _cross_entropy_row, 'indicator_gate': _indicator_gate,
    'mean': _mean, 'sum': _sum, 'wmc': _wmc,
}


# Functional interface
# -----------------------------------------------------------------------------

def _tape_of(*values) -> Tape:
    for v in values:
        if isinstance(v, Var):
            return v.tape
    raise TypeError('At least one argument must be a Var')


def record(kind: str, *inputs, **params) -> Var:
    """Records ``kind`` on the tape shared by the Var inputs."""
    return _tape_of(*inputs).record(kind, *inputs, **params)


def log2(x: Var) -> Var:
    return x.tape.record('log2', x)


def ln(x: Var) -> Var:
    return x.tape.record('ln', x)


def exp(x: Var) -> Var:
    return x.tape.record('exp', x)


def minimum(a, b) -> Var:
    return record('min', a, b)


def maximum(a, b) -> Var:
    return record('max', a, b)


def relu(x: Var) -> Var:
    return x.tape.record('relu', x)


def sigmoid(x: Var) -> Var:
    return x.tape.record('sigmoid', x)


def square(x: Var) -> Var:
    return x.tape.record('square', x)


def mean(x: Var) -> Var:
    return x.tape.record('mean', x)


def total(x: Var) -> Var:
    return x.tape.record('sum', x)


def softmax_row(m: Var) -> Var:
    return m.tape.record('softmax_row', m)


def cross_entropy_row(logits: Var, labels) -> Var:
    return logits.tape.record('cross_entropy_row', logits, labels=labels)


def column(m: Var, index: int) -> Var:
    return m.tape.record('column', m, index=index)


def indicator_gate(cond_value, threshold: float, payload: Var, mode: str = 'gt') -> Var:
    """``payload`` where ``cond_value > threshold`` (mode ``gt``) or
    ``cond_value <= threshold`` (mode ``le``), constant 0 elsewhere. The
    indicator itself is a hard gate: gradient only reaches ``payload``, and
    only on the active branch.

    :param cond_value: Plain number/array or a Var whose value is used.
    """
    if isinstance(cond_value, Var):
        cond_value = cond_value.value
    return payload.tape.record('indicator_gate', payload, cond=cond_value,
                               threshold=threshold, mode=mode)


def stack_mean(values: Sequence[Var]) -> Var:
    """Element-wise mean of equally shaped Vars."""
    values = list(values)
    if not values:
        raise ShapeError('mean of no values')
    result = values[0]
    for v in values[1:]:
        result = result + v
    return result.tape.record('scale', result, factor=1.0 / len(values))


def stack_min(values: Sequence[Var]) -> Var:
    """Element-wise minimum of equally shaped Vars (ties keep the earlier)."""
    values = list(values)
    if not values:
        raise ShapeError('min of no values')
    result = values[0]
    for v in values[1:]:
        result = minimum(result, v)
    return result


# Gradient verification
# -----------------------------------------------------------------------------

def finite_difference_check(f: Callable[[Tape, List[Var]], Var], point: Sequence[float],
                            h: float = 1e-5, seed: int = 0, max_resample: int = 20) -> float:
    """Compares autodiff against central finite differences.

    :param f: Builder ``f(tape, variables) -> scalar Var``; it must only use
        the given tape.
    :param point: Coordinates at which to compare.
    :param h: Finite difference step.
    :param seed: Seed for resampling ``point`` when it lies within ``2h`` of
        a kink of min/max/relu/indicator_gate.
    :param max_resample: Resampling attempts before checking anyway.
    :return: ``max_k |autodiff_k - central_k| / (|central_k| + 1e-12)``.
        Choose points where no partial is close to zero, the ratio is
        meaningless there.
    :rtype: float
    """
    point = np.array(point, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)

    def evaluate(x: np.ndarray) -> Tuple[Tape, List[Var], Var]:
        tape = Tape()
        variables = [tape.variable(v) for v in x]
        return tape, variables, f(tape, variables)

    tape, variables, root = evaluate(point)
    for _ in range(max_resample):
        if tape.min_margin > 2 * h:
            break
        point = point + rng.uniform(-100 * h, 100 * h, size=point.shape)
        tape, variables, root = evaluate(point)

    analytic = np.array([float(g) for g in tape.gradient(root, variables)])
    if point.size == 0:
        return 0.0

    central = np.empty_like(point)
    for k in range(point.size):
        step = np.zeros_like(point)
        step[k] = h
        upper = evaluate(point + step)[2].item()
        lower = evaluate(point - step)[2].item()
        central[k] = (upper - lower) / (2 * h)

    return float(np.max(np.abs(analytic - central) / (np.abs(central) + 1e-12)))
