"""First-order rule knowledge bases: terms, atoms, formulas and the
transformations applied to them before they are turned into losses.

Every type here is an immutable (frozen) dataclass, so formulas can be shared
between threads and used as dictionary keys.
"""
import re
from collections import OrderedDict
from dataclasses import dataclass
from itertools import product
from typing import Dict, Iterable, Iterator, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from rilltools import utils
from rilltools.errors import ArityError, ShapeError

_IDENTIFIER_RE = re.compile(r'^[A-Za-z0-9_]+$')


def _check_identifier(name: str, what: str) -> None:
    if not isinstance(name, str) or not _IDENTIFIER_RE.match(name):
        raise ValueError('Invalid {0} identifier: {1!r}'.format(what, name))


@dataclass(frozen=True)
class Variable(object):
    name: str

    def __post_init__(self):
        _check_identifier(self.name, 'variable')

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Constant(object):
    name: str

    def __post_init__(self):
        _check_identifier(self.name, 'constant')

    def __str__(self):
        return self.name


Term = Union[Variable, Constant]


@dataclass(frozen=True)
class Atom(object):
    """``predicate(args...)``; a zero-arity atom is a propositional symbol."""
    predicate: str
    args: Tuple[Term, ...] = ()

    def __post_init__(self):
        _check_identifier(self.predicate, 'predicate')
        object.__setattr__(self, 'args', tuple(self.args))

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def is_ground(self) -> bool:
        return all(isinstance(a, Constant) for a in self.args)

    def __str__(self):
        if not self.args:
            return self.predicate
        return '{0}({1})'.format(self.predicate, ', '.join(str(a) for a in self.args))


class Formula(object):
    """Base class of the formula syntax tree."""
    __slots__ = ()


@dataclass(frozen=True)
class AtomRef(Formula):
    atom: Atom


@dataclass(frozen=True)
class Not(Formula):
    body: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Iff(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Forall(Formula):
    var: str
    body: Formula

    def __post_init__(self):
        _check_identifier(self.var, 'variable')


@dataclass(frozen=True)
class Exists(Formula):
    var: str
    body: Formula

    def __post_init__(self):
        _check_identifier(self.var, 'variable')


BINARY = (Implies, And, Or, Iff)
QUANTIFIERS = (Forall, Exists)
#: Variants allowed after :func:`normalize_core`
CORE = (AtomRef, Not, Implies, Forall, Exists)


def atom(predicate: str, *args: str) -> AtomRef:
    """Shorthand used by generators and tests: lower-case-first arguments
    become variables, anything else a constant.

    >>> atom('Blue', 'x')
    AtomRef(atom=Atom(predicate='Blue', args=(Variable(name='x'),)))
    """
    terms = tuple(Variable(a) if a[:1].islower() else Constant(a) for a in args)
    return AtomRef(Atom(predicate, terms))


def conjoin(formulas: Sequence[Formula], connective=And) -> Formula:
    """Left-folds a non-empty sequence with a binary connective."""
    formulas = list(formulas)
    if not formulas:
        raise ValueError('Cannot fold an empty sequence of formulas')
    result = formulas[0]
    for f in formulas[1:]:
        result = connective(result, f)
    return result


def forall(variables: Sequence[str], body: Formula) -> Formula:
    for var in reversed(list(variables)):
        body = Forall(var, body)
    return body


Prefix = Tuple[Tuple[type, str], ...]


def split_prefix(f: Formula) -> Tuple[Prefix, Formula]:
    """Splits the leading quantifier prefix from the matrix.

    :return: ((quantifier class, variable) pairs outermost first, matrix)
    """
    prefix = []
    while isinstance(f, QUANTIFIERS):
        prefix.append((type(f), f.var))
        f = f.body
    return tuple(prefix), f


def rebuild_prefix(prefix: Prefix, matrix: Formula) -> Formula:
    for quantifier, var in reversed(list(prefix)):
        matrix = quantifier(var, matrix)
    return matrix


def iter_atoms(f: Formula) -> Iterator[Atom]:
    if isinstance(f, AtomRef):
        yield f.atom
    elif isinstance(f, Not):
        yield from iter_atoms(f.body)
    elif isinstance(f, BINARY):
        yield from iter_atoms(f.left)
        yield from iter_atoms(f.right)
    elif isinstance(f, QUANTIFIERS):
        yield from iter_atoms(f.body)
    else:
        raise TypeError('Not a formula: {0!r}'.format(f))


def atoms(f: Formula) -> Tuple[Atom, ...]:
    """Distinct atoms in first-occurrence order."""
    return tuple(OrderedDict.fromkeys(iter_atoms(f)))


def free_variables(f: Formula, bound: frozenset = frozenset()) -> frozenset:
    if isinstance(f, AtomRef):
        return frozenset(a.name for a in f.atom.args
                         if isinstance(a, Variable) and a.name not in bound)
    elif isinstance(f, Not):
        return free_variables(f.body, bound)
    elif isinstance(f, BINARY):
        return free_variables(f.left, bound) | free_variables(f.right, bound)
    elif isinstance(f, QUANTIFIERS):
        return free_variables(f.body, bound | {f.var})
    raise TypeError('Not a formula: {0!r}'.format(f))


def check_unique_quantifiers(f: Formula, seen: Tuple[str, ...] = ()) -> None:
    """Raises ShapeError when a quantifier re-binds a variable of an enclosing
    quantifier."""
    if isinstance(f, QUANTIFIERS):
        if f.var in seen:
            raise ShapeError('Variable {0!r} quantified twice on one path'.format(f.var))
        check_unique_quantifiers(f.body, seen + (f.var,))
    elif isinstance(f, Not):
        check_unique_quantifiers(f.body, seen)
    elif isinstance(f, BINARY):
        check_unique_quantifiers(f.left, seen)
        check_unique_quantifiers(f.right, seen)


def predicate_signatures(rules: Iterable[Formula]) -> Dict[str, int]:
    """Maps every predicate to its arity.

    :raises ArityError: If a predicate appears with two different arities.
    """
    signatures = OrderedDict()
    for rule in rules:
        for a in iter_atoms(rule):
            known = signatures.setdefault(a.predicate, a.arity)
            if known != a.arity:
                raise ArityError('Predicate {0!r} used with arity {1:d} and {2:d}'.format(
                    a.predicate, known, a.arity))
    return signatures


@dataclass(frozen=True)
class KnowledgeBase(object):
    """An ordered collection of closed rules together with the predicate
    signatures they respect. Build it with :meth:`from_rules`, which checks
    both invariants.
    """
    rules: Tuple[Formula, ...] = ()
    signatures: Tuple[Tuple[str, int], ...] = ()

    @classmethod
    def from_rules(cls, rules: Iterable[Formula]) -> 'KnowledgeBase':
        rules = tuple(rules)
        for rule in rules:
            free = free_variables(rule)
            if free:
                raise ShapeError('Rule has free variables {0}: {1!r}'.format(sorted(free), rule))
            check_unique_quantifiers(rule)
        return cls(rules, tuple(predicate_signatures(rules).items()))

    def arity(self, predicate: str) -> int:
        return dict(self.signatures)[predicate]

    @property
    def predicates(self) -> Tuple[str, ...]:
        return tuple(p for p, _ in self.signatures)

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self) -> Iterator[Formula]:
        return iter(self.rules)


def normalize_core(f: Formula) -> Formula:
    """Rewrites ∧, ∨ and ↔ with ¬ and → only::

        p ∧ q  ≡  ¬(p → ¬q)
        p ∨ q  ≡  ¬p → q
        p ↔ q  ≡  ¬((p → q) → ¬(q → p))

    Quantifiers are kept. The result only contains AtomRef, Not, Implies,
    Forall and Exists nodes and is classically equivalent to ``f``.
    """
    if isinstance(f, AtomRef):
        return f
    elif isinstance(f, Not):
        return Not(normalize_core(f.body))
    elif isinstance(f, QUANTIFIERS):
        return type(f)(f.var, normalize_core(f.body))

    left, right = normalize_core(f.left), normalize_core(f.right)
    if isinstance(f, Implies):
        return Implies(left, right)
    elif isinstance(f, And):
        return Not(Implies(left, Not(right)))
    elif isinstance(f, Or):
        return Implies(Not(left), right)
    elif isinstance(f, Iff):
        return Not(Implies(Implies(left, right), Not(Implies(right, left))))
    raise TypeError('Not a formula: {0!r}'.format(f))


def is_core(f: Formula) -> bool:
    if not isinstance(f, CORE):
        return False
    if isinstance(f, AtomRef):
        return True
    elif isinstance(f, Implies):
        return is_core(f.left) and is_core(f.right)
    return is_core(f.body)


def clark_iff_transform(kb: KnowledgeBase) -> KnowledgeBase:
    """Turns every rule ``Q x̄: p → q`` into ``Q x̄: p ↔ q``.

    :raises ShapeError: If a rule matrix is not an implication.
    """
    rules = []
    for rule in kb.rules:
        prefix, matrix = split_prefix(rule)
        if not isinstance(matrix, Implies):
            raise ShapeError('Rule matrix is not an implication: {0!r}'.format(rule))
        rules.append(rebuild_prefix(prefix, Iff(matrix.left, matrix.right)))
    return KnowledgeBase.from_rules(rules)


def rename_variables(f: Formula, mapping: Mapping[str, str]) -> Formula:
    if isinstance(f, AtomRef):
        args = tuple(Variable(mapping.get(a.name, a.name)) if isinstance(a, Variable) else a
                     for a in f.atom.args)
        return AtomRef(Atom(f.atom.predicate, args))
    elif isinstance(f, Not):
        return Not(rename_variables(f.body, mapping))
    elif isinstance(f, BINARY):
        return type(f)(rename_variables(f.left, mapping), rename_variables(f.right, mapping))
    elif isinstance(f, QUANTIFIERS):
        return type(f)(mapping.get(f.var, f.var), rename_variables(f.body, mapping))
    raise TypeError('Not a formula: {0!r}'.format(f))


def _head_key(head: Atom) -> Tuple:
    # Variables are keyed by the position of their first occurrence so that
    # P(x, y) and P(u, v) group together but P(x, x) does not join them.
    first_seen = {}
    key = [head.predicate]
    for arg in head.args:
        if isinstance(arg, Variable):
            key.append(('var', first_seen.setdefault(arg.name, len(first_seen))))
        else:
            key.append(('const', arg.name))
    return tuple(key)


def clark_grouped_completion(kb: KnowledgeBase) -> KnowledgeBase:
    """Clark's completion of a definite rule set: all rules ``body → A`` with
    the same head atom A (up to positional variable renaming) are merged into
    a single ``A ↔ (body₁ ∨ … ∨ bodyₙ)``. Groups appear in the order of their
    first rule.

    :raises ShapeError: If a rule is not an implication with an atomic head.
    """
    groups = OrderedDict()
    for rule in kb.rules:
        prefix, matrix = split_prefix(rule)
        if not isinstance(matrix, Implies) or not isinstance(matrix.right, AtomRef):
            raise ShapeError('Rule is not an implication with atomic head: {0!r}'.format(rule))
        groups.setdefault(_head_key(matrix.right.atom), []).append((prefix, matrix))

    rules = []
    for members in groups.values():
        prefix, matrix = members[0]
        head = matrix.right
        head_vars = [a.name for a in head.atom.args if isinstance(a, Variable)]
        used = [var for _, var in prefix]
        bodies = [matrix.left]

        for other_prefix, other in members[1:]:
            other_head_vars = [a.name for a in other.right.atom.args if isinstance(a, Variable)]
            mapping = dict(zip(other_head_vars, head_vars))
            for quantifier, var in other_prefix:
                if var in mapping:
                    continue
                fresh, n = var, 1
                while fresh in used:
                    fresh = '{0}_{1:d}'.format(var, n)
                    n += 1
                mapping[var] = fresh
                used.append(fresh)
                prefix = prefix + ((quantifier, fresh),)
            bodies.append(rename_variables(other.left, mapping))

        rules.append(rebuild_prefix(prefix, Iff(head, conjoin(bodies, Or))))
    return KnowledgeBase.from_rules(rules)


def sample_kb(kb: KnowledgeBase, completeness: float, seed: int) -> KnowledgeBase:
    """Keeps ``ceil(completeness * len(kb))`` rules chosen uniformly without
    replacement. The kept rules stay in their original order; the same
    ``seed`` always picks the same subset.

    :param kb: Full knowledge base.
    :param completeness: Fraction in (0, 1]; ``1.0`` returns ``kb`` itself.
    :param seed: Seed of the selection.
    :raises ValueError: If completeness is outside (0, 1].
    """
    count = utils.ceil_count(completeness, len(kb))
    if completeness == 1.0 or count >= len(kb):
        return kb
    rng = np.random.default_rng(seed)
    keep = sorted(rng.choice(len(kb), size=count, replace=False).tolist())
    return KnowledgeBase.from_rules(kb.rules[i] for i in keep)


def substitute(f: Formula, binding: Mapping[str, Constant]) -> Formula:
    """Replaces free occurrences of variables with constants."""
    if isinstance(f, AtomRef):
        args = tuple(binding.get(a.name, a) if isinstance(a, Variable) else a
                     for a in f.atom.args)
        return AtomRef(Atom(f.atom.predicate, args))
    elif isinstance(f, Not):
        return Not(substitute(f.body, binding))
    elif isinstance(f, BINARY):
        return type(f)(substitute(f.left, binding), substitute(f.right, binding))
    elif isinstance(f, QUANTIFIERS):
        inner = {k: v for k, v in binding.items() if k != f.var}
        return type(f)(f.var, substitute(f.body, inner))
    raise TypeError('Not a formula: {0!r}'.format(f))


def ground(f: Formula, domain: Sequence[Constant],
           bindings: Optional[Mapping[str, Sequence[Constant]]] = None) -> Formula:
    """Classical grounding: ``∀x φ`` becomes the conjunction and ``∃x φ`` the
    disjunction of ``φ[x/c]`` over the constants of ``x``'s domain, which is
    ``bindings[x]`` when given and ``domain`` otherwise.

    :raises ShapeError: If a quantifier has an empty domain.
    """
    bindings = bindings or {}
    if isinstance(f, AtomRef):
        return f
    elif isinstance(f, Not):
        return Not(ground(f.body, domain, bindings))
    elif isinstance(f, BINARY):
        return type(f)(ground(f.left, domain, bindings), ground(f.right, domain, bindings))
    elif isinstance(f, QUANTIFIERS):
        constants = tuple(bindings.get(f.var, domain))
        if not constants:
            raise ShapeError('Empty grounding domain for variable {0!r}'.format(f.var))
        instances = [ground(substitute(f.body, {f.var: c}), domain, bindings) for c in constants]
        return conjoin(instances, And if isinstance(f, Forall) else Or)
    raise TypeError('Not a formula: {0!r}'.format(f))


def truth_value(f: Formula, assignment: Mapping[Atom, bool]) -> bool:
    """Classical two-valued evaluation of a quantifier-free formula."""
    if isinstance(f, AtomRef):
        return bool(assignment[f.atom])
    elif isinstance(f, Not):
        return not truth_value(f.body, assignment)
    elif isinstance(f, Implies):
        return (not truth_value(f.left, assignment)) or truth_value(f.right, assignment)
    elif isinstance(f, And):
        return truth_value(f.left, assignment) and truth_value(f.right, assignment)
    elif isinstance(f, Or):
        return truth_value(f.left, assignment) or truth_value(f.right, assignment)
    elif isinstance(f, Iff):
        return truth_value(f.left, assignment) == truth_value(f.right, assignment)
    raise ShapeError('truth_value expects a quantifier-free formula, got {0!r}'.format(f))


def truth_table(f: Formula) -> Tuple[bool, ...]:
    """Truth values of ``f`` over all assignments of its atoms, in binary
    counting order of :func:`atoms`."""
    symbols = atoms(f)
    return tuple(truth_value(f, dict(zip(symbols, bits)))
                 for bits in product((False, True), repeat=len(symbols)))


def hierarchy_kb(taxonomy: Mapping[str, Sequence[str]], var: str = 'x',
                 class_prefix: str = 'C_', super_prefix: str = 'SC_') -> KnowledgeBase:
    """Class/super-class knowledge base::

        ∀x: SC_s(x) → (C_a(x) ∨ C_b(x) ∨ …)      one per super-class
        ∀x: C_a(x) → SC_s(x)                      one per class

    :param taxonomy: super-class name → its sub-class names.
    """
    rules = []
    for super_name, classes in taxonomy.items():
        if not classes:
            raise ValueError('Super-class {0!r} has no classes'.format(super_name))
        sc = atom(super_prefix + super_name, var)
        members = [atom(class_prefix + c, var) for c in classes]
        rules.append(Forall(var, Implies(sc, conjoin(members, Or))))
        rules.extend(Forall(var, Implies(c, sc)) for c in members)
    return KnowledgeBase.from_rules(rules)


def depth(f: Formula) -> int:
    if isinstance(f, AtomRef):
        return 0
    elif isinstance(f, (Not,) + QUANTIFIERS):
        return 1 + depth(f.body)
    return 1 + max(depth(f.left), depth(f.right))
