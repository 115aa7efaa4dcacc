"""Rule DSL

Symbols::

    Blue(x)                    Atom; arguments bound by a quantifier are
                               variables, any other argument is a constant
    P                          Propositional atom (arity 0)

Connectives, tightest first::

    !p                         Negation
    p & q                      Conjunction
    p | q                      Disjunction
    p -> q                     Implication (right associative)
    p <-> q                    Equivalence

Quantifiers::

    forall x: Number(x)        Universal quantification
    exists y: Number(y)        Existential quantification
    forall x1,x2: ...          Nesting (forall x1: forall x2: ...)

A quantifier's body extends as far to the right as possible. Rule files hold
one rule per line; ``#`` starts a comment and blank lines are ignored.
"""
from typing import List, Optional

import pyparsing as pp

from rilltools import logic
from rilltools.errors import RuleSyntaxError, ShapeError
from rilltools.logic import (And, Atom, AtomRef, Constant, Exists, Forall, Formula, Iff, Implies,
                             KnowledgeBase, Not, Or, Variable)

pp.ParserElement.enable_packrat()

_OPERATORS = {'&': And, '|': Or, '->': Implies, '<->': Iff}


# Parse actions
# -----------------------------------------------------------------------------

def _on_atom(tokens):
    predicate, args = tokens[0], tokens[1:]
    return AtomRef(Atom(predicate, tuple(Constant(a) for a in args)))


def _on_not(tokens):
    tokens = list(tokens[0])
    operand = tokens.pop()
    for _ in tokens:
        operand = Not(operand)
    return operand


def _on_left_binary(tokens):
    tokens = list(tokens[0])
    result = tokens[0]
    for op, operand in zip(tokens[1::2], tokens[2::2]):
        result = _OPERATORS[op](result, operand)
    return result


def _on_right_binary(tokens):
    tokens = list(tokens[0])
    result = tokens[-1]
    for op, operand in zip(reversed(tokens[1::2]), reversed(tokens[0:-1:2])):
        result = _OPERATORS[op](operand, result)
    return result


def _on_quantified(tokens):
    kind, variables, body = tokens[0], tokens[1], tokens[2]
    quantifier = Forall if kind == 'forall' else Exists
    for var in reversed(list(variables)):
        body = quantifier(var, body)
    return body


# Grammar
# -----------------------------------------------------------------------------

FORALL = pp.Keyword('forall')
EXISTS = pp.Keyword('exists')
Identifier = ~(FORALL | EXISTS) + pp.Word(pp.alphanums + '_')

RuleFormula = pp.Forward()

Arguments = pp.Suppress('(') + pp.Optional(Identifier + pp.ZeroOrMore(pp.Suppress(',') + Identifier)) \
    + pp.Suppress(')')
AtomicFormula = (Identifier + pp.Optional(Arguments)).set_parse_action(_on_atom)

Variables = pp.Group(Identifier + pp.ZeroOrMore(pp.Suppress(',') + Identifier))
QuantifiedFormula = ((FORALL | EXISTS) + Variables + pp.Suppress(':') + RuleFormula) \
    .set_parse_action(_on_quantified)

RuleFormula <<= pp.infix_notation(QuantifiedFormula | AtomicFormula, [
    (pp.Literal('!'), 1, pp.OpAssoc.RIGHT, _on_not),
    (pp.Literal('&'), 2, pp.OpAssoc.LEFT, _on_left_binary),
    (pp.Literal('|'), 2, pp.OpAssoc.LEFT, _on_left_binary),
    (pp.Literal('->'), 2, pp.OpAssoc.RIGHT, _on_right_binary),
    (pp.Literal('<->'), 2, pp.OpAssoc.LEFT, _on_left_binary),
])


def _resolve_terms(f: Formula, bound: frozenset = frozenset()) -> Formula:
    # Arguments are parsed as constants; the ones bound by an enclosing
    # quantifier become variables here.
    if isinstance(f, AtomRef):
        args = tuple(Variable(a.name) if a.name in bound else a for a in f.atom.args)
        return AtomRef(Atom(f.atom.predicate, args))
    elif isinstance(f, Not):
        return Not(_resolve_terms(f.body, bound))
    elif isinstance(f, logic.BINARY):
        return type(f)(_resolve_terms(f.left, bound), _resolve_terms(f.right, bound))
    return type(f)(f.var, _resolve_terms(f.body, bound | {f.var}))


def parse_rule(text: str) -> Formula:
    """Parses a single rule of the DSL into a :class:`rilltools.logic.Formula`.

      >>> parse_rule('forall x: Blue(x) -> Circle(x)')
      Forall(var='x', body=Implies(left=AtomRef(...), right=AtomRef(...)))

    :param text: Rule text, non-empty.
    :type text: str
    :return: Syntax tree of the rule.
    :raises TypeError: If other than string given
    :raises RuleSyntaxError: On malformed input, with line and column.
    :raises ArityError: If a predicate is used with two arities.
    """
    if not isinstance(text, str):
        raise TypeError('Expected string, given: {0}.'.format(type(text)))
    if not text.strip():
        raise RuleSyntaxError('Empty rule', 1, 1, text)

    try:
        tokens = RuleFormula.parse_string(text, parse_all=True)
    except pp.ParseBaseException as exc:
        raise RuleSyntaxError('Invalid rule syntax: {0}'.format(exc.msg),
                              exc.lineno, exc.col, text) from exc

    assert len(tokens) == 1
    formula = _resolve_terms(tokens[0])
    try:
        logic.check_unique_quantifiers(formula)
    except ShapeError as exc:
        raise RuleSyntaxError(str(exc), 1, 1, text) from exc
    logic.predicate_signatures([formula])
    return formula


# Formatting
# -----------------------------------------------------------------------------

_SYMBOLS = {And: '&', Or: '|', Implies: '->', Iff: '<->'}


def _format_operand(f: Formula) -> str:
    text = format_rule(f)
    if isinstance(f, logic.BINARY) or isinstance(f, logic.QUANTIFIERS):
        return '({0})'.format(text)
    return text


def format_rule(f: Formula) -> str:
    """Canonical DSL text of a formula; ``parse_rule(format_rule(f)) == f``.
    Binary sub-formulas are always parenthesised and runs of the same
    quantifier are merged into one ``forall x1, x2:`` prefix.
    """
    if isinstance(f, AtomRef):
        return str(f.atom)
    elif isinstance(f, Not):
        return '!' + _format_operand(f.body)
    elif isinstance(f, logic.BINARY):
        return '{0} {1} {2}'.format(_format_operand(f.left), _SYMBOLS[type(f)],
                                    _format_operand(f.right))
    elif isinstance(f, logic.QUANTIFIERS):
        kind, variables = type(f), []
        while isinstance(f, kind):
            variables.append(f.var)
            f = f.body
        keyword = 'forall' if kind is Forall else 'exists'
        return '{0} {1}: {2}'.format(keyword, ', '.join(variables), format_rule(f))
    raise TypeError('Not a formula: {0!r}'.format(f))


# Knowledge base files
# -----------------------------------------------------------------------------

def parse_kb(text: str) -> KnowledgeBase:
    """Parses a rule file's content: one rule per line, ``#`` comments and
    blank lines ignored. Syntax errors report the line number in the file.
    """
    rules: List[Formula] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0]
        if not line.strip():
            continue
        try:
            rules.append(parse_rule(line))
        except RuleSyntaxError as exc:
            raise RuleSyntaxError('Invalid rule syntax: {0}'.format(line.strip()),
                                  lineno, exc.column, text) from exc
    return KnowledgeBase.from_rules(rules)


def dump_kb(kb: KnowledgeBase, header: Optional[str] = None) -> str:
    lines = ['# {0}'.format(h) for h in header.splitlines()] if header else []
    lines.extend(format_rule(rule) for rule in kb.rules)
    return '\n'.join(lines) + '\n'


def load_kb(path: str) -> KnowledgeBase:
    with open(path, 'r', encoding='utf-8') as f:
        return parse_kb(f.read())


def save_kb(kb: KnowledgeBase, path: str, header: Optional[str] = None) -> str:
    """Writes the rule file and returns the text written."""
    text = dump_kb(kb, header)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return text
