"""Exception hierarchy of the package. Every error raised on purpose by
rilltools derives from :class:`RillError`, so callers (and the ``rill``
command) can catch a single type.
"""


class RillError(Exception):
    """Root of all rilltools errors."""


class RuleSyntaxError(RillError, ValueError):
    """Malformed rule DSL text.

    :param message: What went wrong.
    :param line: 1-based line of the offending character.
    :param column: 1-based column of the offending character.
    :param text: The text being parsed.
    """

    def __init__(self, message: str, line: int = 1, column: int = 1, text: str = ''):
        super().__init__('{0} (line {1:d}, column {2:d})'.format(message, line, column))
        self.line = line
        self.column = column
        self.text = text


class ArityError(RillError):
    """A predicate is used with two different arities in one knowledge base."""


class ShapeError(RillError):
    """A formula or a tensor does not have the structure an operation expects."""


class DomainError(RillError, ValueError):
    """A numeric value lies outside the domain of an operation."""


class MissingAtomError(RillError, KeyError):
    """A ground atom has no value in the valuation being evaluated."""

    def __str__(self):
        return str(self.args[0]) if self.args else ''


class UnmappedPredicateError(RillError):
    """A knowledge base predicate has no (head, class) mapping."""


class DivergenceError(RillError):
    """Training produced a non-finite loss."""


class SeparabilityError(RillError):
    """A generated dataset failed its linear separability check."""


class InsufficientDataError(RillError):
    """A base dataset cannot fill the requested groups or labelled subset."""


class FormatError(RillError):
    """A binary file (IDX images/labels, checkpoint) is malformed."""


class ConfigError(RillError):
    """Invalid experiment configuration."""
