import hashlib
import math
import time
from typing import Iterable, Tuple

import numpy as np

#: Time unit symbols, smallest first, with their length in seconds
TIME_UNITS = (('s', 1), ('min', 60), ('h', 3600))


def git_blob_hash(data: bytes or str) -> str:
    """Returns the git-style content hash of the given data, that is the
    SHA-1 of ``b'blob <len>\\0' + data``. Strings are UTF-8 encoded first, so
    a knowledge base file and the in-process text that produced it hash to the
    same value.

      >>> git_blob_hash('')
      'e69de29bb2d1d6434b8b29ae775ad8c2e48c5391'

    :param data: Raw bytes or text.
    :type data: bytes or str
    :return: 40 character hexadecimal digest.
    :rtype: str
    :raises TypeError: If other than bytes or string given
    """
    if isinstance(data, str):
        data = data.encode('utf-8')
    elif not isinstance(data, (bytes, bytearray)):
        raise TypeError('Expected bytes or string, given: {0}.'.format(type(data)))

    header = 'blob {0:d}\0'.format(len(data)).encode('ascii')
    return hashlib.sha1(header + bytes(data)).hexdigest()


def ceil_count(fraction: float, total: int) -> int:
    """Number of items a fraction of ``total`` stands for, rounded up.
    Tiny float noise (``0.6 * 100 = 60.00000000000001``) is not rounded up
    to the next integer.

      >>> ceil_count(0.4, 100)
      40
      >>> ceil_count(0.6, 100)
      60
      >>> ceil_count(0.25, 3)
      1

    :param fraction: Fraction in (0, 1].
    :param total: Total number of items.
    :return: ``ceil(fraction * total)``
    :rtype: int
    :raises ValueError: If the fraction is outside (0, 1]
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError('Fraction must be in (0, 1], given: {0!r}'.format(fraction))
    return int(math.ceil(round(fraction * total, 9)))


def mean_std(values: Iterable[float]) -> Tuple[float, float]:
    """Mean and population standard deviation; ``(nan, nan)`` when empty."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        return float('nan'), float('nan')
    return float(values.mean()), float(values.std())


def seconds2human(value: int or float, precision: int = 2) -> str:
    """Converts a wall time in seconds to a short human readable string,
    picking the largest unit the value reaches. For example:

      >>> seconds2human(0.5)
      '0.5 s'
      >>> seconds2human(90)
      '1.5 min'
      >>> seconds2human(7200)
      '2 h'

    :param value: Duration in seconds.
    :type value: int or float
    :param precision: Floating precision of the result (default 2).
    :type precision: int
    :return: Human representation of the duration
    :rtype: str
    :raises ValueError: If negative number is given.
    """
    if value < 0:
        raise ValueError('Given value cannot be negative: {0.real}'.format(value))

    symbol, size = TIME_UNITS[0]
    for _symbol, _size in TIME_UNITS:
        if value >= _size:
            symbol, size = _symbol, _size

    amount = round(value / size, precision)
    if float(amount).is_integer():
        return '{0:d} {1}'.format(int(amount), symbol)
    return '{0.real} {1}'.format(amount, symbol)


class Timer(object):
    """Wall time of a ``with`` block, in seconds once the block exits."""
    took = None

    def __enter__(self):
        self.took = time.time()
        return self

    def __exit__(self, *exc):
        self.took = time.time() - self.took

    @property
    def human(self) -> str:
        return seconds2human(self.took)
