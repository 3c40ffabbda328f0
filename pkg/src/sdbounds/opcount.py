"""Instrumented multiply counting for the filtering kernels.

Kernels call :func:`tally` with the number of scalar multiplications (and
divisions) they perform. Counting is off unless a :func:`count_multiplies`
block is active, so the overhead in normal use is one context-variable read.

>>> with count_multiplies() as c:
...     tally(10)
>>> c.count
10
"""

from contextlib import contextmanager
from contextvars import ContextVar


class MultiplyCounter:
    def __init__(self):
        self.count = 0

    def __repr__(self):
        return f"MultiplyCounter(count={self.count})"


_active: ContextVar = ContextVar("sdbounds_multiply_counter", default=None)


def tally(n):
    c = _active.get()
    if c is not None:
        c.count += int(n)


@contextmanager
def count_multiplies():
    counter = MultiplyCounter()
    token = _active.set(counter)
    try:
        yield counter
    finally:
        _active.reset(token)
