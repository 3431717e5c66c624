"""Global multiply-accumulate counter for model matrix products.

Only matrix products are counted (elementwise work is ignored); the counter
is switched on around instrumented runs and read back for efficiency reports.
"""

from __future__ import annotations

from contextlib import contextmanager

_active: list["MacCounter"] = []


class MacCounter:
    def __init__(self):
        self.macs = 0

    def add(self, n: int) -> None:
        self.macs += n


def add(n: int) -> None:
    if _active:
        _active[-1].macs += n


@contextmanager
def count_macs():
    """Context manager yielding a MacCounter that collects model MACs."""
    counter = MacCounter()
    _active.append(counter)
    try:
        yield counter
    finally:
        _active.pop()
