"""Sum segment tree over positive weights.

Supports point multiplication and sampling by prefix-sum descent, both in
O(log k). Every cell read or written during those operations is added to
``counter[0]``; trees built with the same counter list share one tally.
"""

from __future__ import annotations

from typing import Iterable


class SumTree:
    __slots__ = ("k", "size", "depth", "cells", "counter")

    def __init__(self, weights: Iterable[float], counter: list[int] | None = None):
        weights = [float(w) for w in weights]
        if not weights:
            raise ValueError("need at least one weight")
        if any(not w > 0.0 for w in weights):
            raise ValueError("weights must be strictly positive")
        self.counter = [0] if counter is None else counter
        self.k = len(weights)
        size, depth = 1, 0
        while size < self.k:
            size *= 2
            depth += 1
        self.size = size
        self.depth = depth
        self.cells = [0.0] * (2 * size)
        self.cells[size : size + self.k] = weights
        self._rebuild()

    def _rebuild(self) -> None:
        cells = self.cells
        for j in range(self.size - 1, 0, -1):
            cells[j] = cells[2 * j] + cells[2 * j + 1]
        self.counter[0] += 2 * self.size

    @property
    def total(self) -> float:
        return self.cells[1]

    def weight(self, i: int) -> float:
        return self.cells[self.size + i]

    def weights(self) -> list[float]:
        return self.cells[self.size : self.size + self.k]

    def multiply(self, i: int, factor: float) -> None:
        cells = self.cells
        j = self.size + i
        cells[j] *= factor
        j >>= 1
        while j:
            cells[j] = cells[2 * j] + cells[2 * j + 1]
            j >>= 1
        self.counter[0] += self.depth + 1

    def find(self, u: float) -> int:
        """Index whose cumulative-weight interval contains ``u * total``."""
        cells = self.cells
        size = self.size
        target = u * cells[1]
        j = 1
        while j < size:
            left = cells[2 * j]
            if target < left:
                j = 2 * j
            else:
                target -= left
                j = 2 * j + 1
        self.counter[0] += self.depth + 1
        i = j - size
        # rounding can push the descent onto zero-weight padding
        return i if i < self.k else self.k - 1

    def rescale(self, factor: float) -> None:
        cells = self.cells
        for j in range(self.size, self.size + self.k):
            cells[j] *= factor
        self._rebuild()
