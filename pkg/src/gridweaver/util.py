"""Small shared helpers: deterministic seed derivation and bounded parallelism."""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "GRIDWEAVER_THREADS"


def stable_tag(text: str) -> int:
    """32-bit tag of a string, stable across runs and platforms."""
    return zlib.crc32(text.encode("utf-8"))


def derived_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator for a (seed, keys...) task, independent of scheduling order."""
    ints = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        ints.append(stable_tag(k) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(ints))


def max_workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Map preserving input order; worker count capped by GRIDWEAVER_THREADS."""
    seq: Sequence[T] = list(items)
    n = max_workers()
    if n == 1 or len(seq) <= 1:
        return [fn(it) for it in seq]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, seq))


class VarLayout:
    """Named blocks of columns in a flat variable vector."""

    def __init__(self):
        self._blocks: dict[str, slice] = {}
        self.n = 0

    def add(self, name: str, count: int) -> slice:
        if name in self._blocks:
            raise KeyError(f"block '{name}' already allocated")
        s = slice(self.n, self.n + count)
        self._blocks[name] = s
        self.n += count
        return s

    def __contains__(self, name: str) -> bool:
        return name in self._blocks

    def __getitem__(self, name: str) -> slice:
        return self._blocks[name]

    def start(self, name: str) -> int:
        return self._blocks[name].start

    def size(self, name: str) -> int:
        s = self._blocks[name]
        return s.stop - s.start

    def blocks(self):
        return self._blocks.items()


class RowBuilder:
    """Accumulates sparse-ish constraint rows, then emits dense arrays."""

    def __init__(self, layout: VarLayout):
        self.layout = layout
        self.rows: list[dict[int, float]] = []
        self.rels: list[str] = []
        self.rhs: list[float] = []
        self.labels: list[str] = []

    def add(self, coeffs: dict[int, float], rel: str, rhs: float, label: str = ""):
        self.rows.append(coeffs)
        self.rels.append(rel)
        self.rhs.append(float(rhs))
        self.labels.append(label)

    @property
    def m(self) -> int:
        return len(self.rows)

    def to_arrays(self, ncols: int | None = None):
        n = self.layout.n if ncols is None else ncols
        a = np.zeros((len(self.rows), n))
        for i, row in enumerate(self.rows):
            for j, v in row.items():
                a[i, j] += v
        return a, tuple(self.rels), np.array(self.rhs, dtype=float)
