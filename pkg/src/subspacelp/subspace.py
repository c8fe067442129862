"""Random subset selection of candidate controls.

A draw is the index form of a k x p selector matrix: the sorted positions
of the k selected columns. Draws are generated sequentially from one seeded
PCG64 stream (numpy's default_rng) so a run is reproducible across
platforms and worker counts; consuming draws is concurrency-safe because
they are immutable after creation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import Infeasible, InvalidDimension


def as_generator(seed) -> np.random.Generator:
    """Pass through a Generator, or build one from an int/SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class SelectionDraw:
    """Sorted indices of one random subset of candidate controls."""

    indices: np.ndarray
    p_total: int

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.intp)
        if idx.ndim != 1:
            raise InvalidDimension("indices must be one-dimensional")
        if idx.size:
            if idx.min() < 0 or idx.max() >= self.p_total:
                raise InvalidDimension("index outside [0, p_total)")
            if np.any(np.diff(idx) <= 0):
                raise InvalidDimension("indices must be strictly increasing")
        if idx.size > self.p_total:
            raise InvalidDimension("more indices than available predictors")
        self.indices = idx

    @property
    def k(self) -> int:
        return int(self.indices.size)


@dataclass
class CategoryLayout:
    """Per-category sizes and subset dimensions for stratified draws."""

    category_names: Sequence[str]
    sizes: Sequence[int]
    per_category_k: Sequence[int]
    offsets: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if not (len(self.category_names) == len(self.sizes) == len(self.per_category_k)):
            raise InvalidDimension("category fields must have equal length")
        sizes = np.asarray(self.sizes, dtype=int)
        ks = np.asarray(self.per_category_k, dtype=int)
        if np.any(sizes <= 0):
            raise InvalidDimension("category sizes must be positive")
        if np.any(ks < 1) or np.any(ks > sizes):
            raise InvalidDimension("need 1 <= k_c <= size_c in every category")
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])

    @property
    def p_total(self) -> int:
        return int(np.sum(self.sizes))

    @property
    def k(self) -> int:
        return int(np.sum(self.per_category_k))


def draw_uniform(p_total: int, k: int, rng_state) -> SelectionDraw:
    """Uniform draw of a size-k subset of {0, ..., p_total-1}.

    Implemented as a Fisher-Yates permutation truncated to k entries, so
    every subset has exactly equal probability.
    """
    if p_total <= 0:
        raise InvalidDimension("p_total must be positive")
    if k <= 0 or k > p_total:
        raise InvalidDimension(f"need 1 <= k <= {p_total}, got k={k}")
    rng = as_generator(rng_state)
    idx = np.sort(rng.permutation(p_total)[:k])
    return SelectionDraw(indices=idx, p_total=p_total)


def allocate_category_dims(sizes: Sequence[int], k: int) -> list[int]:
    """Split a total subset dimension across categories, proportional to size.

    Largest-remainder rounding with a minimum of one per category and a cap
    at the category size. Ties are broken deterministically: the lowest
    category index wins an extra unit, and when units must be removed the
    highest index among smallest remainders loses first.
    """
    sizes = np.asarray(sizes, dtype=int)
    n_cat = sizes.size
    total = int(sizes.sum())
    if np.any(sizes <= 0):
        raise InvalidDimension("category sizes must be positive")
    if k < n_cat:
        raise Infeasible(f"k={k} cannot cover {n_cat} categories")
    if k > total:
        raise Infeasible(f"k={k} exceeds {total} available predictors")
    quota = k * sizes / total
    base = np.floor(quota).astype(int)
    alloc = np.clip(base, 1, sizes)
    remainder = quota - base
    diff = k - int(alloc.sum())
    # order: largest remainder first, lowest index breaking ties
    order = sorted(range(n_cat), key=lambda c: (-remainder[c], c))
    while diff > 0:
        moved = False
        for c in order:
            if alloc[c] < sizes[c]:
                alloc[c] += 1
                diff -= 1
                moved = True
                if diff == 0:
                    break
        if not moved:  # pragma: no cover - excluded by k <= total
            raise Infeasible("no category can absorb remaining units")
    while diff < 0:
        moved = False
        for c in reversed(order):
            if alloc[c] > 1:
                alloc[c] -= 1
                diff += 1
                moved = True
                if diff == 0:
                    break
        if not moved:  # pragma: no cover - excluded by k >= n_cat
            raise Infeasible("cannot shed units without emptying a category")
    return [int(a) for a in alloc]


def draw_by_category(layout: CategoryLayout, rng_state) -> SelectionDraw:
    """Stratified draw: a uniform subset within each category, concatenated.

    Equivalent to a block-diagonal selector; every category contributes at
    least one predictor by the layout invariants.
    """
    rng = as_generator(rng_state)
    parts = []
    for size, k_c, off in zip(layout.sizes, layout.per_category_k, layout.offsets):
        sub = draw_uniform(int(size), int(k_c), rng)
        parts.append(sub.indices + int(off))
    return SelectionDraw(indices=np.concatenate(parts), p_total=layout.p_total)
