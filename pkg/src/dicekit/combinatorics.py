"""Integer combinatorics of types, configurations and (b, K)-changes.

Conventions
-----------
Types and particle labels are 0-based everywhere inside the library; the
1-based form only appears in config files, CSV/JSON output and serialized
partitions.

* A configuration is a tuple ``x`` with ``x[l]`` the type of particle ``l``.
* A count vector ``b`` has ``b[i]`` particles of type ``i``.
* A transition count matrix ``K`` (tuple of row tuples) has ``K[i][j]``
  particles that moved from type ``i`` to type ``j``; row ``i`` sums to
  ``b[i]``.

Enumerations are in descending lexicographic order: for compositions the
first coordinate runs from ``n`` down to ``0``, e.g. ``(2, 0), (1, 1), (0, 2)``.
Transition matrices are the Cartesian product of the row compositions in
that order, first row varying slowest.
"""

from __future__ import annotations

import itertools
from math import factorial, prod
from typing import Iterable, Sequence

from .errors import (
    InvalidDimensionError,
    InvalidPermutationError,
    InvariantError,
    ShapeError,
)

Matrix = tuple[tuple[int, ...], ...]


def _check_dimension(d):
    if d < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {d}")


def enumerate_compositions(n: int, d: int) -> list[tuple[int, ...]]:
    """All ``b`` in N_0^d with ``sum(b) == n``, descending lexicographic."""
    _check_dimension(d)
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if d == 1:
        return [(n,)]
    out = []
    for first in range(n, -1, -1):
        for rest in enumerate_compositions(n - first, d - 1):
            out.append((first,) + rest)
    return out


def diag(b: Sequence[int]) -> Matrix:
    d = len(b)
    return tuple(tuple(b[i] if i == j else 0 for j in range(d)) for i in range(d))


def row_sums(K: Sequence[Sequence[int]]) -> tuple[int, ...]:
    return tuple(sum(row) for row in K)


def column_sums(K: Sequence[Sequence[int]]) -> tuple[int, ...]:
    return tuple(sum(col) for col in zip(*K))


def transpose(K: Sequence[Sequence[int]]) -> Matrix:
    return tuple(tuple(col) for col in zip(*K))


def is_diagonal(K: Sequence[Sequence[int]]) -> bool:
    return all(K[i][j] == 0 for i in range(len(K)) for j in range(len(K)) if i != j)


def enumerate_transition_matrices(b: Sequence[int],
                                  include_diagonal: bool = False) -> list[Matrix]:
    """All ``K`` whose row ``i`` is a composition of ``b[i]`` into ``d`` parts.

    ``diag(b)`` (nobody moves) is left out unless ``include_diagonal``.
    """
    d = len(b)
    _check_dimension(d)
    rows = [enumerate_compositions(bi, d) for bi in b]
    out = [tuple(K) for K in itertools.product(*rows)]
    if not include_diagonal:
        D = diag(b)
        out = [K for K in out if K != D]
    return out


def single_move(b: Sequence[int], K: Sequence[Sequence[int]]):
    """Return ``(i, j)`` if ``K == diag(b) - E_ii + E_ij`` with ``i != j``, else None."""
    d = len(b)
    moved = [(i, j) for i in range(d) for j in range(d) if i != j and K[i][j]]
    if len(moved) != 1:
        return None
    i, j = moved[0]
    if K[i][j] != 1 or K[i][i] != b[i] - 1:
        return None
    if any(K[k][k] != b[k] for k in range(d) if k != i):
        return None
    return i, j


def counts_from_configs(x: Sequence[int], y: Sequence[int], d: int):
    """The ``(b, K)`` pair describing the move ``x -> y``.

    >>> counts_from_configs((0, 1, 0), (1, 1, 0), 2)
    ((2, 1), ((1, 1), (0, 1)))
    """
    _check_dimension(d)
    if len(x) != len(y):
        raise ShapeError(f"configurations differ in length: {len(x)} != {len(y)}")
    K = [[0] * d for _ in range(d)]
    for xi, yi in zip(x, y):
        if not (0 <= xi < d and 0 <= yi < d):
            raise InvalidDimensionError(f"type out of range 0..{d - 1}: {(xi, yi)}")
        K[xi][yi] += 1
    K = tuple(tuple(row) for row in K)
    return row_sums(K), K


def check_counts(b: Sequence[int], K: Sequence[Sequence[int]]):
    if len(K) != len(b) or any(len(row) != len(b) for row in K):
        raise ShapeError(f"K must be {len(b)}x{len(b)}")
    if any(k < 0 for row in K for k in row):
        raise InvariantError("K has negative entries")
    if row_sums(K) != tuple(b):
        raise InvariantError(f"row sums of K {row_sums(K)} differ from b {tuple(b)}")


def target_multiplicity(b: Sequence[int], K: Sequence[Sequence[int]]) -> int:
    """Number of ``y`` making ``x -> y`` a (b, K)-change, for any fixed ``x`` with counts ``b``."""
    check_counts(b, K)
    num = prod(factorial(bi) for bi in b)
    den = prod(factorial(k) for row in K for k in row)
    return num // den


def multinomial(n: int, ks: Iterable[int]) -> int:
    ks = list(ks)
    if sum(ks) != n:
        raise InvariantError(f"parts {ks} do not sum to {n}")
    return factorial(n) // prod(factorial(k) for k in ks)


def check_permutation(sigma: Sequence[int], n: int | None = None):
    n = len(sigma) if n is None else n
    if len(sigma) != n or sorted(sigma) != list(range(n)):
        raise InvalidPermutationError(f"not a permutation of 0..{n - 1}: {tuple(sigma)}")


def apply_permutation(x: Sequence[int], sigma: Sequence[int]) -> tuple[int, ...]:
    """Relabel particles: entry ``i`` of the result is ``x[sigma[i]]``."""
    check_permutation(sigma, len(x))
    return tuple(x[s] for s in sigma)


def inverse_permutation(sigma: Sequence[int]) -> tuple[int, ...]:
    check_permutation(sigma)
    inv = [0] * len(sigma)
    for i, s in enumerate(sigma):
        inv[s] = i
    return tuple(inv)


def induced_partition(x: Sequence[int], d: int) -> list[frozenset[int]]:
    """``A_i = {l : x[l] == i}`` for each type ``i``; empty sets included."""
    _check_dimension(d)
    blocks = [set() for _ in range(d)]
    for l, xi in enumerate(x):
        if not 0 <= xi < d:
            raise InvalidDimensionError(f"type out of range 0..{d - 1}: {xi}")
        blocks[xi].add(l)
    return [frozenset(A) for A in blocks]


def preserves_partition(sigma: Sequence[int], partition: Iterable[Iterable[int]]) -> bool:
    return all({sigma[l] for l in A} == set(A) for A in partition)


def all_configurations(n: int, d: int) -> list[tuple[int, ...]]:
    """``[d]^n`` in lexicographic order; position equals :func:`config_index`."""
    _check_dimension(d)
    return list(itertools.product(range(d), repeat=n))


def config_index(x: Sequence[int], d: int) -> int:
    idx = 0
    for xi in x:
        idx = idx * d + xi
    return idx


def format_config(x: Sequence[int]) -> str:
    """1-based comma-separated label, e.g. ``(0, 1, 0) -> "1,2,1"``."""
    return ",".join(str(xi + 1) for xi in x)


def parse_config(label: str) -> tuple[int, ...]:
    label = label.strip()
    if not label:
        return ()
    return tuple(int(tok) - 1 for tok in label.split(","))
