"""Dice-process rates, exact generators and their consistency checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import combinatorics as cb
from .errors import (
    InfiniteMassError,
    InvalidTransitionError,
    InvariantError,
    NonLumpableError,
    PreconditionError,
    ResourceLimitError,
    ShapeError,
)
from .measures import CoordinationMeasure, ZeroMeasure

DEFAULT_STATE_CAP = 4096
RESIDUAL_TOL = 1e-9


def as_rate_matrix(A, d: int | None = None) -> np.ndarray:
    """Validate the individual rates ``a_ij``; the diagonal is ignored and zeroed."""
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"rate matrix must be square, got {A.shape}")
    if d is not None and A.shape[0] != d:
        raise ShapeError(f"rate matrix must be {d}x{d}, got {A.shape}")
    np.fill_diagonal(A, 0.0)
    if not np.all(np.isfinite(A)) or A.min() < 0:
        raise InvariantError("individual rates must be finite and nonnegative")
    A.setflags(write=False)
    return A


def conservative_generator(A) -> np.ndarray:
    """Single-chain generator ``M`` with ``M_ij = a_ij`` and zero row sums."""
    M = np.array(A, dtype=float)
    np.fill_diagonal(M, 0.0)
    np.fill_diagonal(M, -M.sum(axis=1))
    return M


@dataclass(frozen=True, eq=False)
class DiceParams:
    """Individual rates ``A`` plus coordination measure ``nu``.

    ``A`` and ``nu`` are independent inputs; different pairs can give the
    same single-chain law (e.g. moving mass from ``a_ij`` into an atom).
    """
    A: np.ndarray
    nu: CoordinationMeasure

    def __post_init__(self):
        A = as_rate_matrix(self.A)
        object.__setattr__(self, "A", A)
        if self.nu.d != A.shape[0]:
            raise ShapeError(f"measure dimension {self.nu.d} != rate matrix dimension {A.shape[0]}")
        val = self.nu.integrability_value()
        if not np.isfinite(val):
            raise InfiniteMassError("coordination measure is not integrable")

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @classmethod
    def independent(cls, A) -> "DiceParams":
        A = as_rate_matrix(A)
        return cls(A, ZeroMeasure(A.shape[0]))

    def with_nu(self, nu: CoordinationMeasure) -> "DiceParams":
        return DiceParams(self.A, nu)

    def single_chain_generator(self) -> np.ndarray:
        """Generator of one particle on its own: ``a_ij + int u_ij nu``."""
        d = self.d
        M = np.array(self.A)
        for i in range(d):
            for j in range(d):
                if i != j:
                    K = np.zeros((d, d), dtype=int)
                    K[i, j] = 1
                    M[i, j] += self.nu.monomial_integral(K)
        np.fill_diagonal(M, 0.0)
        np.fill_diagonal(M, -M.sum(axis=1))
        return M


def _key(K) -> tuple:
    return tuple(tuple(int(v) for v in row) for row in K)


class RateTable:
    """Memoised ``gamma(b, K)`` for one parameter set."""

    def __init__(self, params: DiceParams):
        self.params = params
        self._cache: dict = {}

    def __call__(self, b, K) -> float:
        key = _key(K)
        val = self._cache.get(key)
        if val is None:
            val = gamma(tuple(int(v) for v in b), key, self.params)
            self._cache[key] = val
        return val


def gamma(b: Sequence[int], K, p: DiceParams) -> float:
    """Rate of one particular ``(b, K)``-change."""
    K = _key(K)
    cb.check_counts(b, K)
    if cb.is_diagonal(K):
        raise InvalidTransitionError("K = diag(b) is not a transition")
    rate = p.nu.monomial_integral(np.array(K))
    move = cb.single_move(b, K)
    if move is not None:
        rate += p.A[move]
    return float(rate)


def config_rate(x: Sequence[int], y: Sequence[int], p: DiceParams) -> float:
    if tuple(x) == tuple(y):
        raise InvalidTransitionError("x == y is not a transition")
    b, K = cb.counts_from_configs(x, y, p.d)
    return gamma(b, K, p)


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Dense generator on ``[d]^n``; row ``k`` is ``all_configurations(n, d)[k]``."""
    n: int
    d: int
    Q: np.ndarray
    states: tuple = field(default=None)

    def __post_init__(self):
        if self.states is None:
            object.__setattr__(self, "states", tuple(cb.all_configurations(self.n, self.d)))
        size = self.d ** self.n
        if self.Q.shape != (size, size):
            raise ShapeError(f"generator must be {size}x{size}, got {self.Q.shape}")
        off = self.Q[~np.eye(size, dtype=bool)]
        if off.size and off.min() < 0:
            raise InvariantError("generator has negative off-diagonal entries")
        if np.abs(self.Q.sum(axis=1)).max(initial=0.0) > RESIDUAL_TOL:
            raise InvariantError("generator rows do not sum to zero")
        self.Q.setflags(write=False)

    def index(self, x: Sequence[int]) -> int:
        return cb.config_index(x, self.d)

    def rate(self, x, y) -> float:
        return float(self.Q[self.index(x), self.index(y)])

    def transition_probabilities(self, t: float) -> np.ndarray:
        from scipy.linalg import expm
        return expm(self.Q * t)

    def to_csv(self, path) -> None:
        labels = [cb.format_config(x) for x in self.states]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state"] + labels)
            for label, row in zip(labels, self.Q):
                w.writerow([label] + [format(float(v), ".17g") for v in row])


def build_generator(n: int, p: DiceParams, cap: int = DEFAULT_STATE_CAP) -> GeneratorMatrix:
    d = p.d
    size = d ** n
    if size > cap:
        raise ResourceLimitError(f"{d}^{n} = {size} states exceeds the cap of {cap}")
    X = np.array(cb.all_configurations(n, d), dtype=np.int64).reshape(size, n)
    rates = RateTable(p)
    Q = np.zeros((size, size))
    if n == 0:
        return GeneratorMatrix(n, d, Q)
    for s in range(size):
        # flattened K for every target y, one row per y
        codes = X[s][None, :] * d + X
        Kflat = np.zeros((size, d * d), dtype=np.int64)
        for l in range(n):
            Kflat[np.arange(size), codes[:, l]] += 1
        b = tuple(np.bincount(X[s], minlength=d).tolist())
        uniq, inverse = np.unique(Kflat, axis=0, return_inverse=True)
        vals = np.empty(len(uniq))
        for u, kf in enumerate(uniq):
            K = kf.reshape(d, d)
            vals[u] = 0.0 if cb.is_diagonal(K.tolist()) else rates(b, K)
        Q[s] = vals[inverse.ravel()]
        Q[s, s] = 0.0
        Q[s, s] = -Q[s].sum()
    return GeneratorMatrix(n, d, Q)


@dataclass(frozen=True)
class ConsistencyReport:
    max_residual: float
    worst: tuple | None
    equations: int

    def passed(self, tol: float = RESIDUAL_TOL) -> bool:
        return self.max_residual <= tol


def check_consistency_equation(rates: DiceParams | Callable, n_max: int,
                               d: int | None = None) -> ConsistencyReport:
    """Residuals of ``gamma(b, K) = sum_l gamma(b + e_j, K + E_jl)`` for ``1 <= |b| <= n_max``.

    ``rates`` is either a :class:`DiceParams` or any callable ``gamma(b, K)``
    (``d`` is then required).
    """
    if isinstance(rates, DiceParams):
        d = rates.d
        g = RateTable(rates)
    else:
        if d is None:
            raise ShapeError("d is required when passing a rate callable")
        g = rates
    worst, max_res, count = None, 0.0, 0
    for total in range(1, n_max + 1):
        for b in cb.enumerate_compositions(total, d):
            for K in cb.enumerate_transition_matrices(b):
                lhs = g(b, K)
                for j in range(d):
                    b1 = tuple(v + (k == j) for k, v in enumerate(b))
                    rhs = 0.0
                    for l in range(d):
                        K1 = tuple(tuple(v + (r == j and c == l) for c, v in enumerate(row))
                                   for r, row in enumerate(K))
                        rhs += g(b1, K1)
                    res = abs(lhs - rhs)
                    count += 1
                    if res > max_res:
                        max_res, worst = res, (b, K, j)
    return ConsistencyReport(float(max_res), worst, count)


def lumped_generator(Q: GeneratorMatrix, m: int, tol: float = RESIDUAL_TOL) -> GeneratorMatrix:
    """Generator of the first ``m`` coordinates, checking that the projection is Markov."""
    n, d = Q.n, Q.d
    if not 0 <= m < n:
        raise ShapeError(f"need 0 <= m < n, got m={m}, n={n}")
    hi, lo = d ** m, d ** (n - m)
    S = Q.Q.reshape(hi, lo, hi, lo).sum(axis=3)
    spread = np.abs(S - S[:, :1, :]).max(initial=0.0)
    if spread > tol:
        raise NonLumpableError(f"projection to m={m} is not lumpable (spread {spread:.3g})")
    L = np.array(S[:, 0, :])
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    return GeneratorMatrix(m, d, L)


def check_permutation_commutation(Q: GeneratorMatrix, sigma: Sequence[int],
                                  initial_partition=None) -> float:
    """``max |Q(x_sigma, y_sigma) - Q(x, y)|`` over ``x != y``."""
    cb.check_permutation(sigma, Q.n)
    if initial_partition is not None and not cb.preserves_partition(sigma, initial_partition):
        raise PreconditionError("permutation does not preserve the initial partition")
    perm = np.array([Q.index(cb.apply_permutation(x, sigma)) for x in Q.states], dtype=np.int64)
    diff = np.abs(Q.Q[np.ix_(perm, perm)] - Q.Q)
    np.fill_diagonal(diff, 0.0)
    return float(diff.max(initial=0.0))
