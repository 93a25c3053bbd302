"""Coordination measures on d x d stochastic matrices.

A coordination measure drives the simultaneous jumps of a dice process: at
rate ``nu(dU)`` a stochastic matrix ``U`` is drawn and every particle of type
``i`` independently rolls row ``i`` of ``U``.  The measure may have infinite
total mass as long as ``integral sum_i (1 - u_ii) nu(dU)`` is finite.

Families
--------
``AtomicMeasure``
    finitely many weighted matrices; ``ZeroMeasure`` is the empty case.
``TotallyDependent``, ``StochasticExchange``, ``MultinomialSplitting``
    parametrised atomic measures, converted to :class:`AtomicMeasure`.
``DirichletSplitting``, ``InstantExchange``
    finite measures with Dirichlet-distributed rows.
``HarmonicSplitting``
    infinite measure with density ``s**(eta_i - 1) / (1 - s)`` on one row.

Every family provides exact monomial integrals ``int prod u_ij**k_ij nu(dU)``
(Beta/Dirichlet moment formulas for the continuous ones) and an exact
sampler of ``nu`` restricted to ``V_eps = {U : u_ii < 1 - eps for some i}``.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special, stats

from .errors import (
    DualityPreconditionError,
    InfiniteMassError,
    InvariantError,
    PreconditionError,
    RngError,
    ShapeError,
    UndefinedIntegralError,
    UnsupportedMeasureError,
)

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
RENORMALIZE_TOL = 1e-9
DEFAULT_EPSILON = 1e-3


def as_stochastic_matrix(U, d: int | None = None) -> np.ndarray:
    """Validate ``U`` as a row-stochastic matrix and return a read-only copy.

    Rows off by more than 1e-12 but within 1e-9 are renormalised; anything
    further off is rejected.
    """
    U = np.array(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ShapeError(f"stochastic matrix must be square, got shape {U.shape}")
    if d is not None and U.shape[0] != d:
        raise ShapeError(f"expected a {d}x{d} matrix, got {U.shape}")
    if not np.all(np.isfinite(U)) or U.min() < 0:
        raise InvariantError("stochastic matrix entries must be finite and nonnegative")
    sums = U.sum(axis=1)
    err = np.abs(sums - 1.0)
    if err.max() > RENORMALIZE_TOL:
        raise InvariantError(f"row sums {sums} are not 1 within {RENORMALIZE_TOL}")
    if err.max() > ROW_SUM_TOL:
        U = U / sums[:, None]
    U.setflags(write=False)
    return U


def is_doubly_stochastic(U, tol: float = ROW_SUM_TOL) -> bool:
    U = np.asarray(U)
    return bool(np.all(np.abs(U.sum(axis=0) - 1.0) <= tol))


def _check_rng(rng):
    if not isinstance(rng, np.random.Generator):
        raise RngError(f"expected numpy.random.Generator, got {type(rng).__name__}")


def _as_exponents(K, d):
    K = np.asarray(K, dtype=np.int64)
    if K.shape != (d, d):
        raise ShapeError(f"exponent matrix must be {d}x{d}, got {K.shape}")
    if K.min() < 0:
        raise InvariantError("exponents must be nonnegative")
    return K


def _offdiag_any(K):
    return bool(np.any(K[~np.eye(K.shape[0], dtype=bool)]))


def dirichlet_moment(alpha, m) -> float:
    """``E[prod s_j**m_j]`` for ``s ~ Dirichlet(alpha)``."""
    alpha = np.asarray(alpha, dtype=float)
    m = np.asarray(m, dtype=float)
    log = (special.gammaln(alpha.sum()) - special.gammaln(alpha.sum() + m.sum())
           + np.sum(special.gammaln(alpha + m) - special.gammaln(alpha)))
    return float(np.exp(log))


@dataclass(frozen=True, eq=False)
class Truncation:
    """``nu`` restricted to ``V_eps`` together with an exact sampler.

    ``neglected`` is ``int_{V_eps^c} sum_i (1 - u_ii) nu(dU)``, the part of
    the integrability budget dropped by the truncation.
    """
    d: int
    epsilon: float
    mass: float
    neglected: float
    _sampler: Callable[[np.random.Generator], np.ndarray] | None = None

    @property
    def is_empty(self) -> bool:
        return self.mass == 0.0

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        _check_rng(rng)
        if self.is_empty:
            raise PreconditionError("cannot sample from an empty truncation")
        return self._sampler(rng)


def sample_truncated(truncation: Truncation, rng: np.random.Generator) -> np.ndarray:
    return truncation.sample(rng)


def _check_epsilon(eps):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps}")


class CoordinationMeasure:
    """Interface shared by all families. Instances are immutable."""

    d: int
    family: str = "abstract"
    finite: bool = True

    def integrability_value(self) -> float:
        raise NotImplementedError

    def monomial_integral(self, K) -> float:
        raise NotImplementedError

    def diagonal_deficit(self, b) -> float:
        """``int (1 - prod_i u_ii**b_i) nu(dU)``, finite for every family."""
        raise NotImplementedError

    def truncate(self, epsilon: float = DEFAULT_EPSILON) -> Truncation:
        raise NotImplementedError

    def is_doubly_stochastic_supported(self) -> bool:
        raise NotImplementedError

    def transpose_pushforward(self) -> "CoordinationMeasure":
        raise NotImplementedError

    def scaled(self, factor: float) -> "CoordinationMeasure":
        raise NotImplementedError

    def atomic(self) -> "AtomicMeasure":
        raise UnsupportedMeasureError(f"{self.family} measure has no atomic representation")

    @property
    def is_atomic(self) -> bool:
        return False


# Module-level spellings of the measure operations.
def integrability_value(nu: CoordinationMeasure) -> float:
    return nu.integrability_value()


def monomial_integral(nu: CoordinationMeasure, K) -> float:
    return nu.monomial_integral(K)


def truncate(nu: CoordinationMeasure, epsilon: float = DEFAULT_EPSILON) -> Truncation:
    return nu.truncate(epsilon)


def transpose_pushforward(nu: CoordinationMeasure) -> CoordinationMeasure:
    return nu.transpose_pushforward()


def is_doubly_stochastic_supported(nu: CoordinationMeasure) -> bool:
    return nu.is_doubly_stochastic_supported()


class AtomicMeasure(CoordinationMeasure):
    """``sum_k w_k delta_{U_k}`` with positive weights."""

    family = "atomic"

    def __init__(self, atoms: Sequence[tuple[float, object]] = (), d: int | None = None):
        atoms = list(atoms)
        if d is None:
            if not atoms:
                raise ShapeError("dimension required for an atomic measure without atoms")
            d = np.asarray(atoms[0][1]).shape[0]
        self.d = int(d)
        weights = np.array([float(w) for w, _ in atoms], dtype=float)
        for k, w in enumerate(weights):
            if not np.isfinite(w):
                raise InfiniteMassError(f"atom {k} has infinite weight")
            if w <= 0:
                raise InvariantError(f"atom {k} has nonpositive weight {w}")
        mats = np.array([as_stochastic_matrix(U, self.d) for _, U in atoms],
                        dtype=float).reshape(len(atoms), self.d, self.d)
        weights.setflags(write=False)
        mats.setflags(write=False)
        self.weights = weights
        self.matrices = mats

    def __repr__(self):
        return f"AtomicMeasure(d={self.d}, atoms={len(self.weights)})"

    def __len__(self):
        return len(self.weights)

    @property
    def is_atomic(self) -> bool:
        return True

    def atomic(self) -> "AtomicMeasure":
        return self

    def atoms(self):
        return list(zip(self.weights.tolist(), self.matrices))

    def integrability_value(self) -> float:
        if not len(self):
            return 0.0
        per_atom = self.d - np.trace(self.matrices, axis1=1, axis2=2)
        return float(self.weights @ per_atom)

    def monomial_integral(self, K) -> float:
        K = _as_exponents(K, self.d)
        if not len(self):
            return 0.0
        vals = np.prod(self.matrices ** K, axis=(1, 2))
        return float(self.weights @ vals)

    def diagonal_deficit(self, b) -> float:
        b = np.asarray(b)
        if not len(self):
            return 0.0
        diags = np.diagonal(self.matrices, axis1=1, axis2=2)
        return float(self.weights @ (1.0 - np.prod(diags ** b, axis=1)))

    def truncate(self, epsilon: float = DEFAULT_EPSILON) -> Truncation:
        _check_epsilon(epsilon)
        if not len(self):
            return Truncation(self.d, epsilon, 0.0, 0.0)
        diags = np.diagonal(self.matrices, axis1=1, axis2=2)
        inside = np.any(diags < 1.0 - epsilon, axis=1)
        w_in = self.weights[inside]
        mass = float(w_in.sum())
        neglected = float(self.weights[~inside] @ (1.0 - diags[~inside]).sum(axis=1))
        if mass == 0.0:
            return Truncation(self.d, epsilon, 0.0, neglected)
        mats = list(self.matrices[inside])
        cum = np.cumsum(w_in).tolist()

        def sampler(rng):
            return mats[min(bisect.bisect_right(cum, rng.random() * mass), len(mats) - 1)]

        return Truncation(self.d, epsilon, mass, neglected, sampler)

    def is_doubly_stochastic_supported(self) -> bool:
        return all(is_doubly_stochastic(U) for U in self.matrices)

    def transpose_pushforward(self) -> "AtomicMeasure":
        if not self.is_doubly_stochastic_supported():
            raise DualityPreconditionError("measure is not supported on doubly stochastic matrices")
        return AtomicMeasure([(w, U.T) for w, U in self.atoms()], d=self.d)

    def scaled(self, factor: float) -> "AtomicMeasure":
        if factor == 0:
            return ZeroMeasure(self.d)
        return AtomicMeasure([(factor * w, U) for w, U in self.atoms()], d=self.d)


class ZeroMeasure(AtomicMeasure):
    """No coordinated jumps: independent Markov chains."""

    family = "zero"

    def __init__(self, d: int):
        super().__init__((), d=d)

    def __repr__(self):
        return f"ZeroMeasure(d={self.d})"

    def transpose_pushforward(self):
        return self

    def scaled(self, factor):
        return self


class _AtomicFamily(CoordinationMeasure):
    """Families that are finite sums of point masses; operations go through ``atomic()``."""

    _atomic_cache: AtomicMeasure | None = None

    def _build_atoms(self) -> list:
        raise NotImplementedError

    def atomic(self) -> AtomicMeasure:
        if self._atomic_cache is None:
            atoms = [(w, U) for w, U in self._build_atoms() if w > 0]
            object.__setattr__(self, "_atomic_cache", AtomicMeasure(atoms, d=self.d))
        return self._atomic_cache

    @property
    def is_atomic(self) -> bool:
        return True

    def integrability_value(self):
        return self.atomic().integrability_value()

    def monomial_integral(self, K):
        return self.atomic().monomial_integral(K)

    def diagonal_deficit(self, b):
        return self.atomic().diagonal_deficit(b)

    def truncate(self, epsilon=DEFAULT_EPSILON):
        return self.atomic().truncate(epsilon)

    def is_doubly_stochastic_supported(self):
        return self.atomic().is_doubly_stochastic_supported()

    def transpose_pushforward(self):
        return self.atomic().transpose_pushforward()

    def scaled(self, factor):
        return self.atomic().scaled(factor)


def map_matrix(f: Sequence[int]) -> np.ndarray:
    """``U^(f) = sum_i E_{i, f(i)}``."""
    d = len(f)
    U = np.zeros((d, d))
    U[np.arange(d), list(f)] = 1.0
    return U


class TotallyDependent(_AtomicFamily):
    """At rate ``c_f`` every chain in state ``i`` jumps to ``f(i)``."""

    family = "totally-dependent"

    def __init__(self, rates: Mapping[tuple[int, ...], float], d: int | None = None):
        rates = {tuple(int(v) for v in f): float(c) for f, c in rates.items()}
        if d is None:
            if not rates:
                raise ShapeError("dimension required when no maps are given")
            d = len(next(iter(rates)))
        self.d = d
        for f, c in rates.items():
            if len(f) != d or not all(0 <= v < d for v in f):
                raise ShapeError(f"map {f} is not a function [d] -> [d] for d={d}")
            if c < 0:
                raise InvariantError(f"negative rate {c} for map {f}")
        self.rates = rates

    def __repr__(self):
        return f"TotallyDependent(d={self.d}, maps={len(self.rates)})"

    def _build_atoms(self):
        return [(c, map_matrix(f)) for f, c in self.rates.items()]


def exchange_matrix(d: int, i: int, j: int, s: float, v: float) -> np.ndarray:
    """Chains at ``i`` move to ``j`` w.p. ``1 - s``; chains at ``j`` move to ``i`` w.p. ``1 - v``."""
    U = np.eye(d)
    U[i, i], U[i, j] = s, 1.0 - s
    U[j, j], U[j, i] = v, 1.0 - v
    return U


class StochasticExchange(_AtomicFamily):
    """Pairwise exchange driven by atomic measures ``beta_ij`` on ``[0, 1]^2``.

    ``atoms`` is a sequence of ``(i, j, s, v, weight)``.
    """

    family = "stochastic-exchange"

    def __init__(self, d: int, atoms: Sequence[tuple[int, int, float, float, float]]):
        self.d = d
        clean = []
        for i, j, s, v, w in atoms:
            if i == j or not (0 <= i < d and 0 <= j < d):
                raise ShapeError(f"invalid exchange pair ({i}, {j})")
            if not (0 <= s <= 1 and 0 <= v <= 1):
                raise InvariantError(f"(s, v) = ({s}, {v}) outside [0, 1]^2")
            if w < 0:
                raise InvariantError(f"negative weight {w}")
            clean.append((int(i), int(j), float(s), float(v), float(w)))
        self.exchange_atoms = tuple(clean)

    def __repr__(self):
        return f"StochasticExchange(d={self.d}, atoms={len(self.exchange_atoms)})"

    def _build_atoms(self):
        return [(w, exchange_matrix(self.d, i, j, s, v)) for i, j, s, v, w in self.exchange_atoms]


def _check_eta(eta):
    eta = np.array(eta, dtype=float)
    if eta.ndim != 1 or not np.all(eta > 0) or not np.all(np.isfinite(eta)):
        raise InvariantError(f"eta must be a vector of positive reals, got {eta}")
    eta.setflags(write=False)
    return eta


def _check_subsets(rates, d, min_size=2):
    out = {}
    for J, c in rates.items():
        J = tuple(sorted(set(int(j) for j in J)))
        if len(J) < min_size or not all(0 <= j < d for j in J):
            raise ShapeError(f"index set {J} must have >= {min_size} elements in 0..{d - 1}")
        if c < 0:
            raise InvariantError(f"negative rate {c} for set {J}")
        if c > 0:
            out[J] = out.get(J, 0.0) + float(c)
    return out


def block_matrix(d: int, J: Sequence[int], probs) -> np.ndarray:
    """Identity outside ``J``; every row in ``J`` equals ``probs`` (supported on ``J``)."""
    U = np.eye(d)
    for i in J:
        U[i, :] = 0.0
        U[i, list(J)] = probs
    return U


class MultinomialSplitting(_AtomicFamily):
    """At rate ``c_J`` chains in ``J`` redistribute over ``J`` with weights ``eta_J / eta(J)``."""

    family = "multinomial-splitting"

    def __init__(self, eta, rates: Mapping[Sequence[int], float]):
        self.eta = _check_eta(eta)
        self.d = len(self.eta)
        self.rates = _check_subsets(rates, self.d)

    def __repr__(self):
        return f"MultinomialSplitting(d={self.d}, sets={len(self.rates)})"

    def _build_atoms(self):
        out = []
        for J, c in self.rates.items():
            eJ = self.eta[list(J)]
            out.append((c, block_matrix(self.d, J, eJ / eJ.sum())))
        return out


class DirichletSplitting(CoordinationMeasure):
    """At rate ``c_J`` chains in ``J`` redistribute over ``J`` with ``Dirichlet(eta_J)`` weights."""

    family = "dirichlet-splitting"

    def __init__(self, eta, rates: Mapping[Sequence[int], float]):
        self.eta = _check_eta(eta)
        self.d = len(self.eta)
        self.rates = _check_subsets(rates, self.d)

    def __repr__(self):
        return f"DirichletSplitting(d={self.d}, sets={len(self.rates)})"

    def _component_value(self, K, J):
        outside = [k for k in range(self.d) if k not in J]
        for k in outside:
            if any(K[k, j] for j in range(self.d) if j != k):
                return None
        for i in J:
            if any(K[i, j] for j in outside):
                return None
        m = K[list(J)][:, list(J)].sum(axis=0)
        return dirichlet_moment(self.eta[list(J)], m)

    def integrability_value(self):
        return float(sum(c * (len(J) - 1) for J, c in self.rates.items()))

    def monomial_integral(self, K):
        K = _as_exponents(K, self.d)
        total = 0.0
        for J, c in self.rates.items():
            v = self._component_value(K, J)
            if v is not None:
                total += c * v
        return total

    def diagonal_deficit(self, b):
        b = np.asarray(b)
        return float(sum(c * (1.0 - dirichlet_moment(self.eta[list(J)], b[list(J)]))
                         for J, c in self.rates.items()))

    def _prob_inside(self, J, epsilon):
        # Leaving V_eps needs every s_i >= 1 - eps on J, impossible when |J|(1 - eps) > 1.
        t = 1.0 - epsilon
        if len(J) * t > 1.0:
            return 1.0
        if len(J) == 2:
            a, b = self.eta[list(J)]
            return 1.0 - float(stats.beta.cdf(1.0 - t, a, b) - stats.beta.cdf(t, a, b))
        raise PreconditionError(
            f"epsilon={epsilon} too coarse for exact truncation of the {len(J)}-set {J}; "
            f"use epsilon < {1.0 - 1.0 / len(J)}")

    def truncate(self, epsilon=DEFAULT_EPSILON):
        _check_epsilon(epsilon)
        comps, masses = [], []
        neglected = 0.0
        for J, c in self.rates.items():
            p_in = self._prob_inside(J, epsilon)
            neglected += c * (len(J) - 1) * (1.0 - p_in)
            if p_in > 0:
                comps.append(J)
                masses.append(c * p_in)
        mass = float(sum(masses))
        if mass == 0.0:
            return Truncation(self.d, epsilon, 0.0, neglected)
        p = np.array(masses) / mass
        t = 1.0 - epsilon
        d, eta = self.d, self.eta

        def sampler(rng):
            J = comps[rng.choice(len(comps), p=p)]
            while True:
                w = rng.standard_gamma(eta[list(J)])
                total = w.sum()
                if total == 0.0:
                    continue
                s = w / total
                if np.any(s < t):
                    return block_matrix(d, J, s)

        return Truncation(self.d, epsilon, mass, neglected, sampler)

    def is_doubly_stochastic_supported(self):
        return not self.rates

    def transpose_pushforward(self):
        if self.rates:
            raise DualityPreconditionError("Dirichlet splitting is not doubly stochastic")
        return ZeroMeasure(self.d)

    def scaled(self, factor):
        return DirichletSplitting(self.eta, {J: factor * c for J, c in self.rates.items()})


def harmonic_matrix(d: int, i: int, J: Sequence[int], s: float) -> np.ndarray:
    U = np.eye(d)
    U[i, i] = s
    U[i, list(J)] = (1.0 - s) / len(J)
    return U


def harmonic_mass(eta: float, a: float) -> float:
    """``int_0^a s**(eta - 1) / (1 - s) ds`` for ``0 <= a < 1``."""
    if a <= 0.0:
        return 0.0
    return float(a ** eta / eta * special.hyp2f1(eta, 1.0, eta + 1.0, a))


def _sample_harmonic_s(eta, a, rng, m1, m_total):
    # Two-piece rejection: s**(eta-1) proposal on (0, c), 1/(1-s) proposal on (c, a).
    c = min(0.5, a)
    if rng.random() * m_total < m1:
        while True:
            s = c * rng.random() ** (1.0 / eta)
            if rng.random() * (1.0 - s) <= 1.0 - c:
                return s
    peak = max(c ** (eta - 1.0), a ** (eta - 1.0))
    while True:
        s = 1.0 - (1.0 - c) * ((1.0 - a) / (1.0 - c)) ** rng.random()
        if rng.random() * peak <= s ** (eta - 1.0):
            return s


class HarmonicSplitting(CoordinationMeasure):
    """Rates ``c_iJ s**(eta_i - 1) / (1 - s) ds``: chains at ``i`` stay w.p. ``s``, else spread evenly over ``J``.

    Rows other than ``i`` of the sampled matrix are identity rows. The total
    mass is infinite; only ``V_eps`` truncations are finite.
    """

    family = "harmonic-splitting"
    finite = False

    def __init__(self, eta, rates: Mapping[tuple[int, Sequence[int]], float]):
        self.eta = _check_eta(eta)
        self.d = len(self.eta)
        clean = {}
        for (i, J), c in rates.items():
            J = tuple(sorted(set(int(j) for j in J)))
            i = int(i)
            if not J or i in J or not all(0 <= j < self.d for j in J + (i,)):
                raise ShapeError(f"invalid harmonic component (i={i}, J={J})")
            if c < 0:
                raise InvariantError(f"negative rate {c} for component ({i}, {J})")
            if c > 0:
                clean[(i, J)] = clean.get((i, J), 0.0) + float(c)
        self.rates = clean

    def __repr__(self):
        return f"HarmonicSplitting(d={self.d}, components={len(self.rates)})"

    def integrability_value(self):
        total = 0.0
        for (i, J), c in self.rates.items():
            v = c / self.eta[i]
            if not np.isfinite(v):
                raise InfiniteMassError(f"component (i={i}, J={J}) is not integrable")
            total += v
        return float(total)

    def monomial_integral(self, K):
        K = _as_exponents(K, self.d)
        if not _offdiag_any(K):
            if self.rates:
                raise UndefinedIntegralError(
                    "pure-diagonal monomial diverges for the harmonic splitting measure")
            return 0.0
        total = 0.0
        for (i, J), c in self.rates.items():
            off = K.copy()
            np.fill_diagonal(off, 0)
            if off.sum() != off[i, list(J)].sum():
                continue
            m = int(off[i, list(J)].sum())
            total += c * float(special.beta(K[i, i] + self.eta[i], m)) / len(J) ** m
        return total

    def diagonal_deficit(self, b):
        return float(sum(c * sum(1.0 / (self.eta[i] + k) for k in range(int(b[i])))
                         for (i, J), c in self.rates.items()))

    def truncate(self, epsilon=DEFAULT_EPSILON):
        _check_epsilon(epsilon)
        a = 1.0 - epsilon
        comps, masses, pieces = [], [], []
        neglected = 0.0
        for (i, J), c in self.rates.items():
            eta = float(self.eta[i])
            m_total = harmonic_mass(eta, a)
            comps.append((i, J))
            masses.append(c * m_total)
            pieces.append((eta, harmonic_mass(eta, min(0.5, a)), m_total))
            neglected += c * (1.0 - a ** eta) / eta
        mass = float(sum(masses))
        if mass == 0.0:
            return Truncation(self.d, epsilon, 0.0, neglected)
        p = np.array(masses) / mass
        d = self.d

        def sampler(rng):
            k = rng.choice(len(comps), p=p)
            i, J = comps[k]
            eta, m1, m_total = pieces[k]
            return harmonic_matrix(d, i, J, _sample_harmonic_s(eta, a, rng, m1, m_total))

        return Truncation(self.d, epsilon, mass, neglected, sampler)

    def is_doubly_stochastic_supported(self):
        return not self.rates

    def transpose_pushforward(self):
        if self.rates:
            raise DualityPreconditionError("harmonic splitting is not doubly stochastic")
        return ZeroMeasure(self.d)

    def scaled(self, factor):
        return HarmonicSplitting(self.eta, {k: factor * c for k, c in self.rates.items()})


class InstantExchange(CoordinationMeasure):
    """At rate ``c_J`` each row ``i`` in ``J`` is an independent Dirichlet vector on ``J``.

    Row ``i`` has parameter ``kappa / |J|`` off the diagonal and
    ``eta_i - kappa (|J| - 1) / |J|`` on it, so the parameters sum to ``eta_i``
    and a single chain jumps ``i -> j`` at rate ``sum_J c_J kappa / (eta_i |J|)``.
    """

    family = "instant-exchange"

    def __init__(self, eta, kappa: float, rates: Mapping[Sequence[int], float]):
        self.eta = _check_eta(eta)
        self.d = len(self.eta)
        if not 0 < kappa < self.eta.min():
            raise InvariantError(f"kappa must lie in (0, min eta) = (0, {self.eta.min()})")
        self.kappa = float(kappa)
        self.rates = _check_subsets(rates, self.d)

    def __repr__(self):
        return f"InstantExchange(d={self.d}, kappa={self.kappa}, sets={len(self.rates)})"

    def row_parameters(self, i: int, J: Sequence[int]) -> np.ndarray:
        n = len(J)
        off = self.kappa / n
        return np.array([self.eta[i] - off * (n - 1) if j == i else off for j in J])

    def integrability_value(self):
        return float(sum(c * sum(self.kappa * (len(J) - 1) / (len(J) * self.eta[i]) for i in J)
                         for J, c in self.rates.items()))

    def monomial_integral(self, K):
        K = _as_exponents(K, self.d)
        total = 0.0
        for J, c in self.rates.items():
            outside = [k for k in range(self.d) if k not in J]
            if any(K[k, j] for k in outside for j in range(self.d) if j != k):
                continue
            if any(K[i, j] for i in J for j in outside):
                continue
            val = 1.0
            for i in J:
                val *= dirichlet_moment(self.row_parameters(i, J), K[i, list(J)])
            total += c * val
        return total

    def diagonal_deficit(self, b):
        total = 0.0
        for J, c in self.rates.items():
            keep = 1.0
            for i in J:
                alpha = self.row_parameters(i, J)[list(J).index(i)]
                keep *= dirichlet_moment([alpha, self.eta[i] - alpha], [b[i], 0])
            total += c * (1.0 - keep)
        return float(total)

    def _stay_tail(self, i, J, t):
        alpha = self.row_parameters(i, J)[list(J).index(i)]
        beta = self.eta[i] - alpha
        p_out = float(stats.beta.sf(t, alpha, beta))
        # E[(1 - s) 1{s >= t}] for s ~ Beta(alpha, beta)
        tail = beta / (alpha + beta) * float(stats.beta.sf(t, alpha, beta + 1.0))
        return p_out, tail

    def truncate(self, epsilon=DEFAULT_EPSILON):
        _check_epsilon(epsilon)
        t = 1.0 - epsilon
        comps, masses = [], []
        neglected = 0.0
        for J, c in self.rates.items():
            outs = [self._stay_tail(i, J, t) for i in J]
            p_all_out = float(np.prod([po for po, _ in outs]))
            for k, (_, tail) in enumerate(outs):
                others = np.prod([po for m, (po, _) in enumerate(outs) if m != k])
                neglected += c * tail * others
            if p_all_out < 1.0:
                comps.append(J)
                masses.append(c * (1.0 - p_all_out))
        mass = float(sum(masses))
        if mass == 0.0:
            return Truncation(self.d, epsilon, 0.0, neglected)
        p = np.array(masses) / mass
        params = {J: [self.row_parameters(i, J) for i in J] for J in comps}
        d = self.d

        def sampler(rng):
            J = comps[rng.choice(len(comps), p=p)]
            while True:
                U = np.eye(d)
                stays = []
                for i, alpha in zip(J, params[J]):
                    w = rng.standard_gamma(alpha)
                    total = w.sum()
                    if total == 0.0:
                        break
                    U[i, :] = 0.0
                    U[i, list(J)] = w / total
                    stays.append(U[i, i])
                else:
                    if min(stays) < t:
                        return U

        return Truncation(self.d, epsilon, mass, neglected, sampler)

    def is_doubly_stochastic_supported(self):
        return not self.rates

    def transpose_pushforward(self):
        if self.rates:
            raise DualityPreconditionError("instant exchange is not doubly stochastic")
        return ZeroMeasure(self.d)

    def scaled(self, factor):
        return InstantExchange(self.eta, self.kappa, {J: factor * c for J, c in self.rates.items()})


def all_subsets(d: int, min_size: int = 2):
    """Index sets of ``range(d)`` with at least ``min_size`` elements, by size then lexicographic."""
    for size in range(min_size, d + 1):
        yield from combinations(range(d), size)
