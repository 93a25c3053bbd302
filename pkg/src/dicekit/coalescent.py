"""Multitype Lambda-coalescent with multiple switching.

The state is a typed partition of ``{0, ..., n-1}``.  Two independent
mechanisms act on it:

* coalescence: a set ``J`` of blocks merges into one block of type ``i``;
* switching: block types evolve as a dice process (``DiceParams``) on the
  blocks, blocks playing the role of particles.

Merger rates depend on the blocks only through the type counts ``b`` of all
blocks and ``c`` of the merging ones, which is what makes the rates
exchangeable.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import combinatorics as cb
from .errors import (
    InvalidDimensionError,
    InvalidTransitionError,
    InvariantError,
    PreconditionError,
    ResourceLimitError,
    ShapeError,
)
from .measures import DEFAULT_EPSILON
from .rates import DiceParams
from .simulate import StatReport, roll_rows
from .stats import path_rng, two_sample_chi2

DEFAULT_BLOCK_CAP = 12


@dataclass(frozen=True)
class TypedPartition:
    """Blocks sorted internally and ordered by least element; one type per block."""
    blocks: tuple
    types: tuple

    def __post_init__(self):
        if len(self.blocks) != len(self.types):
            raise ShapeError("need exactly one type per block")
        pairs = sorted(((tuple(sorted(B)), t) for B, t in zip(self.blocks, self.types)),
                       key=lambda bt: bt[0][0] if bt[0] else -1)
        if any(not B for B, _ in pairs):
            raise InvariantError("blocks must be nonempty")
        elems = [e for B, _ in pairs for e in B]
        if sorted(elems) != list(range(len(elems))):
            raise InvariantError(f"blocks must partition 0..{len(elems) - 1}")
        if any(t < 0 for _, t in pairs):
            raise InvalidDimensionError("types must be nonnegative")
        object.__setattr__(self, "blocks", tuple(B for B, _ in pairs))
        object.__setattr__(self, "types", tuple(int(t) for _, t in pairs))

    @classmethod
    def singletons(cls, types: Sequence[int]) -> "TypedPartition":
        return cls(tuple((l,) for l in range(len(types))), tuple(types))

    @property
    def n(self) -> int:
        return sum(len(B) for B in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def type_counts(self, d: int) -> tuple:
        if self.types and max(self.types) >= d:
            raise InvalidDimensionError(f"type {max(self.types) + 1} exceeds d={d}")
        return tuple(self.types.count(k) for k in range(d))

    def restrict(self, m: int) -> "TypedPartition":
        """Drop elements ``>= m`` and the blocks this empties."""
        if not 0 <= m <= self.n:
            raise ShapeError(f"cannot restrict a partition of {self.n} to {m}")
        kept = [(tuple(e for e in B if e < m), t) for B, t in zip(self.blocks, self.types)]
        kept = [(B, t) for B, t in kept if B]
        return TypedPartition(tuple(B for B, _ in kept), tuple(t for _, t in kept))

    def serialize(self) -> str:
        """1-based text form, e.g. ``"1,3:2|2:1"``."""
        return "|".join(",".join(str(e + 1) for e in B) + f":{t + 1}"
                        for B, t in zip(self.blocks, self.types))

    @classmethod
    def parse(cls, text: str) -> "TypedPartition":
        text = text.strip()
        if not text:
            return cls((), ())
        blocks, types = [], []
        for chunk in text.split("|"):
            elems, _, typ = chunk.partition(":")
            if not typ:
                raise ShapeError(f"block {chunk!r} lacks a ':type' suffix")
            blocks.append(tuple(int(e) - 1 for e in elems.split(",")))
            types.append(int(typ) - 1)
        return cls(tuple(blocks), tuple(types))


def coal_apply(pi: TypedPartition, J: Sequence[int], i: int) -> TypedPartition:
    """Merge the blocks indexed by ``J`` into one block of type ``i``."""
    J = sorted(set(J))
    if not J:
        raise ShapeError("J must name at least one block")
    if J[0] < 0 or J[-1] >= len(pi):
        raise IndexError(f"block index out of range 0..{len(pi) - 1}: {J}")
    if i < 0:
        raise InvalidDimensionError(f"invalid type {i}")
    merged = tuple(e for k in J for e in pi.blocks[k])
    rest = [k for k in range(len(pi)) if k not in J]
    return TypedPartition(tuple(pi.blocks[k] for k in rest) + (merged,),
                          tuple(pi.types[k] for k in rest) + (i,))


def muta_apply(pi: TypedPartition, new_types: Sequence[int]) -> TypedPartition:
    if len(new_types) != len(pi):
        raise ShapeError(f"expected {len(pi)} types, got {len(new_types)}")
    return TypedPartition(pi.blocks, tuple(new_types))


class MergerRates(Protocol):
    d: int

    def rate_counts(self, b: Sequence[int], c: Sequence[int], i: int) -> float:
        """Rate at which one given set of blocks with type counts ``c`` merges into type ``i``."""


@dataclass(frozen=True, eq=False)
class CoalescenceSpec:
    """Binary same-type mergers at rate ``rho[i]`` plus atomic ``Q_i`` on ``[0, 1]^d``.

    ``atoms[i]`` is a sequence of ``(weight, u)``: at rate ``weight`` each
    block of type ``k`` joins independently with probability ``u_k`` and the
    participants merge into a block of type ``i``.
    """
    d: int
    rho: tuple = ()
    atoms: Mapping = field(default_factory=dict)

    def __post_init__(self):
        rho = np.zeros(self.d) if len(self.rho) == 0 else np.asarray(self.rho, dtype=float)
        if rho.ndim == 2:
            off = rho[~np.eye(self.d, dtype=bool)]
            if np.any(off != 0):
                raise PreconditionError(
                    "rho_ik must vanish for i != k: single-block type changes belong "
                    "to the switching mechanism")
            rho = np.diag(rho).copy()
        if rho.shape != (self.d,) or rho.min(initial=0.0) < 0:
            raise InvariantError("rho must be a nonnegative length-d vector")
        object.__setattr__(self, "rho", tuple(rho.tolist()))
        clean = {}
        for i, lst in dict(self.atoms).items():
            i = int(i)
            if not 0 <= i < self.d:
                raise InvalidDimensionError(f"target type {i + 1} out of range")
            items = []
            for w, u in lst:
                u = np.asarray(u, dtype=float)
                if u.shape != (self.d,) or u.min() < 0 or u.max() > 1:
                    raise InvariantError(f"atom vector {u.tolist()} must lie in [0, 1]^{self.d}")
                if not np.any(u):
                    raise InvariantError("atoms at the zero vector would merge no blocks")
                if w < 0:
                    raise InvariantError(f"negative atom weight {w}")
                if w > 0:
                    items.append((float(w), tuple(u.tolist())))
            if items:
                clean[i] = tuple(items)
        object.__setattr__(self, "atoms", clean)

    @classmethod
    def disabled(cls, d: int) -> "CoalescenceSpec":
        return cls(d)

    @classmethod
    def kingman(cls, rho: float = 1.0) -> "CoalescenceSpec":
        return cls(1, (rho,))

    def rate_counts(self, b, c, i) -> float:
        rate = 0.0
        if sum(c) == 2 and c[i] == 2:
            rate += self.rho[i]
        for w, u in self.atoms.get(i, ()):
            term = w
            for uk, bk, ck in zip(u, b, c):
                term *= uk ** ck * (1.0 - uk) ** (bk - ck)
            rate += term
        return rate


def _is_noop(c, i) -> bool:
    return sum(c) == 0 or (sum(c) == 1 and c[i] == 1)


def coal_rate(pi: TypedPartition, J: Sequence[int], i: int, spec: MergerRates) -> float:
    """Rate at which exactly the blocks ``J`` merge into one block of type ``i``.

    A single block changing its type counts as a merger of one block, so it
    keeps the atom term.  Sets that change nothing have rate 0.
    """
    J = sorted(set(J))
    if any(not 0 <= k < len(pi) for k in J):
        raise IndexError(f"block index out of range: {J}")
    b = pi.type_counts(spec.d)
    c = [0] * spec.d
    for k in J:
        c[pi.types[k]] += 1
    if _is_noop(c, i):
        return 0.0
    return float(spec.rate_counts(b, c, i))


def switch_rate(pi: TypedPartition, new_types: Sequence[int], p: DiceParams) -> float:
    """Rate of the switching move ``types -> new_types``: the dice rate on block types."""
    from .rates import gamma
    if tuple(new_types) == pi.types:
        raise InvalidTransitionError("new types equal the current types")
    if len(new_types) != len(pi):
        raise ShapeError(f"expected {len(pi)} types, got {len(new_types)}")
    b, K = cb.counts_from_configs(pi.types, new_types, p.d)
    return gamma(b, K, p)


@dataclass(frozen=True, eq=False)
class CoalescentParams:
    coal: MergerRates
    switch: DiceParams

    def __post_init__(self):
        if self.coal.d != self.switch.d:
            raise ShapeError("coalescence and switching must share d")

    @property
    def d(self) -> int:
        return self.switch.d


@dataclass(frozen=True, eq=False)
class CoalescentEvent:
    time: float
    kind: str
    state: TypedPartition


@dataclass(frozen=True, eq=False)
class CoalescentTrajectory:
    initial: TypedPartition
    events: tuple
    horizon: float

    def final(self) -> TypedPartition:
        return self.events[-1].state if self.events else self.initial

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "partition"])
            w.writerow([format(0.0, ".17g"), self.initial.serialize()])
            for ev in self.events:
                w.writerow([format(ev.time, ".17g"), ev.state.serialize()])


def _sample_without_replacement(items: list, k: int, rng) -> list:
    items = list(items)
    for pos, u in enumerate(rng.random(k).tolist()):
        swap = pos + int(u * (len(items) - pos))
        items[pos], items[swap] = items[swap], items[pos]
    return items[:k]


class CoalescentSampler:
    def __init__(self, params: CoalescentParams, epsilon: float = DEFAULT_EPSILON,
                 cap: int = DEFAULT_BLOCK_CAP):
        self.params = params
        self.d = params.d
        self.cap = cap
        self.truncation = params.switch.nu.truncate(epsilon)
        A = params.switch.A
        self.out_rate = A.sum(axis=1).tolist()
        self.target_cum = [np.cumsum(A[i]).tolist() for i in range(self.d)]
        self._mergers: dict = {}

    def mergers(self, b: tuple) -> tuple:
        """``(c, i, total_rate)`` for every effective merger class at type counts ``b``."""
        entry = self._mergers.get(b)
        if entry is None:
            out = []
            for c in itertools.product(*(range(bk + 1) for bk in b)):
                mult = math.prod(math.comb(bk, ck) for bk, ck in zip(b, c))
                for i in range(self.d):
                    if _is_noop(c, i):
                        continue
                    rate = self.params.coal.rate_counts(b, c, i) * mult
                    if rate > 0:
                        out.append((c, i, rate))
            entry = (tuple(out), list(itertools.accumulate(r for _, _, r in out)))
            self._mergers[b] = entry
        return entry

    def run(self, pi0: TypedPartition, horizon: float, rng: np.random.Generator,
            stop_at_one: bool = False) -> CoalescentTrajectory:
        if pi0.n > self.cap:
            raise ResourceLimitError(f"n={pi0.n} exceeds the block cap {self.cap}")
        pi = pi0
        b = pi.type_counts(self.d)
        events = []
        t = 0.0
        coord = self.truncation.mass
        while True:
            if stop_at_one and len(pi) == 1:
                break
            classes, cum = self.mergers(b)
            merge_total = cum[-1] if cum else 0.0
            switch_total = sum(bk * self.out_rate[k] for k, bk in enumerate(b))
            total = merge_total + switch_total + coord
            if total <= 0.0:
                break
            t += rng.exponential(1.0 / total)
            if t > horizon:
                break
            u = rng.random() * total
            if u < merge_total:
                c, i, _ = classes[next(k for k, v in enumerate(cum) if v > u)]
                J = []
                for k in range(self.d):
                    if c[k]:
                        members = [idx for idx, tk in enumerate(pi.types) if tk == k]
                        J.extend(_sample_without_replacement(members, c[k], rng))
                pi = coal_apply(pi, J, i)
                events.append(CoalescentEvent(t, "coalescence", pi))
            elif u < merge_total + switch_total:
                v = u - merge_total
                idx = 0
                acc = self.out_rate[pi.types[0]]
                while acc <= v and idx < len(pi) - 1:
                    idx += 1
                    acc += self.out_rate[pi.types[idx]]
                k = pi.types[idx]
                tc = self.target_cum[k]
                j = next(m for m, cm in enumerate(tc) if cm > rng.random() * tc[-1])
                new = list(pi.types)
                new[idx] = j
                pi = muta_apply(pi, new)
                events.append(CoalescentEvent(t, "switch", pi))
            else:
                U = self.truncation.sample(rng)
                new = roll_rows(U, pi.types, rng)
                if tuple(new) != pi.types:
                    pi = muta_apply(pi, new)
                    events.append(CoalescentEvent(t, "switch", pi))
            b = pi.type_counts(self.d)
        return CoalescentTrajectory(pi0, tuple(events), float(horizon))


def simulate_coalescent(pi0: TypedPartition, params: CoalescentParams, horizon: float,
                        seed: int = 0, epsilon: float = DEFAULT_EPSILON,
                        rng: np.random.Generator | None = None,
                        cap: int = DEFAULT_BLOCK_CAP) -> CoalescentTrajectory:
    rng = path_rng(seed, 0) if rng is None else rng
    return CoalescentSampler(params, epsilon, cap).run(pi0, horizon, rng)


def time_to_mrca(pi0: TypedPartition, params: CoalescentParams | CoalescentSampler,
                 rng: np.random.Generator, epsilon: float = DEFAULT_EPSILON) -> float:
    """Time until one block remains; pass a sampler to reuse its rate cache across paths."""
    sampler = params if isinstance(params, CoalescentSampler) else CoalescentSampler(params, epsilon)
    traj = sampler.run(pi0, math.inf, rng, stop_at_one=True)
    if len(traj.final()) != 1:
        raise PreconditionError("the coalescent never reaches a single block")
    return traj.events[-1].time if traj.events else 0.0


def coalescent_consistency_test(params: CoalescentParams, n: int, m: int, horizon: float,
                                paths: int, seed: int, types0: Sequence[int] | None = None,
                                epsilon: float = DEFAULT_EPSILON) -> StatReport:
    """Chi-square test of ``restrict(pi_n(T), m)`` against ``pi_m(T)`` from singletons."""
    if not 1 <= m < n:
        raise ShapeError(f"need 1 <= m < n, got m={m}, n={n}")
    d = params.d
    types0 = tuple(l % d for l in range(n)) if types0 is None else tuple(types0)
    sampler = CoalescentSampler(params, epsilon)
    big = TypedPartition.singletons(types0)
    small = TypedPartition.singletons(types0[:m])
    a = [sampler.run(big, horizon, path_rng(seed, k, 8)).final().restrict(m).serialize()
         for k in range(paths)]
    b = [sampler.run(small, horizon, path_rng(seed, k, 9)).final().serialize()
         for k in range(paths)]
    chi = two_sample_chi2(a, b)
    return StatReport("coalescent-consistency", chi.statistic, chi.dof, chi.p_value, {},
                      list(chi.warnings), {"n": n, "m": m, "horizon": horizon, "paths": paths})
