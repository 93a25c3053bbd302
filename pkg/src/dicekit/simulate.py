"""Exact path simulation of n-dice processes by the graphical construction.

Each particle carries an individual clock per target type (rate ``a_ij``)
and all particles share one clock of rate ``nu(V_eps)`` for coordinated
events.  At a coordinated event a matrix ``U`` is drawn from the truncated
measure and every particle at ``i`` rolls row ``i`` of ``U``.  Events in
which nobody moves are kept in the log but leave the state untouched.
"""

from __future__ import annotations

import bisect
import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import combinatorics as cb
from .errors import InvalidDimensionError, ShapeError
from .measures import DEFAULT_EPSILON, Truncation
from .rates import DiceParams, build_generator
from .stats import P_FLOOR, goodness_of_fit, path_rng, two_sample_chi2


@dataclass(frozen=True)
class IndividualEvent:
    time: float
    particle: int
    source: int
    target: int

    kind = "individual"

    @property
    def moves(self) -> tuple:
        return ((self.particle, self.target),)

    def as_record(self) -> dict:
        return {"time": self.time, "kind": self.kind, "particle": self.particle + 1,
                "from": self.source + 1, "to": self.target + 1}


@dataclass(frozen=True, eq=False)
class CoordinatedEvent:
    """``moves`` lists ``(particle, new_type)`` for the particles that changed type."""
    time: float
    matrix: np.ndarray
    moves: tuple

    kind = "coordinated"

    def as_record(self) -> dict:
        return {"time": self.time, "kind": self.kind,
                "matrix": [[float(v) for v in row] for row in self.matrix],
                "moves": [[l + 1, j + 1] for l, j in self.moves]}


@dataclass(frozen=True, eq=False)
class Trajectory:
    d: int
    initial: tuple
    events: tuple
    horizon: float

    @property
    def n(self) -> int:
        return len(self.initial)

    def replay(self):
        """Yield ``(time, configuration)`` at 0 and after every state-changing event."""
        x = list(self.initial)
        yield 0.0, tuple(x)
        for ev in self.events:
            if not ev.moves:
                continue
            for l, j in ev.moves:
                x[l] = j
            yield ev.time, tuple(x)

    def final(self) -> tuple:
        x = list(self.initial)
        for ev in self.events:
            for l, j in ev.moves:
                x[l] = j
        return tuple(x)

    def state_at(self, t: float) -> tuple:
        state = self.initial
        for time, x in self.replay():
            if time > t:
                break
            state = x
        return state

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time"] + [f"x{l + 1}" for l in range(self.n)])
            for time, x in self.replay():
                w.writerow([format(time, ".17g")] + [xi + 1 for xi in x])

    def event_records(self) -> list:
        return [ev.as_record() for ev in self.events]


@dataclass(frozen=True, eq=False)
class SimulationSpec:
    n: int
    params: DiceParams
    horizon: float
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError(f"horizon must be nonnegative, got {self.horizon}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")


def roll_rows(U: np.ndarray, x: Sequence[int], rng: np.random.Generator) -> list:
    """New types after every particle at ``i`` rolls row ``i`` of ``U``."""
    cum = np.cumsum(U, axis=1).tolist()
    last = len(cum) - 1
    return [min(bisect.bisect_right(cum[i], u), last) for i, u in zip(x, rng.random(len(x)).tolist())]


class GraphicalSampler:
    """Reusable sampler for one parameter set; truncation is computed once."""

    def __init__(self, params: DiceParams, epsilon: float = DEFAULT_EPSILON,
                 truncation: Truncation | None = None):
        self.params = params
        self.d = params.d
        self.epsilon = epsilon
        self.truncation = truncation if truncation is not None else params.nu.truncate(epsilon)
        A = params.A
        self.out_rate = A.sum(axis=1).tolist()
        self.target_cum = [np.cumsum(A[i]).tolist() for i in range(self.d)]

    def _check(self, x0):
        if any(not 0 <= xi < self.d for xi in x0):
            raise InvalidDimensionError(f"initial types must lie in 0..{self.d - 1}")

    def run(self, x0: Sequence[int], horizon: float, rng: np.random.Generator) -> Trajectory:
        self._check(x0)
        x = list(x0)
        events = []
        t = 0.0
        coord = self.truncation.mass
        out = self.out_rate
        while True:
            ind = sum(out[xi] for xi in x)
            total = ind + coord
            if total <= 0.0:
                break
            t += rng.exponential(1.0 / total)
            if t > horizon:
                break
            u = rng.random() * total
            if u < ind:
                l = 0
                acc = out[x[0]]
                while acc <= u and l < len(x) - 1:
                    l += 1
                    acc += out[x[l]]
                i = x[l]
                cum = self.target_cum[i]
                v = rng.random() * cum[-1]
                j = next(k for k, c in enumerate(cum) if c > v)
                x[l] = j
                events.append(IndividualEvent(t, l, i, j))
            else:
                U = self.truncation.sample(rng)
                new = roll_rows(U, x, rng)
                moves = tuple((l, j) for l, (i, j) in enumerate(zip(x, new)) if i != j)
                x = new
                events.append(CoordinatedEvent(t, U, moves))
        return Trajectory(self.d, tuple(x0), tuple(events), float(horizon))

    def final_states(self, x0, horizon, seed, paths, stream=0) -> list:
        return [self.run(x0, horizon, path_rng(seed, k, stream)).final() for k in range(paths)]


def simulate_graphical(spec: SimulationSpec, x0: Sequence[int],
                       rng: np.random.Generator | None = None) -> Trajectory:
    if len(x0) != spec.n:
        raise ShapeError(f"x0 has length {len(x0)}, expected {spec.n}")
    rng = path_rng(spec.seed, 0) if rng is None else rng
    return GraphicalSampler(spec.params, spec.epsilon).run(x0, spec.horizon, rng)


def restrict_trajectory(traj: Trajectory, m: int) -> Trajectory:
    """Path of the first ``m`` particles; events that move none of them are dropped."""
    if m > traj.n or m < 0:
        raise ShapeError(f"cannot restrict {traj.n} particles to {m}")
    if m == traj.n:
        return traj
    kept = []
    for ev in traj.events:
        if isinstance(ev, IndividualEvent):
            if ev.particle < m:
                kept.append(ev)
            continue
        moves = tuple((l, j) for l, j in ev.moves if l < m)
        if moves:
            kept.append(CoordinatedEvent(ev.time, ev.matrix, moves))
    return Trajectory(traj.d, traj.initial[:m], tuple(kept), traj.horizon)


@dataclass(frozen=True, eq=False)
class StepPath:
    """Right-continuous piecewise-constant path in the simplex."""
    times: np.ndarray
    values: np.ndarray

    def at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(k, 0)]


def empirical_frequency(traj: Trajectory) -> StepPath:
    if traj.n < 1:
        raise ShapeError("empirical frequency needs at least one particle")
    times, values = [], []
    for t, x in traj.replay():
        times.append(t)
        values.append(np.bincount(x, minlength=traj.d) / traj.n)
    return StepPath(np.array(times), np.array(values))


def default_initial(n: int, d: int) -> tuple:
    """Types assigned cyclically, ``(0, 1, ..., d-1, 0, ...)``."""
    return tuple(l % d for l in range(n))


def _config_counts(finals, m, d):
    counts = np.zeros(d ** m)
    for x in finals:
        counts[cb.config_index(x[:m], d)] += 1
    return counts


@dataclass
class StatReport:
    test: str
    statistic: float
    dof: int
    p_value: float
    oracle_p_values: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        # Bonferroni over the oracle goodness-of-fit checks.
        floor = P_FLOOR / max(len(self.oracle_p_values), 1)
        if self.p_value <= P_FLOOR or any(p <= floor for p in self.oracle_p_values.values()):
            return "fail"
        return "warn" if self.warnings else "pass"

    def as_dict(self) -> dict:
        return {"test": self.test, "statistic": self.statistic, "dof": self.dof,
                "p_value": self.p_value, "oracle_p_values": dict(self.oracle_p_values),
                "warnings": list(self.warnings), "verdict": self.verdict, **self.extra}


def consistency_statistical_test(params: DiceParams, n: int, m: int, horizon: float,
                                 paths: int, seed: int, x0: Sequence[int] | None = None,
                                 epsilon: float = DEFAULT_EPSILON,
                                 params_m: DiceParams | None = None) -> StatReport:
    """Chi-square test that the first ``m`` coordinates of the n-system match the m-system at time T.

    ``params_m`` overrides the parameters of the m-system (negative controls).
    When the truncation drops nothing, both samples are also tested against
    the exact marginal from the generator.
    """
    if not 1 <= m <= n:
        raise ShapeError(f"need 1 <= m <= n, got m={m}, n={n}")
    d = params.d
    x0 = default_initial(n, d) if x0 is None else tuple(x0)
    params_m = params if params_m is None else params_m
    big = GraphicalSampler(params, epsilon)
    small = GraphicalSampler(params_m, epsilon)
    fin_n = [x[:m] for x in big.final_states(x0, horizon, seed, paths, stream=1)]
    fin_m = small.final_states(x0[:m], horizon, seed, paths, stream=2)
    chi = two_sample_chi2(fin_n, fin_m)
    oracle = {}
    warnings = list(chi.warnings)
    if big.truncation.neglected == 0.0 and d ** m <= 4096:
        from scipy.linalg import expm
        Q = build_generator(m, params)
        probs = expm(Q.Q * horizon)[cb.config_index(x0[:m], d)]
        for name, fin in (("restricted_n", fin_n), ("direct_m", fin_m)):
            gof = goodness_of_fit(_config_counts(fin, m, d), probs)
            oracle[name] = gof.p_value
    return StatReport("consistency", chi.statistic, chi.dof, chi.p_value, oracle, warnings,
                      {"n": n, "m": m, "horizon": horizon, "paths": paths,
                       "neglected_integrability": big.truncation.neglected})


def exchangeability_statistical_test(params: DiceParams, x0: Sequence[int], sigma: Sequence[int],
                                     horizon: float, paths: int, seed: int,
                                     epsilon: float = DEFAULT_EPSILON) -> StatReport:
    """Compare the law of ``X(T)`` with that of ``X(T)`` relabelled by ``sigma``.

    ``sigma`` must preserve the partition induced by ``x0``.
    """
    from .errors import PreconditionError
    x0 = tuple(x0)
    cb.check_permutation(sigma, len(x0))
    if not cb.preserves_partition(sigma, cb.induced_partition(x0, params.d)):
        raise PreconditionError("sigma does not preserve the partition induced by x0")
    sampler = GraphicalSampler(params, epsilon)
    a = sampler.final_states(x0, horizon, seed, paths, stream=3)
    b = [cb.apply_permutation(x, sigma) for x in sampler.final_states(x0, horizon, seed, paths, stream=4)]
    chi = two_sample_chi2(a, b)
    return StatReport("exchangeability", chi.statistic, chi.dof, chi.p_value, {}, list(chi.warnings))


def write_events_jsonl(events_records: list, path) -> None:
    with open(path, "w") as fh:
        for rec in events_records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def final_state_histogram(finals) -> dict:
    return {cb.format_config(x): c for x, c in sorted(Counter(finals).items())}
