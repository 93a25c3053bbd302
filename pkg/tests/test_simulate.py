import json
import math

import numpy as np
import pytest
from scipy.linalg import expm

from dicekit import combinatorics as cb
from dicekit.errors import InvalidDimensionError, PreconditionError, ShapeError
from dicekit.measures import AtomicMeasure, HarmonicSplitting, ZeroMeasure
from dicekit.rates import DiceParams, build_generator
from dicekit.simulate import (
    CoordinatedEvent,
    GraphicalSampler,
    IndividualEvent,
    SimulationSpec,
    StatReport,
    consistency_statistical_test,
    default_initial,
    empirical_frequency,
    exchangeability_statistical_test,
    final_state_histogram,
    restrict_trajectory,
    simulate_graphical,
    write_events_jsonl,
)
from dicekit.stats import path_rng

SWAP = [[0.0, 1.0], [1.0, 0.0]]
HALF = [[0.5, 0.5], [0.5, 0.5]]


def atomic_params(d=2, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.2, 1.5, size=(d, d))
    atoms = [(rng.uniform(0.5, 1.5), rng.dirichlet(np.ones(d), size=d)) for _ in range(2)]
    return DiceParams(A, AtomicMeasure(atoms))


class TestSpec:
    @pytest.mark.parametrize("kw", [{"horizon": -1.0}, {"horizon": 1.0, "epsilon": 0.0},
                                    {"horizon": 1.0, "epsilon": 1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimulationSpec(2, DiceParams.independent(np.zeros((2, 2))), **kw)

    def test_length_mismatch(self):
        spec = SimulationSpec(3, DiceParams.independent(np.ones((2, 2))), 1.0)
        with pytest.raises(ShapeError):
            simulate_graphical(spec, (0, 1))

    def test_bad_type(self):
        spec = SimulationSpec(2, DiceParams.independent(np.ones((2, 2))), 1.0)
        with pytest.raises(InvalidDimensionError):
            simulate_graphical(spec, (0, 2))


class TestGraphical:
    def test_no_rates_no_events(self):
        p = DiceParams(np.zeros((3, 3)), ZeroMeasure(3))
        traj = simulate_graphical(SimulationSpec(4, p, 100.0), (0, 1, 2, 0))
        assert traj.events == ()
        assert traj.final() == (0, 1, 2, 0)

    def test_swap_dynamics(self):
        c, T = 2.5, 3.0
        p = DiceParams(np.zeros((2, 2)), AtomicMeasure([(c, SWAP)]))
        sampler = GraphicalSampler(p)
        counts = []
        for k in range(2000):
            traj = sampler.run((0, 1), T, path_rng(11, k))
            x = (0, 1)
            for ev in traj.events:
                assert isinstance(ev, CoordinatedEvent)
                x = (1 - x[0], 1 - x[1])
                assert dict(ev.moves) == {0: x[0], 1: x[1]}
            assert traj.final() == x
            counts.append(len(traj.events))
        # Poisson(cT) event counts, i.e. Exp(c) gaps
        counts = np.array(counts)
        assert abs(counts.mean() - c * T) < 4 * math.sqrt(c * T / len(counts))
        assert abs(counts.var() - c * T) < 0.15 * c * T

    def test_identity_outcomes_logged(self):
        p = DiceParams(np.zeros((2, 2)), AtomicMeasure([(5.0, HALF)]))
        traj = GraphicalSampler(p).run((0, 1), 4.0, path_rng(0, 0))
        idle = [ev for ev in traj.events if not ev.moves]
        assert idle
        assert len(list(traj.replay())) == 1 + len(traj.events) - len(idle)

    def test_identity_atom_never_fires(self):
        p = DiceParams(np.zeros((2, 2)), AtomicMeasure([(5.0, np.eye(2))]))
        assert GraphicalSampler(p).run((0, 1), 2.0, path_rng(0, 0)).events == ()

    def test_times_increase(self):
        traj = GraphicalSampler(atomic_params(3)).run((0, 1, 2, 0), 5.0, path_rng(1, 0))
        times = [ev.time for ev in traj.events]
        assert times == sorted(times) and len(set(times)) == len(times)
        assert all(0 < t <= 5.0 for t in times)

    def test_deterministic(self, tmp_path):
        spec = SimulationSpec(3, atomic_params(), 2.0, seed=42)
        a, b = simulate_graphical(spec, (0, 1, 0)), simulate_graphical(spec, (0, 1, 0))
        a.to_csv(tmp_path / "a.csv")
        b.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert a.event_records() == b.event_records()

    def test_transition_probabilities_match_generator(self):
        p = atomic_params()
        Q = build_generator(2, p)
        x0, T, paths = (0, 1), 0.3, 100_000
        finals = GraphicalSampler(p).final_states(x0, T, seed=5, paths=paths)
        probs = expm(Q.Q * T)[Q.index(x0)]
        counts = np.zeros(4)
        for x in finals:
            counts[cb.config_index(x, 2)] += 1
        freq = counts / paths
        se = np.sqrt(probs * (1 - probs) / paths)
        assert np.all(np.abs(freq - probs) <= 3 * se + 1e-12)

    @pytest.mark.parametrize("x0", [(0, 0), (0, 1), (1, 1)])
    def test_thinning_exit_rate(self, x0):
        # censored exponential MLE for the first state-changing event
        p = atomic_params(seed=3)
        q = -build_generator(2, p).Q
        expected = q[cb.config_index(x0, 2), cb.config_index(x0, 2)]
        sampler = GraphicalSampler(p)
        T, jumps, exposure = 1.0, 0, 0.0
        for k in range(100_000):
            traj = sampler.run(x0, T, path_rng(8, k))
            first = next((ev.time for ev in traj.events if ev.moves), None)
            if first is None:
                exposure += T
            else:
                jumps += 1
                exposure += first
        rate = jumps / exposure
        assert abs(rate - expected) <= 3 * rate / math.sqrt(jumps)


class TestRestrict:
    def test_full_is_identity(self):
        traj = GraphicalSampler(atomic_params()).run((0, 1, 1), 2.0, path_rng(0, 0))
        assert restrict_trajectory(traj, 3) is traj

    def test_too_large(self):
        traj = GraphicalSampler(atomic_params()).run((0, 1), 1.0, path_rng(0, 0))
        with pytest.raises(ShapeError):
            restrict_trajectory(traj, 3)

    def test_independent_chains(self):
        p = DiceParams.independent([[0, 1.0, 0.5], [0.3, 0, 1.0], [1.0, 1.0, 0]])
        traj = GraphicalSampler(p).run((0, 1, 2, 0), 4.0, path_rng(3, 0))
        sub = restrict_trajectory(traj, 2)
        assert sub.events == tuple(ev for ev in traj.events if ev.particle < 2)
        assert sub.final() == traj.final()[:2]

    def test_coordinated_moves_filtered(self):
        traj = GraphicalSampler(atomic_params(3, seed=4)).run((0, 1, 2, 2), 3.0, path_rng(2, 0))
        sub = restrict_trajectory(traj, 2)
        for t in np.linspace(0, 3.0, 13):
            assert sub.state_at(t) == traj.state_at(t)[:2]
        assert all(ev.moves for ev in sub.events)


class TestEmpiricalFrequency:
    def test_initial(self):
        traj = GraphicalSampler(atomic_params()).run((0, 0, 1, 1), 1.0, path_rng(0, 0))
        np.testing.assert_array_equal(empirical_frequency(traj).at(0.0), [0.5, 0.5])

    def test_lattice_values(self):
        n = 5
        traj = GraphicalSampler(atomic_params(3)).run(default_initial(n, 3), 3.0, path_rng(1, 0))
        R = empirical_frequency(traj)
        assert np.allclose(R.values.sum(axis=1), 1.0)
        assert np.allclose(R.values * n, np.round(R.values * n))

    def test_right_continuous(self):
        p = DiceParams(np.zeros((2, 2)), AtomicMeasure([(1.0, SWAP)]))
        traj = GraphicalSampler(p).run((0, 0, 0), 5.0, path_rng(4, 0))
        t1 = traj.events[0].time
        R = empirical_frequency(traj)
        np.testing.assert_array_equal(R.at(t1), [0.0, 1.0])
        np.testing.assert_array_equal(R.at(np.nextafter(t1, 0)), [1.0, 0.0])

    def test_averaging_concentration(self):
        n = 1000
        p = DiceParams(np.zeros((2, 2)), AtomicMeasure([(1.0, HALF)]))
        traj = GraphicalSampler(p).run(default_initial(n, 2), 5.0, path_rng(6, 0))
        t1 = traj.events[0].time
        r = empirical_frequency(traj).at(t1)
        assert abs(r[0] - 0.5) <= 4 * 0.5 / math.sqrt(n)

    def test_requires_particles(self):
        traj = GraphicalSampler(atomic_params()).run((), 1.0, path_rng(0, 0))
        with pytest.raises(ShapeError):
            empirical_frequency(traj)


class TestExport:
    def test_csv_columns(self, tmp_path):
        traj = GraphicalSampler(atomic_params()).run((0, 1), 1.0, path_rng(0, 0))
        traj.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "time,x1,x2"
        assert lines[1] == "0,1,2"

    def test_jsonl_one_based(self, tmp_path):
        events = (IndividualEvent(0.5, 0, 0, 1),
                  CoordinatedEvent(0.7, np.array(SWAP), ((0, 0), (1, 1))))
        from dicekit.simulate import Trajectory
        traj = Trajectory(2, (0, 0), events, 1.0)
        write_events_jsonl(traj.event_records(), tmp_path / "e.jsonl")
        recs = [json.loads(line) for line in (tmp_path / "e.jsonl").read_text().splitlines()]
        assert recs[0] == {"time": 0.5, "kind": "individual", "particle": 1, "from": 1, "to": 2}
        assert recs[1]["moves"] == [[1, 1], [2, 2]]
        assert traj.final() == (0, 1)

    def test_histogram(self):
        assert final_state_histogram([(0, 1), (0, 1), (1, 1)]) == {"1,2": 2, "2,2": 1}


class TestStatReport:
    @pytest.mark.parametrize("p,oracle,warnings,verdict", [
        (0.5, {}, [], "pass"),
        (0.0005, {}, [], "fail"),
        (0.5, {"a": 0.0006, "b": 0.9}, [], "pass"),
        (0.5, {"a": 0.0004, "b": 0.9}, [], "fail"),
        (0.5, {}, ["low power"], "warn"),
    ])
    def test_verdict(self, p, oracle, warnings, verdict):
        assert StatReport("x", 1.0, 1, p, oracle, warnings).verdict == verdict


class TestConsistency:
    @pytest.mark.parametrize("n,m,d", [(3, 2, 2), (4, 2, 2), (3, 1, 3)])
    def test_restriction_commutes(self, n, m, d):
        rep = consistency_statistical_test(atomic_params(d, seed=n + d), n, m, 1.0,
                                           paths=20_000, seed=17)
        assert rep.verdict == "pass", rep.as_dict()
        assert set(rep.oracle_p_values) == {"restricted_n", "direct_m"}

    def test_independent_chains_single_particle(self):
        p = DiceParams.independent([[0, 1.0], [0.5, 0]])
        rep = consistency_statistical_test(p, 3, 1, 1.0, paths=5000, seed=2)
        assert rep.verdict == "pass"

    def test_mismatched_rates_fail(self):
        p = atomic_params()
        other = DiceParams(p.A * 2.0, p.nu)
        rep = consistency_statistical_test(p, 3, 2, 1.0, paths=20_000, seed=3, params_m=other)
        assert rep.p_value < 1e-3
        assert rep.verdict == "fail"

    def test_low_power_warns(self):
        rep = consistency_statistical_test(atomic_params(3), 3, 2, 1.0, paths=300, seed=1)
        assert rep.warnings

    def test_bad_m(self):
        with pytest.raises(ShapeError):
            consistency_statistical_test(atomic_params(), 2, 3, 1.0, paths=10, seed=0)


class TestExchangeability:
    def test_partition_preserving(self):
        rep = exchangeability_statistical_test(atomic_params(), (0, 0, 1), (1, 0, 2), 1.0,
                                               paths=20_000, seed=9)
        assert rep.verdict == "pass", rep.as_dict()

    def test_precondition(self):
        with pytest.raises(PreconditionError):
            exchangeability_statistical_test(atomic_params(), (0, 0, 1), (2, 1, 0), 1.0,
                                             paths=10, seed=0)
