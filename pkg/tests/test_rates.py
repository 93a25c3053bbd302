import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dicekit import combinatorics as cb
from dicekit.errors import (
    InvalidTransitionError,
    NonLumpableError,
    PreconditionError,
    ResourceLimitError,
)
from dicekit.measures import (
    AtomicMeasure,
    DirichletSplitting,
    HarmonicSplitting,
    InstantExchange,
    MultinomialSplitting,
    StochasticExchange,
    TotallyDependent,
    ZeroMeasure,
)
from dicekit.rates import (
    DiceParams,
    GeneratorMatrix,
    build_generator,
    check_consistency_equation,
    check_permutation_commutation,
    config_rate,
    gamma,
    lumped_generator,
)

SWAP = [[0.0, 1.0], [1.0, 0.0]]


def random_params(rng, d):
    A = rng.uniform(0, 2, size=(d, d))
    atoms = [(rng.uniform(0.2, 2.0), rng.dirichlet(np.ones(d), size=d)) for _ in range(2)]
    return DiceParams(A, AtomicMeasure(atoms))


def parametric_params(d):
    eta = [1.0, 2.0, 1.5][:d]
    sets = {tuple(range(d)): 0.8}
    A = np.ones((d, d)) * 0.5
    return [
        DiceParams(A, MultinomialSplitting(eta, sets)),
        DiceParams(A, DirichletSplitting(eta, sets)),
        DiceParams(A, HarmonicSplitting(eta, {(0, tuple(range(1, d))): 1.0})),
        DiceParams(A, InstantExchange(eta, 0.5, sets)),
        DiceParams(A, StochasticExchange(d, [(0, 1, 0.2, 0.7, 1.3)])),
        DiceParams(A, TotallyDependent({tuple((i + 1) % d for i in range(d)): 0.6})),
    ]


class TestGamma:
    def test_indicator_only(self):
        p = DiceParams([[0, 3], [0, 0]], ZeroMeasure(2))
        assert gamma((2, 1), ((1, 1), (0, 1)), p) == 3.0

    def test_swap_atom(self):
        p = DiceParams(np.zeros((2, 2)), AtomicMeasure([(1.5, SWAP)]))
        assert gamma((1, 1), ((0, 1), (1, 0)), p) == 1.5

    def test_swap_single_move_is_indicator(self):
        p = DiceParams([[0, 0.7], [0, 0]], AtomicMeasure([(1.5, SWAP)]))
        assert gamma((1, 1), ((0, 1), (0, 1)), p) == 0.7

    def test_diagonal_rejected(self):
        p = DiceParams.independent(np.ones((2, 2)))
        with pytest.raises(InvalidTransitionError):
            gamma((1, 1), ((1, 0), (0, 1)), p)


class TestConfigRate:
    def test_single_chain(self):
        p = DiceParams([[0, 2], [0, 0]], AtomicMeasure([(1.0, [[0.5, 0.5], [0, 1]])]))
        assert config_rate((0,), (1,), p) == pytest.approx(2.5)

    def test_joint_move(self):
        p = DiceParams(np.ones((2, 2)), AtomicMeasure([(1.0, [[0.5, 0.5], [0, 1]])]))
        assert config_rate((0, 0), (1, 1), p) == pytest.approx(0.25)

    def test_same_state(self):
        with pytest.raises(InvalidTransitionError):
            config_rate((0, 1), (0, 1), DiceParams.independent(np.ones((2, 2))))

    @given(st.integers(1, 4).flatmap(lambda n: st.tuples(
        st.lists(st.integers(0, 2), min_size=n, max_size=n),
        st.lists(st.integers(0, 2), min_size=n, max_size=n),
        st.permutations(range(n)))))
    @settings(max_examples=200, deadline=None)
    def test_relabelling_invariance(self, case):
        x, y, sigma = case
        if x == y:
            return
        p = random_params(np.random.default_rng(0), 3)
        xs, ys = cb.apply_permutation(x, sigma), cb.apply_permutation(y, sigma)
        assert config_rate(xs, ys, p) == config_rate(x, y, p)

    def test_totally_dependent_single_chain_rate(self):
        nu = TotallyDependent({(1, 1, 0): 0.7, (2, 0, 1): 0.4, (1, 2, 2): 0.2})
        p = DiceParams(np.zeros((3, 3)), nu)
        M = p.single_chain_generator()
        for i, j in itertools.permutations(range(3), 2):
            expected = sum(c for f, c in nu.rates.items() if f[i] == j)
            assert M[i, j] == pytest.approx(expected)


class TestGenerator:
    def test_single_chain(self):
        Q = build_generator(1, DiceParams.independent([[0, 1], [2, 0]]))
        np.testing.assert_array_equal(Q.Q, [[-1, 1], [2, -2]])

    def test_swap_only(self):
        Q = build_generator(2, DiceParams(np.zeros((2, 2)), AtomicMeasure([(1.0, SWAP)])))
        for x in Q.states:
            y = tuple(1 - v for v in x)
            for z in Q.states:
                if z != x:
                    assert Q.rate(x, z) == (1.0 if z == y else 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_rows_sum_to_zero(self, seed):
        Q = build_generator(3, random_params(np.random.default_rng(seed), 3))
        assert np.abs(Q.Q.sum(axis=1)).max() <= 1e-9

    def test_matches_config_rate(self):
        p = random_params(np.random.default_rng(9), 2)
        Q = build_generator(3, p)
        for x, y in itertools.permutations(Q.states, 2):
            assert Q.rate(x, y) == pytest.approx(config_rate(x, y, p), rel=1e-14)

    def test_cap(self):
        with pytest.raises(ResourceLimitError):
            build_generator(13, DiceParams.independent(np.ones((2, 2))))

    def test_csv(self, tmp_path):
        Q = build_generator(2, DiceParams.independent([[0, 1], [2, 0]]))
        Q.to_csv(tmp_path / "g.csv")
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert lines[0] == 'state,"1,1","1,2","2,1","2,2"'
        assert lines[1].startswith('"1,1",-2,1,1,0')


class TestConsistencyEquation:
    @pytest.mark.parametrize("d", [2, 3])
    def test_parametric_families(self, d):
        for p in parametric_params(d):
            assert check_consistency_equation(p, 3).max_residual <= 1e-9

    def test_inconsistent_array(self):
        def g(b, K):
            return 1.0 if (tuple(b), tuple(map(tuple, K))) == ((1, 0), ((0, 1), (0, 0))) else 0.0

        rep = check_consistency_equation(g, 2, d=2)
        assert rep.max_residual == pytest.approx(1.0)
        assert rep.worst[0] == (1, 0)

    @pytest.mark.parametrize("lam", [0.5, 3.0])
    def test_residual_scales(self, lam):
        def g(b, K):
            return 1.0 if (tuple(b), tuple(map(tuple, K))) == ((1, 0), ((0, 1), (0, 0))) else 0.0

        base = check_consistency_equation(g, 2, d=2).max_residual
        scaled = check_consistency_equation(lambda b, K: lam * g(b, K), 2, d=2).max_residual
        assert scaled == pytest.approx(lam * base)

    def test_scaled_measure_stays_consistent(self):
        p = parametric_params(2)[1]
        for lam in (0.1, 10.0):
            assert check_consistency_equation(p.with_nu(p.nu.scaled(lam)), 3).max_residual <= 1e-9 * lam


class TestLumping:
    @pytest.mark.parametrize("n,m", [(2, 1), (3, 2), (3, 1)])
    @pytest.mark.parametrize("d", [2, 3])
    def test_projective(self, n, m, d):
        p = random_params(np.random.default_rng(n * 10 + m + d), d)
        L = lumped_generator(build_generator(n, p), m)
        np.testing.assert_allclose(L.Q, build_generator(m, p).Q, atol=1e-9, rtol=0)

    def test_independent_chains(self):
        p = DiceParams.independent([[0, 1.3], [0.4, 0]])
        L = lumped_generator(build_generator(2, p), 1)
        np.testing.assert_allclose(L.Q, [[-1.3, 1.3], [0.4, -0.4]])

    def test_corrupted(self):
        Q = build_generator(2, DiceParams.independent([[0, 1.0], [1.0, 0]]))
        bad = Q.Q.copy()
        bad[1, 3] += 0.5
        bad[1, 1] -= 0.5
        with pytest.raises(NonLumpableError):
            lumped_generator(GeneratorMatrix(2, 2, bad), 1)


class TestPermutationCommutation:
    def test_all_permutations(self):
        Q = build_generator(4, random_params(np.random.default_rng(1), 2))
        for sigma in itertools.permutations(range(4)):
            assert check_permutation_commutation(Q, sigma) <= 1e-12

    def test_identity(self):
        Q = build_generator(3, random_params(np.random.default_rng(2), 2))
        assert check_permutation_commutation(Q, (0, 1, 2)) == 0.0

    def test_label_dependent_generator(self):
        # particle 1 flips at rate 1, particle 2 at rate 2
        Q = np.zeros((4, 4))
        for s, x in enumerate(cb.all_configurations(2, 2)):
            for l, rate in enumerate((1.0, 2.0)):
                y = list(x)
                y[l] = 1 - y[l]
                Q[s, cb.config_index(y, 2)] = rate
            Q[s, s] = -Q[s].sum()
        assert check_permutation_commutation(GeneratorMatrix(2, 2, Q), (1, 0)) == 1.0

    def test_partition_precondition(self):
        Q = build_generator(3, random_params(np.random.default_rng(3), 2))
        A = cb.induced_partition((0, 1, 0), 2)
        assert check_permutation_commutation(Q, (2, 1, 0), A) <= 1e-12
        with pytest.raises(PreconditionError):
            check_permutation_commutation(Q, (1, 0, 2), A)
