"""Acceptance criteria AC1 to AC10, each at its stated tolerance and scale.

AC10 comes first: the other checks rely on the closed-form monomial integrals.
"""

import itertools
import math
import time

import numpy as np
import pytest
from oracles import exact_multinomial, mc_dirichlet, mc_harmonic, mc_instant_exchange

from dicekit import combinatorics as cb
from dicekit.coalescent import (
    CoalescenceSpec,
    CoalescentParams,
    CoalescentSampler,
    TypedPartition,
    coalescent_consistency_test,
    time_to_mrca,
)
from dicekit.duality import (
    convergence_check,
    dual_generator_side,
    generator_apply,
    moment_duality_check,
    simulate_frequency_sde,
)
from dicekit.measures import (
    AtomicMeasure,
    DirichletSplitting,
    HarmonicSplitting,
    InstantExchange,
    MultinomialSplitting,
    StochasticExchange,
    TotallyDependent,
)
from dicekit.rates import (
    DiceParams,
    GeneratorMatrix,
    build_generator,
    check_consistency_equation,
    check_permutation_commutation,
    lumped_generator,
)
from dicekit.simulate import GraphicalSampler
from dicekit.stats import path_rng, two_sample_chi2

HALF = [[0.5, 0.5], [0.5, 0.5]]
MC_SAMPLES = 4_000_000


def exponent_grid(d, max_total):
    """Every non-diagonal K with row sums b and 1 <= |b| <= max_total."""
    return [K for n in range(1, max_total + 1) for b in cb.enumerate_compositions(n, d)
            for K in cb.enumerate_transition_matrices(b)]


def harmonic_grid(d, i, max_total):
    # other rows must stay on the diagonal and row i must leave i, else the integral is 0 or undefined
    return [K for K in exponent_grid(d, max_total)
            if K[i][i] < sum(K[i]) and all(K[k][j] == 0 for k in range(d) if k != i
                                           for j in range(d) if j != k)]


@pytest.mark.acceptance(10, "closed-form monomial integrals vs Monte Carlo quadrature")
@pytest.mark.parametrize("family", ["dirichlet", "harmonic", "instant-exchange", "multinomial"])
def test_ac10_monomials_vs_quadrature(family, record_property):
    rng = np.random.default_rng(2024)
    cases = []
    if family == "dirichlet":
        for eta, rates in (([1.0, 2.0], {(0, 1): 0.5}),
                           ([0.8, 1.5, 2.0], {(0, 1, 2): 0.4, (1, 2): 0.3})):
            nu = DirichletSplitting(eta, rates)
            Ks = exponent_grid(len(eta), 3 if len(eta) == 2 else 2)
            cases.append((nu, Ks, mc_dirichlet(eta, rates, Ks, MC_SAMPLES, rng)))
    elif family == "harmonic":
        for eta, rates in (([2.0, 1.0], {(0, (1,)): 0.6}),
                           ([1.5, 1.0, 2.5], {(0, (1, 2)): 0.5})):
            nu = HarmonicSplitting(eta, rates)
            Ks = harmonic_grid(len(eta), 0, 3)
            cases.append((nu, Ks, mc_harmonic(eta, rates, Ks, MC_SAMPLES, rng)))
    elif family == "instant-exchange":
        for eta, kappa, rates in (([2.0, 1.5], 0.8, {(0, 1): 0.5}),
                                  ([1.5, 2.0, 1.2], 0.9, {(0, 1, 2): 0.4})):
            nu = InstantExchange(eta, kappa, rates)
            Ks = exponent_grid(len(eta), 3 if len(eta) == 2 else 2)
            cases.append((nu, Ks, mc_instant_exchange(eta, kappa, rates, Ks, MC_SAMPLES, rng)))
    else:
        for eta, rates in (([1.0, 3.0], {(0, 1): 0.7}), ([1.0, 2.0, 0.5], {(0, 2): 0.6, (0, 1, 2): 0.3})):
            nu = MultinomialSplitting(eta, rates)
            Ks = exponent_grid(len(eta), 3)
            cases.append((nu, Ks, [exact_multinomial(eta, rates, K) for K in Ks]))
    worst, count = 0.0, 0
    for nu, Ks, oracle in cases:
        for K, ref in zip(Ks, oracle):
            worst = max(worst, abs(nu.monomial_integral(np.array(K)) - ref))
            count += 1
    record_property("detail", f"{family}: {count} K, max dev {worst:.2e}")
    assert count >= 10
    assert worst <= 1e-3


def ac1_battery(d):
    eta = [1.0, 2.0, 1.5][:d]
    full = tuple(range(d))
    A = np.full((d, d), 0.5)
    perm = tuple((i + 1) % d for i in range(d))
    return {
        "multinomial": DiceParams(A, MultinomialSplitting(eta, {full: 0.8, (0, 1): 0.3})),
        "dirichlet": DiceParams(A, DirichletSplitting(eta, {full: 0.8, (0, 1): 0.3})),
        "harmonic": DiceParams(A, HarmonicSplitting(eta, {(0, full[1:]): 1.0, (1, (0,)): 0.4})),
        "instant-exchange": DiceParams(A, InstantExchange(eta, 0.5, {full: 0.6})),
        "stochastic-exchange": DiceParams(A, StochasticExchange(d, [(0, 1, 0.2, 0.7, 1.3),
                                                                    (1, 0, 0.5, 0.5, 0.4)])),
        "totally-dependent": DiceParams(A, TotallyDependent({perm: 0.6, (0,) * d: 0.2})),
    }


@pytest.mark.acceptance(1, "consistency equation for every family, |b| <= 4")
def test_ac1_consistency_equation(record_property):
    start = time.perf_counter()
    worst = 0.0
    for d in (2, 3):
        for p in ac1_battery(d).values():
            worst = max(worst, check_consistency_equation(p, 4).max_residual)
    elapsed = time.perf_counter() - start
    record_property("detail", f"max residual {worst:.1e}, {elapsed:.1f} s")
    assert worst <= 1e-9
    assert elapsed < 10


@pytest.mark.acceptance(2, "projective consistency by lumping")
def test_ac2_lumping(record_property):
    start = time.perf_counter()
    worst = 0.0
    for d in (2, 3):
        for draw in range(5):
            rng = np.random.default_rng(1000 * d + draw)
            A = rng.uniform(0, 2, size=(d, d))
            atoms = [(rng.uniform(0.2, 2.0), rng.dirichlet(np.ones(d), size=d)) for _ in range(3)]
            p = DiceParams(A, AtomicMeasure(atoms))
            for n, m in ((2, 1), (3, 2), (3, 1)):
                L = lumped_generator(build_generator(n, p), m)
                worst = max(worst, np.abs(L.Q - build_generator(m, p).Q).max())
    elapsed = time.perf_counter() - start
    record_property("detail", f"max entry diff {worst:.1e}, {elapsed:.1f} s")
    assert worst <= 1e-9
    assert elapsed < 30


@pytest.mark.acceptance(3, "rate-level exchangeability with negative control")
def test_ac3_exchangeability(record_property):
    rng = np.random.default_rng(3)
    p = DiceParams(rng.uniform(0, 2, (2, 2)),
                   AtomicMeasure([(1.0, rng.dirichlet(np.ones(2), size=2)), (0.5, HALF)]))
    worst = 0.0
    for n in range(1, 5):
        Q = build_generator(n, p)
        for sigma in itertools.permutations(range(n)):
            worst = max(worst, check_permutation_commutation(Q, sigma))
    # negative control: particle l flips at rate l + 1
    n = 3
    bad = np.zeros((2 ** n, 2 ** n))
    for s, x in enumerate(cb.all_configurations(n, 2)):
        for l in range(n):
            y = list(x)
            y[l] = 1 - y[l]
            bad[s, cb.config_index(y, 2)] = l + 1.0
        bad[s, s] = -bad[s].sum()
    control = max(check_permutation_commutation(GeneratorMatrix(n, 2, bad), sigma)
                  for sigma in itertools.permutations(range(n)))
    record_property("detail", f"max residual {worst:.1e}, control {control:.1f}")
    assert worst <= 1e-12
    assert control > 1e-12


def duality_battery():
    out = []
    for d in (2, 3):
        perms = [np.eye(d)[list(s)] for s in itertools.permutations(range(d))]
        for seed in range(4):
            rng = np.random.default_rng(500 + 10 * d + seed)
            atoms = []
            for _ in range(2):
                w = rng.dirichlet(np.ones(3))
                atoms.append((rng.uniform(0.3, 2.0),
                              sum(wk * perms[rng.integers(len(perms))] for wk in w)))
            S = rng.uniform(0, 1, (d, d))
            A = S + S.T + rng.uniform(0, 1) * np.roll(np.eye(d), 1, axis=1)
            np.fill_diagonal(A, 0.0)
            out.append(DiceParams(A, AtomicMeasure(atoms)))
    return out


@pytest.mark.acceptance(4, "generator duality identity")
def test_ac4_generator_duality(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for p in duality_battery():
        for total in range(4):
            for b in cb.enumerate_compositions(total, p.d):
                for _ in range(20):
                    r = rng.dirichlet(np.ones(p.d))
                    worst = max(worst, abs(generator_apply(b, r, p) - dual_generator_side(b, r, p)))
    elapsed = time.perf_counter() - start
    record_property("detail", f"max diff {worst:.1e}, {elapsed:.1f} s")
    assert worst <= 1e-9
    assert elapsed < 10


@pytest.mark.acceptance(5, "moment duality closed form")
def test_ac5_moment_duality(record_property):
    start = time.perf_counter()
    p = DiceParams.independent([[0, 1.0], [1.0, 0]])
    rep = moment_duality_check([0.8, 0.2], (1, 0), 0.5, p, paths=100_000, seed=5)
    elapsed = time.perf_counter() - start
    target = 0.5 + 0.3 * math.exp(-1)
    band = 3 * (rep.lhs_se + rep.rhs_se)
    record_property("detail", f"lhs {rep.lhs:.5f}, rhs {rep.rhs:.5f} +- {rep.rhs_se:.5f}, "
                              f"target {target:.5f}, {elapsed:.1f} s")
    assert abs(rep.lhs - target) <= band
    assert abs(rep.rhs - target) <= band
    assert elapsed < 60


@pytest.mark.acceptance(6, "averaging absorption")
@pytest.mark.parametrize("A", [np.zeros((2, 2)), np.array([[0, 1.0], [1.0, 0]])])
def test_ac6_averaging_absorption(A, record_property):
    p = DiceParams(A, AtomicMeasure([(1.0, HALF)]))
    checked = 0
    for seed in range(20):
        path = simulate_frequency_sde([0.9, 0.1], p, 5.0, seed=seed)
        if not path.jump_times:
            continue
        for t in np.linspace(path.jump_times[0], 5.0, 50):
            assert path.at(float(t)).tolist() == [0.5, 0.5]
        checked += 1
    label = "drift" if A.any() else "no drift"
    record_property("detail", f"{label}: {checked} paths exactly (1/2, 1/2)")
    assert checked > 10


@pytest.mark.acceptance(7, "convergence of the empirical frequency")
def test_ac7_convergence(record_property):
    start = time.perf_counter()
    indep = DiceParams.independent([[0, 1.0], [0.5, 0]])
    rep0 = convergence_check(indep, [10, 100, 1000], 1.0, paths=2000, seed=7, r0=[0.9, 0.1])
    coord = DiceParams([[0, 1.0], [0.5, 0]],
                       AtomicMeasure([(1.0, [[0.7, 0.3], [0.2, 0.8]]), (0.5, HALF)]))
    rep1 = convergence_check(coord, [10, 100, 1000], 1.0, paths=2000, seed=8, r0=[0.9, 0.1])
    elapsed = time.perf_counter() - start
    record_property("detail", f"slope {rep0.slope:.3f}, coordinated distances "
                              f"{', '.join(f'{x:.4f}' for x in rep1.distances)}, {elapsed:.0f} s")
    assert rep0.slope_checked and -0.7 <= rep0.slope <= -0.3
    assert rep1.monotone
    assert elapsed < 300


def embedding_params():
    switch = DiceParams([[0, 0.6], [0.4, 0]], AtomicMeasure([(0.7, [[0.5, 0.5], [0.2, 0.8]])]))
    return switch


@pytest.mark.acceptance(8, "dice/coalescent embedding and Kingman reduction")
def test_ac8_embedding(record_property):
    switch = embedding_params()
    params = CoalescentParams(CoalescenceSpec.disabled(2), switch)
    x0, T, paths = (0, 1, 0), 1.0, 100_000
    sampler = CoalescentSampler(params)
    coal = [sampler.run(TypedPartition.singletons(x0), T, path_rng(81, k)).final().types
            for k in range(paths)]
    dice = GraphicalSampler(switch).final_states(x0, T, seed=82, paths=paths)
    p_value = two_sample_chi2(coal, dice).p_value
    record_property("detail", f"embedding p {p_value:.3f}")
    assert p_value > 1e-3


@pytest.mark.acceptance(8, "dice/coalescent embedding and Kingman reduction")
def test_ac8_kingman_mrca(record_property):
    params = CoalescentParams(CoalescenceSpec.kingman(1.0), DiceParams.independent(np.zeros((1, 1))))
    sampler = CoalescentSampler(params)
    pi = TypedPartition.singletons((0, 0, 0))
    x = np.array([time_to_mrca(pi, sampler, path_rng(83, k)) for k in range(100_000)])
    se = x.std(ddof=1) / math.sqrt(len(x))
    record_property("detail", f"MRCA mean {x.mean():.4f} +- {se:.4f}")
    assert abs(x.mean() - 4 / 3) <= 3 * se


class _CrowdedPairs:
    """Pair mergers at a rate equal to the current block count: breaks consistency."""
    d = 1

    def rate_counts(self, b, c, i):
        return float(sum(b)) if sum(c) == 2 else 0.0


@pytest.mark.acceptance(9, "coalescent consistency with negative control")
def test_ac9_coalescent_consistency(record_property):
    coal = CoalescenceSpec(2, (1.0, 0.5), {0: [(0.8, (0.6, 0.3))], 1: [(0.4, (0.2, 0.9))]})
    switch = DiceParams([[0, 0.6], [0.4, 0]], AtomicMeasure([(0.7, [[0.5, 0.5], [0.2, 0.8]])]))
    good = coalescent_consistency_test(CoalescentParams(coal, switch), 4, 2, 0.7,
                                       paths=20_000, seed=91)
    bad_params = CoalescentParams(_CrowdedPairs(), DiceParams.independent(np.zeros((1, 1))))
    bad = coalescent_consistency_test(bad_params, 4, 2, 0.5, paths=20_000, seed=92)
    record_property("detail", f"p {good.p_value:.3f}, control p {bad.p_value:.1e}")
    assert good.p_value > 1e-3
    assert bad.p_value < 1e-3
