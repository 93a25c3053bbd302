"""Dice processes: consistent, partially exchangeable systems of Markov chains.

Exact rates and generators (:mod:`dicekit.rates`), coordination measures
(:mod:`dicekit.measures`), path simulation (:mod:`dicekit.simulate`), the
frequency process and its moment dual (:mod:`dicekit.duality`) and the
multitype coalescent with switching (:mod:`dicekit.coalescent`).
"""

__version__ = "0.1.0"

from .combinatorics import (  # noqa: E402
    apply_permutation,
    counts_from_configs,
    enumerate_compositions,
    enumerate_transition_matrices,
    induced_partition,
    target_multiplicity,
)
from .measures import (  # noqa: E402
    AtomicMeasure,
    DirichletSplitting,
    HarmonicSplitting,
    InstantExchange,
    MultinomialSplitting,
    StochasticExchange,
    TotallyDependent,
    ZeroMeasure,
    integrability_value,
    is_doubly_stochastic_supported,
    monomial_integral,
    sample_truncated,
    transpose_pushforward,
    truncate,
)
from .rates import (  # noqa: E402
    DiceParams,
    build_generator,
    check_consistency_equation,
    check_permutation_commutation,
    config_rate,
    gamma,
    lumped_generator,
)

__all__ = [
    "AtomicMeasure", "DiceParams", "DirichletSplitting", "HarmonicSplitting", "InstantExchange",
    "MultinomialSplitting", "StochasticExchange", "TotallyDependent", "ZeroMeasure",
    "apply_permutation", "build_generator", "check_consistency_equation",
    "check_permutation_commutation", "config_rate", "counts_from_configs",
    "enumerate_compositions", "enumerate_transition_matrices", "gamma", "induced_partition",
    "integrability_value", "is_doubly_stochastic_supported", "lumped_generator",
    "monomial_integral", "sample_truncated", "target_multiplicity", "transpose_pushforward",
    "truncate",
]
