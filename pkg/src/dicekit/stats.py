"""Chi-square helpers and seeded per-path random streams."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

P_FLOOR = 1e-3
MIN_EXPECTED = 5.0
POWER_MIN_PER_CELL = 100


def path_rng(seed: int, path: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``path`` under root ``seed``.

    Streams come from ``SeedSequence`` spawn keys, so adding paths never
    changes the draws of earlier ones.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, path)))


def resolve_seed(seed: int | None) -> int:
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2 ** 63))
        logger.warning("no seed given, drew %d from entropy", seed)
    return int(seed)


@dataclass
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float
    cells: int
    warnings: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"statistic": self.statistic, "dof": self.dof, "p_value": self.p_value,
                "cells": self.cells, "warnings": list(self.warnings)}


def _power_warnings(n_obs: int, cells: int) -> list:
    if cells and n_obs / cells < POWER_MIN_PER_CELL:
        msg = f"low power: {n_obs} observations over {cells} cells (< {POWER_MIN_PER_CELL} per cell)"
        logger.warning(msg)
        return [msg]
    return []


def two_sample_chi2(a: Sequence[Hashable], b: Sequence[Hashable]) -> ChiSquareResult:
    """Homogeneity test of two categorical samples."""
    ca, cb_ = Counter(a), Counter(b)
    labels = sorted(set(ca) | set(cb_), key=repr)
    if len(labels) < 2:
        return ChiSquareResult(0.0, 0, 1.0, len(labels), _power_warnings(min(len(a), len(b)), 1))
    table = np.array([[ca[k] for k in labels], [cb_[k] for k in labels]])
    stat, p, dof, _ = stats.chi2_contingency(table, correction=False)
    return ChiSquareResult(float(stat), int(dof), float(p), len(labels),
                           _power_warnings(min(len(a), len(b)), len(labels)))


def goodness_of_fit(counts: np.ndarray, probs: np.ndarray) -> ChiSquareResult:
    """Pearson test of observed counts against exact probabilities.

    Cells with expected count below 5 are pooled into one cell.
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    probs = probs / probs.sum()
    total = counts.sum()
    expected = total * probs
    big = expected >= MIN_EXPECTED
    obs = list(counts[big])
    exp = list(expected[big])
    if (~big).any() and expected[~big].sum() > 0:
        obs.append(counts[~big].sum())
        exp.append(expected[~big].sum())
    if len(obs) < 2:
        return ChiSquareResult(0.0, 0, 1.0, len(obs), [])
    obs, exp = np.array(obs), np.array(exp)
    stat = float(((obs - exp) ** 2 / exp).sum())
    dof = len(obs) - 1
    return ChiSquareResult(stat, dof, float(stats.chi2.sf(stat, dof)), len(obs),
                           _power_warnings(int(total), len(obs)))


def mean_and_se(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float(values.mean()) if values.size else float("nan"), float("inf")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))
