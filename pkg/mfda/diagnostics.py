#!/usr/bin/env python3
"""Analysis-quality metrics: RMSE, rank histograms and KL divergence."""

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import rel_entr

from mfda.ensemble import Array
from mfda.errors import EmptyEnsemble, ShapeMismatch, UnsupportedBin


def rmse(estimate: ArrayLike, truth: ArrayLike) -> float:
    """Root-mean-square error over the components of one state."""
    e, t = np.asarray(estimate, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if e.shape != t.shape:
        raise ShapeMismatch(f"estimate {e.shape} and truth {t.shape} differ")
    return float(np.sqrt(np.mean((e - t) ** 2)))


def spatiotemporal_rmse(
    estimates: Sequence[ArrayLike] | Array,
    truths: Sequence[ArrayLike] | Array,
    spinup: int = 0,
) -> float:
    """RMSE over all components and all times after the first ``spinup``."""
    e = np.asarray(estimates, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if e.shape != t.shape:
        raise ShapeMismatch(f"estimates {e.shape} and truths {t.shape} differ")
    if not 0 <= spinup < len(e):
        raise ValueError(f"spinup {spinup} leaves no scored steps out of {len(e)}")
    return float(np.sqrt(np.mean((e[spinup:] - t[spinup:]) ** 2)))


def rank_tally(values: ArrayLike, truth: float, rng: np.random.Generator) -> int:
    """Members strictly below the truth; ties are placed uniformly at random."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise EmptyEnsemble("rank tally needs at least one member")
    below = int(np.count_nonzero(v < truth))
    ties = int(np.count_nonzero(v == truth))
    return below + int(rng.integers(0, ties + 1)) if ties else below


def kl_divergence(p: ArrayLike, q: ArrayLike) -> float:
    """Kullback-Leibler divergence sum p log(p / q) in nats, inputs normalized first.

    Raises:
        UnsupportedBin: If q has an empty bin.
    """
    p_arr = np.asarray(p, dtype=np.float64)
    q_arr = np.asarray(q, dtype=np.float64)
    if p_arr.shape != q_arr.shape:
        raise ShapeMismatch(f"histograms have {p_arr.size} and {q_arr.size} bins")
    if np.any(q_arr <= 0):
        raise UnsupportedBin("reference histogram has an empty bin")
    p_arr = p_arr / p_arr.sum()
    q_arr = q_arr / q_arr.sum()
    return float(max(np.sum(rel_entr(p_arr, q_arr)), 0.0))


@dataclass
class RankHistogram:
    """N+1 rank counts for an N-member ensemble."""

    members: int
    seed: int = 0
    counts: Array = field(init=False)
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.members < 1:
            raise EmptyEnsemble("rank histogram needs at least one member")
        self.counts = np.zeros(self.members + 1, dtype=np.int64)
        self._rng = np.random.Generator(np.random.Philox(self.seed))

    @property
    def bins(self) -> int:
        return self.members + 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, values: ArrayLike, truth: float) -> int:
        rank = rank_tally(values, truth, self._rng)
        self.counts[rank] += 1
        return rank

    def add_ensemble(self, values: ArrayLike, truth: ArrayLike) -> None:
        """Tally every variable of an m x N ensemble against its m-vector truth."""
        v = np.atleast_2d(np.asarray(values, dtype=np.float64))
        t = np.asarray(truth, dtype=np.float64).reshape(-1)
        if v.shape != (t.size, self.members):
            raise ShapeMismatch(f"ensemble {v.shape} does not match {t.size} x {self.members}")
        for row, truth_value in zip(v, t):
            self.add(row, truth_value)

    def frequencies(self) -> Array:
        total = self.total
        return self.counts / total if total else np.zeros(self.bins)

    def kl_to_uniform(self, smoothing: float = 1.0) -> float:
        """KL(uniform || add-``smoothing`` histogram)."""
        smoothed = self.counts + smoothing
        return kl_divergence(np.full(self.bins, 1.0 / self.bins), smoothed)
