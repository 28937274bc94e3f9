"""Statistical toolbox: midranks, Spearman correlation, Wilcoxon signed-rank,
Cohen's d, and Scott-Knott effect-size-aware ranking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "DegenerateDataError",
    "midrank",
    "spearman",
    "WilcoxonResult",
    "wilcoxon_signed_rank",
    "ComparisonResult",
    "cohens_d",
    "compare_paired",
    "RankTable",
    "scott_knott_esd",
]

NEGLIGIBLE = "negligible"
SMALL = "small"
MEDIUM = "medium"
LARGE = "large"

WILCOXON_EXACT_LIMIT = 12


class DegenerateDataError(ValueError):
    """Input has too little variation for the statistic to be defined."""


def midrank(values) -> np.ndarray:
    """Ranks 1..n with tied values sharing the average of their positions."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=float)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank correlation: Pearson correlation of the midrank transforms."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two equal-length 1-D sequences")
    if x.size < 3:
        raise ValueError(f"spearman needs at least 3 pairs, got {x.size}")
    if np.unique(x).size < 2 or np.unique(y).size < 2:
        raise DegenerateDataError("spearman undefined for a constant sequence")
    rx = midrank(x) - (x.size + 1) / 2.0
    ry = midrank(y) - (y.size + 1) / 2.0
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    return float(np.clip(float(rx @ ry) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    statistic: float  # rank sum of positive differences
    n_nonzero: int
    method: str  # "exact", "normal", or "degenerate"
    no_signal: bool = False


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    # enumerate all sign assignments over the observed (mid)ranks
    sums = np.zeros(1)
    for r in ranks:
        sums = np.concatenate([sums, sums + r])
    mu = ranks.sum() / 2.0
    dev = abs(w_plus - mu)
    count = int(np.count_nonzero(np.abs(sums - mu) >= dev - 1e-12))
    return count / sums.size


def _normal_two_sided_p(ranks: np.ndarray, w_plus: float, abs_diffs: np.ndarray) -> float:
    n = ranks.size
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(abs_diffs, return_counts=True)
    var -= float(np.sum(tie_counts.astype(float) ** 3 - tie_counts)) / 48.0
    if var <= 0:
        return 1.0
    dev = w_plus - mu
    if dev == 0:
        return 1.0
    z = (dev - 0.5 * math.copysign(1.0, dev)) / math.sqrt(var)
    p = 2.0 * (1.0 - 0.5 * (1.0 + math.erf(abs(z) / math.sqrt(2.0))))
    return min(1.0, p)


def wilcoxon_signed_rank(paired_a, paired_b, method: str = "auto") -> WilcoxonResult:
    """Two-sided paired test on the signed ranks of a - b.

    Zero differences are discarded. Exact enumeration over sign assignments
    is used for up to 12 nonzero pairs; otherwise a normal approximation
    with tie-corrected variance and continuity correction. All differences
    zero is reported as a no-signal result with p = 1.
    """
    a = np.asarray(paired_a, dtype=float)
    b = np.asarray(paired_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("wilcoxon_signed_rank needs two equal-length 1-D sequences")
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    diffs = a - b
    nz = diffs[diffs != 0.0]
    if nz.size == 0:
        return WilcoxonResult(p_value=1.0, statistic=0.0, n_nonzero=0,
                              method="degenerate", no_signal=True)
    abs_diffs = np.abs(nz)
    ranks = midrank(abs_diffs)
    w_plus = float(ranks[nz > 0].sum())
    if method == "exact" or (method == "auto" and nz.size <= WILCOXON_EXACT_LIMIT):
        if nz.size > 20:
            raise ValueError("exact enumeration limited to 20 nonzero pairs")
        return WilcoxonResult(_exact_two_sided_p(ranks, w_plus), w_plus, nz.size, "exact")
    return WilcoxonResult(_normal_two_sided_p(ranks, w_plus, abs_diffs), w_plus, nz.size, "normal")


@dataclass(frozen=True)
class ComparisonResult:
    """Effect size plus optional significance for a two-sample comparison."""

    cohens_d: float
    magnitude: str  # negligible | small | medium | large
    direction: str  # first-higher | second-higher | none
    p_value: float | None = None


def _magnitude(d: float) -> str:
    a = abs(d)
    if a <= 0.2:
        return NEGLIGIBLE
    if a <= 0.5:
        return SMALL
    if a <= 0.8:
        return MEDIUM
    return LARGE


def cohens_d(a, b) -> ComparisonResult:
    """Pooled-variance standardized mean difference of a versus b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("cohens_d needs at least 2 values per side")
    na, nb = a.size, b.size
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    delta = float(a.mean() - b.mean())
    if pooled == 0.0:
        d = 0.0 if delta == 0.0 else math.copysign(math.inf, delta)
    else:
        d = delta / math.sqrt(pooled)
    direction = "none" if d == 0.0 else ("first-higher" if d > 0 else "second-higher")
    return ComparisonResult(cohens_d=d, magnitude=_magnitude(d), direction=direction)


def compare_paired(a, b) -> ComparisonResult:
    """Wilcoxon signed-rank p-value combined with Cohen's d for paired samples."""
    effect = cohens_d(a, b)
    p = wilcoxon_signed_rank(a, b).p_value
    return ComparisonResult(cohens_d=effect.cohens_d, magnitude=effect.magnitude,
                            direction=effect.direction, p_value=p)


@dataclass(frozen=True)
class RankTable:
    """Contiguous ranks (1 = best) over treatments, best mean metric first."""

    treatments: tuple[str, ...]
    ranks: dict[str, int]
    means: dict[str, float]

    def at_rank(self, k: int) -> tuple[str, ...]:
        return tuple(t for t in self.treatments if self.ranks[t] == k)

    @property
    def max_rank(self) -> int:
        return max(self.ranks.values())

    def rank_of(self, treatment: str) -> int:
        if treatment not in self.ranks:
            raise KeyError(f"treatment {treatment!r} not in rank table")
        return self.ranks[treatment]


def scott_knott_esd(
    distributions: Mapping[str, Sequence[float]], larger_is_better: bool = True
) -> RankTable:
    """Rank treatments by partitioning them into effect-size-distinct groups.

    Treatments are ordered by mean; the contiguous split maximizing the
    between-group sum of squares of treatment means is accepted only when
    the Cohen's d between the two sides' pooled observations is beyond
    negligible, and the procedure recurses on accepted splits. Treatments
    in the same terminal block share a rank.
    """
    if not distributions:
        raise ValueError("scott_knott_esd needs at least one treatment")
    obs = {name: np.asarray(vals, dtype=float) for name, vals in distributions.items()}
    for name, vals in obs.items():
        if vals.size < 2:
            raise ValueError(f"treatment {name!r} needs at least 2 observations")
    means = {name: float(v.mean()) for name, v in obs.items()}
    sign = -1.0 if larger_is_better else 1.0
    ordered = sorted(obs, key=lambda t: (sign * means[t], t))

    def split(block: list[str]) -> list[list[str]]:
        if len(block) == 1:
            return [block]
        ms = np.array([means[t] for t in block])
        grand = ms.mean()
        best_cut, best_ss = 1, -1.0
        for c in range(1, len(block)):
            left, right = ms[:c], ms[c:]
            ss = left.size * (left.mean() - grand) ** 2 + right.size * (right.mean() - grand) ** 2
            if ss > best_ss:
                best_cut, best_ss = c, ss
        pooled_l = np.concatenate([obs[t] for t in block[:best_cut]])
        pooled_r = np.concatenate([obs[t] for t in block[best_cut:]])
        if cohens_d(pooled_l, pooled_r).magnitude == NEGLIGIBLE:
            return [block]
        return split(block[:best_cut]) + split(block[best_cut:])

    ranks: dict[str, int] = {}
    for rank, block in enumerate(split(list(ordered)), start=1):
        for t in block:
            ranks[t] = rank
    return RankTable(treatments=tuple(ordered), ranks=ranks, means=means)
