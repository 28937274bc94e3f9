"""Feature pruning before model construction: drop one representative's
worth of every tightly rank-correlated cluster, then iteratively drop
features that the survivors predict almost perfectly."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import DefectDataset
from .ols import ols_r_squared
from .stats import midrank

__all__ = [
    "ClusterNode",
    "CorrelationHierarchy",
    "CorrelatedDrop",
    "RedundantDrop",
    "PrefilterReport",
    "spearman_cluster",
    "cut_clusters",
    "cut_and_select",
    "drop_redundant",
    "prefilter_features",
]

log = logging.getLogger(__name__)

DEFAULT_CORRELATION_THRESHOLD = 0.7
DEFAULT_REDUNDANCY_CUTOFF = 0.9


@dataclass(frozen=True)
class ClusterNode:
    """Leaf (single feature) or merge of two subtrees at a given similarity."""

    members: tuple[str, ...]
    similarity: float = 1.0
    left: "ClusterNode | None" = None
    right: "ClusterNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def min_internal_similarity(self) -> float:
        if self.is_leaf:
            return 1.0
        assert self.left is not None and self.right is not None
        return min(
            self.similarity,
            self.left.min_internal_similarity(),
            self.right.min_internal_similarity(),
        )


@dataclass(frozen=True)
class CorrelationHierarchy:
    """Complete-linkage agglomeration of features under |Spearman rho|."""

    leaves: tuple[str, ...]
    merge_steps: tuple[ClusterNode, ...]  # in merge order; last step is the root
    dropped_constant: tuple[str, ...] = ()

    @property
    def root(self) -> ClusterNode:
        return self.merge_steps[-1]


@dataclass(frozen=True)
class CorrelatedDrop:
    dropped: str
    surviving_representative: str
    similarity: float


@dataclass(frozen=True)
class RedundantDrop:
    dropped: str
    r_squared_against_others: float


@dataclass(frozen=True)
class PrefilterReport:
    kept: tuple[str, ...]
    dropped_correlated: tuple[CorrelatedDrop, ...]
    dropped_redundant: tuple[RedundantDrop, ...]

    def to_dict(self) -> dict:
        return {
            "kept": list(self.kept),
            "dropped_correlated": [
                {"dropped": d.dropped, "surviving_representative": d.surviving_representative,
                 "similarity": d.similarity}
                for d in self.dropped_correlated
            ],
            "dropped_redundant": [
                {"dropped": d.dropped, "r_squared_against_others": d.r_squared_against_others}
                for d in self.dropped_redundant
            ],
        }


def _abs_spearman_matrix(X: np.ndarray) -> np.ndarray:
    ranks = np.column_stack([midrank(X[:, j]) for j in range(X.shape[1])])
    corr = np.corrcoef(ranks, rowvar=False)
    return np.clip(np.abs(corr), 0.0, 1.0)


def spearman_cluster(ds: DefectDataset) -> CorrelationHierarchy:
    """Agglomerate features bottom-up, merging the most rank-correlated pair.

    Similarity between clusters is the worst absolute Spearman correlation
    across their members (complete linkage), so every pair inside a merged
    cluster correlates at least as strongly as the recorded similarity.
    Constant features cannot be ranked against anything and are dropped
    with a warning before clustering.
    """
    variances = ds.features.var(axis=0)
    constant = tuple(n for n, v in zip(ds.feature_names, variances) if v == 0.0)
    active = [n for n in ds.feature_names if n not in constant]
    if constant:
        log.warning("%s: dropping constant features before clustering: %s",
                    ds.name, ", ".join(constant))
    if len(active) < 2:
        raise ValueError(f"{ds.name}: need at least 2 non-constant features to cluster")

    sim = _abs_spearman_matrix(ds.matrix(active))
    nodes: list[ClusterNode] = [ClusterNode(members=(n,)) for n in active]
    # index pairs into `nodes`; sim rows/cols track the live clusters
    steps: list[ClusterNode] = []
    while len(nodes) > 1:
        best_i, best_j, best_s = 0, 1, -1.0
        for i in range(len(nodes)):
            for j in range(i + 1, len(nodes)):
                if sim[i, j] > best_s:
                    best_i, best_j, best_s = i, j, sim[i, j]
        merged = ClusterNode(
            members=nodes[best_i].members + nodes[best_j].members,
            similarity=float(best_s),
            left=nodes[best_i],
            right=nodes[best_j],
        )
        steps.append(merged)
        # complete linkage: similarity to others is the weaker of the two
        row = np.minimum(sim[best_i], sim[best_j])
        sim[best_i, :] = row
        sim[:, best_i] = row
        sim[best_i, best_i] = 1.0
        keep = [k for k in range(len(nodes)) if k != best_j]
        sim = sim[np.ix_(keep, keep)]
        nodes[best_i] = merged
        del nodes[best_j]
    return CorrelationHierarchy(leaves=tuple(active), merge_steps=tuple(steps),
                                dropped_constant=constant)


def cut_clusters(h: CorrelationHierarchy, threshold: float) -> list[ClusterNode]:
    """Maximal subtrees whose internal merges all exceed the similarity threshold.

    Leaves outside any such subtree come back as singleton nodes, so the
    result partitions the hierarchy's leaves.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    found: list[ClusterNode] = []

    def visit(node: ClusterNode) -> None:
        if node.is_leaf or node.min_internal_similarity() > threshold:
            found.append(node)
            return
        assert node.left is not None and node.right is not None
        visit(node.left)
        visit(node.right)

    visit(h.root)
    return found


def _representative(members: tuple[str, ...], preference: tuple[str, ...]) -> str:
    for name in preference:
        if name in members:
            return name
    return min(members)


def cut_and_select(
    h: CorrelationHierarchy,
    threshold: float = DEFAULT_CORRELATION_THRESHOLD,
    preference: tuple[str, ...] = (),
) -> list[str]:
    """One survivor per over-threshold cluster, preferred names first.

    Clusters not reaching the threshold contribute all their features.
    Survivors come back in the hierarchy's original leaf order.
    """
    survivors = set()
    for node in cut_clusters(h, threshold):
        survivors.add(node.members[0] if node.is_leaf else _representative(node.members, preference))
    return [n for n in h.leaves if n in survivors]


def drop_redundant(
    ds: DefectDataset,
    kept: list[str] | tuple[str, ...],
    cutoff: float = DEFAULT_REDUNDANCY_CUTOFF,
) -> PrefilterReport:
    """Iteratively drop the feature best predicted by the others.

    While any kept feature regresses on the remaining ones with R^2 at or
    above the cutoff, the highest-R^2 feature goes (ties break to the
    lexicographically smallest name). Every drop is recorded with the R^2
    that condemned it.
    """
    if not kept:
        raise ValueError("drop_redundant needs a non-empty feature list")
    current = list(kept)
    dropped: list[RedundantDrop] = []
    while len(current) >= 2:
        r2 = {
            f: ols_r_squared(ds.column(f), ds.matrix([g for g in current if g != f]))
            for f in current
        }
        over = [f for f in current if r2[f] >= cutoff]
        if not over:
            break
        victim = sorted(over, key=lambda f: (-r2[f], f))[0]
        current.remove(victim)
        dropped.append(RedundantDrop(dropped=victim, r_squared_against_others=r2[victim]))
    return PrefilterReport(kept=tuple(current), dropped_correlated=(),
                           dropped_redundant=tuple(dropped))


def prefilter_features(
    ds: DefectDataset,
    corr_threshold: float = DEFAULT_CORRELATION_THRESHOLD,
    redun_cutoff: float = DEFAULT_REDUNDANCY_CUTOFF,
    preference: tuple[str, ...] = (),
) -> PrefilterReport:
    """Full pruning pass: constants, correlated clusters, then redundancy.

    Constant features are reported as redundant with R^2 = 1.0 (the
    intercept alone reproduces them). The three buckets partition the
    dataset's original feature set.
    """
    variances = ds.features.var(axis=0)
    constant = tuple(n for n, v in zip(ds.feature_names, variances) if v == 0.0)
    active = [n for n in ds.feature_names if n not in constant]
    constant_drops = tuple(
        RedundantDrop(dropped=n, r_squared_against_others=1.0) for n in constant
    )

    correlated: list[CorrelatedDrop] = []
    if len(active) >= 2:
        hierarchy = spearman_cluster(ds)
        survivors = set()
        for node in cut_clusters(hierarchy, corr_threshold):
            if node.is_leaf:
                survivors.add(node.members[0])
                continue
            rep = _representative(node.members, preference)
            survivors.add(rep)
            correlated.extend(
                CorrelatedDrop(dropped=m, surviving_representative=rep,
                               similarity=node.similarity)
                for m in sorted(node.members) if m != rep
            )
        selected = [n for n in active if n in survivors]
    else:
        selected = active
    if not selected:
        raise ValueError(f"{ds.name}: no usable features after constant removal")

    redun = drop_redundant(ds, selected, redun_cutoff)
    return PrefilterReport(
        kept=redun.kept,
        dropped_correlated=tuple(correlated),
        dropped_redundant=redun.dropped_redundant + constant_drops,
    )
