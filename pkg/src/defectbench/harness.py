"""Out-of-sample bootstrap validation.

Each iteration draws an N-sized training sample with replacement, fits the
learner on it, and evaluates on the rows that were never drawn (about
36.8% of the data on average). Per iteration we record the AUC, the test
R^2 (regression mode), and a permutation-importance vector.

Every iteration's randomness is derived from a stable hash, so results are
independent of execution order and worker count: the train/test split
depends only on (master seed, dataset, iteration) and is therefore shared
by any two learners run on the same dataset, which keeps classifier arms
paired; model fitting and column permutations additionally mix in the
learner identity.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .corpus import DefectDataset, discretize
from .learners import LearnerSpec, SingleClassError, TrainedModel, fit, impurity_importance
from .stats import DegenerateDataError, midrank

__all__ = [
    "BootstrapAborted",
    "IterationResult",
    "BootstrapRun",
    "derive_rng",
    "bootstrap_split",
    "auc",
    "normalize_scores",
    "r_squared",
    "permutation_importance",
    "run_bootstrap",
]

MAX_INVALID_FRACTION = 0.20


class BootstrapAborted(RuntimeError):
    """Too many iterations were invalid to trust the aggregate."""


def derive_rng(master_seed: int, *scope) -> np.random.Generator:
    """Independent generator keyed by a stable hash of (seed, scope...)."""
    material = "\x1f".join([str(int(master_seed)), *(str(s) for s in scope)])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def bootstrap_split(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """n draws with replacement plus the complement as the test set."""
    if n < 1:
        raise ValueError("bootstrap_split needs n >= 1")
    train = rng.integers(0, n, size=n)
    mask = np.zeros(n, dtype=bool)
    mask[train] = True
    return train, np.flatnonzero(~mask)


def auc(scores, labels) -> float:
    """Rank-based AUC with midranks for ties.

    Equals the probability that a random defective row outscores a random
    clean one, ties counted half. Needs both classes present.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("auc needs equal-length 1-D scores and labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDataError("auc undefined with a single class")
    rank_sum = float(midrank(s)[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def normalize_scores(predicted_counts) -> np.ndarray:
    """Min-max scale into [0, 1]; a constant input maps to all 0.5."""
    s = np.asarray(predicted_counts, dtype=float)
    if s.size == 0:
        raise ValueError("normalize_scores needs a non-empty input")
    lo, hi = float(s.min()), float(s.max())
    if lo == hi:
        return np.full(s.shape, 0.5)
    return (s - lo) / (hi - lo)


def r_squared(predicted, actual) -> float | None:
    """1 - SS_res/SS_tot on held-out data; None when the actuals are constant.

    Can be negative: predicting worse than the mean is a legal outcome.
    """
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or a.size < 2:
        raise ValueError("r_squared needs two equal-length sequences of >= 2 values")
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    return 1.0 - float(np.sum((p - a) ** 2)) / ss_tot


def _evaluation_auc(model: TrainedModel, raw_scores: np.ndarray, labels: np.ndarray) -> float:
    if model.spec.mode == "regression":
        return auc(normalize_scores(raw_scores), labels)
    return auc(raw_scores, labels)


def permutation_importance(
    model: TrainedModel, X_test, labels, rng: np.random.Generator
) -> np.ndarray:
    """AUC drop after shuffling one test column at a time.

    Each feature is permuted once; drops can be negative. Regression-mode
    scores are normalized before the AUC, matching the evaluation path.
    """
    X = np.asarray(X_test, dtype=float)
    y = np.asarray(labels)
    m, p = X.shape
    variants = [X]
    for j in range(p):
        perm = rng.permutation(m)
        shuffled = X.copy()
        shuffled[:, j] = X[perm, j]
        variants.append(shuffled)
    stacked_scores = model.score(np.vstack(variants)).reshape(p + 1, m)
    baseline = _evaluation_auc(model, stacked_scores[0], y)
    return np.array([
        baseline - _evaluation_auc(model, stacked_scores[j + 1], y) for j in range(p)
    ])


@dataclass(frozen=True)
class IterationResult:
    iteration_index: int
    oob_fraction: float
    auc: float | None  # None marks an invalid iteration
    r_squared: float | None  # None outside regression mode or for constant actuals
    permutation_importance: tuple[float, ...] | None
    impurity_importance: tuple[float, ...] | None
    split_digest: str
    invalid_reason: str | None = None

    @property
    def valid(self) -> bool:
        return self.auc is not None


@dataclass(frozen=True)
class BootstrapRun:
    dataset_name: str
    spec: LearnerSpec
    feature_names: tuple[str, ...]
    n_rows: int
    repetitions: int
    master_seed: int
    iterations: tuple[IterationResult, ...]

    @property
    def valid_iterations(self) -> tuple[IterationResult, ...]:
        return tuple(it for it in self.iterations if it.valid)

    def auc_values(self) -> np.ndarray:
        return np.array([it.auc for it in self.valid_iterations])

    def mean_auc(self) -> float:
        return float(self.auc_values().mean())

    @property
    def split_digest(self) -> str:
        h = hashlib.sha256()
        for it in self.iterations:
            h.update(it.split_digest.encode("ascii"))
        return h.hexdigest()

    def importance_distributions(self, source: str = "permutation") -> dict[str, list[float]]:
        """Per-feature importance samples across valid iterations."""
        if source not in ("permutation", "impurity"):
            raise ValueError(f"unknown importance source {source!r}")
        out: dict[str, list[float]] = {name: [] for name in self.feature_names}
        for it in self.valid_iterations:
            vec = it.permutation_importance if source == "permutation" else it.impurity_importance
            if vec is None:
                raise ValueError(f"{source} importance was not recorded for this run")
            for name, v in zip(self.feature_names, vec):
                out[name].append(v)
        return out


def _run_iteration(
    index: int,
    X: np.ndarray,
    counts: np.ndarray,
    labels: np.ndarray,
    ds_name: str,
    spec: LearnerSpec,
    feature_names: tuple[str, ...],
    master_seed: int,
    record_impurity: bool,
) -> IterationResult:
    n = X.shape[0]
    split_rng = derive_rng(master_seed, "split", ds_name, index)
    train, test = bootstrap_split(n, split_rng)
    digest = hashlib.sha256(np.ascontiguousarray(train).tobytes()).hexdigest()
    oob = test.size / n

    def invalid(reason: str) -> IterationResult:
        return IterationResult(index, oob, None, None, None, None, digest, reason)

    if test.size == 0:
        return invalid("empty out-of-sample set")
    y_test = labels[test]
    if np.unique(y_test).size < 2:
        return invalid("single-class out-of-sample labels")

    model_rng = derive_rng(master_seed, "model", ds_name, spec.learner_id, index)
    target = labels if spec.mode == "classification" else counts
    try:
        model = fit(spec, X[train], target[train], model_rng, feature_names)
    except SingleClassError:
        return invalid("single-class training labels")

    raw_scores = model.score(X[test])
    auc_value = _evaluation_auc(model, raw_scores, y_test)
    r2 = r_squared(raw_scores, counts[test].astype(float)) if spec.mode == "regression" else None
    perm = permutation_importance(model, X[test], y_test, model_rng)
    mdi: tuple[float, ...] | None = None
    if record_impurity:
        mdi = impurity_importance(model).values
    return IterationResult(
        iteration_index=index,
        oob_fraction=oob,
        auc=auc_value,
        r_squared=r2,
        permutation_importance=tuple(float(v) for v in perm),
        impurity_importance=mdi,
        split_digest=digest,
    )


def run_bootstrap(
    ds: DefectDataset,
    spec: LearnerSpec,
    features: list[str] | tuple[str, ...],
    repetitions: int,
    master_seed: int,
    executor: Executor | None = None,
    record_impurity: bool = False,
) -> BootstrapRun:
    """Full out-of-sample bootstrap for one dataset and learner.

    Invalid iterations (empty or single-class test sets, or a single-class
    training draw in classification mode) are recorded and excluded from
    aggregates; more than 20% of them aborts the run.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if not features:
        raise ValueError("run_bootstrap needs a non-empty feature list")
    feature_names = tuple(features)
    X = np.ascontiguousarray(ds.matrix(feature_names))
    counts = ds.defect_counts
    labels = discretize(counts)

    def job(i: int) -> IterationResult:
        return _run_iteration(
            i, X, counts, labels, ds.name, spec, feature_names, master_seed, record_impurity
        )

    if executor is None:
        results = [job(i) for i in range(repetitions)]
    else:
        results = list(executor.map(job, range(repetitions)))

    invalid = sum(1 for r in results if not r.valid)
    if invalid / repetitions > MAX_INVALID_FRACTION:
        reasons = sorted({r.invalid_reason for r in results if r.invalid_reason})
        raise BootstrapAborted(
            f"{ds.name}/{spec.learner_id}: {invalid}/{repetitions} invalid iterations "
            f"(reasons: {', '.join(reasons)})"
        )
    return BootstrapRun(
        dataset_name=ds.name,
        spec=spec,
        feature_names=feature_names,
        n_rows=ds.n_modules,
        repetitions=repetitions,
        master_seed=master_seed,
        iterations=tuple(results),
    )
