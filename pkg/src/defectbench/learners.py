"""Six learner families, each fittable on binary labels (classification mode)
or raw defect counts (regression mode), all exposing one continuous score
per test row.

Classification-mode scores are class-probability-like values in [0, 1]:
vote fractions for forests, leaf class fractions for trees, logistic
probabilities, sigmoid-squashed margins for the linear SVM, neighbor vote
fractions for KNN. Regression-mode scores are predicted defect counts.

The tree, forest, neural-net, SVM and KNN families are backed by
scikit-learn estimators configured to the documented defaults; the
statistical family (ordinary least squares and logistic regression via
iteratively reweighted least squares) is implemented here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import SGDClassifier, SGDRegressor
from sklearn.neighbors import KNeighborsClassifier, KNeighborsRegressor
from sklearn.neural_network import MLPClassifier, MLPRegressor
from sklearn.tree import DecisionTreeClassifier, DecisionTreeRegressor

from .ols import ols_coefficients, ols_predict
from .stats import midrank

__all__ = [
    "FAMILIES",
    "MODES",
    "SingleClassError",
    "UnsupportedImportanceError",
    "LearnerSpec",
    "TrainedModel",
    "ImpurityImportance",
    "fit",
    "impurity_importance",
]

FAMILIES = ("statistical", "random_forest", "neural_net", "decision_tree", "svm", "knn")
MODES = ("classification", "regression")

# short names used in report tables, one per family/mode cell
LABELS = {
    ("statistical", "classification"): "Log-Reg",
    ("statistical", "regression"): "Lin-Reg",
    ("random_forest", "classification"): "RF-C",
    ("random_forest", "regression"): "RF-R",
    ("neural_net", "classification"): "NN-C",
    ("neural_net", "regression"): "NN-R",
    ("decision_tree", "classification"): "CT",
    ("decision_tree", "regression"): "RT",
    ("svm", "classification"): "SVM-C",
    ("svm", "regression"): "SVM-R",
    ("knn", "classification"): "KNN-C",
    ("knn", "regression"): "KNN-R",
}

DEFAULT_TREES = 100
DEFAULT_KNN_K = 10
CP_GRID = (0.0001, 0.001, 0.01, 0.1)
NN_GRID = tuple((h, d) for h in (1, 3, 5) for d in (0.0, 0.1))
SVM_EPSILON = 0.1
IRLS_MAX_ITER = 25

# distance, margin and gradient based families train on z-scores
STANDARDIZED_FAMILIES = frozenset({"neural_net", "svm", "knn"})


class SingleClassError(ValueError):
    """Classification-mode training labels contain only one class."""


class UnsupportedImportanceError(ValueError):
    """The learner family has no built-in impurity importance."""


@dataclass(frozen=True)
class LearnerSpec:
    """Identity of one concrete learner: family x mode plus overrides."""

    family: str
    mode: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def learner_id(self) -> str:
        return f"{self.family}-{self.mode}"

    @property
    def label(self) -> str:
        return LABELS[(self.family, self.mode)]

    def hp(self, name: str, default):
        return self.hyperparameters.get(name, default)


@dataclass
class TrainedModel:
    spec: LearnerSpec
    training_feature_names: tuple[str, ...]
    _scorer: Callable[[np.ndarray], np.ndarray]
    _impurity_raw: np.ndarray | None = None

    def score(self, X_test) -> np.ndarray:
        X = np.asarray(X_test, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.training_feature_names):
            raise ValueError(
                f"expected {len(self.training_feature_names)} feature columns, "
                f"got shape {X.shape}"
            )
        s = np.asarray(self._scorer(X), dtype=float)
        if not np.all(np.isfinite(s)):
            raise ValueError(f"{self.spec.learner_id}: non-finite score produced")
        if self.spec.mode == "classification":
            s = np.clip(s, 0.0, 1.0)
        return s


@dataclass(frozen=True)
class ImpurityImportance:
    feature_names: tuple[str, ...]
    values: tuple[float, ...]  # non-negative, sums to 1 unless no split happened


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _binary_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    # internal rank AUC for cross-validation model selection
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    r = midrank(scores)
    return (float(r[pos].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _irls_logistic(X: np.ndarray, y: np.ndarray, jitter: float = 1e-8) -> np.ndarray:
    design = np.column_stack([np.ones(X.shape[0]), X])
    beta = np.zeros(design.shape[1])
    for _ in range(IRLS_MAX_ITER):
        eta = design @ beta
        mu = _sigmoid(eta)
        w = np.clip(mu * (1.0 - mu), 1e-10, None)
        z = eta + (y - mu) / w
        a = design.T @ (w[:, None] * design)
        a[np.diag_indices_from(a)] += jitter
        new = np.linalg.solve(a, design.T @ (w * z))
        if np.max(np.abs(new - beta)) < 1e-8:
            beta = new
            break
        beta = new
    return beta


def _stratified_folds(labels: np.ndarray, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    pos = rng.permutation(np.flatnonzero(labels == 1))
    neg = rng.permutation(np.flatnonzero(labels == 0))
    return [np.sort(np.concatenate([pos[f::k], neg[f::k]])) for f in range(k)]


def _plain_folds(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [np.sort(perm[f::k]) for f in range(k)]


def _fit_quiet(estimator, X, y):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        estimator.fit(X, y)
    return estimator


def _select_by_cv(
    grid,
    build,
    predict_scores,
    X: np.ndarray,
    y: np.ndarray,
    mode: str,
    cv_rng: np.random.Generator,
):
    """Pick the grid entry with the best mean 5-fold score (AUC or -MSE).

    Falls back to the first grid entry when the data cannot support
    stratified folds. Ties resolve to the earliest entry.
    """
    n = X.shape[0]
    if mode == "classification":
        k = min(5, int((y == 1).sum()), int((y == 0).sum()))
        folds = _stratified_folds(y, k, cv_rng) if k >= 2 else None
    else:
        k = min(5, n)
        folds = _plain_folds(n, k, cv_rng) if k >= 2 else None
    if folds is None:
        return grid[0]

    all_idx = np.arange(n)
    best_params, best_score = grid[0], -np.inf
    for params in grid:
        fold_scores = []
        for test_idx in folds:
            train_idx = np.setdiff1d(all_idx, test_idx, assume_unique=False)
            est = _fit_quiet(build(params), X[train_idx], y[train_idx])
            s = predict_scores(est, X[test_idx])
            if mode == "classification":
                fold_scores.append(_binary_auc(s, y[test_idx]))
            else:
                fold_scores.append(-float(np.mean((s - y[test_idx]) ** 2)))
        mean_score = float(np.mean(fold_scores))
        if mean_score > best_score:
            best_params, best_score = params, mean_score
    return best_params


def _proba_of_one(est, X: np.ndarray) -> np.ndarray:
    proba = est.predict_proba(X)
    idx = int(np.flatnonzero(est.classes_ == 1)[0])
    return proba[:, idx]


def _gini(y: np.ndarray) -> float:
    _, counts = np.unique(y, return_counts=True)
    frac = counts / y.size
    return 1.0 - float(np.sum(frac**2))


def fit(
    spec: LearnerSpec, X, y, rng: np.random.Generator,
    feature_names: tuple[str, ...] | None = None,
) -> TrainedModel:
    """Train one learner; deterministic given (spec, X, y, rng state).

    Classification mode requires both classes in y. Regression mode on a
    zero-variance target degrades to a constant predictor with a warning.
    """
    X = np.asarray(X, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit needs a non-empty 2-D feature matrix")
    if y_arr.shape != (X.shape[0],):
        raise ValueError("fit needs one target per row")
    if feature_names is None:
        feature_names = tuple(f"f{j}" for j in range(X.shape[1]))
    if len(feature_names) != X.shape[1]:
        raise ValueError("feature_names must match the matrix columns")

    if spec.mode == "classification":
        y_arr = y_arr.astype(int)
        if np.unique(y_arr).size < 2:
            raise SingleClassError(f"{spec.learner_id}: training labels contain a single class")
    elif np.var(y_arr) == 0.0:
        warnings.warn(
            f"{spec.learner_id}: zero-variance target, degrading to a constant predictor",
            stacklevel=2,
        )
        const = float(y_arr[0])
        raw = np.zeros(X.shape[1]) if spec.family in ("random_forest", "decision_tree") else None
        return TrainedModel(spec, feature_names, lambda Xt: np.full(Xt.shape[0], const), raw)

    seed = int(rng.integers(0, 2**31 - 1))
    cv_rng = np.random.default_rng(int(rng.integers(0, 2**31 - 1)))

    if spec.family in STANDARDIZED_FAMILIES:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd == 0.0, 1.0, sd)
        X_fit = (X - mu) / sd

        def transform(Xt: np.ndarray) -> np.ndarray:
            return (Xt - mu) / sd
    else:
        X_fit = X

        def transform(Xt: np.ndarray) -> np.ndarray:
            return Xt

    builder = _BUILDERS[spec.family]
    scorer, impurity_raw = builder(spec, X_fit, y_arr, seed, cv_rng)
    return TrainedModel(
        spec,
        feature_names,
        lambda Xt, _t=transform, _s=scorer: _s(_t(np.asarray(Xt, dtype=float))),
        impurity_raw,
    )


def _build_statistical(spec, X, y, seed, cv_rng):
    if spec.mode == "classification":
        beta = _irls_logistic(X, y.astype(float))
        return (lambda Xt: _sigmoid(beta[0] + Xt @ beta[1:])), None
    beta = ols_coefficients(X, y)
    return (lambda Xt: ols_predict(Xt, beta)), None


def _build_random_forest(spec, X, y, seed, cv_rng):
    trees = int(spec.hp("trees", DEFAULT_TREES))
    if spec.mode == "classification":
        rf = RandomForestClassifier(
            n_estimators=trees, max_features="sqrt", min_samples_leaf=1,
            random_state=seed, n_jobs=1,
        ).fit(X, y)

        def scorer(Xt: np.ndarray) -> np.ndarray:
            votes = np.zeros(Xt.shape[0])
            for est in rf.estimators_:
                votes += est.predict(Xt)
            return votes / len(rf.estimators_)

        raw = sum(t.tree_.compute_feature_importances(normalize=False) for t in rf.estimators_)
        return scorer, np.asarray(raw, dtype=float)
    rf = RandomForestRegressor(
        n_estimators=trees, max_features=1 / 3, min_samples_leaf=5,
        random_state=seed, n_jobs=1,
    ).fit(X, y)
    raw = sum(t.tree_.compute_feature_importances(normalize=False) for t in rf.estimators_)
    return rf.predict, np.asarray(raw, dtype=float)


def _build_decision_tree(spec, X, y, seed, cv_rng):
    # the complexity grid is relative to the root impurity, so one grid
    # works across targets of very different scales
    if spec.mode == "classification":
        root_impurity = _gini(y)
        make = lambda cp: DecisionTreeClassifier(ccp_alpha=cp * root_impurity, random_state=seed)
        predict = _proba_of_one
    else:
        root_impurity = float(np.var(y))
        make = lambda cp: DecisionTreeRegressor(ccp_alpha=cp * root_impurity, random_state=seed)
        predict = lambda est, Xt: est.predict(Xt)
    if root_impurity == 0.0:
        cp = CP_GRID[0]
    else:
        cp = _select_by_cv(CP_GRID, make, predict, X, y, spec.mode, cv_rng)
    tree = _fit_quiet(make(cp), X, y)
    raw = tree.tree_.compute_feature_importances(normalize=False)
    return (lambda Xt: predict(tree, Xt)), np.asarray(raw, dtype=float)


def _build_neural_net(spec, X, y, seed, cv_rng):
    if spec.mode == "classification":
        cls, predict = MLPClassifier, _proba_of_one
    else:
        cls, predict = MLPRegressor, (lambda est, Xt: est.predict(Xt))

    def make(params):
        hidden, decay = params
        return cls(
            hidden_layer_sizes=(hidden,), activation="logistic", alpha=decay,
            solver="lbfgs", max_iter=200, random_state=seed,
        )

    params = _select_by_cv(NN_GRID, make, predict, X, y, spec.mode, cv_rng)
    net = _fit_quiet(make(params), X, y)
    return (lambda Xt: predict(net, Xt)), None


def _build_svm(spec, X, y, seed, cv_rng):
    if spec.mode == "classification":
        svm = _fit_quiet(SGDClassifier(loss="hinge", random_state=seed), X, y)
        return (lambda Xt: _sigmoid(svm.decision_function(Xt))), None
    svm = _fit_quiet(
        SGDRegressor(loss="epsilon_insensitive", epsilon=SVM_EPSILON, random_state=seed), X, y
    )
    return svm.predict, None


def _build_knn(spec, X, y, seed, cv_rng):
    k = min(int(spec.hp("k", DEFAULT_KNN_K)), X.shape[0])
    if spec.mode == "classification":
        knn = KNeighborsClassifier(n_neighbors=k).fit(X, y)
        return (lambda Xt: _proba_of_one(knn, Xt)), None
    knn = KNeighborsRegressor(n_neighbors=k).fit(X, y)
    return knn.predict, None


_BUILDERS = {
    "statistical": _build_statistical,
    "random_forest": _build_random_forest,
    "neural_net": _build_neural_net,
    "decision_tree": _build_decision_tree,
    "svm": _build_svm,
    "knn": _build_knn,
}


def impurity_importance(model: TrainedModel) -> ImpurityImportance:
    """Split-based importance: total impurity decrease per feature, normalized.

    Only tree-backed families record impurity decreases; anything else is
    unsupported. With no split anywhere, all shares are zero.
    """
    if model._impurity_raw is None:
        raise UnsupportedImportanceError(
            f"{model.spec.learner_id}: impurity importance unsupported for this family"
        )
    raw = np.clip(model._impurity_raw, 0.0, None)
    total = float(raw.sum())
    values = raw / total if total > 0 else np.zeros_like(raw)
    return ImpurityImportance(
        feature_names=model.training_feature_names,
        values=tuple(float(v) for v in values),
    )
