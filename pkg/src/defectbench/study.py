"""The experiments: preliminary learner-family ranking, the paired
performance comparison of both classifier-construction approaches, feature
rank shifts between them, and the three follow-up analyses (defective-ratio
sweep, R^2 versus AUC, and impurity- versus permutation-importance shifts)."""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from .corpus import DefectDataset, resample_to_ratio, summarize
from .harness import BootstrapRun, derive_rng, run_bootstrap
from .learners import MODES, LearnerSpec
from .prefilter import PrefilterReport, prefilter_features
from .stats import (
    DegenerateDataError,
    RankTable,
    compare_paired,
    scott_knott_esd,
    spearman,
    wilcoxon_signed_rank,
)

__all__ = [
    "StudyConfig",
    "ShiftEntry",
    "ShiftReport",
    "rank_features",
    "rank_shifts",
    "run_preliminary",
    "run_rq1",
    "run_rq2",
    "run_ratio_sweep",
    "run_r2_study",
    "run_importance_comparison",
]

DEFAULT_RATIO_GRID = tuple(round(0.05 * i, 2) for i in range(1, 11))


@dataclass(frozen=True)
class StudyConfig:
    """Everything a study run depends on besides the datasets themselves."""

    repetitions: int = 1000
    master_seed: int = 0
    learner_families: tuple[str, ...] = ("random_forest",)
    corr_threshold: float = 0.7
    redun_cutoff: float = 0.9
    ratio_grid: tuple[float, ...] = DEFAULT_RATIO_GRID
    top_ranks: tuple[int, ...] = (1, 2, 3)
    trees: int = 100
    knn_k: int = 10
    feature_preference: tuple[str, ...] = ()
    dataset_names: tuple[str, ...] | None = None  # None = all admitted
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.learner_families:
            raise ValueError("at least one learner family is required")
        grid = self.ratio_grid
        if any(not 0.0 < r < 1.0 for r in grid) or any(
            b <= a for a, b in zip(grid, grid[1:])
        ):
            raise ValueError("ratio grid must be strictly increasing within (0, 1)")

    def spec_for(self, family: str, mode: str) -> LearnerSpec:
        return LearnerSpec(family, mode, {"trees": self.trees, "k": self.knn_k})


@dataclass(frozen=True)
class ShiftEntry:
    rank: int
    shift: float
    features_at_k_first: tuple[str, ...]
    features_at_k_second: tuple[str, ...]


@dataclass(frozen=True)
class ShiftReport:
    dataset: str
    pn: int  # retained-feature count normalizing the shifts
    entries: tuple[ShiftEntry, ...]

    def shift_at(self, k: int) -> float:
        for e in self.entries:
            if e.rank == k:
                return e.shift
        raise KeyError(f"rank {k} not in shift report")


def rank_features(run: BootstrapRun, source: str = "permutation") -> RankTable:
    """Rank features by their per-iteration importance distributions."""
    if len(run.valid_iterations) < 2:
        raise ValueError("rank_features needs at least 2 valid iterations")
    return scott_knott_esd(run.importance_distributions(source), larger_is_better=True)


def rank_shifts(
    first: RankTable,
    second: RankTable,
    pn: int,
    ranks: tuple[int, ...] = (1, 2, 3),
    dataset: str = "",
) -> ShiftReport:
    """Total rank displacement of each side's rank-k features, over pn.

    For every feature a table places at rank k, the distance to its rank in
    the other table is accumulated; the two directed sums are divided by
    the retained-feature count. Zero means each side's rank-k features hold
    rank k in the other table too.
    """
    if pn < 1:
        raise ValueError("pn must be >= 1")
    if set(first.treatments) != set(second.treatments):
        missing = set(first.treatments) ^ set(second.treatments)
        raise ValueError(f"feature(s) present in only one rank table: {sorted(missing)}")
    entries = []
    for k in ranks:
        at_first = first.at_rank(k)
        at_second = second.at_rank(k)
        total = sum(abs(k - second.rank_of(v)) for v in at_first)
        total += sum(abs(k - first.rank_of(v)) for v in at_second)
        entries.append(
            ShiftEntry(rank=k, shift=total / pn,
                       features_at_k_first=at_first, features_at_k_second=at_second)
        )
    return ShiftReport(dataset=dataset, pn=pn, entries=tuple(entries))


def _prefilter_all(
    datasets: list[DefectDataset], cfg: StudyConfig
) -> dict[str, PrefilterReport]:
    return {
        ds.name: prefilter_features(
            ds, cfg.corr_threshold, cfg.redun_cutoff, cfg.feature_preference
        )
        for ds in datasets
    }


def _paired_runs(
    ds: DefectDataset,
    kept: tuple[str, ...],
    family: str,
    cfg: StudyConfig,
    executor: Executor | None,
    record_impurity: bool = False,
) -> dict[str, BootstrapRun]:
    runs = {
        mode: run_bootstrap(
            ds, cfg.spec_for(family, mode), kept, cfg.repetitions,
            cfg.master_seed, executor, record_impurity,
        )
        for mode in MODES
    }
    if runs["classification"].split_digest != runs["regression"].split_digest:
        raise AssertionError(f"{ds.name}: paired arms consumed different splits")
    return runs


def _paired_auc(
    run_c: BootstrapRun, run_r: BootstrapRun
) -> tuple[np.ndarray, np.ndarray, tuple[tuple[int, float], ...]]:
    """Aligned AUC arrays over both-valid iterations plus the per-iteration ratio."""
    disc, regr, ratios = [], [], []
    for it_c, it_r in zip(run_c.iterations, run_r.iterations):
        if not (it_c.valid and it_r.valid):
            continue
        disc.append(it_c.auc)
        regr.append(it_r.auc)
        if it_r.auc > 0:
            ratios.append((it_c.iteration_index, it_c.auc / it_r.auc))
    return np.array(disc), np.array(regr), tuple(ratios)


def _single_family(cfg: StudyConfig) -> str:
    if len(cfg.learner_families) != 1:
        raise ValueError("this study compares the two arms of exactly one learner family")
    return cfg.learner_families[0]


# --- preliminary family ranking -------------------------------------------


@dataclass(frozen=True)
class PrelimResult:
    per_dataset: dict[str, RankTable]
    average_ranks: tuple[tuple[str, float, float], ...]  # (label, avg rank, avg AUC)
    best: str
    runs: dict[tuple[str, str], BootstrapRun] = field(repr=False)  # (dataset, label)
    prefilter: dict[str, PrefilterReport] = field(repr=False)


def run_preliminary(
    cfg: StudyConfig, datasets: list[DefectDataset], executor: Executor | None = None
) -> PrelimResult:
    """Rank every family/mode cell per dataset by AUC, then average the ranks."""
    reports = _prefilter_all(datasets, cfg)
    specs = [cfg.spec_for(f, m) for f in cfg.learner_families for m in MODES]
    runs: dict[tuple[str, str], BootstrapRun] = {}
    per_dataset: dict[str, RankTable] = {}
    for ds in datasets:
        kept = reports[ds.name].kept
        dists = {}
        for spec in specs:
            run = run_bootstrap(ds, spec, kept, cfg.repetitions, cfg.master_seed, executor)
            runs[(ds.name, spec.label)] = run
            dists[spec.label] = run.auc_values()
        per_dataset[ds.name] = scott_knott_esd(dists, larger_is_better=True)

    labels = [s.label for s in specs]
    averages = []
    for label in labels:
        ranks = [per_dataset[ds.name].rank_of(label) for ds in datasets]
        aucs = [runs[(ds.name, label)].mean_auc() for ds in datasets]
        averages.append((label, float(np.mean(ranks)), float(np.mean(aucs))))
    averages.sort(key=lambda t: (t[1], -t[2], t[0]))
    return PrelimResult(
        per_dataset=per_dataset,
        average_ranks=tuple(averages),
        best=averages[0][0],
        runs=runs,
        prefilter=reports,
    )


# --- performance comparison of the two arms --------------------------------


@dataclass(frozen=True)
class Rq1Row:
    dataset: str
    defective_ratio: float
    mean_auc_discretized: float
    mean_auc_regression: float
    p_value: float
    cohens_d: float  # regression-arm mean minus discretized-arm mean, pooled-sd units
    magnitude: str
    higher_arm: str
    n_pairs: int


@dataclass(frozen=True)
class Rq1Result:
    family: str
    rows: tuple[Rq1Row, ...]  # ordered by defective ratio, low to high
    auc_ratios: dict[str, tuple[tuple[int, float], ...]]  # discretized/regression per iteration
    runs: dict[tuple[str, str], BootstrapRun] = field(repr=False)  # (dataset, mode)
    prefilter: dict[str, PrefilterReport] = field(repr=False)


def run_rq1(
    cfg: StudyConfig, datasets: list[DefectDataset], executor: Executor | None = None
) -> Rq1Result:
    """Paired AUC comparison of discretized versus regression-based arms."""
    family = _single_family(cfg)
    reports = _prefilter_all(datasets, cfg)
    rows, ratios, runs = [], {}, {}
    for ds in datasets:
        paired = _paired_runs(ds, reports[ds.name].kept, family, cfg, executor)
        runs[(ds.name, "classification")] = paired["classification"]
        runs[(ds.name, "regression")] = paired["regression"]
        disc, regr, ratio_series = _paired_auc(paired["classification"], paired["regression"])
        cmp = compare_paired(regr, disc)
        higher = {"first-higher": "regression-based", "second-higher": "discretized"}.get(
            cmp.direction, "none"
        )
        rows.append(
            Rq1Row(
                dataset=ds.name,
                defective_ratio=summarize(ds).defective_ratio,
                mean_auc_discretized=paired["classification"].mean_auc(),
                mean_auc_regression=paired["regression"].mean_auc(),
                p_value=cmp.p_value,
                cohens_d=cmp.cohens_d,
                magnitude=cmp.magnitude,
                higher_arm=higher,
                n_pairs=disc.size,
            )
        )
        ratios[ds.name] = ratio_series
    rows.sort(key=lambda r: (r.defective_ratio, r.dataset))
    return Rq1Result(family=family, rows=tuple(rows), auc_ratios=ratios,
                     runs=runs, prefilter=reports)


# --- feature rank shifts ----------------------------------------------------


@dataclass(frozen=True)
class Rq2DatasetResult:
    dataset: str
    defective_ratio: float
    ranks_discretized: RankTable
    ranks_regression: RankTable
    shifts: ShiftReport


@dataclass(frozen=True)
class RankShiftSummary:
    rank: int
    average_shift: float
    variance: float
    p_value_vs_zero: float
    no_signal: bool


@dataclass(frozen=True)
class Rq2Result:
    family: str
    importance_source: str
    per_dataset: tuple[Rq2DatasetResult, ...]
    per_rank: tuple[RankShiftSummary, ...]
    runs: dict[tuple[str, str], BootstrapRun] = field(repr=False)
    prefilter: dict[str, PrefilterReport] = field(repr=False)


def _shift_analysis(
    family: str,
    source: str,
    datasets: list[DefectDataset],
    runs: dict[tuple[str, str], BootstrapRun],
    reports: dict[str, PrefilterReport],
    cfg: StudyConfig,
) -> Rq2Result:
    per_dataset = []
    for ds in datasets:
        table_c = rank_features(runs[(ds.name, "classification")], source)
        table_r = rank_features(runs[(ds.name, "regression")], source)
        shifts = rank_shifts(table_c, table_r, pn=len(reports[ds.name].kept),
                             ranks=cfg.top_ranks, dataset=ds.name)
        per_dataset.append(
            Rq2DatasetResult(
                dataset=ds.name,
                defective_ratio=summarize(ds).defective_ratio,
                ranks_discretized=table_c,
                ranks_regression=table_r,
                shifts=shifts,
            )
        )
    per_dataset.sort(key=lambda r: (r.defective_ratio, r.dataset))

    per_rank = []
    for k in cfg.top_ranks:
        values = np.array([r.shifts.shift_at(k) for r in per_dataset])
        test = wilcoxon_signed_rank(values, np.zeros_like(values))
        variance = float(values.var(ddof=1)) if values.size > 1 else 0.0
        per_rank.append(
            RankShiftSummary(rank=k, average_shift=float(values.mean()),
                             variance=variance, p_value_vs_zero=test.p_value,
                             no_signal=test.no_signal)
        )
    return Rq2Result(family=family, importance_source=source,
                     per_dataset=tuple(per_dataset), per_rank=tuple(per_rank),
                     runs=runs, prefilter=reports)


def run_rq2(
    cfg: StudyConfig, datasets: list[DefectDataset], executor: Executor | None = None
) -> Rq2Result:
    """Compare which features each arm ranks as influential."""
    family = _single_family(cfg)
    reports = _prefilter_all(datasets, cfg)
    runs: dict[tuple[str, str], BootstrapRun] = {}
    for ds in datasets:
        paired = _paired_runs(ds, reports[ds.name].kept, family, cfg, executor)
        runs[(ds.name, "classification")] = paired["classification"]
        runs[(ds.name, "regression")] = paired["regression"]
    return _shift_analysis(family, "permutation", datasets, runs, reports, cfg)


# --- defective-ratio sweep --------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    ratio: float
    mean_auc_discretized: float
    mean_auc_regression: float
    mean_auc_ratio: float
    auc_ratios: tuple[float, ...]


@dataclass(frozen=True)
class SweepDatasetResult:
    dataset: str
    points: tuple[SweepPoint, ...]
    spearman_rho: float | None  # None when the ratio series is degenerate


@dataclass(frozen=True)
class SweepResult:
    family: str
    per_dataset: tuple[SweepDatasetResult, ...]
    runs: dict[tuple[str, float, str], BootstrapRun] = field(repr=False)
    prefilter: dict[str, PrefilterReport] = field(repr=False)


def sweep_correlation(points: tuple[SweepPoint, ...]) -> float | None:
    """Spearman correlation of grid ratio versus mean AUC ratio, if defined."""
    ratios = [p.ratio for p in points]
    means = [p.mean_auc_ratio for p in points]
    try:
        return spearman(ratios, means)
    except (DegenerateDataError, ValueError):
        return None


def run_ratio_sweep(
    cfg: StudyConfig, datasets: list[DefectDataset], executor: Executor | None = None
) -> SweepResult:
    """Re-run the paired comparison at forced defective ratios.

    Features are prefiltered once on the original dataset so every grid
    point models the same feature set.
    """
    family = _single_family(cfg)
    reports = _prefilter_all(datasets, cfg)
    per_dataset, runs = [], {}
    for ds in datasets:
        kept = reports[ds.name].kept
        points = []
        for ratio in cfg.ratio_grid:
            rng = derive_rng(cfg.master_seed, "resample", ds.name, f"{ratio:.6f}")
            resampled = resample_to_ratio(ds, ratio, rng)
            paired = _paired_runs(resampled, kept, family, cfg, executor)
            runs[(ds.name, ratio, "classification")] = paired["classification"]
            runs[(ds.name, ratio, "regression")] = paired["regression"]
            _, _, ratio_series = _paired_auc(paired["classification"], paired["regression"])
            ratio_values = tuple(v for _, v in ratio_series)
            points.append(
                SweepPoint(
                    ratio=ratio,
                    mean_auc_discretized=paired["classification"].mean_auc(),
                    mean_auc_regression=paired["regression"].mean_auc(),
                    mean_auc_ratio=float(np.mean(ratio_values)),
                    auc_ratios=ratio_values,
                )
            )
        per_dataset.append(
            SweepDatasetResult(dataset=ds.name, points=tuple(points),
                               spearman_rho=sweep_correlation(tuple(points)))
        )
    return SweepResult(family=family, per_dataset=tuple(per_dataset),
                       runs=runs, prefilter=reports)


# --- R^2 versus AUC ---------------------------------------------------------


@dataclass(frozen=True)
class R2Row:
    dataset: str
    mean_auc: float
    mean_r_squared: float
    spearman_auc_r2: float | None
    n_pairs: int


@dataclass(frozen=True)
class R2Result:
    family: str
    rows: tuple[R2Row, ...]
    runs: dict[str, BootstrapRun] = field(repr=False)
    prefilter: dict[str, PrefilterReport] = field(repr=False)


def run_r2_study(
    cfg: StudyConfig, datasets: list[DefectDataset], executor: Executor | None = None
) -> R2Result:
    """Correlate iteration-level AUC with test R^2 for the regression arm."""
    family = _single_family(cfg)
    reports = _prefilter_all(datasets, cfg)
    rows, runs = [], {}
    for ds in datasets:
        run = run_bootstrap(
            ds, cfg.spec_for(family, "regression"), reports[ds.name].kept,
            cfg.repetitions, cfg.master_seed, executor,
        )
        runs[ds.name] = run
        pairs = [
            (it.auc, it.r_squared) for it in run.valid_iterations if it.r_squared is not None
        ]
        aucs = np.array([p[0] for p in pairs])
        r2s = np.array([p[1] for p in pairs])
        try:
            rho = spearman(aucs, r2s) if len(pairs) >= 3 else None
        except DegenerateDataError:
            rho = None
        rows.append(
            R2Row(dataset=ds.name, mean_auc=run.mean_auc(),
                  mean_r_squared=float(r2s.mean()) if r2s.size else float("nan"),
                  spearman_auc_r2=rho, n_pairs=len(pairs))
        )
    return R2Result(family=family, rows=tuple(rows), runs=runs, prefilter=reports)


# --- permutation versus impurity importance ---------------------------------


@dataclass(frozen=True)
class ImportanceComparisonResult:
    family: str
    by_source: dict[str, Rq2Result]  # "permutation" and "impurity"


def run_importance_comparison(
    cfg: StudyConfig, datasets: list[DefectDataset], executor: Executor | None = None
) -> ImportanceComparisonResult:
    """Rank-shift analysis under both importance methods on identical runs."""
    family = _single_family(cfg)
    if family not in ("random_forest", "decision_tree"):
        raise ValueError(f"{family}: impurity importance needs a tree-backed family")
    reports = _prefilter_all(datasets, cfg)
    runs: dict[tuple[str, str], BootstrapRun] = {}
    for ds in datasets:
        paired = _paired_runs(ds, reports[ds.name].kept, family, cfg, executor,
                              record_impurity=True)
        runs[(ds.name, "classification")] = paired["classification"]
        runs[(ds.name, "regression")] = paired["regression"]
    by_source = {
        source: _shift_analysis(family, source, datasets, runs, reports, cfg)
        for source in ("permutation", "impurity")
    }
    return ImportanceComparisonResult(family=family, by_source=by_source)
