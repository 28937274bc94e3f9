"""Deterministic persistence of study runs.

Every study writes one directory: per-iteration tables and run metadata per
dataset/learner, a study-level summary (CSV plus JSON), vector plots, and a
run record listing each emitted file with its content hash. All bytes are
reproducible given identical inputs and seed, so reruns can be compared
directly and tampering is detectable.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import DefectDataset
from .harness import BootstrapRun
from .prefilter import PrefilterReport
from .stats import RankTable
from .study import (
    ImportanceComparisonResult,
    PrelimResult,
    R2Result,
    Rq1Result,
    Rq2Result,
    StudyConfig,
    SweepResult,
)

__all__ = ["IntegrityError", "persist_study", "load_record", "verify_outputs"]

RECORD_NAME = "run_record.json"


class IntegrityError(RuntimeError):
    """A persisted results file does not match its recorded digest."""


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    lines = path.read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:] if line]


def parse_cell(cell: str) -> float | None:
    return None if cell == "NA" else float(cell)


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n",
        encoding="utf-8",
    )


def dataset_dirname(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._~-]", "_", name)


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_iterations(path: Path, run: BootstrapRun) -> None:
    has_mdi = any(it.impurity_importance is not None for it in run.iterations)
    header = ["iteration", "valid", "oob_fraction", "auc", "r_squared"]
    header += [f"perm::{f}" for f in run.feature_names]
    if has_mdi:
        header += [f"mdi::{f}" for f in run.feature_names]
    rows = []
    for it in run.iterations:
        row = [it.iteration_index, it.valid, it.oob_fraction, it.auc, it.r_squared]
        perm = it.permutation_importance or (None,) * len(run.feature_names)
        row += list(perm)
        if has_mdi:
            mdi = it.impurity_importance or (None,) * len(run.feature_names)
            row += list(mdi)
        rows.append(row)
    write_csv(path, header, rows)


def _write_run_meta(path: Path, run: BootstrapRun, ds_digest: str) -> None:
    write_json(path, {
        "dataset": run.dataset_name,
        "dataset_digest": ds_digest,
        "learner": {
            "family": run.spec.family,
            "mode": run.spec.mode,
            "label": run.spec.label,
            "hyperparameters": dict(run.spec.hyperparameters),
        },
        "repetitions": run.repetitions,
        "master_seed": run.master_seed,
        "n_rows": run.n_rows,
        "feature_names": list(run.feature_names),
        "n_valid": len(run.valid_iterations),
        "split_digest": run.split_digest,
    })


def _write_rank_table(path: Path, table: RankTable) -> None:
    write_csv(path, ["feature", "rank", "mean_importance"],
              [[t, table.ranks[t], table.means[t]] for t in table.treatments])


def _config_payload(cfg: StudyConfig) -> dict:
    payload = asdict(cfg)
    payload.pop("out_dir", None)  # where results land does not affect them
    return payload


class _StudyWriter:
    def __init__(self, study_dir: Path, digests: dict[str, str]):
        self.dir = study_dir
        self.datasets: dict[str, dict] = {}
        self._ds_digests = digests

    def dataset_dir(self, name: str) -> Path:
        d = self.dir / dataset_dirname(name)
        d.mkdir(parents=True, exist_ok=True)
        return d

    def add_run(self, run: BootstrapRun, directory: Path, prefix: str = "") -> None:
        base = f"{prefix}{run.spec.learner_id}"
        _write_iterations(directory / f"{base}_iterations.csv", run)
        _write_run_meta(directory / f"{base}_run.json", run,
                        self._ds_digests[run.dataset_name.split("~dr")[0]])

    def add_prefilter(self, name: str, report: PrefilterReport) -> None:
        write_json(self.dataset_dir(name) / "prefilter.json", report.to_dict())


def _persist_prelim(w: _StudyWriter, result: PrelimResult) -> dict:
    rows = []
    for (ds_name, label), run in sorted(result.runs.items()):
        w.add_run(run, w.dataset_dir(ds_name))
        table = result.per_dataset[ds_name]
        rows.append([ds_name, label, table.rank_of(label), run.mean_auc()])
    write_csv(w.dir / "summary.csv", ["dataset", "learner", "rank", "mean_auc"], rows)
    write_csv(
        w.dir / "average_ranks.csv",
        ["learner", "average_rank", "average_auc", "best"],
        [[label, r, a, label == result.best] for label, r, a in result.average_ranks],
    )
    return {
        "average_ranks": [
            {"learner": label, "average_rank": r, "average_auc": a}
            for label, r, a in result.average_ranks
        ],
        "best": result.best,
    }


def _persist_rq1(w: _StudyWriter, result: Rq1Result) -> dict:
    for (ds_name, _mode), run in sorted(result.runs.items()):
        w.add_run(run, w.dataset_dir(ds_name))
    for ds_name, series in sorted(result.auc_ratios.items()):
        write_csv(w.dataset_dir(ds_name) / "auc_ratio.csv",
                  ["iteration", "auc_ratio"], list(series))
    header = ["dataset", "defective_ratio", "mean_auc_discretized", "mean_auc_regression",
              "p_value", "cohens_d", "magnitude", "higher_arm", "n_pairs"]
    rows = [[r.dataset, r.defective_ratio, r.mean_auc_discretized, r.mean_auc_regression,
             r.p_value, r.cohens_d, r.magnitude, r.higher_arm, r.n_pairs]
            for r in result.rows]
    write_csv(w.dir / "summary.csv", header, rows)
    return {"family": result.family, "rows": [asdict(r) for r in result.rows]}


def _persist_shift_tables(w: _StudyWriter, result: Rq2Result, suffix: str = "") -> None:
    for item in result.per_dataset:
        d = w.dataset_dir(item.dataset)
        _write_rank_table(d / f"feature_ranks_discretized{suffix}.csv", item.ranks_discretized)
        _write_rank_table(d / f"feature_ranks_regression{suffix}.csv", item.ranks_regression)
        write_csv(
            d / f"shifts{suffix}.csv",
            ["rank", "shift", "features_discretized", "features_regression"],
            [[e.rank, e.shift, " ".join(e.features_at_k_first), " ".join(e.features_at_k_second)]
             for e in item.shifts.entries],
        )


def _rank_summary_rows(result: Rq2Result) -> list[list]:
    return [[result.importance_source, s.rank, s.average_shift, s.variance,
             s.p_value_vs_zero, s.no_signal]
            for s in result.per_rank]


def _persist_rq2(w: _StudyWriter, result: Rq2Result) -> dict:
    for (ds_name, _mode), run in sorted(result.runs.items()):
        w.add_run(run, w.dataset_dir(ds_name))
    _persist_shift_tables(w, result)
    header = ["dataset", "defective_ratio"] + [
        f"shift_rank{e.rank}" for e in result.per_dataset[0].shifts.entries
    ]
    rows = [[r.dataset, r.defective_ratio] + [e.shift for e in r.shifts.entries]
            for r in result.per_dataset]
    write_csv(w.dir / "summary.csv", header, rows)
    write_csv(w.dir / "rank_summary.csv",
              ["importance", "rank", "average_shift", "variance", "p_value_vs_zero", "no_signal"],
              _rank_summary_rows(result))
    return {
        "family": result.family,
        "per_rank": [asdict(s) for s in result.per_rank],
        "per_dataset": [
            {"dataset": r.dataset, "defective_ratio": r.defective_ratio,
             "shifts": [asdict(e) for e in r.shifts.entries]}
            for r in result.per_dataset
        ],
    }


def _persist_sweep(w: _StudyWriter, result: SweepResult) -> dict:
    for (ds_name, ratio, _mode), run in sorted(result.runs.items()):
        d = w.dataset_dir(ds_name) / f"ratio-{ratio:g}"
        d.mkdir(exist_ok=True)
        w.add_run(run, d)
    for item in result.per_dataset:
        d = w.dataset_dir(item.dataset)
        write_csv(d / "sweep.csv",
                  ["ratio", "mean_auc_discretized", "mean_auc_regression", "mean_auc_ratio"],
                  [[p.ratio, p.mean_auc_discretized, p.mean_auc_regression, p.mean_auc_ratio]
                   for p in item.points])
        write_csv(d / "ratio_iterations.csv", ["ratio", "auc_ratio"],
                  [[p.ratio, v] for p in item.points for v in p.auc_ratios])
    write_csv(w.dir / "summary.csv", ["dataset", "spearman_rho", "degenerate", "n_grid"],
              [[r.dataset, r.spearman_rho, r.spearman_rho is None, len(r.points)]
               for r in result.per_dataset])
    return {
        "family": result.family,
        "correlations": {r.dataset: r.spearman_rho for r in result.per_dataset},
    }


def _persist_r2(w: _StudyWriter, result: R2Result) -> dict:
    for ds_name, run in sorted(result.runs.items()):
        w.add_run(run, w.dataset_dir(ds_name))
    write_csv(w.dir / "summary.csv",
              ["dataset", "mean_auc", "mean_r_squared", "spearman_auc_r2", "n_pairs"],
              [[r.dataset, r.mean_auc, r.mean_r_squared, r.spearman_auc_r2, r.n_pairs]
               for r in result.rows])
    return {"family": result.family, "rows": [asdict(r) for r in result.rows]}


def _persist_importance_cmp(w: _StudyWriter, result: ImportanceComparisonResult) -> dict:
    perm = result.by_source["permutation"]
    mdi = result.by_source["impurity"]
    for (ds_name, _mode), run in sorted(perm.runs.items()):
        w.add_run(run, w.dataset_dir(ds_name))
    _persist_shift_tables(w, perm, suffix="_permutation")
    _persist_shift_tables(w, mdi, suffix="_impurity")
    ranks = [e.rank for e in perm.per_dataset[0].shifts.entries]
    header = ["dataset", "defective_ratio"]
    header += [f"shift_rank{k}_permutation" for k in ranks]
    header += [f"shift_rank{k}_impurity" for k in ranks]
    rows = []
    for item_p, item_m in zip(perm.per_dataset, mdi.per_dataset):
        rows.append([item_p.dataset, item_p.defective_ratio]
                    + [e.shift for e in item_p.shifts.entries]
                    + [e.shift for e in item_m.shifts.entries])
    write_csv(w.dir / "summary.csv", header, rows)
    write_csv(w.dir / "rank_summary.csv",
              ["importance", "rank", "average_shift", "variance", "p_value_vs_zero", "no_signal"],
              _rank_summary_rows(perm) + _rank_summary_rows(mdi))
    return {
        "family": result.family,
        "per_rank": {
            source: [asdict(s) for s in res.per_rank]
            for source, res in result.by_source.items()
        },
    }


_PERSISTERS = {
    "prelim": _persist_prelim,
    "rq1": _persist_rq1,
    "rq2": _persist_rq2,
    "ratio-sweep": _persist_sweep,
    "r2": _persist_r2,
    "importance-cmp": _persist_importance_cmp,
}


def persist_study(
    study: str,
    result,
    cfg: StudyConfig,
    datasets: list[DefectDataset],
    study_dir: Path,
    command: list[str],
) -> Path:
    """Write all tables, plots and the digest-bearing run record."""
    from . import plots  # deferred: matplotlib import is slow

    study_dir.mkdir(parents=True, exist_ok=False)
    digests = {ds.name: ds.digest() for ds in datasets}
    writer = _StudyWriter(study_dir, digests)
    prefilter = getattr(result, "prefilter", None)
    if prefilter is None and hasattr(result, "by_source"):
        prefilter = result.by_source["permutation"].prefilter
    for name, report in sorted((prefilter or {}).items()):
        writer.add_prefilter(name, report)
    summary_extra = _PERSISTERS[study](writer, result)
    write_json(study_dir / "summary.json", {"study": study, **summary_extra})
    plots.render_study_plots(study, study_dir)

    outputs = {
        str(p.relative_to(study_dir)): sha256_file(p)
        for p in sorted(study_dir.rglob("*"))
        if p.is_file()
    }
    record = {
        "study": study,
        "command": command,
        "config": _config_payload(cfg),
        "tool_version": __version__,
        "datasets": {
            ds.name: {"digest": digests[ds.name], "source": ds.source} for ds in datasets
        },
        "outputs": outputs,
    }
    write_json(study_dir / RECORD_NAME, record)
    return study_dir


def load_record(study_dir: Path) -> dict:
    path = Path(study_dir) / RECORD_NAME
    if not path.is_file():
        raise IntegrityError(f"no run record at {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"corrupt run record {path}: {exc}") from exc


def verify_outputs(study_dir: Path, record: dict) -> None:
    study_dir = Path(study_dir)
    for rel, digest in record.get("outputs", {}).items():
        path = study_dir / rel
        if not path.is_file():
            raise IntegrityError(f"missing results file: {rel}")
        actual = sha256_file(path)
        if actual != digest:
            raise IntegrityError(f"digest mismatch for {rel}: results were modified")
