"""Command-line entry point.

Subcommands: ``validate`` checks a manifest's datasets against the
admission criteria, ``run`` executes one named study into an output
directory, ``report`` re-renders tables and plots from a finished run
without recomputing it. Exit codes: 0 success, 1 user or configuration
error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .corpus import (
    DatasetError,
    DefectDataset,
    ManifestError,
    load_dataset,
    load_manifest,
    summarize,
)
from .harness import BootstrapAborted
from .learners import FAMILIES
from .runio import IntegrityError, load_record, persist_study, read_csv, verify_outputs
from .study import (
    StudyConfig,
    run_importance_comparison,
    run_preliminary,
    run_r2_study,
    run_ratio_sweep,
    run_rq1,
    run_rq2,
)

STUDIES = {
    "prelim": run_preliminary,
    "rq1": run_rq1,
    "rq2": run_rq2,
    "ratio-sweep": run_ratio_sweep,
    "r2": run_r2_study,
    "importance-cmp": run_importance_comparison,
}

OUT_ROOT_ENV = "DEFECTBENCH_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); usage errors are exit 1
        raise UsageError(message)


def parse_grid(text: str) -> tuple[float, ...]:
    """Percent grid 'start:stop:step', e.g. 5:50:5 -> 0.05 .. 0.50."""
    try:
        start, stop, step = (float(part) for part in text.split(":"))
    except ValueError:
        raise UsageError(f"bad --grid {text!r}, expected start:stop:step in percent") from None
    if step <= 0 or stop < start:
        raise UsageError(f"bad --grid {text!r}: need step > 0 and stop >= start")
    grid = []
    value = start
    while value <= stop + 1e-9:
        grid.append(round(value / 100.0, 6))
        value += step
    if any(not 0.0 < g < 1.0 for g in grid):
        raise UsageError(f"bad --grid {text!r}: ratios must land strictly inside (0, 100)")
    return tuple(grid)


def build_parser() -> _Parser:
    parser = _Parser(prog="defectbench", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="summarize and admit datasets from a manifest")
    p_val.add_argument("--manifest", required=True)
    p_val.add_argument("--epv-mode", choices=["defective-count", "minority-class"],
                       default="defective-count")

    p_run = sub.add_parser("run", help="execute one study")
    p_run.add_argument("study", choices=sorted(STUDIES))
    p_run.add_argument("--manifest", required=True)
    p_run.add_argument("--out", default=None, help=f"output root (default ${OUT_ROOT_ENV} or ./runs)")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--iterations", type=int, default=100,
                       help="bootstrap repetitions (default 100; use 1000 for full-scale runs)")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--learners", default=None,
                       help=f"comma-separated families from: {', '.join(FAMILIES)}")
    p_run.add_argument("--corr-threshold", type=float, default=0.7)
    p_run.add_argument("--redun-cutoff", type=float, default=0.9)
    p_run.add_argument("--trees", type=int, default=100)
    p_run.add_argument("--knn-k", type=int, default=10)
    p_run.add_argument("--grid", default="5:50:5")
    p_run.add_argument("--datasets", default=None, help="comma-separated dataset names to keep")
    p_run.add_argument("--force", action="store_true", help="overwrite an existing study directory")

    p_rep = sub.add_parser("report", help="render tables and plots from a run directory")
    p_rep.add_argument("run_dir")
    return parser


def _load_admitted(args) -> tuple[list[DefectDataset], list[str], list[str]]:
    manifest = load_manifest(args.manifest)
    wanted = None
    if args.datasets:
        wanted = {name.strip() for name in args.datasets.split(",") if name.strip()}
        known = {e.name for e in manifest.entries}
        unknown = wanted - known
        if unknown:
            raise UsageError(f"unknown dataset name(s): {', '.join(sorted(unknown))}")
    admitted, skipped = [], []
    for entry in manifest.entries:
        if wanted is not None and entry.name not in wanted:
            continue
        ds = load_dataset(entry)
        summary = summarize(ds)
        if summary.admitted:
            admitted.append(ds)
        else:
            skipped.append(f"{ds.name} ({summary.rejection_reason})")
    return admitted, list(manifest.feature_preference), skipped


def cmd_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    if not manifest.entries:
        print("no datasets in manifest", file=sys.stderr)
        return 1
    rows = []
    for entry in manifest.entries:
        summary = summarize(load_dataset(entry), epv_mode=args.epv_mode)
        rows.append(summary)
    print(f"{'dataset':<24}{'N':>8}{'P':>6}{'DR%':>8}{'EPV':>8}  verdict")
    n_admitted = 0
    for s in rows:
        verdict = "admitted" if s.admitted else f"rejected: {s.rejection_reason}"
        n_admitted += s.admitted
        print(f"{s.name:<24}{s.n_modules:>8}{s.n_features:>6}"
              f"{100 * s.defective_ratio:>8.1f}{s.epv:>8.1f}  {verdict}")
    print(f"{n_admitted}/{len(rows)} admitted")
    return 0 if n_admitted > 0 else 1


def _normalized_command(args) -> list[str]:
    # only flags that affect result bytes; scheduling flags stay out
    cmd = ["run", args.study, "--manifest", args.manifest, "--seed", str(args.seed),
           "--iterations", str(args.iterations)]
    if args.learners:
        cmd += ["--learners", args.learners]
    cmd += ["--corr-threshold", str(args.corr_threshold),
            "--redun-cutoff", str(args.redun_cutoff),
            "--trees", str(args.trees), "--knn-k", str(args.knn_k),
            "--grid", args.grid]
    if args.datasets:
        cmd += ["--datasets", args.datasets]
    return cmd


def cmd_run(args) -> int:
    families = tuple(FAMILIES) if args.study == "prelim" else ("random_forest",)
    if args.learners:
        families = tuple(name.strip() for name in args.learners.split(",") if name.strip())
        unknown = set(families) - set(FAMILIES)
        if unknown:
            raise UsageError(f"unknown learner families: {', '.join(sorted(unknown))}")

    admitted, preference, skipped = _load_admitted(args)
    for line in skipped:
        print(f"skipping {line}", file=sys.stderr)
    if not admitted:
        print("no admitted datasets to run on", file=sys.stderr)
        return 1

    out_root = Path(args.out or os.environ.get(OUT_ROOT_ENV, "runs"))
    study_dir = out_root / args.study
    if study_dir.exists():
        if not args.force:
            print(f"output directory exists: {study_dir} (use --force to overwrite)",
                  file=sys.stderr)
            return 1
        shutil.rmtree(study_dir)

    try:
        cfg = StudyConfig(
            repetitions=args.iterations,
            master_seed=args.seed,
            learner_families=families,
            corr_threshold=args.corr_threshold,
            redun_cutoff=args.redun_cutoff,
            ratio_grid=parse_grid(args.grid),
            trees=args.trees,
            knn_k=args.knn_k,
            feature_preference=tuple(preference),
            dataset_names=tuple(ds.name for ds in admitted),
            out_dir=str(out_root),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as executor:
        result = STUDIES[args.study](cfg, admitted, executor)
    persist_study(args.study, result, cfg, admitted, study_dir, _normalized_command(args))
    elapsed = time.perf_counter() - started

    out_root.mkdir(parents=True, exist_ok=True)
    with open(out_root / ".runs.log", "a", encoding="utf-8") as log:
        log.write(json.dumps({
            "study": args.study,
            "argv": sys.argv[1:],
            "threads": args.threads,
            "wall_clock_seconds": round(elapsed, 3),
            "finished_unix": int(time.time()),
        }, sort_keys=True) + "\n")
    print(f"wrote {study_dir} in {elapsed:.1f}s")
    return 0


def _print_table(path: Path, title: str) -> None:
    header, rows = read_csv(path)
    widths = [
        max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
        for i in range(len(header))
    ]
    print(f"\n== {title}")
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


def cmd_report(args) -> int:
    from . import plots  # deferred: matplotlib import is slow

    study_dir = Path(args.run_dir)
    record = load_record(study_dir)
    verify_outputs(study_dir, record)
    study = record["study"]
    print(f"study: {study}  (defectbench {record.get('tool_version', '?')})")
    print(f"datasets: {', '.join(sorted(record.get('datasets', {})))}")
    _print_table(study_dir / "summary.csv", "summary")
    for extra, title in (("average_ranks.csv", "average ranks"),
                         ("rank_summary.csv", "per-rank shift summary")):
        if (study_dir / extra).is_file():
            _print_table(study_dir / extra, title)
    plots.render_study_plots(study, study_dir)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "run":
            return cmd_run(args)
        return cmd_report(args)
    except (UsageError, ManifestError, DatasetError, IntegrityError, BootstrapAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help / --version
        code = exc.code if isinstance(exc.code, int) else 0
        return code
    except Exception:
        traceback.print_exc()
        return 2


def run() -> None:
    sys.exit(main())
