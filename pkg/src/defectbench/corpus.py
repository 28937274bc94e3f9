"""Loading, validation, summarizing and resampling of defect-count datasets.

A dataset is a numeric feature matrix over software modules plus one
non-negative defect count per module. Files are delimited text (comma or
tab) with a header row; a manifest maps each file onto the expected
roles (target column, id column, columns to drop).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DatasetError",
    "ManifestError",
    "DefectDataset",
    "DatasetSummary",
    "ManifestEntry",
    "DatasetManifest",
    "load_manifest",
    "load_dataset",
    "summarize",
    "discretize",
    "resample_to_ratio",
]

EPV_ADMISSION_THRESHOLD = 10.0
DEFECTIVE_RATIO_BOUND = 0.80


class DatasetError(ValueError):
    """A dataset file or in-memory dataset violates the data contract."""


class ManifestError(ValueError):
    """The manifest file is malformed or references bad entries."""


@dataclass(frozen=True)
class DefectDataset:
    """Immutable module-level defect data: N rows, P numeric features."""

    name: str
    module_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    features: np.ndarray
    defect_counts: np.ndarray
    source: str | None = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=float)
        counts = np.asarray(self.defect_counts, dtype=int)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "defect_counts", counts)
        object.__setattr__(self, "module_ids", tuple(self.module_ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        n, p = feats.shape if feats.ndim == 2 else (0, 0)
        if feats.ndim != 2 or p < 1:
            raise DatasetError(f"{self.name}: feature matrix must be 2-D with >= 1 column")
        if n < 2:
            raise DatasetError(f"{self.name}: need at least 2 rows, got {n}")
        if len(self.feature_names) != p:
            raise DatasetError(f"{self.name}: {len(self.feature_names)} names for {p} columns")
        if len(set(self.feature_names)) != p or any(not f for f in self.feature_names):
            raise DatasetError(f"{self.name}: feature names must be unique and non-empty")
        if len(self.module_ids) != n:
            raise DatasetError(f"{self.name}: {len(self.module_ids)} module ids for {n} rows")
        if counts.shape != (n,):
            raise DatasetError(f"{self.name}: defect counts must align with rows")
        if np.any(counts < 0):
            raise DatasetError(f"{self.name}: negative defect count")
        if not np.all(np.isfinite(feats)):
            raise DatasetError(f"{self.name}: non-finite feature value")
        feats.setflags(write=False)
        counts.setflags(write=False)

    @property
    def n_modules(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.feature_names.index(name)]

    def matrix(self, names: list[str] | tuple[str, ...]) -> np.ndarray:
        idx = [self.feature_names.index(n) for n in names]
        return self.features[:, idx]

    def digest(self) -> str:
        """Stable content hash, independent of on-disk formatting."""
        h = hashlib.sha256()
        h.update(self.name.encode("utf-8"))
        h.update("\x1f".join(self.feature_names).encode("utf-8"))
        h.update("\x1f".join(self.module_ids).encode("utf-8"))
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.defect_counts).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class DatasetSummary:
    name: str
    n_modules: int
    n_features: int
    defective_ratio: float
    epv: float
    admitted: bool
    rejection_reason: str | None = None


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    name: str
    target_column: str
    drop_columns: tuple[str, ...] = ()
    id_column: str | None = None

    def __post_init__(self) -> None:
        if self.target_column in self.drop_columns:
            raise ManifestError(
                f"entry {self.name!r}: target column {self.target_column!r} also listed in drop_columns"
            )


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    feature_preference: tuple[str, ...] = ()


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a JSON manifest; entry paths resolve relative to the manifest file."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict) or "datasets" not in raw:
        raise ManifestError(f"{path}: expected an object with a 'datasets' list")
    entries = []
    seen_names: set[str] = set()
    for i, item in enumerate(raw["datasets"]):
        for key in ("path", "name", "target_column"):
            if key not in item:
                raise ManifestError(f"{path}: datasets[{i}] missing {key!r}")
        entry = ManifestEntry(
            path=(path.parent / item["path"]).resolve(),
            name=str(item["name"]),
            target_column=str(item["target_column"]),
            drop_columns=tuple(item.get("drop_columns", ())),
            id_column=item.get("id_column"),
        )
        if not entry.path.is_file():
            raise ManifestError(f"{path}: datasets[{i}] ({entry.name}): file not found: {entry.path}")
        if entry.name in seen_names:
            raise ManifestError(f"{path}: duplicate dataset name {entry.name!r}")
        seen_names.add(entry.name)
        entries.append(entry)
    return DatasetManifest(
        entries=tuple(entries),
        feature_preference=tuple(raw.get("feature_preference", ())),
    )


def _sniff_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def _round_count(value: float) -> int:
    # nearest integer, halves away from zero for the non-negative range
    return int(math.floor(value + 0.5))


def load_dataset(entry: ManifestEntry) -> DefectDataset:
    """Read one delimited dataset file into a validated DefectDataset.

    The target column becomes the defect counts (rounded to the nearest
    non-negative integer); drop columns and the id column are excluded
    from the feature matrix. Any missing or non-numeric cell is a hard
    error reported with file coordinates.
    """
    if not entry.path.is_file():
        raise DatasetError(f"{entry.name}: file not found: {entry.path}")
    with open(entry.path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.strip():
            raise DatasetError(f"{entry.path}: empty file")
        delim = _sniff_delimiter(first)
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delim)
        header = [c.strip() for c in next(reader)]
        if entry.target_column not in header:
            raise DatasetError(f"{entry.path}: target column {entry.target_column!r} not in header")
        excluded = set(entry.drop_columns) | {entry.target_column}
        if entry.id_column is not None:
            if entry.id_column not in header:
                raise DatasetError(f"{entry.path}: id column {entry.id_column!r} not in header")
            excluded.add(entry.id_column)
        feature_cols = [(j, name) for j, name in enumerate(header) if name not in excluded]
        if not feature_cols:
            raise DatasetError(f"{entry.path}: no feature columns left after exclusions")
        names = [name for _, name in feature_cols]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise DatasetError(f"{entry.path}: duplicate feature names: {sorted(dupes)}")
        target_j = header.index(entry.target_column)
        id_j = header.index(entry.id_column) if entry.id_column is not None else None

        rows: list[list[float]] = []
        counts: list[int] = []
        ids: list[str] = []
        for line_no, cells in enumerate(reader, start=2):
            if not cells or (len(cells) == 1 and not cells[0].strip()):
                continue  # trailing blank line
            if len(cells) != len(header):
                raise DatasetError(
                    f"{entry.path}: row {line_no}: expected {len(header)} cells, got {len(cells)}"
                )
            row = []
            for j, name in feature_cols:
                cell = cells[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"{entry.path}: row {line_no}, column {name!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DatasetError(
                        f"{entry.path}: row {line_no}, column {name!r}: non-finite value {cell!r}"
                    )
                row.append(v)
            tcell = cells[target_j].strip()
            try:
                tval = float(tcell)
            except ValueError:
                raise DatasetError(
                    f"{entry.path}: row {line_no}, column {entry.target_column!r}: "
                    f"non-numeric value {tcell!r}"
                ) from None
            if not math.isfinite(tval):
                raise DatasetError(
                    f"{entry.path}: row {line_no}, column {entry.target_column!r}: non-finite value"
                )
            count = _round_count(tval)
            if count < 0:
                raise DatasetError(
                    f"{entry.path}: row {line_no}, column {entry.target_column!r}: "
                    f"negative defect count {tcell!r}"
                )
            rows.append(row)
            counts.append(count)
            ids.append(cells[id_j].strip() if id_j is not None else str(line_no - 1))

    if len(rows) < 2:
        raise DatasetError(f"{entry.path}: need at least 2 data rows, got {len(rows)}")
    return DefectDataset(
        name=entry.name,
        module_ids=tuple(ids),
        feature_names=tuple(names),
        features=np.array(rows, dtype=float),
        defect_counts=np.array(counts, dtype=int),
        source=str(entry.path),
    )


def summarize(ds: DefectDataset, epv_mode: str = "defective-count") -> DatasetSummary:
    """Admission statistics: defective ratio and events-per-variable.

    ``defective-count`` mode counts defective modules as events regardless
    of which class is the minority; ``minority-class`` uses the rarer class.
    """
    if epv_mode not in ("defective-count", "minority-class"):
        raise ValueError(f"unknown epv_mode {epv_mode!r}")
    n = ds.n_modules
    defective = int(np.count_nonzero(ds.defect_counts >= 1))
    ratio = defective / n
    events = defective if epv_mode == "defective-count" else min(defective, n - defective)
    epv = events / ds.n_features
    reason = None
    if epv <= EPV_ADMISSION_THRESHOLD:
        reason = f"EPV <= {EPV_ADMISSION_THRESHOLD:g}"
    elif ratio >= DEFECTIVE_RATIO_BOUND:
        reason = f"defective ratio >= {DEFECTIVE_RATIO_BOUND:.0%}"
    return DatasetSummary(
        name=ds.name,
        n_modules=n,
        n_features=ds.n_features,
        defective_ratio=ratio,
        epv=epv,
        admitted=reason is None,
        rejection_reason=reason,
    )


def discretize(counts) -> np.ndarray:
    """Binary labels from counts: defective (1) iff count >= 1."""
    arr = np.asarray(counts)
    return (arr >= 1).astype(int)


def resample_to_ratio(
    ds: DefectDataset, target_ratio: float, rng: np.random.Generator
) -> DefectDataset:
    """Same-size resample with an exact defective ratio of round(N*r)/N.

    Draws round(N*r) rows with replacement from the defective pool and the
    remainder from the clean pool, then shuffles. Requires both pools to be
    non-empty.
    """
    if not 0.0 < target_ratio < 1.0:
        raise ValueError(f"target_ratio must be in (0, 1), got {target_ratio}")
    n = ds.n_modules
    defective = np.flatnonzero(ds.defect_counts >= 1)
    clean = np.flatnonzero(ds.defect_counts == 0)
    if defective.size == 0 or clean.size == 0:
        raise DatasetError(f"{ds.name}: resampling needs both defective and clean modules")
    n_def = round(n * target_ratio)
    picked_def = rng.choice(defective, size=n_def, replace=True)
    picked_clean = rng.choice(clean, size=n - n_def, replace=True)
    order = rng.permutation(n)
    idx = np.concatenate([picked_def, picked_clean])[order]
    return DefectDataset(
        name=f"{ds.name}~dr{target_ratio:g}",
        module_ids=tuple(ds.module_ids[i] for i in idx),
        feature_names=ds.feature_names,
        features=ds.features[idx],
        defect_counts=ds.defect_counts[idx],
        source=ds.source,
    )
