"""Seeded synthetic defect datasets.

Real defect data cannot be redistributed, so the test suite and the
determinism checks run on generated datasets shaped like the real thing:
a handful of correlated code metrics, counts concentrated at zero, and a
controllable defective ratio. Counts follow a Poisson model on a latent
metric signal, with the intercept calibrated so the expected defective
ratio hits the requested target.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .corpus import DefectDataset

__all__ = [
    "signal_counts",
    "make_dataset",
    "single_signal_dataset",
    "heavy_noise_dataset",
    "write_dataset_csv",
    "write_suite",
]


def _calibrate_intercept(latent: np.ndarray, target_ratio: float) -> float:
    # P(count >= 1) = 1 - exp(-lambda); bisect the intercept until the
    # sample-average defective probability matches the target
    lo, hi = -20.0, 10.0
    for _ in range(80):
        mid = (lo + hi) / 2.0
        p_def = float(np.mean(1.0 - np.exp(-np.exp(mid + latent))))
        if p_def < target_ratio:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def signal_counts(
    latent: np.ndarray, target_ratio: float, rng: np.random.Generator
) -> np.ndarray:
    """Poisson counts whose defect probability tracks the latent signal."""
    a = _calibrate_intercept(latent, target_ratio)
    return rng.poisson(np.exp(a + latent))


def make_dataset(
    name: str,
    n: int,
    defective_ratio: float,
    rng: np.random.Generator,
    n_noise: int = 2,
    signal_strength: float = 1.4,
) -> DefectDataset:
    """Learnable dataset with correlated metrics and a redundant column.

    Features: ``size`` drives defects; ``complexity`` and ``coupling`` are
    rank-correlated with it (exercising the correlation cut); ``churn`` is
    an exact linear blend (exercising the redundancy cut); plus pure-noise
    columns. Counts are Poisson on the size/complexity signal.
    """
    size = rng.normal(size=n)
    complexity = 0.8 * size + 0.25 * rng.normal(size=n)
    coupling = 0.75 * size + 0.3 * rng.normal(size=n)
    churn = 0.5 * size + 0.5 * complexity  # exactly redundant
    noise = rng.normal(size=(n, n_noise))
    latent = signal_strength * (0.7 * size + 0.3 * complexity)
    counts = signal_counts(latent, defective_ratio, rng)
    names = ["size", "complexity", "coupling", "churn"] + [
        f"noise{i + 1}" for i in range(n_noise)
    ]
    features = np.column_stack([size, complexity, coupling, churn, noise])
    return DefectDataset(
        name=name,
        module_ids=tuple(f"m{i}" for i in range(n)),
        feature_names=tuple(names),
        features=features,
        defect_counts=counts,
    )


def single_signal_dataset(
    n: int, n_noise: int, rng: np.random.Generator,
    defective_ratio: float = 0.35, signal_strength: float = 2.5,
) -> DefectDataset:
    """One informative feature among independent noise columns."""
    signal = rng.normal(size=n)
    noise = rng.normal(size=(n, n_noise))
    counts = signal_counts(signal_strength * signal, defective_ratio, rng)
    features = np.column_stack([signal, noise])
    names = ["signal"] + [f"noise{i + 1}" for i in range(n_noise)]
    return DefectDataset(
        name="single-signal",
        module_ids=tuple(f"m{i}" for i in range(n)),
        feature_names=tuple(names),
        features=features,
        defect_counts=counts,
    )


def heavy_noise_dataset(
    n: int, rng: np.random.Generator, defective_ratio: float = 0.3
) -> DefectDataset:
    """Defect membership is learnable but count magnitudes are mostly noise.

    Defective modules get a fat-tailed geometric count, so a regression fit
    explains little count variance even when its score ranks the defective
    modules well.
    """
    signal = rng.normal(size=n)
    noise = rng.normal(size=(n, 3))
    threshold = float(np.quantile(signal, 1.0 - defective_ratio))
    margin = signal - threshold + 0.35 * rng.normal(size=n)
    defective = margin > 0
    counts = np.where(defective, 1 + rng.geometric(0.15, size=n), 0)
    features = np.column_stack([signal, noise])
    names = ["signal", "noise1", "noise2", "noise3"]
    return DefectDataset(
        name="heavy-noise",
        module_ids=tuple(f"m{i}" for i in range(n)),
        feature_names=tuple(names),
        features=features,
        defect_counts=counts.astype(int),
    )


def write_dataset_csv(ds: DefectDataset, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["module", *ds.feature_names, "bugs"])
        for i in range(ds.n_modules):
            writer.writerow(
                [ds.module_ids[i]]
                + [repr(float(v)) for v in ds.features[i]]
                + [int(ds.defect_counts[i])]
            )


def write_suite(directory: Path, seed: int = 7) -> Path:
    """Generate the two-dataset synthetic suite and its manifest.

    One low and one high defective-ratio dataset, both sized so the
    events-per-variable admission criterion passes. Returns the manifest
    path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    specs = [
        ("synth-low-dr", 520, 0.15),
        ("synth-high-dr", 420, 0.55),
    ]
    entries = []
    for name, n, ratio in specs:
        ds = make_dataset(name, n, ratio, np.random.default_rng(seed + hash_stable(name)))
        path = directory / f"{name}.csv"
        write_dataset_csv(ds, path)
        entries.append(
            {"path": path.name, "name": name, "target_column": "bugs", "id_column": "module"}
        )
    manifest = {"datasets": entries, "feature_preference": ["size"]}
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return manifest_path


def hash_stable(text: str) -> int:
    # tiny deterministic string hash; Python's hash() is salted per process
    h = 0
    for ch in text:
        h = (h * 131 + ord(ch)) % (2**31)
    return h
