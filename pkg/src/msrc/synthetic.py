"""Synthetic flow data: a normal Gaussian cluster plus a shifted anomaly cluster.

Anomalies arrive in contiguous bursts so the record stream has the kind of
temporal structure the windowed wavelet stage expects.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def burst_labels(n: int, anomaly_fraction: float, rng: np.random.Generator,
                 burst_range=(5, 40)) -> np.ndarray:
    labels = np.zeros(n, dtype=int)
    lo, hi = burst_range
    mean_burst = (lo + hi) / 2
    mean_gap = mean_burst * (1 - anomaly_fraction) / max(anomaly_fraction, 1e-9)
    pos = int(rng.geometric(1 / max(mean_gap, 1.0)))
    while pos < n:
        length = int(rng.integers(lo, hi + 1))
        labels[pos : pos + length] = 1
        pos += length + int(rng.geometric(1 / max(mean_gap, 1.0)))
    return labels


def two_clusters(n: int = 2000, d: int = 8, seed: int = 0, anomaly_fraction: float = 0.3,
                 separation: float = 0.3, spread: float = 0.05):
    """Return ``(rows, labels)``; anomalies sit ``separation`` away along a random sign pattern."""
    rng = np.random.default_rng(seed)
    labels = burst_labels(n, anomaly_fraction, rng)
    centre = np.full(d, 0.5)
    direction = rng.choice([-1.0, 1.0], size=d)
    rows = centre + spread * rng.standard_normal((n, d))
    rows[labels == 1] += separation * direction
    return rows, labels


def write_csv(path, rows, labels, header: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = rows.shape[1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"f{i}" for i in range(d)] + ["label"])
        for r, y in zip(rows, labels):
            w.writerow([repr(float(v)) for v in r] + ["attack" if y else "normal"])
    return path


def write_split(directory, n_train: int = 2000, n_test: int = 1000, d: int = 8, seed: int = 0,
                **kwargs) -> tuple[Path, Path]:
    """Write ``train.csv``/``test.csv`` drawn from the same two-cluster model."""
    directory = Path(directory)
    rows, labels = two_clusters(n_train + n_test, d, seed, **kwargs)
    train = write_csv(directory / "train.csv", rows[:n_train], labels[:n_train])
    test = write_csv(directory / "test.csv", rows[n_train:], labels[n_train:])
    return train, test
