"""Bundled synthetic dataset generator.

Two Gaussian normal clusters plus two anomaly clusters: a "direct" cluster
separated along f2 (the source of labeled anomalies) and a "rule" cluster
separated along f3, intended to be covered only by acquired rules and
therefore absent from the weakly-labeled training pool.
"""

from __future__ import annotations

import numpy as np

from .evaluate import Dataset

CLUSTERS = ("normal_a", "normal_b", "direct", "rule")


def make_synthetic(
    seed: int = 0,
    n_normal: int = 1500,
    n_direct: int = 90,
    n_rule: int = 150,
    n_features: int = 4,
    noise: float = 0.5,
) -> tuple[Dataset, np.ndarray]:
    """Returns (dataset, cluster tags).  Feature names are f1..fd."""
    if n_features < 4:
        raise ValueError("generator needs at least 4 features")
    rng = np.random.default_rng(seed)
    centers = {
        "normal_a": np.zeros(n_features),
        "normal_b": np.r_[2.5, 2.5, np.zeros(n_features - 2)],
        "direct": np.r_[0.0, 5.0, np.zeros(n_features - 2)],
        "rule": np.r_[0.0, 0.0, 5.0, np.zeros(n_features - 3)],
    }
    sizes = {
        "normal_a": n_normal // 2,
        "normal_b": n_normal - n_normal // 2,
        "direct": n_direct,
        "rule": n_rule,
    }
    blocks, labels, tags = [], [], []
    for name in CLUSTERS:
        pts = centers[name] + rng.normal(size=(sizes[name], n_features)) * noise
        blocks.append(pts)
        labels.append(np.full(sizes[name], 0 if name.startswith("normal") else 1))
        tags.extend([name] * sizes[name])
    X = np.vstack(blocks)
    y = np.concatenate(labels)
    order = rng.permutation(X.shape[0])
    names = [f"f{i + 1}" for i in range(n_features)]
    return Dataset(X[order], y[order], names), np.array(tags)[order]
