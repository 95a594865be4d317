"""Experimental protocol: CSV ingestion, splits, and ranking metrics.

The split follows the 7:1:2 train/val/test protocol (stratified per class),
deletes rule-matched anomalies from the training split so rules carry unseen
anomaly scenarios, keeps k labeled anomalies, and treats the remaining
training anomalies as unlabeled normals.  AUPRC is average precision with
tie grouping; Rec@K uses k = number of true outliers, where it coincides
with precision@k and F1@k.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError
from .rules import Rule, any_rule_mask

SPLIT_TAGS = ("train", "val", "test")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    split: np.ndarray | None = None  # optional per-row tags from the CSV

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise DataError(
                f"feature matrix {self.X.shape} and labels {self.y.shape} do not line up"
            )
        if len(self.feature_names) != self.X.shape[1]:
            raise DataError("feature name count does not match feature columns")

    def name_to_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.feature_names)}

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]


def load_csv(path) -> Dataset:
    """Read a dataset CSV: header required, numeric features, a 0/1 ``label``
    column, and an optional ``split`` column of train/val/test tags."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if "label" not in header:
            raise DataError(f"{path}: missing required 'label' column")
        label_col = header.index("label")
        split_col = header.index("split") if "split" in header else None
        feature_cols = [
            i for i in range(len(header)) if i != label_col and i != split_col
        ]
        names = [header[i] for i in feature_cols]
        rows, labels, splits = [], [], []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise DataError(
                    f"{path}: row {lineno}: expected {len(header)} cells, got {len(record)}"
                )
            try:
                rows.append([float(record[i]) for i in feature_cols])
            except ValueError:
                for i in feature_cols:
                    try:
                        float(record[i])
                    except ValueError:
                        raise DataError(
                            f"{path}: row {lineno}, column {header[i]!r}: "
                            f"non-numeric cell {record[i]!r}"
                        ) from None
                raise
            if record[label_col] not in ("0", "1"):
                raise DataError(
                    f"{path}: row {lineno}, column 'label': expected 0 or 1, "
                    f"got {record[label_col]!r}"
                )
            labels.append(int(record[label_col]))
            if split_col is not None:
                tag = record[split_col]
                if tag not in SPLIT_TAGS:
                    raise DataError(
                        f"{path}: row {lineno}, column 'split': unknown tag {tag!r}"
                    )
                splits.append(tag)
    if not rows:
        raise DataError(f"{path}: no data rows")
    split = np.array(splits) if split_col is not None else None
    return Dataset(np.array(rows), np.array(labels), names, split)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(dataset.feature_names) + ["label"]
        if dataset.split is not None:
            header.append("split")
        writer.writerow(header)
        for i in range(dataset.n_samples):
            row = [repr(float(v)) for v in dataset.X[i]] + [str(int(dataset.y[i]))]
            if dataset.split is not None:
                row.append(str(dataset.split[i]))
            writer.writerow(row)


@dataclass
class SplitDataset:
    """Dataset plus the weakly-supervised training view.

    ``train_idx`` excludes deleted rule-matched anomalies; ``train_labels``
    marks only the k retained labeled anomalies as positive, everything else
    in the training pool counts as normal (contamination included).
    """

    data: Dataset
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    deleted_idx: np.ndarray
    labeled_anomaly_idx: np.ndarray
    train_labels: np.ndarray
    seed: int

    def train_features(self) -> np.ndarray:
        return self.data.X[self.train_idx]


def _stratified_split(y: np.ndarray, seed: int):
    rng = np.random.default_rng(seed)
    parts = {tag: [] for tag in SPLIT_TAGS}
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        n = idx.size
        n_train = int(round(0.7 * n))
        n_val = min(int(round(0.1 * n)), n - n_train)
        parts["train"].append(idx[:n_train])
        parts["val"].append(idx[n_train : n_train + n_val])
        parts["test"].append(idx[n_train + n_val :])
    return {tag: np.sort(np.concatenate(chunks)) for tag, chunks in parts.items()}


def split_dataset(
    data: Dataset, rules: Sequence[Rule], k_labeled: int, seed: int
) -> SplitDataset:
    """Build the weakly-supervised split.

    A ``split`` column on the dataset bypasses the random 7:1:2 assignment;
    the rule-matched-anomaly deletion and k-anomaly labeling always apply to
    the training portion.  Raises when fewer than k unmatched training
    anomalies remain.
    """
    rng = np.random.default_rng((seed, 0x51))
    if data.split is not None:
        tags = {tag: np.flatnonzero(data.split == tag) for tag in SPLIT_TAGS}
    else:
        tags = _stratified_split(data.y, seed)
    train_idx = tags["train"]
    matched = np.zeros(data.n_samples, dtype=bool)
    if rules:
        matched = any_rule_mask(rules, data.X, data.name_to_index())
    is_anom = data.y == 1
    delete_mask = matched[train_idx] & is_anom[train_idx]
    deleted_idx = train_idx[delete_mask]
    train_idx = train_idx[~delete_mask]

    train_anoms = train_idx[is_anom[train_idx]]
    if train_anoms.size < k_labeled:
        raise DataError(
            f"need {k_labeled} labeled anomalies but only {train_anoms.size} "
            f"unmatched training anomalies remain after rule deletion"
        )
    labeled = np.sort(rng.choice(train_anoms, size=k_labeled, replace=False))
    train_labels = np.zeros(train_idx.size, dtype=np.int64)
    train_labels[np.isin(train_idx, labeled)] = 1
    return SplitDataset(
        data=data,
        train_idx=train_idx,
        val_idx=tags["val"],
        test_idx=tags["test"],
        deleted_idx=deleted_idx,
        labeled_anomaly_idx=labeled,
        train_labels=train_labels,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def auprc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision over a descending-score sweep with grouped ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    total_pos = int(labels.sum())
    if total_pos == 0:
        raise ValueError("auprc undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = labels[order]
    boundaries = np.flatnonzero(np.diff(s_sorted)) if s_sorted.size > 1 else np.array([], dtype=int)
    group_ends = np.append(boundaries, s_sorted.size - 1)
    tp_cum = np.cumsum(y_sorted)
    ap = 0.0
    prev_recall = 0.0
    for end in group_ends:
        tp = int(tp_cum[end])
        precision = tp / (end + 1)
        recall = tp / total_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def rec_at_k(scores: np.ndarray, labels: np.ndarray) -> float:
    value, _, _ = rec_at_k_detail(scores, labels)
    return value


def rec_at_k_detail(scores: np.ndarray, labels: np.ndarray) -> tuple[float, int, bool]:
    """(recall@k, k, tie-at-cut flag) with k = number of positives.

    Ties at the cut resolve by stable input order; the flag records whether
    the cut fell inside a tie group.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.sum())
    if k == 0:
        raise ValueError("rec@k undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    top = order[:k]
    tie_at_cut = bool(k < scores.size and scores[order[k - 1]] == scores[order[k]])
    return int(labels[top].sum()) / k, k, tie_at_cut


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, **kwargs) -> None:
        self.rows.append(kwargs)

    def mean(self, key: str) -> float:
        return float(np.mean([row[key] for row in self.rows]))

    def std(self, key: str) -> float:
        return float(np.std([row[key] for row in self.rows]))

    def columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.rows:
            for key in row:
                if key not in cols:
                    cols.append(key)
        return cols

    def to_table(self) -> str:
        cols = self.columns()
        if not cols:
            return "(empty report)\n"
        widths = {c: max(len(c), 12) for c in cols}
        lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
        for row in self.rows:
            lines.append(
                "  ".join(_fmt(row.get(c, "")).ljust(widths[c]) for c in cols)
            )
        numeric = [c for c in cols if all(isinstance(r.get(c), (int, float)) for r in self.rows)]
        summary = []
        for c in cols:
            if c in numeric:
                summary.append(f"{self.mean(c):.4f}±{self.std(c):.4f}".ljust(widths[c]))
            else:
                summary.append("".ljust(widths[c]))
        lines.append("  ".join(summary))
        return "\n".join(lines) + "\n"

    def to_delimited(self, delimiter: str = ",") -> str:
        cols = self.columns()
        out = [delimiter.join(cols)]
        for row in self.rows:
            out.append(delimiter.join(_fmt(row.get(c, "")) for c in cols))
        return "\n".join(out) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)
