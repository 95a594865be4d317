"""Simulated rule knowledge from decision trees.

Greedy CART with Gini impurity is fit on labeled data (bootstrap resampling
across trees); every root-to-leaf path whose matching samples are all
anomalous and nonempty becomes a rule after per-feature canonicalization
(<=/> interval bounds).  A noise injector shifts thresholds by quantile
offsets to produce the incompletely-correct rules used in robustness
studies.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DataError
from .rules import Condition, Rule, rule_match_mask


@dataclass
class TreeConfig:
    max_depth: int = 4
    min_leaf: int = 1
    feature_subsample: int = 0  # 0 = all features; else random subset per tree
    feature_indices: tuple[int, ...] = ()  # explicit allowlist, overrides subsample
    seed: int = 0


@dataclass
class TreeNode:
    feature: int = -1  # -1 marks a leaf
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    counts: tuple[int, int] = (0, 0)  # (#normal, #anomaly) reaching the node

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class DecisionTree:
    root: TreeNode
    config: TreeConfig
    features_used: tuple[int, ...]

    def depth(self) -> int:
        def rec(node):
            if node.is_leaf:
                return 0
            return 1 + max(rec(node.left), rec(node.right))

        return rec(self.root)


def gini(y: np.ndarray) -> float:
    if y.size == 0:
        return 0.0
    p = float(y.mean())
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def fit_tree(X: np.ndarray, y: np.ndarray, config: TreeConfig) -> DecisionTree:
    """Greedy CART on binary labels.

    Splits minimize weighted Gini impurity over midpoints of consecutive
    distinct sorted values; ties break to the lowest feature index, then the
    lowest threshold.  Recursion stops at max_depth, pure nodes, or when
    min_leaf admits no candidate.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("fit_tree needs a nonempty 2-D feature matrix")
    if set(np.unique(y)) - {0, 1}:
        raise DataError("labels must be binary")
    rng = np.random.default_rng(config.seed)
    n_features = X.shape[1]
    if config.feature_indices:
        candidates = tuple(sorted(config.feature_indices))
        if any(f < 0 or f >= n_features for f in candidates):
            raise DataError(f"feature allowlist {candidates} out of range for d={n_features}")
    elif 0 < config.feature_subsample < n_features:
        candidates = tuple(
            sorted(rng.choice(n_features, size=config.feature_subsample, replace=False))
        )
    else:
        candidates = tuple(range(n_features))

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        labels = y[idx]
        counts = (int((labels == 0).sum()), int((labels == 1).sum()))
        node = TreeNode(counts=counts)
        if depth >= config.max_depth or counts[0] == 0 or counts[1] == 0:
            return node
        best = None  # (impurity, feature, threshold, order, split_pos)
        for f in candidates:
            order = np.argsort(X[idx, f], kind="stable")
            values = X[idx[order], f]
            pos, impurity = kernels.best_split_scan(
                values, labels[order].astype(np.float64), config.min_leaf
            )
            if pos < 0:
                continue
            threshold = (values[pos] + values[pos + 1]) / 2.0
            if best is None or impurity < best[0]:
                best = (impurity, f, threshold, order, pos)
        if best is None:
            return node
        _, f, threshold, order, pos = best
        node.feature = f
        node.threshold = float(threshold)
        left_idx = idx[order[: pos + 1]]
        right_idx = idx[order[pos + 1 :]]
        node.left = build(np.sort(left_idx), depth + 1)
        node.right = build(np.sort(right_idx), depth + 1)
        return node

    root = build(np.arange(X.shape[0]), 0)
    return DecisionTree(root, config, candidates)


@dataclass
class PathProvenance:
    rule_id: str
    tree_index: int
    tree_seed: int
    leaf_id: int
    support: int


def _canonical_conditions(path: list[tuple[int, float, bool]], names: Sequence[str]):
    """Tightest per-feature interval over (feature, threshold, went_left)."""
    upper: dict[int, float] = {}
    lower: dict[int, float] = {}
    for feature, threshold, went_left in path:
        if went_left:  # value <= threshold
            if feature not in upper or threshold < upper[feature]:
                upper[feature] = threshold
        else:  # value > threshold
            if feature not in lower or threshold > lower[feature]:
                lower[feature] = threshold
    conditions = []
    for feature in sorted(set(upper) | set(lower)):
        if feature in lower:
            conditions.append(Condition(names[feature], ">", lower[feature]))
        if feature in upper:
            conditions.append(Condition(names[feature], "<=", upper[feature]))
    return conditions


def extract_anomaly_paths(
    trees: Sequence[DecisionTree],
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str],
) -> tuple[list[Rule], list[PathProvenance]]:
    """All-right anomaly paths as rules, deduplicated across trees.

    A path qualifies when the samples of (X, y) matching its canonicalized
    conjunction are nonempty and all anomalous; this is checked against the
    full data even for bootstrap-fit trees, so the all-right property holds
    by construction.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    name_to_index = {n: i for i, n in enumerate(feature_names)}
    rules: list[Rule] = []
    provenance: list[PathProvenance] = []
    seen: set[tuple] = set()
    for tree_index, tree in enumerate(trees):
        leaf_counter = 0

        def walk(node: TreeNode, path: list[tuple[int, float, bool]]):
            nonlocal leaf_counter
            if node.is_leaf:
                leaf_id = leaf_counter
                leaf_counter += 1
                if not path:
                    return
                conditions = _canonical_conditions(path, feature_names)
                candidate = Rule(f"rule_{len(rules):03d}", conditions, True)
                mask = rule_match_mask(candidate, X, name_to_index)
                support = int(mask.sum())
                if support == 0 or not (y[mask] == 1).all():
                    return
                signature = tuple(
                    (c.attribute, c.predicate, c.threshold) for c in conditions
                )
                if signature in seen:
                    return
                seen.add(signature)
                rules.append(candidate)
                provenance.append(
                    PathProvenance(
                        candidate.rule_id,
                        tree_index,
                        tree.config.seed,
                        leaf_id,
                        support,
                    )
                )
                return
            walk(node.left, path + [(node.feature, node.threshold, True)])
            walk(node.right, path + [(node.feature, node.threshold, False)])

        walk(tree.root, [])
    return rules, provenance


@dataclass
class AcquisitionConfig:
    n_trees: int = 5
    max_depth: int = 4
    min_leaf: int = 1
    feature_subsample: int = 0
    feature_indices: tuple[int, ...] = ()
    seed: int = 0


def acquire_rules(
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str],
    config: AcquisitionConfig,
) -> tuple[list[Rule], list[PathProvenance]]:
    """Fit bootstrap trees and extract their all-right anomaly paths."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    trees = []
    for t in range(config.n_trees):
        tree_seed = int(rng.integers(0, 2**31 - 1))
        if t == 0:
            sample = np.arange(X.shape[0])  # first tree sees the full data
        else:
            sample = np.random.default_rng(tree_seed).integers(
                0, X.shape[0], size=X.shape[0]
            )
        tree_cfg = TreeConfig(
            max_depth=config.max_depth,
            min_leaf=config.min_leaf,
            feature_subsample=config.feature_subsample,
            feature_indices=config.feature_indices,
            seed=tree_seed,
        )
        trees.append(fit_tree(X[sample], y[sample], tree_cfg))
    return extract_anomaly_paths(trees, X, y, feature_names)


def inject_noise(
    rules: Sequence[Rule],
    ratio: float,
    rng: np.random.Generator,
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str],
    max_draws: int = 20,
    max_widen: int = 5,
) -> list[Rule]:
    """Perturb ceil(ratio*s) rules so each misclassifies >= 1 normal sample.

    One condition's threshold moves by a random quantile offset (10-30
    percentiles, widened when rejected); a draw is accepted once the noisy
    rule matches at least one normal training sample.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"noise ratio {ratio} outside [0, 1]")
    rules = list(rules)
    if ratio == 0.0 or not rules:
        return rules
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    name_to_index = {n: i for i, n in enumerate(feature_names)}
    n_noisy = int(np.ceil(ratio * len(rules)))
    chosen = rng.choice(len(rules), size=n_noisy, replace=False)
    out = list(rules)
    for ridx in sorted(int(i) for i in chosen):
        rule = rules[ridx]
        accepted = None
        last = None
        for widen in range(max_widen + 1):
            hi = 30.0 + 30.0 * widen
            for _ in range(max_draws):
                cond_i = int(rng.integers(len(rule.conditions)))
                cond = rule.conditions[cond_i]
                col = X[:, name_to_index[cond.attribute]]
                base_q = float((col <= cond.threshold).mean()) * 100.0
                offset = float(rng.uniform(10.0, hi)) * (1.0 if rng.random() < 0.5 else -1.0)
                q = float(np.clip(base_q + offset, 0.0, 100.0))
                new_threshold = float(np.percentile(col, q))
                conds = list(rule.conditions)
                conds[cond_i] = Condition(cond.attribute, cond.predicate, new_threshold)
                try:
                    candidate = Rule(rule.rule_id, conds, rule.consequent)
                except ValueError:
                    continue  # perturbation made the antecedent unsatisfiable
                last = candidate
                mask = rule_match_mask(candidate, X, name_to_index)
                if (mask & (y == 0)).any():
                    accepted = candidate
                    break
            if accepted is not None:
                break
        if accepted is None:
            warnings.warn(
                f"could not make rule {rule.rule_id!r} misclassify a normal sample; "
                "keeping widest perturbation"
            )
            accepted = last if last is not None else rule
        out[ridx] = accepted
    return out
