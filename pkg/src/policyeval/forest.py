"""Honest subsampled regression forests for potential-outcome surfaces.

Each tree draws a subsample, grows its splits on one half by greedy variance
reduction and takes its leaf values from the other half only. Conditional effects
are the difference of a treated-outcome forest and a control-outcome forest.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .contrast import TreatmentRule
from .core import CostSchedule, Dataset, adjusted_outcomes, ensure_ex_ante
from .errors import GrowthError, SchemaError, ValidationError


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 2000
    min_leaf: int = 2
    subsample_fraction: float = 0.5
    candidate_features_per_split: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be at least 1")
        if self.min_leaf < 1:
            raise ValidationError("min_leaf must be at least 1")
        if not 0 < self.subsample_fraction <= 1:
            raise ValidationError("subsample_fraction must lie in (0, 1]")

    def mtry(self, n_features: int) -> int:
        if self.candidate_features_per_split is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        return max(1, min(n_features, self.candidate_features_per_split))


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    depth: np.ndarray
    value: np.ndarray      # honest estimate per node (leaves are what predictions use)
    split_half: np.ndarray
    estimate_half: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        active = self.feature[node] >= 0
        while np.any(active):
            r, nd = rows[active], node[active]
            go_left = x[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    feature_names: tuple[str, ...]
    config: ForestConfig = field(default_factory=ForestConfig)

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.feature_names):
            raise SchemaError(f"expected {len(self.feature_names)} features, got {x.shape[1]}")
        return np.mean([t.predict(x) for t in self.trees], axis=0)


def _best_split(x: np.ndarray, y: np.ndarray, features: np.ndarray, min_leaf: int):
    m = len(y)
    best = (0.0, -1, 0.0)
    base = y.sum() ** 2 / m
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs, ys = x[order, f], y[order]
        csum = np.cumsum(ys)[:-1]
        n_left = np.arange(1, m)
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (m - n_left >= min_leaf)
        if not np.any(valid):
            continue
        total = csum[-1] + ys[-1]
        gain = csum**2 / n_left + (total - csum) ** 2 / (m - n_left) - base
        gain = np.where(valid, gain, -np.inf)
        pos = int(np.argmax(gain))
        if gain[pos] > best[0] + 1e-12 * max(1.0, abs(base)):
            best = (float(gain[pos]), int(f), 0.5 * (xs[pos] + xs[pos + 1]))
    return best


def _grow_tree(x, y, cfg: ForestConfig, rng: np.random.Generator) -> Tree:
    n, k = x.shape
    size = max(2, int(round(cfg.subsample_fraction * n)))
    sub = rng.choice(n, size=min(size, n), replace=False)
    half = len(sub) // 2
    split_half, est_half = np.sort(sub[:half]), np.sort(sub[half:])
    mtry = cfg.mtry(k)

    feature, threshold, left, right, depth = [-1], [0.0], [-1], [-1], [0]
    stack = [(0, split_half)]
    while stack:
        node, idx = stack.pop()
        if len(idx) < 2 * cfg.min_leaf:
            continue
        cand = rng.choice(k, size=mtry, replace=False)
        gain, f, thr = _best_split(x[idx], y[idx], cand, cfg.min_leaf)
        if f < 0:
            continue
        go_left = x[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        for side, part in (("l", idx[go_left]), ("r", idx[~go_left])):
            child = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            depth.append(depth[node] + 1)
            if side == "l":
                left[node] = child
            else:
                right[node] = child
            stack.append((child, part))

    tree = Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(depth),
                np.zeros(len(feature)), split_half, est_half)
    return _honest_values(tree, x, y)


def _honest_values(tree: Tree, x, y) -> Tree:
    """Node values from the estimate half; nodes it never reaches inherit from the nearest ancestor."""
    n_nodes = len(tree.feature)
    sums, counts = np.zeros(n_nodes), np.zeros(n_nodes)
    est = tree.estimate_half
    node = np.zeros(len(est), dtype=np.int64)
    np.add.at(sums, node, y[est])
    np.add.at(counts, node, 1)
    rows = np.arange(len(est))
    active = tree.feature[node] >= 0
    while np.any(active):
        r, nd = rows[active], node[active]
        go_left = x[est[r], tree.feature[nd]] <= tree.threshold[nd]
        node[r] = np.where(go_left, tree.left[nd], tree.right[nd])
        np.add.at(sums, node[r], y[est[r]])
        np.add.at(counts, node[r], 1)
        active = tree.feature[node] >= 0
    value = np.empty(n_nodes)
    value[0] = sums[0] / counts[0]
    for nd in range(n_nodes):  # parents precede children in node order
        for child in (tree.left[nd], tree.right[nd]):
            if child >= 0:
                value[child] = sums[child] / counts[child] if counts[child] > 0 else value[nd]
    return Tree(tree.feature, tree.threshold, tree.left, tree.right, tree.depth, value,
                tree.split_half, tree.estimate_half)


def fit_forest(x, y, cfg: ForestConfig = ForestConfig(), feature_names: Sequence[str] | None = None) -> Forest:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or len(x) != len(y):
        raise ValidationError("x must be 2-D with one row per outcome")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("forest inputs must be finite; encode missing values first")
    if len(y) < 2 * cfg.min_leaf:
        raise GrowthError(f"{len(y)} rows cannot support two leaves of size {cfg.min_leaf}")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(x.shape[1]))
    if len(names) != x.shape[1]:
        raise SchemaError("feature_names length does not match x")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees = tuple(_grow_tree(x, y, cfg, np.random.default_rng(s)) for s in seeds)
    return Forest(trees, names, cfg)


def predict_cate(forest_treated: Forest, forest_control: Forest, x) -> np.ndarray | float:
    """Treated minus control forest prediction; scalar for a single row."""
    if forest_treated.feature_names != forest_control.feature_names:
        raise SchemaError("treated and control forests use different features")
    x = np.asarray(x, dtype=float)
    out = forest_treated.predict(x) - forest_control.predict(x)
    return float(out[0]) if x.ndim == 1 else out


@dataclass(frozen=True)
class Importance:
    weights: dict[str, float]
    degenerate: bool = False


def variable_importance(forest: Forest, max_depth: int | None = 4) -> Importance:
    """Per-depth split shares discounted by ``1/(depth+1)``, normalized to sum to one.

    Split counts are first turned into shares within each depth, so the many
    nodes of deep levels cannot outvote the few near the root. Only depths below
    ``max_depth`` count (``None`` counts all).
    """
    k = len(forest.feature_names)
    deepest = max(int(t.depth.max()) for t in forest.trees)
    levels = deepest + 1 if max_depth is None else min(max_depth, deepest + 1)
    counts = np.zeros((max(levels, 0), k))
    for tree in forest.trees:
        internal = (tree.feature >= 0) & (tree.depth < levels)
        np.add.at(counts, (tree.depth[internal], tree.feature[internal]), 1.0)
    per_level = counts.sum(axis=1)
    used = per_level > 0
    if not np.any(used):
        return Importance({n: 0.0 for n in forest.feature_names}, True)
    depth = np.arange(len(counts))[used]
    totals = (counts[used] / per_level[used, None] / (depth[:, None] + 1)).sum(axis=0)
    totals /= totals.sum()
    return Importance({n: float(v) for n, v in zip(forest.feature_names, totals)})


def fit_potential_outcome_forests(reference: Dataset, sched: CostSchedule, features: Sequence[str],
                                  cfg: ForestConfig = ForestConfig(), missing_indicators: bool = True):
    """Treated forest on adjusted outcomes and control forest on raw outcomes."""
    ensure_ex_ante(reference, "forest method")
    x, names = reference.feature_matrix(features, missing_indicators)
    yadj = adjusted_outcomes(reference, sched)
    t = reference.treatment == 1
    cfg_c = ForestConfig(cfg.n_trees, cfg.min_leaf, cfg.subsample_fraction, cfg.candidate_features_per_split,
                         cfg.seed + 1)
    return fit_forest(x[t], yadj[t], cfg, names), fit_forest(x[~t], yadj[~t], cfg_c, names)


def forest_rule(forest_treated: Forest, forest_control: Forest, features: Sequence[str],
                missing_indicators: bool = True, label: str = "forest") -> TreatmentRule:
    def batch(data: Dataset) -> np.ndarray:
        x, _ = data.feature_matrix(features, missing_indicators)
        return (predict_cate(forest_treated, forest_control, x) >= 0).astype(float)

    def assign(unit) -> int:
        return int(batch(Dataset((unit,), "target_covariates"))[0])

    return TreatmentRule(label, assign, batch)


def write_importance(path, forest_treated: Forest, forest_control: Forest) -> None:
    imp1 = variable_importance(forest_treated).weights
    imp0 = variable_importance(forest_control).weights
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("feature", "importance_y1", "importance_y0"))
        for name in forest_treated.feature_names:
            writer.writerow([name, repr(imp1[name]), repr(imp0[name])])
