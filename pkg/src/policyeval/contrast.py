"""Plug-in treatment rules and ex-post welfare-contrast inference.

The estimator is a normalized inverse-probability-weighted difference between the
cost-adjusted treated outcomes and the raw control outcomes, restricted to the units
on which two rules disagree. Rules are treated as fixed functions of covariates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import CostSchedule, Dataset, UnitRecord, adjusted_outcomes
from .errors import InferenceError, ValidationError


class PredictorFailure(RuntimeError):
    def __init__(self, unit_id, cause):
        super().__init__(f"predictor failed on unit {unit_id}: {cause}")
        self.unit_id = unit_id


@dataclass(frozen=True)
class TreatmentRule:
    """A deterministic map from a unit's covariates to a 0/1 assignment.

    ``batch`` is an optional vectorized equivalent of ``assign`` over a dataset.
    """

    label: str
    assign: Callable[[UnitRecord], int]
    batch: Callable[[Dataset], np.ndarray] | None = field(default=None, compare=False)

    def apply(self, data: Dataset) -> np.ndarray:
        if self.batch is not None:
            out = np.asarray(self.batch(data), dtype=float)
        else:
            out = np.fromiter((self.assign(u) for u in data.units), dtype=float, count=len(data))
        if out.shape != (len(data),) or not np.all((out == 0) | (out == 1)):
            raise ValidationError(f"rule {self.label!r} must return 0/1 for every unit")
        return out


def constant_rule(label: str, value: int) -> TreatmentRule:
    value = int(value)
    return TreatmentRule(label, lambda unit: value, lambda data: np.full(len(data), float(value)))


def make_plugin_rule(cate_predictor: Callable[[UnitRecord], float], label: str = "plugin") -> TreatmentRule:
    """Treat iff the predicted cost-adjusted effect is non-negative (ties treat)."""

    def assign(unit: UnitRecord) -> int:
        try:
            value = float(cate_predictor(unit))
        except Exception as exc:
            raise PredictorFailure(unit.unit_id, exc) from exc
        if math.isnan(value):
            raise PredictorFailure(unit.unit_id, "prediction is NaN")
        return int(value >= 0.0)

    return TreatmentRule(label, assign)


def lookup_rule(label: str, assignments: dict[str, int]) -> TreatmentRule:
    """Rule backed by a stored ``unit_id -> assignment`` table."""

    def assign(unit: UnitRecord) -> int:
        try:
            return int(assignments[unit.unit_id])
        except KeyError:
            raise ValidationError(f"no {label!r} assignment for unit {unit.unit_id}") from None

    return TreatmentRule(label, assign)


@dataclass(frozen=True)
class ContrastEstimate:
    labels: tuple[str, str]
    delta_hat: float
    delta1: float
    delta0: float
    var_hat: float
    n: int
    z: float
    p_value: float
    degenerate: bool = False

    @property
    def se(self) -> float:
        return math.sqrt(self.var_hat / self.n)

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        from scipy.stats import norm

        half = norm.ppf(0.5 + level / 2) * self.se
        return self.delta_hat - half, self.delta_hat + half


def _two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def _arm_weights(t: np.ndarray, p: np.ndarray):
    n1, n0 = int(t.sum()), int((1 - t).sum())
    if n1 < 2 or n0 < 2:
        raise InferenceError(f"need at least 2 units per arm, got {n1} treated and {n0} control")
    return t / p, (1 - t) / (1 - p)


def contrast_from_arrays(t, p, yadj, diff, labels=("l", "m")) -> ContrastEstimate:
    """Core computation on aligned arrays: treatment, propensity, adjusted outcome, rule difference."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    yadj = np.asarray(yadj, dtype=float)
    diff = np.asarray(diff, dtype=float)
    w1, w0 = _arm_weights(t, p)
    a = diff * yadj
    s1, s0 = w1.sum(), w0.sum()
    delta1 = float(np.dot(w1, a) / s1)
    delta0 = float(np.dot(w0, a) / s0)
    var = float(
        np.dot(t / p**2, (a - delta1) ** 2) / s1 + np.dot((1 - t) / (1 - p) ** 2, (a - delta0) ** 2) / s0
    )
    n = len(t)
    delta = delta1 - delta0
    degenerate = False
    if var > 0:
        z = math.sqrt(n) * delta / math.sqrt(var)
        pv = _two_sided_p(z)
    elif delta == 0:
        z, pv = 0.0, 1.0
    else:
        z, pv, degenerate = math.nan, math.nan, True
    return ContrastEstimate(tuple(labels), delta, delta1, delta0, var, n, z, pv, degenerate)


def estimate_contrast(expost: Dataset, rule_l: TreatmentRule, rule_m: TreatmentRule, sched: CostSchedule) -> ContrastEstimate:
    diff = rule_l.apply(expost) - rule_m.apply(expost)
    return contrast_from_arrays(
        expost.treatment, expost.propensity, adjusted_outcomes(expost, sched), diff, (rule_l.label, rule_m.label)
    )


def pairwise_matrix(expost: Dataset, rules: Sequence[TreatmentRule], sched: CostSchedule) -> list[list[ContrastEstimate]]:
    if len(rules) < 2:
        raise ValidationError("pairwise_matrix needs at least two rules")
    assign = [r.apply(expost) for r in rules]
    yadj = adjusted_outcomes(expost, sched)
    t, p = expost.treatment, expost.propensity
    return [
        [contrast_from_arrays(t, p, yadj, assign[i] - assign[j], (rules[i].label, rules[j].label)) for j in range(len(rules))]
        for i in range(len(rules))
    ]


@dataclass(frozen=True)
class McsResult:
    retained: tuple[str, ...]
    elimination_order: tuple[tuple[str, float], ...]
    alpha: float
    bootstrap_reps: int
    stage_p_values: tuple[float, ...] = ()

    @property
    def final_p_value(self) -> float:
        return self.stage_p_values[-1] if self.stage_p_values else 1.0


def _bootstrap_values(t, p, yadj, assign, reps, seed, chunk=64):
    """Per-rule welfare values on ``reps`` unit-level resamples.

    Units are redrawn with replacement within each treatment arm, so arm sizes stay
    fixed (the variance estimate is a sum of per-arm terms). Each replication draws
    from its own child seed, so results do not depend on chunking.
    """
    n = len(t)
    arms = [np.flatnonzero(t == 1), np.flatnonzero(t == 0)]
    w1, w0 = t / p, (1 - t) / (1 - p)
    # columns: numerator terms for each rule in both arms, then the two normalizers
    cols = np.column_stack([(w1 * yadj)[:, None] * assign.T, (w0 * yadj)[:, None] * assign.T, w1, w0])
    children = np.random.SeedSequence(seed).spawn(reps)
    k = assign.shape[0]
    out = np.empty((reps, k))
    for start in range(0, reps, chunk):
        block = children[start:start + chunk]
        counts = np.zeros((len(block), n))
        for row, child in enumerate(block):
            rng = np.random.default_rng(child)
            for idx in arms:
                counts[row] += np.bincount(idx[rng.integers(0, len(idx), len(idx))], minlength=n)
        sums = counts @ cols
        s1, s0 = sums[:, 2 * k], sums[:, 2 * k + 1]
        out[start:start + len(block)] = sums[:, :k] / s1[:, None] - sums[:, k:2 * k] / s0[:, None]
    return out


def model_confidence_set(
    expost: Dataset,
    rules: Sequence[TreatmentRule],
    sched: CostSchedule,
    alpha: float = 0.05,
    reps: int = 1000,
    seed: int = 0,
) -> McsResult:
    """Sequential elimination with a max-|z| range statistic and unit-level bootstrap."""
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if reps < 100:
        raise ValidationError("model confidence set needs at least 100 bootstrap reps")
    labels = [r.label for r in rules]
    if len(set(labels)) != len(labels):
        raise ValidationError("rule labels must be unique")
    if len(rules) == 1:
        return McsResult((labels[0],), (), alpha, reps)
    _arm_weights(expost.treatment, expost.propensity)

    assign = np.array([r.apply(expost) for r in rules])
    t, p = expost.treatment, expost.propensity
    yadj = adjusted_outcomes(expost, sched)
    n = len(t)
    k = len(rules)
    est = np.empty((k, k))
    var = np.empty((k, k))
    for i, j in combinations(range(k), 2):
        c = contrast_from_arrays(t, p, yadj, assign[i] - assign[j])
        est[i, j], est[j, i] = c.delta_hat, -c.delta_hat
        var[i, j] = var[j, i] = c.var_hat
    np.fill_diagonal(est, 0.0)
    np.fill_diagonal(var, 0.0)

    boot = _bootstrap_values(t, p, yadj, assign, reps, seed)
    boot_diff = boot[:, :, None] - boot[:, None, :] - est[None]

    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.sqrt(var / n)
        z = np.where(scale > 0, est / scale, np.where(est == 0, 0.0, np.sign(est) * np.inf))
        zb = np.where(scale > 0, boot_diff / scale, 0.0)

    alive = list(range(k))
    order, stage_p = [], []
    while len(alive) > 1:
        idx = np.ix_(alive, alive)
        stat = np.max(np.abs(z[idx]))
        null = np.max(np.abs(zb[:, alive][:, :, alive]).reshape(reps, -1), axis=1)
        pval = float(np.mean(null >= stat))
        stage_p.append(pval)
        if pval >= alpha:
            break
        sub = z[idx]
        avg = sub.sum(axis=1) / (len(alive) - 1)
        worst = min(range(len(alive)), key=lambda a: (avg[a], labels[alive[a]]))
        order.append((labels[alive[worst]], pval))
        alive.pop(worst)
    return McsResult(tuple(labels[i] for i in alive), tuple(order), alpha, reps, tuple(stage_p))


CONTRAST_COLUMNS = ("l", "m", "delta_hat", "delta1", "delta0", "var_hat", "n", "z", "p_value")


def write_contrast_report(path, estimates) -> None:
    """One row per contrast; accepts a flat list or a pairwise matrix."""
    flat = [e for row in estimates for e in row] if estimates and isinstance(estimates[0], list) else list(estimates)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CONTRAST_COLUMNS)
        for e in flat:
            writer.writerow([e.labels[0], e.labels[1], repr(e.delta_hat), repr(e.delta1), repr(e.delta0),
                             repr(e.var_hat), e.n, repr(e.z), repr(e.p_value)])


def write_mcs_report(path, result: McsResult, labels: Sequence[str]) -> None:
    eliminated = {label: (stage, pv) for stage, (label, pv) in enumerate(result.elimination_order, start=1)}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("label", "eliminated_at", "p_value", "retained"))
        for label in labels:
            if label in eliminated:
                stage, pv = eliminated[label]
                writer.writerow([label, stage, repr(pv), 0])
            else:
                writer.writerow([label, "", repr(result.final_p_value), 1])
