"""Semi-parametric structural predictor.

Two stages: a LASSO regression of log earnings imputes each child's wage offer and
the household's non-child income; a mixed continuous/discrete kernel regression of
status-quo enrollment on those two quantities and sex is then evaluated at the
budget set shifted by the grant.
"""

from __future__ import annotations

import csv
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import UnitRecord
from .errors import BandwidthError, ConfigError, ExtrapolationError, ParseError, ScheduleError, ValidationError

SPLINE_KNOT = 21


def soft_threshold(z: float, gamma: float) -> float:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def lasso_cd(x, y, penalty: float, penalized=None, beta0=None, tol: float = 1e-12, max_iter: int = 100_000):
    """Coordinate descent for ``(1/2n)|y - b0 - x b|^2 + penalty * sum_{j penalized} |b_j|``.

    Returns ``(intercept, coefficients, sweeps)``. The intercept is never penalized.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    if penalty < 0:
        raise ValidationError("penalty must be non-negative")
    pen = np.ones(p, dtype=bool) if penalized is None else np.asarray(penalized, dtype=bool)
    xm, ym = x.mean(axis=0), y.mean()
    xc, yc = x - xm, y - ym
    z = (xc**2).sum(axis=0) / n
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    beta[z == 0] = 0.0
    resid = yc - xc @ beta
    cols = [j for j in range(p) if z[j] > 0]
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        max_step = 0.0
        for j in cols:
            old = beta[j]
            rho = xc[:, j] @ resid / n + z[j] * old
            new = soft_threshold(rho, penalty) / z[j] if pen[j] else rho / z[j]
            if new != old:
                resid -= xc[:, j] * (new - old)
                beta[j] = new
                max_step = max(max_step, abs(new - old) * math.sqrt(z[j]))
        if max_step < tol:
            break
    return float(ym - xm @ beta), beta, sweeps


def kkt_violation(x, y, intercept, beta, penalty, penalized=None) -> float:
    """Largest violation of the LASSO subgradient conditions (0 at an exact solution)."""
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    pen = np.ones(p, dtype=bool) if penalized is None else np.asarray(penalized, dtype=bool)
    resid = np.asarray(y, dtype=float) - intercept - x @ beta
    grad = x.T @ resid / n
    worst = abs(resid.mean())
    for j in range(p):
        if not pen[j]:
            worst = max(worst, abs(grad[j]))
        elif beta[j] == 0:
            worst = max(worst, abs(grad[j]) - penalty)
        else:
            worst = max(worst, abs(grad[j] - penalty * np.sign(beta[j])))
    return float(worst)


def cv_folds(n: int, folds: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n) % folds


def cross_validate_lasso(x, y, penalty_grid: Sequence[float], penalized=None, folds: int = 5, seed: int = 0):
    """Mean held-out squared error per penalty, warm-started from large to small penalties."""
    if len(penalty_grid) == 0:
        raise ConfigError("empty penalty grid")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 2 * folds:
        raise ValidationError(f"need at least {2 * folds} observations for {folds}-fold CV")
    grid = np.asarray(penalty_grid, dtype=float)
    order = np.argsort(-grid)
    assign = cv_folds(len(y), folds, seed)
    errors = np.zeros(len(grid))
    for k in range(folds):
        train, test = assign != k, assign == k
        beta = None
        for i in order:
            b0, beta, _ = lasso_cd(x[train], y[train], grid[i], penalized, beta0=beta, tol=1e-9)
            errors[i] += np.sum((y[test] - b0 - x[test] @ beta) ** 2)
    return grid, errors / len(y)


def _level(value) -> str | None:
    if value is None:
        return None
    if isinstance(value, float):
        if math.isnan(value):
            return None
        return str(int(value)) if value == int(value) else repr(value)
    text = str(value).strip()
    if text == "":
        return None
    try:
        f = float(text)
    except ValueError:
        return text
    return str(int(f)) if f == int(f) else text


@dataclass(frozen=True)
class Person:
    person_id: str
    household_id: str
    age: int
    male: int
    industry: str | None
    locality: str
    province: str
    earnings: float | None = None


def person_from_unit(unit: UnitRecord) -> Person:
    """Read household, industry, locality and province codes from a unit's covariates."""
    covs = unit.covariates
    try:
        industry = None if "industry" not in covs or "industry" in unit.missing else _level(covs["industry"])
        return Person(unit.unit_id, _level(covs["household_id"]), unit.age, unit.male, industry,
                      _level(covs["locality"]), _level(covs["province"]))
    except KeyError as exc:
        raise ValidationError(f"unit {unit.unit_id} lacks covariate {exc.args[0]!r} needed for wage imputation") from None


def load_workers(path) -> list[Person]:
    """Workers / household roster CSV: person_id,household_id,earnings,age,male,industry,locality,province.

    Empty earnings mark household members without observed earnings.
    """
    need = ("person_id", "household_id", "earnings", "age", "male", "industry", "locality", "province")
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in need):
            raise ParseError(f"workers file needs columns {need}", 1)
        for line, row in enumerate(reader, start=2):
            try:
                earn = row["earnings"].strip()
                out.append(Person(row["person_id"], _level(row["household_id"]), int(float(row["age"])),
                                  int(float(row["male"])), _level(row["industry"]), _level(row["locality"]),
                                  _level(row["province"]), float(earn) if earn else None))
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc), line) from None
    return out


@dataclass(frozen=True)
class WageModel:
    intercept: float
    coefficients: Mapping[str, float]
    penalty: float
    unpenalized: frozenset[str]
    cv_folds: int
    default_child_industry: str | None
    cv_grid: tuple[float, ...] = ()
    cv_errors: tuple[float, ...] = ()

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(self.coefficients)

    def knows(self, kind: str, level) -> bool:
        return f"{kind}={level}" in self.coefficients

    def log_wage(self, age: float, male: int, industry: str | None, locality: str, province: str) -> float:
        c = self.coefficients
        value = self.intercept + c["age"] * age + c["age_spline"] * max(age - SPLINE_KNOT, 0) + c["male"] * male
        industry = industry if industry is not None else self.default_child_industry
        for key in (f"industry={industry}", f"province={province}", f"locality={locality}"):
            value += c.get(key, 0.0)
        return value


def _design(people: Sequence[Person], columns: Sequence[str]) -> np.ndarray:
    index = {name: j for j, name in enumerate(columns)}
    x = np.zeros((len(people), len(columns)))
    for i, p in enumerate(people):
        x[i, index["age"]] = p.age
        x[i, index["age_spline"]] = max(p.age - SPLINE_KNOT, 0)
        x[i, index["male"]] = p.male
        for key in (f"industry={p.industry}", f"province={p.province}", f"locality={p.locality}"):
            if key in index:
                x[i, index[key]] = 1.0
    return x


def majority_child_industries(workers: Iterable[Person], child_age: int = 18) -> list[str]:
    """Smallest set of industries, most common first, employing more than half of child workers."""
    counts = Counter(w.industry for w in workers if w.age < child_age and w.industry is not None and w.earnings is not None)
    total = sum(counts.values())
    chosen, covered = [], 0
    for industry, k in counts.most_common():
        if covered * 2 > total:
            break
        chosen.append(industry)
        covered += k
    return chosen


def fit_wage_model(workers: Sequence[Person], penalty_grid: Sequence[float], folds: int = 5, seed: int = 0,
                   child_age: int = 18) -> WageModel:
    """LASSO of log earnings with the age spline, sex and majority child industries unpenalized."""
    if len(penalty_grid) == 0:
        raise ConfigError("empty penalty grid")
    earners = [w for w in workers if w.earnings is not None]
    bad = [w.person_id for w in earners if not w.earnings > 0]
    if bad:
        raise ValidationError(f"non-positive earnings for {bad[:5]}")
    if len(earners) < 2 * folds:
        raise ValidationError(f"need at least {2 * folds} earners")
    industries = sorted({w.industry for w in earners if w.industry is not None})
    provinces = sorted({w.province for w in earners})
    localities = sorted({w.locality for w in earners})
    majority = majority_child_industries(earners, child_age)
    free_ind = set(majority)
    if free_ind and free_ind == set(industries):
        free_ind.discard(majority[0])
    columns = (["age", "age_spline", "male"] + [f"industry={v}" for v in industries]
               + [f"province={v}" for v in provinces] + [f"locality={v}" for v in localities])
    unpenalized = {"age", "age_spline", "male"} | {f"industry={v}" for v in free_ind}
    penalized = np.array([c not in unpenalized for c in columns])
    x = _design(earners, columns)
    y = np.log([w.earnings for w in earners])
    grid, errors = cross_validate_lasso(x, y, penalty_grid, penalized, folds, seed)
    best = float(grid[int(np.argmin(errors))])
    b0, beta, _ = lasso_cd(x, y, best, penalized)
    default = majority[0] if majority else (Counter(w.industry for w in earners).most_common(1)[0][0] if industries else None)
    return WageModel(b0, dict(zip(columns, beta.tolist())), best, frozenset(unpenalized), folds, default,
                     tuple(grid.tolist()), tuple(errors.tolist()))


def wage_offer_detail(model: WageModel, child: Person | UnitRecord, age: float | None = None) -> tuple[float, bool]:
    """Wage offer and whether the child's locality was unseen (province and industry effects only)."""
    if isinstance(child, UnitRecord):
        child = person_from_unit(child)
    a = child.age if age is None else age
    fell_back = not model.knows("locality", child.locality)
    return math.exp(model.log_wage(a, child.male, child.industry, child.locality, child.province)), fell_back


def wage_offer(model: WageModel, child: Person | UnitRecord, age: float | None = None) -> float:
    return wage_offer_detail(model, child, age)[0]


def nonchild_income(model: WageModel, household: Sequence[Person], child_id: str) -> float:
    """Sum of imputed earnings over household members other than the child."""
    if not household:
        raise ValidationError("empty household")
    if not any(m.person_id == child_id for m in household):
        raise ValidationError(f"child {child_id} is not a member of the household")
    return float(sum(
        math.exp(model.log_wage(m.age, m.male, m.industry, m.locality, m.province))
        for m in household if m.person_id != child_id
    ))


def _gauss_log(d: np.ndarray, h: float) -> np.ndarray:
    if math.isinf(h):
        return np.zeros_like(d)
    return -0.5 * (d / h) ** 2


def _weights(e0, n0, s0, e, n, s, h_e, h_n, h_sex):
    """Kernel weights, one row per evaluation point."""
    logw = _gauss_log(e0[:, None] - e[None, :], h_e) + _gauss_log(n0[:, None] - n[None, :], h_n)
    w = np.exp(logw)
    mismatch = s0[:, None] != s[None, :]
    if h_sex != 1.0:
        w = np.where(mismatch, w * h_sex, w)
    return w


@dataclass(frozen=True)
class EnrollmentSurface:
    """Nadaraya-Watson regression with Gaussian kernels in wage offer and non-child
    income and a match/mismatch kernel (weight ``h_sex`` on mismatch) in sex."""

    wage: np.ndarray
    income: np.ndarray
    sex: np.ndarray
    outcome: np.ndarray
    h_e: float
    h_n: float
    h_sex: float
    cv_scores: Mapping[tuple[float, float, float], float] = field(default_factory=dict)

    def predict(self, wage, income, sex, chunk: int = 2048) -> np.ndarray:
        wage = np.atleast_1d(np.asarray(wage, dtype=float))
        income = np.atleast_1d(np.asarray(income, dtype=float))
        sex = np.atleast_1d(np.asarray(sex))
        out = np.empty(len(wage))
        for start in range(0, len(wage), chunk):
            sl = slice(start, start + chunk)
            w = _weights(wage[sl], income[sl], sex[sl], self.wage, self.income, self.sex, self.h_e, self.h_n, self.h_sex)
            tot = w.sum(axis=1)
            if np.any(tot == 0):
                bad = int(np.flatnonzero(tot == 0)[0]) + start
                raise ExtrapolationError(
                    f"zero kernel weight at (wage={wage[bad]:.4g}, income={income[bad]:.4g}, sex={sex[bad]})"
                )
            out[sl] = w @ self.outcome / tot
        # a convex combination; clip rounding drift past the outcome range
        return np.clip(out, self.outcome.min(), self.outcome.max())


def loo_cv_score(wage, income, sex, y, h_e, h_n, h_sex, chunk: int = 1024) -> float:
    """Leave-one-out mean squared error; ``inf`` when some point gets zero leave-out weight."""
    n = len(y)
    sse = 0.0
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        w = _weights(wage[sl], income[sl], sex[sl], wage, income, sex, h_e, h_n, h_sex)
        rows = np.arange(sl.start, sl.stop)
        w[rows - start, rows] = 0.0
        tot = w.sum(axis=1)
        if np.any(tot == 0):
            return math.inf
        sse += float(np.sum((y[sl] - w @ y / tot) ** 2))
    return sse / n


def default_bandwidth_grid(wage, income, factors=(0.25, 0.5, 1.0, 2.0, 4.0), sex_weights=(0.0, 0.5, 1.0)):
    """Rule-of-thumb scales times ``factors`` for each continuous variable."""
    n = len(wage)
    scale = 1.06 * n ** (-0.2)
    se = max(float(np.std(wage)), 1e-12) * scale
    sn = max(float(np.std(income)), 1e-12) * scale
    return [(se * a, sn * b, c) for a, b, c in itertools.product(factors, factors, sex_weights)]


def fit_enrollment_surface(wage, income, sex, y, bandwidth_grid=None) -> EnrollmentSurface:
    """Least-squares leave-one-out choice of bandwidths over the grid."""
    wage = np.asarray(wage, dtype=float)
    income = np.asarray(income, dtype=float)
    sex = np.asarray(sex)
    y = np.asarray(y, dtype=float)
    if len(y) < 10:
        raise ValidationError("need at least 10 points for the enrollment surface")
    grid = default_bandwidth_grid(wage, income) if bandwidth_grid is None else list(bandwidth_grid)
    if not grid:
        raise ConfigError("empty bandwidth grid")
    for h_e, h_n, h_sex in grid:
        if not (h_e > 0 and h_n > 0 and 0 <= h_sex <= 1):
            raise ConfigError(f"invalid bandwidth candidate {(h_e, h_n, h_sex)}")
    scores = {tuple(h): loo_cv_score(wage, income, sex, y, *h) for h in grid}
    best = min(scores, key=lambda h: (scores[h], h))
    if math.isinf(scores[best]):
        raise BandwidthError("every bandwidth candidate leaves some point with zero leave-one-out weight")
    return EnrollmentSurface(wage, income, sex, y, *best, cv_scores=scores)


@dataclass(frozen=True)
class GrantSpec:
    grant_by_age: Mapping[int, float]

    def __post_init__(self):
        if any(g < 0 for g in self.grant_by_age.values()):
            raise ValidationError("grants must be non-negative")

    @classmethod
    def constant(cls, amount: float, ages: Iterable[int]) -> "GrantSpec":
        return cls({int(a): float(amount) for a in ages})

    def grant(self, age: int) -> float:
        try:
            return self.grant_by_age[int(age)]
        except KeyError:
            raise ScheduleError(f"grant schedule does not cover age {age}") from None

    def scaled(self, factor: float) -> "GrantSpec":
        return GrantSpec({a: g * factor for a, g in self.grant_by_age.items()})


def load_grants(path) -> GrantSpec:
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"age", "annual_grant"} <= set(reader.fieldnames):
            raise ParseError("grant file needs columns age,annual_grant", 1)
        for line, row in enumerate(reader, start=2):
            try:
                out[int(float(row["age"]))] = float(row["annual_grant"])
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc), line) from None
    return GrantSpec(out)


def sps_cate(surface: EnrollmentSurface, wage, income, sex, grant) -> np.ndarray | float:
    """Enrollment change when the grant lowers the effective wage offer and raises income."""
    scalar = np.ndim(wage) == 0
    wage, income, grant = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (wage, income, grant))
    sex = np.atleast_1d(np.asarray(sex))
    grant = np.broadcast_to(grant, wage.shape)
    shifted = surface.predict(wage - grant, income + grant, sex)
    base = surface.predict(wage, income, sex)
    out = np.where(grant == 0, 0.0, shifted - base)
    return float(out[0]) if scalar else out


def sps_levels(surface: EnrollmentSurface, wage, income, sex, grant):
    """Predicted enrollment without and with the grant."""
    wage, income, grant = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (wage, income, grant))
    sex = np.atleast_1d(np.asarray(sex))
    base = surface.predict(wage, income, sex)
    shifted = np.where(grant == 0, base, surface.predict(wage - grant, income + grant, sex))
    return base, shifted
