"""Dynamic parametric structural model of schooling versus work.

Children choose each year between enrolling and working until the last decision
age; enrolling advances education with a grade-pass probability. Taste shocks are
logistic, so the expected maximum has a log-sum-exp closed form and choice
probabilities are logistic in the value difference. A discrete unobserved type
shifts the taste for school; type probabilities follow a multinomial logit in
(1, age, education, male, father's schooling).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from .errors import NumericError, OptimizationError, ParseError, StateError, ValidationError
from .sps import GrantSpec

TYPE_COVARIATES = ("const", "age", "ed", "male", "father_ed")


def emax(v_school, v_work, scale: float = 1.0):
    """Expected maximum of two values under a logistic difference in shocks."""
    if not scale > 0:
        raise ValidationError("scale must be positive")
    a = np.asarray(v_school, dtype=float) / scale
    b = np.asarray(v_work, dtype=float) / scale
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("emax received non-finite values")
    out = scale * np.logaddexp(a, b)
    return float(out) if out.ndim == 0 else out


def terminal_value(ed, alpha: Sequence[float], sec: int):
    a1, a2, a3 = alpha
    ed = np.asarray(ed, dtype=float)
    out = a1 * 0.5 * (1.0 + np.tanh(0.5 * a2 * ed)) + a3 * (ed >= sec)
    return float(out) if out.ndim == 0 else out


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class DpsParams:
    grant_util: float = 0.0
    money_coef: float = 0.0
    psi_age_female: float = 0.0
    psi_age_male: float = 0.0
    psi_father_ed: float = 0.0
    behind: tuple[float, float, float] = (0.0, 0.0, 0.0)
    primary_cost: float = 0.0
    secondary_cost: tuple[float, float] = (0.0, 0.0)   # (female, male)
    terminal: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mu: tuple[float, ...] = (0.0,)
    type_logit: tuple[tuple[float, ...], ...] = ()
    discount: float = 0.95
    scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.discount < 1:
            raise ValidationError("discount must lie in (0, 1)")
        if not self.scale > 0:
            raise ValidationError("scale must be positive")
        if len(self.mu) < 1:
            raise ValidationError("need at least one type")
        if len(self.type_logit) != len(self.mu) - 1:
            raise ValidationError("type_logit needs one row per non-base type")
        if any(len(row) != len(TYPE_COVARIATES) for row in self.type_logit):
            raise ValidationError(f"type_logit rows have {len(TYPE_COVARIATES)} coefficients")

    @property
    def n_types(self) -> int:
        return len(self.mu)

    def flat(self) -> dict[str, float]:
        out = {
            "grant_util": self.grant_util, "money_coef": self.money_coef,
            "psi_age_female": self.psi_age_female, "psi_age_male": self.psi_age_male,
            "psi_father_ed": self.psi_father_ed,
            "behind_1": self.behind[0], "behind_2": self.behind[1], "behind_3p": self.behind[2],
            "primary_cost": self.primary_cost,
            "secondary_cost_female": self.secondary_cost[0], "secondary_cost_male": self.secondary_cost[1],
            "alpha1": self.terminal[0], "alpha2": self.terminal[1], "alpha3": self.terminal[2],
        }
        for k, m in enumerate(self.mu, start=1):
            out[f"mu_{k}"] = m
        for k, row in enumerate(self.type_logit, start=1):
            for name, v in zip(TYPE_COVARIATES, row):
                out[f"type{k}_{name}"] = v
        out["discount"] = self.discount
        out["scale"] = self.scale
        return out

    @classmethod
    def from_flat(cls, values: Mapping[str, float], n_types: int) -> "DpsParams":
        v = dict(values)
        return cls(
            grant_util=v["grant_util"], money_coef=v["money_coef"], psi_age_female=v["psi_age_female"],
            psi_age_male=v["psi_age_male"], psi_father_ed=v["psi_father_ed"],
            behind=(v["behind_1"], v["behind_2"], v["behind_3p"]), primary_cost=v["primary_cost"],
            secondary_cost=(v["secondary_cost_female"], v["secondary_cost_male"]),
            terminal=(v["alpha1"], v["alpha2"], v["alpha3"]),
            mu=tuple(v[f"mu_{k}"] for k in range(1, n_types + 1)),
            type_logit=tuple(tuple(v[f"type{k}_{n}"] for n in TYPE_COVARIATES) for k in range(1, n_types)),
            discount=v.get("discount", 0.95), scale=v.get("scale", 1.0),
        )

    def estimable(self) -> list[str]:
        return [n for n in self.flat() if n not in ("discount", "scale")]

    def with_values(self, names: Sequence[str], values: Sequence[float]) -> "DpsParams":
        flat = self.flat()
        flat.update(zip(names, (float(x) for x in values)))
        return DpsParams.from_flat(flat, self.n_types)


@dataclass(frozen=True)
class StateGrid:
    min_age: int = 6
    terminal_age: int = 18
    ed_max: int = 12
    sec: int = 12
    primary_years: int = 6
    entry_age: int = 6   # years behind = (age - entry_age) - ed

    def __post_init__(self):
        if not self.min_age < self.terminal_age:
            raise ValidationError("min_age must precede the terminal age")
        if self.ed_max < 1:
            raise ValidationError("ed_max must be at least 1")

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.min_age, self.terminal_age)

    @property
    def eds(self) -> np.ndarray:
        return np.arange(self.ed_max + 1)

    def behind_dummies(self, age: int) -> np.ndarray:
        """(E, 3) indicators for 1, 2 and 3+ years behind."""
        behind = (age - self.entry_age) - self.eds
        return np.column_stack([behind == 1, behind == 2, behind >= 3]).astype(float)


@dataclass(frozen=True)
class PassProbTable:
    p_pass: Mapping[tuple[int, int], float] = field(default_factory=dict)
    default: float = 1.0

    def __post_init__(self):
        for key, v in self.p_pass.items():
            if not 0 <= v <= 1:
                raise ValidationError(f"pass probability {v} at {key} outside [0, 1]")

    def matrix(self, grid: StateGrid) -> np.ndarray:
        out = np.full((len(grid.ages), grid.ed_max + 1), float(self.default))
        for (age, ed), v in self.p_pass.items():
            if grid.min_age <= age < grid.terminal_age and 0 <= ed <= grid.ed_max:
                out[age - grid.min_age, ed] = v
        return out


def load_pass_table(path) -> PassProbTable:
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"age", "ed", "p_pass"} <= set(reader.fieldnames):
            raise ParseError("pass table needs columns age,ed,p_pass", 1)
        for line, row in enumerate(reader, start=2):
            try:
                out[(int(float(row["age"])), int(float(row["ed"])))] = float(row["p_pass"])
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc), line) from None
    return PassProbTable(out)


@dataclass(frozen=True)
class ChildCells:
    """Distinct DP environments: sex, father's schooling, distance to school and a wage profile by age."""

    male: np.ndarray
    father_ed: np.ndarray
    distance: np.ndarray
    wages: np.ndarray   # (C, n_ages)

    def __len__(self):
        return len(self.male)


@dataclass(frozen=True)
class ValueTables:
    v_school: np.ndarray   # (C, K, n_ages, E)
    v_work: np.ndarray
    grid: StateGrid
    scale: float = 1.0

    def enroll_prob(self, cell: int, k: int, age: int, ed: int) -> float:
        a = age - self.grid.min_age
        return enroll_prob(self.v_school[cell, k, a, ed], self.v_work[cell, k, a, ed], self.scale)


def enroll_prob(v_school, v_work, scale: float = 1.0):
    out = logistic((np.asarray(v_school, dtype=float) - np.asarray(v_work, dtype=float)) / scale)
    return float(out) if out.ndim == 0 else out


def _grant_vector(grant: GrantSpec | None, grid: StateGrid) -> np.ndarray:
    if grant is None:
        return np.zeros(len(grid.ages))
    return np.array([grant.grant(a) for a in grid.ages])


def flow_school(params: DpsParams, grid: StateGrid, cells: ChildCells, age: int, g: float) -> np.ndarray:
    """School flow utility without the shock, shape (C, K, E)."""
    eds = grid.eds
    psi_age = np.where(cells.male == 1, params.psi_age_male, params.psi_age_female)
    cell_part = psi_age * age + params.psi_father_ed * cells.father_ed  # (C,)
    ed_part = grid.behind_dummies(age) @ np.asarray(params.behind)       # (E,)
    primary = (eds < grid.primary_years).astype(float)
    sec_cost = np.where(cells.male == 1, params.secondary_cost[1], params.secondary_cost[0])
    level = (primary[None, :] * params.primary_cost * cells.distance[:, None]
             + (1 - primary)[None, :] * sec_cost[:, None])                # (C, E)
    base = params.grant_util * g + cell_part[:, None] + ed_part[None, :] + level
    return base[:, None, :] + np.asarray(params.mu)[None, :, None]


def solve_dp(params: DpsParams, grid: StateGrid, pass_table: PassProbTable, cells: ChildCells,
             grant: GrantSpec | None = None) -> ValueTables:
    """Backward induction from the terminal value."""
    n_ages = len(grid.ages)
    if cells.wages.shape != (len(cells), n_ages):
        raise StateError(f"wage offers must have shape {(len(cells), n_ages)}, got {cells.wages.shape}")
    if not np.all(np.isfinite(cells.wages)):
        raise StateError("non-finite wage offers")
    gvec = _grant_vector(grant, grid)
    pmat = pass_table.matrix(grid)
    eds = grid.eds
    up = np.minimum(eds + 1, grid.ed_max)
    beta, rho = params.discount, params.scale
    C, K, E = len(cells), params.n_types, grid.ed_max + 1
    vs = np.empty((C, K, n_ages, E))
    vw = np.empty((C, K, n_ages, E))
    cont = np.broadcast_to(terminal_value(eds, params.terminal, grid.sec), (C, K, E))
    for a in range(n_ages - 1, -1, -1):
        age = int(grid.ages[a])
        p = pmat[a]
        us = flow_school(params, grid, cells, age, gvec[a])
        uw = params.money_coef * cells.wages[:, a]
        vs[:, :, a] = us + beta * (p * cont[..., up] + (1 - p) * cont)
        vw[:, :, a] = uw[:, None, None] + beta * cont
        cont = rho * np.logaddexp(vs[:, :, a] / rho, vw[:, :, a] / rho)
    return ValueTables(vs, vw, grid, rho)


def bellman_residual(values: ValueTables, params: DpsParams, pass_table: PassProbTable, cells: ChildCells,
                     grant: GrantSpec | None = None) -> float:
    """Largest deviation from the Bellman equations, recomputed state by state."""
    grid = values.grid
    gvec = _grant_vector(grant, grid)
    pmat = pass_table.matrix(grid)
    worst = 0.0
    for c in range(len(cells)):
        male = int(cells.male[c])
        for k in range(params.n_types):
            for a, age in enumerate(grid.ages):
                for ed in range(grid.ed_max + 1):
                    behind = (age - grid.entry_age) - ed
                    u = (params.grant_util * gvec[a] + params.mu[k]
                         + (params.psi_age_male if male else params.psi_age_female) * age
                         + params.psi_father_ed * cells.father_ed[c]
                         + (params.behind[0] if behind == 1 else 0.0) + (params.behind[1] if behind == 2 else 0.0)
                         + (params.behind[2] if behind >= 3 else 0.0))
                    if ed < grid.primary_years:
                        u += params.primary_cost * cells.distance[c]
                    else:
                        u += params.secondary_cost[male]
                    nxt = min(ed + 1, grid.ed_max)
                    if age == grid.terminal_age - 1:
                        stay = terminal_value(ed, params.terminal, grid.sec)
                        move = terminal_value(nxt, params.terminal, grid.sec)
                    else:
                        stay = emax(values.v_school[c, k, a + 1, ed], values.v_work[c, k, a + 1, ed], params.scale)
                        move = emax(values.v_school[c, k, a + 1, nxt], values.v_work[c, k, a + 1, nxt], params.scale)
                    p = pmat[a, ed]
                    vs = u + params.discount * (p * move + (1 - p) * stay)
                    vw = params.money_coef * cells.wages[c, a] + params.discount * stay
                    worst = max(worst, abs(vs - values.v_school[c, k, a, ed]), abs(vw - values.v_work[c, k, a, ed]))
    return worst


def type_posterior(params: DpsParams, age, ed, male, father_ed) -> np.ndarray:
    """Type probabilities; the last type is the base category. Shape (..., K)."""
    x = np.stack(np.broadcast_arrays(np.ones_like(np.asarray(age, dtype=float)), np.asarray(age, dtype=float),
                                     np.asarray(ed, dtype=float), np.asarray(male, dtype=float),
                                     np.asarray(father_ed, dtype=float)), axis=-1)
    if params.n_types == 1:
        return np.ones(x.shape[:-1] + (1,))
    scores = x @ np.asarray(params.type_logit).T
    scores = np.concatenate([scores, np.zeros(scores.shape[:-1] + (1,))], axis=-1)
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    return w / w.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class DpsData:
    """Children observed at one age each, compressed to distinct (cell, age, ed, outcome) rows."""

    cells: ChildCells
    cell: np.ndarray     # per row, index into cells
    age: np.ndarray
    ed: np.ndarray
    y: np.ndarray
    weight: np.ndarray   # number of children per row
    unit_row: np.ndarray | None = None   # per original child, its row

    @property
    def n(self) -> int:
        return int(self.weight.sum())


def make_cells(male, father_ed, distance, wages) -> tuple[ChildCells, np.ndarray]:
    """Deduplicate child environments; returns the cells and each child's cell index."""
    male = np.asarray(male, dtype=float)
    wages = np.atleast_2d(np.asarray(wages, dtype=float))
    key = np.column_stack([male, np.asarray(father_ed, dtype=float), np.asarray(distance, dtype=float), wages])
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    cells = ChildCells(uniq[:, 0].astype(int), uniq[:, 1], uniq[:, 2], uniq[:, 3:])
    return cells, inverse.reshape(-1)


def make_data(grid: StateGrid, age, ed, male, father_ed, distance, wages, y=None) -> DpsData:
    """Validate child states against the grid and compress them."""
    age = np.asarray(age, dtype=int)
    ed = np.asarray(ed, dtype=int)
    n = len(age)
    wages = np.asarray(wages, dtype=float)
    if wages.ndim == 1:
        wages = np.broadcast_to(wages, (n, len(grid.ages)))
    if np.any(age < grid.min_age) or np.any(age >= grid.terminal_age):
        raise StateError("child ages fall outside the decision ages of the grid")
    if np.any(ed < 0) or np.any(ed > grid.ed_max):
        raise StateError("education levels fall outside the grid")
    cells, cell_idx = make_cells(male, father_ed, distance, wages)
    yv = np.zeros(n) if y is None else np.asarray(y, dtype=float)
    if y is not None and not np.all((yv == 0) | (yv == 1)):
        raise ValidationError("enrollment outcomes must be 0/1")
    key = np.column_stack([cell_idx, age, ed, yv])
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return DpsData(cells, uniq[:, 0].astype(int), uniq[:, 1].astype(int), uniq[:, 2].astype(int), uniq[:, 3],
                   counts.astype(float), inverse.reshape(-1))


def row_type_probs(params: DpsParams, data: DpsData) -> np.ndarray:
    c = data.cells
    return type_posterior(params, data.age, data.ed, c.male[data.cell], c.father_ed[data.cell])


def row_enroll_probs(values: ValueTables, data: DpsData) -> np.ndarray:
    """Per-row, per-type enrollment probability, shape (rows, K)."""
    a = data.age - values.grid.min_age
    vs = values.v_school[data.cell, :, a, data.ed]
    vw = values.v_work[data.cell, :, a, data.ed]
    return enroll_prob(vs, vw, values.scale)


LOG_FLOOR = 1e-300


def log_likelihood_detail(params: DpsParams, data: DpsData, grid: StateGrid, pass_table: PassProbTable,
                          grant: GrantSpec | None = None) -> tuple[float, int]:
    """Mixture log likelihood and the number of rows that hit the log floor."""
    values = solve_dp(params, grid, pass_table, data.cells, grant)
    pk = row_enroll_probs(values, data)
    pi = row_type_probs(params, data)
    lik_k = np.where(data.y[:, None] == 1, pk, 1.0 - pk)
    lik = np.sum(lik_k * pi, axis=1)
    floored = lik <= LOG_FLOOR
    return float(np.dot(data.weight, np.log(np.maximum(lik, LOG_FLOOR)))), int(floored.sum())


def log_likelihood(params: DpsParams, data: DpsData, grid: StateGrid, pass_table: PassProbTable,
                   grant: GrantSpec | None = None) -> float:
    return log_likelihood_detail(params, data, grid, pass_table, grant)[0]


def predicted_enrollment(params: DpsParams, data: DpsData, grid: StateGrid, pass_table: PassProbTable,
                         grant: GrantSpec | None = None) -> np.ndarray:
    """Type-mixed enrollment probability per compressed row."""
    values = solve_dp(params, grid, pass_table, data.cells, grant)
    return np.sum(row_enroll_probs(values, data) * row_type_probs(params, data), axis=1)


def dps_effects(params: DpsParams, data: DpsData, grid: StateGrid, pass_table: PassProbTable,
                grant: GrantSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-row enrollment probability without and with the grant (both from full re-solves)."""
    base = predicted_enrollment(params, data, grid, pass_table, None)
    treated = predicted_enrollment(params, data, grid, pass_table, grant)
    return base, treated


def dps_cate(params: DpsParams, data: DpsData, grid: StateGrid, pass_table: PassProbTable,
             grant: GrantSpec) -> np.ndarray:
    """Per-child effect of the grant schedule on enrollment."""
    base, treated = dps_effects(params, data, grid, pass_table, grant)
    rows = data.unit_row if data.unit_row is not None else np.arange(len(base))
    return (treated - base)[rows]


@dataclass
class FitResult:
    params: DpsParams
    loglik: float
    init_loglik: float
    trace: list[tuple[int, int, float]] = field(default_factory=list)
    restarts: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class OptimizerSettings:
    restarts: int = 1
    max_iter: int = 2000
    simplex_iter: int = 500   # simplex share of each restart's iteration budget
    tol: float = 1e-8
    restart_scale: float = 0.5


def fit_mle(data: DpsData, init: DpsParams, grid: StateGrid, pass_table: PassProbTable,
            grant: GrantSpec | None = None, optimizer: OptimizerSettings = OptimizerSettings(), seed: int = 0,
            free: Sequence[str] | None = None) -> FitResult:
    """Maximum likelihood: per restart, Nelder-Mead then BFGS on the remaining iteration budget.

    Restart 0 starts at ``init``; later restarts perturb it. The best point evaluated
    anywhere is returned, and never one worse than ``init``. A larger ``max_iter``
    only extends each restart's search path, so the result never gets worse.
    """
    names = list(free) if free is not None else init.estimable()
    x0 = np.array([init.flat()[n] for n in names])
    if not np.all(np.isfinite(x0)):
        raise ValidationError("initial parameters must be finite")
    ys = data.y
    if not (np.any((ys == 1) & (data.weight > 0)) and np.any((ys == 0) & (data.weight > 0))):
        raise ValidationError("both enrollment outcomes must be observed")

    best = {"x": x0.copy(), "f": math.inf}
    trace: list[tuple[int, int, float]] = []
    counter = {"restart": 0, "eval": 0}

    def objective(x):
        try:
            ll = log_likelihood(init.with_values(names, x), data, grid, pass_table, grant)
        except (ValidationError, NumericError, FloatingPointError):
            return 1e300
        if not math.isfinite(ll):
            return 1e300
        counter["eval"] += 1
        if -ll < best["f"]:
            best["f"], best["x"] = -ll, np.array(x, dtype=float)
        return -ll

    init_f = objective(x0)
    if init_f >= 1e300:
        raise OptimizationError("log likelihood is not finite at the initial parameters")
    trace.append((0, 0, -init_f))
    rng = np.random.default_rng(seed)
    perturb = [np.zeros_like(x0)] + [rng.normal(0, optimizer.restart_scale, len(x0)) for _ in range(optimizer.restarts - 1)]
    records = []
    for r, shift in enumerate(perturb):
        counter["restart"] = r
        start = x0 + shift
        if objective(start) >= 1e300:
            records.append({"restart": r, "status": "infeasible start"})
            continue

        def log_iter(xk, r=r):
            trace.append((r, len(trace), -objective(xk)))

        nm = optimize.minimize(objective, start, method="Nelder-Mead", callback=log_iter,
                               options={"maxiter": min(optimizer.max_iter, optimizer.simplex_iter), "xatol": optimizer.tol,
                                        "fatol": optimizer.tol, "adaptive": True})
        remaining = optimizer.max_iter - int(nm.nit)
        rec = {"restart": r, "nm_nit": int(nm.nit), "nm_loglik": -float(nm.fun)}
        if remaining > 0:
            bf = optimize.minimize(objective, nm.x, method="BFGS", callback=log_iter,
                                   options={"maxiter": remaining, "gtol": 1e-6})
            rec.update(bfgs_nit=int(bf.nit), bfgs_loglik=-float(bf.fun), message=str(bf.message))
        records.append(rec)
    if not records or all(r.get("status") for r in records):
        raise OptimizationError("every restart failed", trace)
    params = init.with_values(names, best["x"])
    return FitResult(params, -best["f"], -init_f, trace, records)


def simulate_children(params: DpsParams, grid: StateGrid, pass_table: PassProbTable, n: int, seed: int,
                      wage_fn, distances=(0.5, 1.5, 3.0), behind_probs=(0.4, 0.3, 0.2, 0.1),
                      min_obs_age: int | None = None):
    """Cross-section of children drawn from the model itself.

    Covariates and education are drawn first, then the type from the type logit and
    enrollment from the type-specific choice probability. ``wage_fn(male, ages)``
    gives wage offers by age.
    """
    rng = np.random.default_rng(seed)
    lo = grid.min_age if min_obs_age is None else min_obs_age
    age = rng.integers(lo, grid.terminal_age, n)
    male = rng.integers(0, 2, n)
    father = rng.integers(0, 2, n)
    distance = rng.choice(np.asarray(distances, dtype=float), n)
    behind = rng.choice(len(behind_probs), n, p=np.asarray(behind_probs) / np.sum(behind_probs))
    ed = np.clip(age - grid.entry_age - behind, 0, grid.ed_max)
    wages = np.array([wage_fn(m, grid.ages) for m in male])
    data = make_data(grid, age, ed, male, father, distance, wages)
    values = solve_dp(params, grid, pass_table, data.cells)
    pk = row_enroll_probs(values, data)[data.unit_row]
    pi = type_posterior(params, age, ed, male, father)
    types = np.array([rng.choice(params.n_types, p=p) for p in pi])
    y = (rng.random(n) < pk[np.arange(n), types]).astype(float)
    return {"age": age, "ed": ed, "male": male, "father_ed": father, "distance": distance, "wages": wages,
            "y": y, "type": types}


def write_params(path, params: DpsParams) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("name", "value", "std_flag"))
        for name, value in params.flat().items():
            flag = "fixed" if name in ("discount", "scale") else "not_computed"
            writer.writerow([name, repr(float(value)), flag])


def write_trace(path, fit: FitResult) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("restart", "iter", "loglik"))
        for r, it, ll in fit.trace:
            writer.writerow([r, it, repr(ll)])


def write_fit_by(path, data: DpsData, predicted: np.ndarray, by: str) -> None:
    """Predicted versus observed enrollment rates grouped by ``age`` or ``ed``."""
    key = getattr(data, by)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow((by, "n", "observed", "predicted"))
        for v in np.unique(key):
            m = key == v
            w = data.weight[m]
            writer.writerow([int(v), int(w.sum()), repr(float(np.dot(w, data.y[m]) / w.sum())),
                             repr(float(np.dot(w, predicted[m]) / w.sum()))])
