"""Domain records, cost-effectiveness arithmetic and dataset plumbing."""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, RoleError, ScheduleError, ValidationError

ROLES = ("reference", "target_ex_ante", "target_ex_post", "target_covariates")
PARTITIONS = (None, "predictor", "holdout")

FIXED_COLUMNS = ("unit_id", "context_id", "d", "t", "p", "y", "age", "male")
SPLIT_COLUMN = "u_split"
COVARIATE_FILE_COLUMNS = ("unit_id", "context_id", "age", "male")


@dataclass(frozen=True)
class Context:
    context_id: str
    is_target: bool
    attributes: tuple[float, ...] = ()
    active_treatments: frozenset[int] = frozenset({0})


@dataclass(frozen=True)
class UnitRecord:
    unit_id: str
    context_id: str
    treatment: int
    propensity: float
    outcome: float
    age: int
    male: int
    covariates: Mapping[str, float] = field(default_factory=dict)
    missing: frozenset[str] = frozenset()
    split_draw: float = 0.0

    def __post_init__(self):
        if self.treatment not in (0, 1):
            raise ValidationError(f"unit {self.unit_id}: treatment must be 0 or 1")
        if not 0.0 < self.propensity < 1.0:
            raise ValidationError(
                f"unit {self.unit_id}: propensity {self.propensity} violates the overlap "
                "condition (must lie strictly inside (0, 1))"
            )
        if self.male not in (0, 1):
            raise ValidationError(f"unit {self.unit_id}: male must be 0 or 1")
        if not 0.0 <= self.split_draw <= 1.0:
            raise ValidationError(f"unit {self.unit_id}: split draw outside [0, 1]")
        stray = self.missing - set(self.covariates)
        if stray:
            raise ValidationError(f"unit {self.unit_id}: missing flags for unknown covariates {sorted(stray)}")

    def covariate(self, name: str) -> float:
        """Covariate value, with the fixed fields ``age`` and ``male`` addressable by name."""
        if name == "age":
            return float(self.age)
        if name == "male":
            return float(self.male)
        return float(self.covariates[name])


@dataclass(frozen=True)
class CostSchedule:
    """Age brackets of transfer cost expressed as a share of ``kappa``.

    Brackets are closed below and open above; the last bracket has no upper end.
    """

    kappa: float
    brackets: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValidationError("kappa must be positive")
        if not self.brackets:
            raise ValidationError("cost schedule needs at least one bracket")
        ages = [a for a, _ in self.brackets]
        if any(b <= a for a, b in zip(ages, ages[1:])):
            raise ValidationError("bracket ages must be strictly increasing")
        for _, share in self.brackets:
            if not 0.0 <= share < 1.0:
                raise ValidationError(f"transfer share {share} outside [0, 1)")

    @classmethod
    def zero(cls, min_age: int = 0, kappa: float = 1000.0) -> "CostSchedule":
        return cls(kappa, ((min_age, 0.0),))

    def share(self, age: int) -> float:
        ages = [a for a, _ in self.brackets]
        pos = bisect.bisect_right(ages, age) - 1
        if pos < 0:
            raise ScheduleError(f"age {age} below the first cost bracket ({ages[0]})")
        return self.brackets[pos][1]

    def shares(self, ages: np.ndarray) -> np.ndarray:
        ages = np.asarray(ages)
        mins = np.array([a for a, _ in self.brackets])
        pos = np.searchsorted(mins, ages, side="right") - 1
        if np.any(pos < 0):
            raise ScheduleError(f"ages below the first cost bracket ({mins[0]}): {sorted(set(ages[pos < 0].tolist()))}")
        return np.array([s for _, s in self.brackets])[pos]


@dataclass(frozen=True)
class Dataset:
    units: tuple[UnitRecord, ...]
    role: str
    contexts: tuple[Context, ...] = ()
    partition: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown dataset role {self.role!r}")
        if self.partition not in PARTITIONS:
            raise ValidationError(f"unknown partition {self.partition!r}")
        object.__setattr__(self, "units", tuple(self.units))
        if self.role == "target_ex_ante" and any(u.treatment for u in self.units):
            raise RoleError("target_ex_ante data may not contain treated units")
        if self.contexts:
            known = {c.context_id for c in self.contexts}
            dangling = {u.context_id for u in self.units} - known
            if dangling:
                raise ValidationError(f"units reference unknown contexts {sorted(dangling)}")

    def __len__(self):
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    @cached_property
    def treatment(self) -> np.ndarray:
        return np.fromiter((u.treatment for u in self.units), dtype=float, count=len(self.units))

    @cached_property
    def propensity(self) -> np.ndarray:
        return np.fromiter((u.propensity for u in self.units), dtype=float, count=len(self.units))

    @cached_property
    def outcome(self) -> np.ndarray:
        return np.fromiter((u.outcome for u in self.units), dtype=float, count=len(self.units))

    @cached_property
    def age(self) -> np.ndarray:
        return np.fromiter((u.age for u in self.units), dtype=int, count=len(self.units))

    @cached_property
    def male(self) -> np.ndarray:
        return np.fromiter((u.male for u in self.units), dtype=int, count=len(self.units))

    @cached_property
    def split_draw(self) -> np.ndarray:
        return np.fromiter((u.split_draw for u in self.units), dtype=float, count=len(self.units))

    @property
    def unit_ids(self) -> list[str]:
        return [u.unit_id for u in self.units]

    @cached_property
    def covariate_names(self) -> tuple[str, ...]:
        names: dict[str, None] = {}
        for u in self.units:
            names.update(dict.fromkeys(u.covariates))
        return tuple(names)

    def feature_matrix(self, names: Sequence[str], missing_indicators: bool = True):
        """Design matrix over ``names`` plus one ``<name>_mi`` column per name when requested.

        Missing cells are already imputed to zero in the records.
        """
        x = np.array([[u.covariate(n) for n in names] for u in self.units], dtype=float).reshape(len(self.units), len(names))
        columns = list(names)
        if missing_indicators:
            mi = np.array([[float(n in u.missing) for n in names] for u in self.units]).reshape(len(self.units), len(names))
            x = np.hstack([x, mi])
            columns += [f"{n}_mi" for n in names]
        return x, columns

    def subset(self, mask: Iterable[bool], partition: str | None = None) -> "Dataset":
        mask = list(mask)
        units = tuple(u for u, keep in zip(self.units, mask) if keep)
        return replace(self, units=units, partition=partition if partition is not None else self.partition)


def transfer_share(monthly_amount: float, months: float, fx_rate: float, kappa: float) -> float:
    """Annual transfer value in outcome units: ``monthly * months / fx / kappa``."""
    if monthly_amount < 0 or months <= 0 or fx_rate <= 0 or kappa <= 0:
        raise ValidationError("transfer_share arguments must be positive")
    return monthly_amount * months / fx_rate / kappa


def kappa_from_mincer(annual_earnings: float, premium: float, rate: float, years: int) -> float:
    """NPV of one extra schooling year as a plain end-of-year annuity.

    This is a helper only; configured runs take ``kappa`` directly.
    """
    if annual_earnings <= 0 or premium <= 0 or rate <= 0 or years <= 0:
        raise ValidationError("kappa_from_mincer arguments must be positive")
    annuity = (1 - (1 + rate) ** -years) / rate
    return annual_earnings * premium * annuity


def adjusted_outcome(y: float, treated: int, age: int, sched: CostSchedule) -> float:
    if treated:
        return (1.0 - sched.share(age)) * y
    return y


def adjusted_outcomes(data: Dataset, sched: CostSchedule) -> np.ndarray:
    """Vector form of :func:`adjusted_outcome` over a dataset."""
    t = data.treatment
    g = sched.shares(data.age) if len(data) else np.zeros(0)
    return np.where(t == 1, (1.0 - g) * data.outcome, data.outcome)


def adjusted_effect(mu0: float, mu1: float, share: float) -> float:
    """Cost-adjusted conditional effect from predicted potential-outcome levels."""
    return (1.0 - share) * mu1 - mu0


def split_control(pool: Dataset, threshold: float) -> tuple[Dataset, Dataset]:
    """Partition untreated target units on their stored split draw (``u <= threshold`` predicts)."""
    if not 0.0 < threshold <= 1.0:
        raise ValidationError("split threshold must lie in (0, 1]")
    if any(u.treatment for u in pool.units):
        raise RoleError("split_control received treated units")
    keep = [u.split_draw <= threshold for u in pool.units]
    predictor = replace(pool, units=tuple(u for u, k in zip(pool.units, keep) if k), partition="predictor")
    holdout = replace(pool, units=tuple(u for u, k in zip(pool.units, keep) if not k), partition="holdout")
    return predictor, holdout


def evaluation_sample(target: Dataset, threshold: float) -> Dataset:
    """Ex-post sample with controls that were visible to predictors removed."""
    keep = [u.treatment == 1 or u.split_draw > threshold for u in target.units]
    return replace(target, units=tuple(u for u, k in zip(target.units, keep) if k))


def ensure_ex_ante(data: Dataset, what: str = "method") -> Dataset:
    """Reject data a prediction method must never see."""
    if data.role == "target_ex_post":
        raise RoleError(f"{what} may not read ex-post target data")
    if data.partition == "holdout":
        raise RoleError(f"{what} may not read the target holdout")
    if data.role != "reference" and any(u.treatment for u in data.units):
        raise RoleError(f"{what} may not read treated target units")
    return data


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {text!r} as a number", line) from None
    if not math.isfinite(value):
        raise ParseError(f"column {column!r}: non-finite value {text!r}", line)
    return value


def _parse_int(text: str, column: str, line: int) -> int:
    value = _parse_float(text, column, line)
    if value != int(value):
        raise ParseError(f"column {column!r}: expected an integer, got {text!r}", line)
    return int(value)


def _covariate_cells(row, names, line):
    values, missing = {}, set()
    for name in names:
        cell = row[name].strip()
        if cell == "":
            values[name] = 0.0
            missing.add(name)
        else:
            values[name] = _parse_float(cell, name, line)
    return values, frozenset(missing)


def _contexts_for(units: Sequence[UnitRecord], flags: Mapping[str, bool]) -> tuple[Context, ...]:
    out = []
    for cid in dict.fromkeys(u.context_id for u in units):
        arms = frozenset(u.treatment for u in units if u.context_id == cid)
        out.append(Context(cid, flags[cid], (), arms))
    return tuple(out)


def load_units(path, role: str, covariates: Sequence[str] | None = None) -> Dataset:
    """Read a units CSV into a :class:`Dataset`.

    ``covariates`` pins the expected covariate columns; by default every column
    between ``male`` and ``u_split`` is taken as a covariate.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise ParseError("missing header row", 1)
        absent = [c for c in FIXED_COLUMNS + (SPLIT_COLUMN,) if c not in header]
        if absent:
            raise ParseError(f"missing required columns {absent}", 1)
        names = list(covariates) if covariates is not None else [
            c for c in header if c not in FIXED_COLUMNS and c != SPLIT_COLUMN
        ]
        unknown = [c for c in names if c not in header]
        if unknown:
            raise ParseError(f"missing covariate columns {unknown}", 1)
        units, flags = [], {}
        for line, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise ParseError("wrong number of fields", line)
            values, missing = _covariate_cells(row, names, line)
            d = _parse_int(row["d"], "d", line)
            p = _parse_float(row["p"], "p", line)
            if not 0.0 < p < 1.0:
                raise ValidationError(f"line {line}: propensity {p} violates the overlap condition (0 < p < 1)")
            try:
                unit = UnitRecord(
                    unit_id=row["unit_id"],
                    context_id=row["context_id"],
                    treatment=_parse_int(row["t"], "t", line),
                    propensity=p,
                    outcome=_parse_float(row["y"], "y", line),
                    age=_parse_int(row["age"], "age", line),
                    male=_parse_int(row["male"], "male", line),
                    covariates=values,
                    missing=missing,
                    split_draw=_parse_float(row[SPLIT_COLUMN], SPLIT_COLUMN, line),
                )
            except ParseError:
                raise
            except ValidationError as exc:
                raise ParseError(str(exc), line) from None
            flags[unit.context_id] = bool(d)
            units.append(unit)
    return Dataset(tuple(units), role, _contexts_for(units, flags))


def write_units(path, data: Dataset, covariates: Sequence[str] | None = None) -> None:
    names = list(covariates) if covariates is not None else list(data.covariate_names)
    flags = {c.context_id: c.is_target for c in data.contexts}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(FIXED_COLUMNS) + names + [SPLIT_COLUMN])
        for u in data.units:
            d = int(flags.get(u.context_id, data.role != "reference"))
            covs = ["" if n in u.missing else repr(float(u.covariates[n])) for n in names]
            writer.writerow(
                [u.unit_id, u.context_id, d, u.treatment, repr(u.propensity), repr(u.outcome), u.age, u.male]
                + covs
                + [repr(u.split_draw)]
            )


def load_covariates(path, covariates: Sequence[str] | None = None) -> Dataset:
    """Read a covariate-only file (no treatment, propensity, outcome or split columns).

    Records carry placeholder treatment 0, propensity 0.5 and NaN outcome, so
    nothing outcome-related can leak into rule construction.
    """
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise ParseError("missing header row", 1)
        absent = [c for c in COVARIATE_FILE_COLUMNS if c not in header]
        if absent:
            raise ParseError(f"missing required columns {absent}", 1)
        leaked = [c for c in ("t", "y", "p", SPLIT_COLUMN) if c in header]
        if leaked:
            raise RoleError(f"covariate file carries outcome-stage columns {leaked}")
        names = list(covariates) if covariates is not None else [c for c in header if c not in COVARIATE_FILE_COLUMNS]
        units = []
        for line, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise ParseError("wrong number of fields", line)
            values, missing = _covariate_cells(row, names, line)
            units.append(UnitRecord(
                unit_id=row["unit_id"], context_id=row["context_id"], treatment=0, propensity=0.5,
                outcome=math.nan, age=_parse_int(row["age"], "age", line),
                male=_parse_int(row["male"], "male", line), covariates=values, missing=missing,
            ))
    return Dataset(tuple(units), "target_covariates")


def write_covariates(path, data: Dataset, covariates: Sequence[str] | None = None) -> None:
    names = list(covariates) if covariates is not None else list(data.covariate_names)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(COVARIATE_FILE_COLUMNS) + names)
        for u in data.units:
            covs = ["" if n in u.missing else repr(float(u.covariates[n])) for n in names]
            writer.writerow([u.unit_id, u.context_id, u.age, u.male] + covs)


def load_schedule(path, kappa: float) -> CostSchedule:
    """Cost schedule CSV with columns ``min_age,monthly_amount,months,fx_rate``."""
    brackets = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = ("min_age", "monthly_amount", "months", "fx_rate")
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in need):
            raise ParseError(f"schedule needs columns {need}", 1)
        for line, row in enumerate(reader, start=2):
            share = transfer_share(
                _parse_float(row["monthly_amount"], "monthly_amount", line),
                _parse_float(row["months"], "months", line),
                _parse_float(row["fx_rate"], "fx_rate", line),
                kappa,
            )
            brackets.append((_parse_int(row["min_age"], "min_age", line), share))
    brackets.sort()
    return CostSchedule(kappa, tuple(brackets))


def morocco_schedule(kappa: float = 1000.0) -> CostSchedule:
    """Monthly transfers of 60/80/100 MAD for ages 6-7, 8-9 and 10+, at 8 MAD per USD."""
    return CostSchedule(kappa, tuple((age, transfer_share(mad, 12, 8, kappa)) for age, mad in ((6, 60), (8, 80), (10, 100))))
