"""Age-sex stratification: cell means of adjusted outcomes carried over to the target."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .contrast import TreatmentRule, make_plugin_rule
from .core import CostSchedule, Dataset, UnitRecord, adjusted_outcomes, ensure_ex_ante
from .errors import CoverageError, ParseError, ValidationError


@dataclass(frozen=True)
class StrataCell:
    mean_treated_adj: float
    mean_control: float
    cate_adj: float
    n_treated: int
    n_control: int


@dataclass(frozen=True)
class StrataTable:
    cells: Mapping[tuple[int, int], StrataCell]

    def __post_init__(self):
        for key, c in self.cells.items():
            if c.n_treated <= 0 or c.n_control <= 0:
                raise ValidationError(f"cell {key} has an empty arm")


def fit_strata(reference: Dataset, sched: CostSchedule) -> StrataTable:
    ensure_ex_ante(reference, "stratified method")
    yadj = adjusted_outcomes(reference, sched)
    t = reference.treatment
    keys = list(zip(reference.age.tolist(), reference.male.tolist()))
    groups: dict[tuple[int, int], list[int]] = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    cells, empty = {}, []
    for key in sorted(groups):
        idx = np.array(groups[key])
        treated, control = idx[t[idx] == 1], idx[t[idx] == 0]
        if len(treated) == 0 or len(control) == 0:
            empty.append(key)
            continue
        m1 = float(np.mean(yadj[treated]))
        m0 = float(np.mean(yadj[control]))
        cells[key] = StrataCell(m1, m0, m1 - m0, len(treated), len(control))
    if empty:
        raise ValidationError(f"age-sex cells with an empty arm (age, male): {empty}")
    return StrataTable(cells)


def predict(table: StrataTable, unit: UnitRecord) -> float:
    try:
        return table.cells[(unit.age, unit.male)].cate_adj
    except KeyError:
        raise CoverageError(f"no fitted stratum for (age={unit.age}, male={unit.male})") from None


def strata_rule(table: StrataTable, label: str = "stratified") -> TreatmentRule:
    return make_plugin_rule(lambda unit: predict(table, unit), label)


COLUMNS = ("age", "male", "mean_treated_adj", "mean_control", "cate_adj", "n1", "n0")


def write_table(path, table: StrataTable) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for (age, male), c in sorted(table.cells.items()):
            writer.writerow([age, male, repr(c.mean_treated_adj), repr(c.mean_control), repr(c.cate_adj),
                             c.n_treated, c.n_control])


def read_table(path) -> StrataTable:
    cells = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != COLUMNS:
            raise ParseError(f"strata table needs columns {COLUMNS}", 1)
        for line, row in enumerate(reader, start=2):
            try:
                cells[(int(row["age"]), int(row["male"]))] = StrataCell(
                    float(row["mean_treated_adj"]), float(row["mean_control"]), float(row["cate_adj"]),
                    int(row["n1"]), int(row["n0"]),
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(str(exc), line) from None
    return StrataTable(cells)
