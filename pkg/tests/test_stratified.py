import numpy as np
import pytest

from policyeval.core import CostSchedule, Dataset, UnitRecord, morocco_schedule
from policyeval.errors import CoverageError, ParseError, RoleError, ValidationError
from policyeval.stratified import StrataCell, StrataTable, fit_strata, predict, read_table, strata_rule, write_table

from conftest import make_units
from tables import ADJUSTED, RAW, adjusted_reference, draw_cell_units, raw_reference


def test_raw_table_cate_column():
    table = fit_strata(raw_reference(), CostSchedule.zero())
    assert table.cells[(14, 1)].cate_adj == pytest.approx(0.14, abs=1e-12)
    for key, (m1, m0, printed) in RAW.items():
        cell = table.cells[key]
        assert cell.mean_treated_adj == pytest.approx(m1, abs=1e-12)
        assert cell.mean_control == pytest.approx(m0, abs=1e-12)
        assert cell.cate_adj == pytest.approx(m1 - m0, abs=1e-12)
        # the printed column is rounded from unrounded means
        assert abs(cell.cate_adj - printed) <= 0.01 + 1e-12


def test_adjusted_table_examples():
    sched = morocco_schedule()
    table = fit_strata(adjusted_reference(sched), sched)
    assert table.cells[(14, 1)].mean_treated_adj == pytest.approx(0.63, abs=1e-12)
    assert table.cells[(14, 1)].cate_adj == pytest.approx(0.03, abs=1e-12)
    assert table.cells[(6, 1)].cate_adj == pytest.approx(-0.07, abs=1e-12)
    for key, (t, c) in ADJUSTED.items():
        assert table.cells[key].cate_adj == pytest.approx(t - c, abs=1e-12)


def test_identical_arms_zero_cost_give_zero_effects():
    rng = np.random.default_rng(0)
    y = rng.random(40)
    data = make_units([1] * 40 + [0] * 40, np.r_[y, y], ages=list(range(6, 10)) * 20, role="reference")
    table = fit_strata(data, CostSchedule.zero())
    assert all(c.cate_adj == 0.0 for c in table.cells.values())


def test_empty_arm_lists_cells():
    data = make_units([1, 0, 1], [1, 0, 1], ages=[10, 10, 11], role="reference")
    with pytest.raises(ValidationError, match=r"\(11, 0\)"):
        fit_strata(data, CostSchedule.zero())


def test_fit_rejects_target_data():
    with pytest.raises(RoleError):
        fit_strata(make_units([1, 0], [1, 0]), CostSchedule.zero())


def test_predict_lookup_and_coverage():
    table = fit_strata(raw_reference(), CostSchedule.zero())
    girl = UnitRecord("g", "ma", 0, 0.5, 0.0, 14, 0)
    assert predict(table, girl) == table.cells[(14, 0)].cate_adj
    twin = UnitRecord("h", "ma", 0, 0.5, 1.0, 14, 0)
    assert predict(table, twin) == predict(table, girl)
    with pytest.raises(CoverageError, match="age=17"):
        predict(table, UnitRecord("o", "ma", 0, 0.5, 0.0, 17, 1))


def test_rule_treats_positive_adjusted_cells():
    sched = morocco_schedule()
    table = fit_strata(adjusted_reference(sched), sched)
    units = tuple(UnitRecord(f"{a}{m}", "ma", 0, 0.5, 0.0, a, m) for (a, m) in ADJUSTED)
    assign = strata_rule(table).apply(Dataset(units, "target_covariates"))
    for (key, (t, c)), a in zip(ADJUSTED.items(), assign):
        if abs(t - c) > 1e-9:
            assert a == (t - c > 0)


def test_recovers_cell_effects_within_three_se():
    rng = np.random.default_rng(11)
    cells = {(12, 0): (0.8, 0.7), (13, 1): (0.5, 0.55), (14, 0): (0.3, 0.3)}
    n = 5000
    sched = CostSchedule(1000.0, ((6, 0.1),))
    table = fit_strata(draw_cell_units(rng, cells, n), sched)
    for key, (m1, m0) in cells.items():
        truth = 0.9 * m1 - m0
        se = np.sqrt(0.81 * m1 * (1 - m1) / n + m0 * (1 - m0) / n)
        assert abs(table.cells[key].cate_adj - truth) <= 3 * se


def test_table_round_trip(tmp_path):
    table = fit_strata(raw_reference(20), CostSchedule.zero())
    write_table(tmp_path / "t.csv", table)
    assert read_table(tmp_path / "t.csv") == table
    (tmp_path / "bad.csv").write_text("age,male\n1,0\n")
    with pytest.raises(ParseError):
        read_table(tmp_path / "bad.csv")


def test_table_rejects_empty_arm_cells():
    with pytest.raises(ValidationError):
        StrataTable({(10, 0): StrataCell(0.5, 0.4, 0.1, 0, 3)})
