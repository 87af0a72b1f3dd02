import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from policyeval.core import (
    CostSchedule,
    Dataset,
    UnitRecord,
    adjusted_effect,
    adjusted_outcome,
    adjusted_outcomes,
    ensure_ex_ante,
    evaluation_sample,
    kappa_from_mincer,
    load_covariates,
    load_schedule,
    load_units,
    morocco_schedule,
    split_control,
    transfer_share,
    write_covariates,
    write_units,
)
from policyeval.errors import ParseError, RoleError, ScheduleError, ValidationError

from conftest import make_units


def test_transfer_share_morocco_brackets():
    assert transfer_share(60, 12, 8, 1000) == pytest.approx(0.09, abs=1e-15)
    assert transfer_share(80, 12, 8, 1000) == pytest.approx(0.12, abs=1e-15)
    assert transfer_share(0, 12, 8, 1000) == 0.0


@pytest.mark.parametrize("args", [(-1, 12, 8, 1000), (60, 0, 8, 1000), (60, 12, 0, 1000), (60, 12, 8, 0)])
def test_transfer_share_rejects_bad_arguments(args):
    with pytest.raises(ValidationError):
        transfer_share(*args)


def test_kappa_from_mincer_is_plain_annuity():
    value = kappa_from_mincer(1578.20, 0.10, 0.05, 40)
    assert value == pytest.approx(157.82 * (1 - 1.05**-40) / 0.05)
    assert 2700 < value < 2720


def test_adjusted_outcome_examples():
    sched = morocco_schedule()
    assert adjusted_outcome(1, 0, 6, sched) == 1.0
    assert adjusted_outcome(1, 1, 6, sched) == pytest.approx(0.91, abs=1e-15)
    assert adjusted_outcome(0, 1, 14, sched) == 0.0


def test_morocco_schedule_brackets():
    sched = morocco_schedule()
    assert [sched.share(a) for a in (6, 7, 8, 9, 10, 16)] == pytest.approx([0.09, 0.09, 0.12, 0.12, 0.15, 0.15])
    with pytest.raises(ScheduleError):
        sched.share(5)


def test_schedule_validates_brackets():
    with pytest.raises(ValidationError):
        CostSchedule(1000.0, ((6, 0.1), (6, 0.2)))
    with pytest.raises(ValidationError):
        CostSchedule(1000.0, ((6, 1.0),))
    with pytest.raises(ValidationError):
        CostSchedule(0.0, ((6, 0.1),))


@given(y=st.floats(0, 10), share=st.one_of(st.just(0.0), st.floats(1e-9, 0.99)), age=st.integers(6, 16))
def test_adjusted_outcome_bounds(y, share, age):
    sched = CostSchedule(1000.0, ((6, share),))
    adj = adjusted_outcome(y, 1, age, sched)
    assert 0.0 <= adj <= y
    if y > 1e-300 and share > 0:
        assert adj < y
    assert adjusted_outcome(y, 0, age, sched) == y


def test_adjusted_outcomes_vectorized_matches_scalar():
    sched = morocco_schedule()
    data = make_units([1, 0, 1, 0], [1, 1, 0.5, 0], ages=[6, 8, 10, 16])
    expected = [adjusted_outcome(u.outcome, u.treatment, u.age, sched) for u in data.units]
    assert adjusted_outcomes(data, sched) == pytest.approx(expected, abs=0)


def test_adjusted_effect():
    assert adjusted_effect(0.6, 0.7, 0.1) == pytest.approx(0.03)


def test_unit_rejects_boundary_propensity():
    with pytest.raises(ValidationError, match="overlap"):
        UnitRecord("a", "c", 1, 0.0, 1.0, 10, 0)
    with pytest.raises(ValidationError):
        UnitRecord("a", "c", 2, 0.5, 1.0, 10, 0)


def test_ex_ante_dataset_rejects_treated_units():
    with pytest.raises(RoleError):
        make_units([1, 0], [1, 0], role="target_ex_ante")


def test_split_control_examples():
    pool = make_units([0] * 4, [1, 0, 1, 0], role="target_ex_ante", split=[0.1, 0.4, 0.6, 0.9])
    pred, hold = split_control(pool, 0.5)
    assert (len(pred), len(hold)) == (2, 2)
    assert pred.partition == "predictor" and hold.partition == "holdout"
    pred, hold = split_control(pool, 1.0)
    assert (len(pred), len(hold)) == (4, 0)
    again = split_control(pool, 0.5)
    assert again[0].unit_ids == split_control(pool, 0.5)[0].unit_ids


def test_split_control_rejects_treated():
    with pytest.raises(RoleError):
        split_control(make_units([1, 0], [1, 0]), 0.5)


@given(draws=st.lists(st.floats(0, 1), min_size=0, max_size=30), thr=st.floats(0.01, 1.0))
def test_split_control_partitions(draws, thr):
    pool = make_units([0] * len(draws), [0] * len(draws), role="target_ex_ante", split=draws)
    pred, hold = split_control(pool, thr)
    a, b = set(pred.unit_ids), set(hold.unit_ids)
    assert a | b == set(pool.unit_ids) and not a & b


def test_firewall_rejects_expost_holdout_and_treated_target():
    with pytest.raises(RoleError):
        ensure_ex_ante(make_units([0], [1], role="target_ex_post"))
    pool = make_units([0, 0], [1, 0], role="target_ex_ante", split=[0.2, 0.8])
    _, hold = split_control(pool, 0.5)
    with pytest.raises(RoleError):
        ensure_ex_ante(hold)
    ensure_ex_ante(make_units([1, 0], [1, 0], role="reference"))


def test_evaluation_sample_drops_predictor_controls():
    data = make_units([1, 0, 0, 1], [1, 0, 1, 1], split=[0.1, 0.1, 0.9, 0.9])
    kept = evaluation_sample(data, 0.5)
    assert kept.unit_ids == ["u0", "u2", "u3"]


HEADER = "unit_id,context_id,d,t,p,y,age,male,lit,u_split\n"


def test_load_units_empty_file(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text(HEADER)
    assert len(load_units(path, "target_ex_post")) == 0


def test_load_units_zero_propensity_cites_overlap(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text(HEADER + "a,c,1,1,0,1,10,0,1,0.5\n")
    with pytest.raises(ValidationError, match="overlap"):
        load_units(path, "target_ex_post")


def test_load_units_parse_error_has_line(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text(HEADER + "a,c,1,1,0.5,1,10,0,1,0.5\nb,c,1,1,0.5,oops,10,0,1,0.5\n")
    with pytest.raises(ParseError) as info:
        load_units(path, "target_ex_post")
    assert info.value.line == 3


def test_load_units_missing_covariate_imputed(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text(HEADER + "a,c,1,0,0.5,1,10,1,,0.25\n")
    (u,) = load_units(path, "target_ex_post").units
    assert u.covariates["lit"] == 0.0 and u.missing == frozenset({"lit"})
    x, cols = Dataset((u,), "target_ex_post").feature_matrix(["lit", "age"])
    assert cols == ["lit", "age", "lit_mi", "age_mi"]
    assert x.tolist() == [[0.0, 10.0, 1.0, 0.0]]


def test_units_round_trip(tmp_path):
    units = tuple(
        UnitRecord(f"x{i}", "mx", i % 2, 0.3 + 0.1 * i, float(i % 2), 6 + i, i % 2, {"lit": 0.5 * i, "hh": 0.0},
                   frozenset({"hh"}) if i == 1 else frozenset(), split_draw=0.1 * i)
        for i in range(3)
    )
    data = Dataset(units, "reference")
    path = tmp_path / "r.csv"
    write_units(path, data)
    back = load_units(path, "reference")
    assert back.units == units
    assert back.contexts[0].is_target is False


def test_covariate_file_round_trip_and_leak_guard(tmp_path):
    data = make_units([1, 0], [1, 0], covariates=[{"lit": 1.0}, {"lit": 0.0}])
    path = tmp_path / "cov.csv"
    write_covariates(path, data)
    back = load_covariates(path)
    assert back.role == "target_covariates"
    assert [u.covariates for u in back.units] == [{"lit": 1.0}, {"lit": 0.0}]
    assert all(math.isnan(u.outcome) and u.treatment == 0 for u in back.units)
    leaky = tmp_path / "leak.csv"
    leaky.write_text("unit_id,context_id,age,male,y\na,c,10,0,1\n")
    with pytest.raises(RoleError):
        load_covariates(leaky)


def test_load_schedule(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("min_age,monthly_amount,months,fx_rate\n8,80,12,8\n6,60,12,8\n10,100,12,8\n")
    sched = load_schedule(path, 1000.0)
    assert sched.shares(np.array([6, 8, 10])) == pytest.approx([0.09, 0.12, 0.15])
    assert sched == morocco_schedule()


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=1, max_size=20))
def test_subset_preserves_order(rows):
    data = make_units([r[0] for r in rows], [r[1] for r in rows])
    mask = [i % 2 == 0 for i in range(len(rows))]
    assert data.subset(mask).unit_ids == [u for u, m in zip(data.unit_ids, mask) if m]
