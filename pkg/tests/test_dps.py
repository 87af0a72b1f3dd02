import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from policyeval.dps import (
    ChildCells,
    DpsParams,
    OptimizerSettings,
    PassProbTable,
    StateGrid,
    bellman_residual,
    dps_cate,
    emax,
    enroll_prob,
    fit_mle,
    load_pass_table,
    log_likelihood,
    log_likelihood_detail,
    make_data,
    predicted_enrollment,
    row_type_probs,
    simulate_children,
    solve_dp,
    terminal_value,
    type_posterior,
    write_fit_by,
    write_params,
    write_trace,
)
from policyeval.errors import NumericError, OptimizationError, ParseError, StateError, ValidationError
from policyeval.sps import GrantSpec

from dpsfix import GRID, PASS, TRUTH, wage_fn


def test_emax_examples():
    assert emax(0, 0) == pytest.approx(math.log(2), abs=1e-12)
    assert emax(5, 0) == pytest.approx(5.006715, abs=1e-6)
    assert emax(1000, 0) == pytest.approx(1000.0)
    assert emax(2, 1, 0.5) == pytest.approx(0.5 * math.log(math.exp(4) + math.exp(2)))
    with pytest.raises(NumericError):
        emax(math.inf, 0)
    with pytest.raises(ValidationError):
        emax(0, 0, 0.0)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-100, 100), st.floats(0.1, 5))
def test_emax_shift_invariance_and_bounds(a, b, c, s):
    assert emax(a + c, b + c, s) == pytest.approx(emax(a, b, s) + c, abs=1e-9)
    e = emax(a, b)
    assert max(a, b) - 1e-12 <= e <= max(a, b) + math.log(2) + 1e-12


def test_terminal_value_examples():
    assert terminal_value(3, (1.6, 0.0, 0.7), 12) == pytest.approx(0.8)
    assert terminal_value(5, (0.0, 4.0, 0.0), 12) == 0.0
    assert terminal_value(12, (2.0, 10.0, 0.5), 12) == pytest.approx(2.5, abs=1e-12)
    assert terminal_value(np.array([0, 12]), (2.0, 0.0, 1.0), 12).tolist() == [1.0, 2.0]


def test_enroll_prob_examples():
    assert enroll_prob(1.0, 1.0) == 0.5
    assert enroll_prob(math.log(9), 0.0) == pytest.approx(0.9, abs=1e-15)
    p = enroll_prob(np.array([-30.0, 0.0, 30.0]), 0.0)
    assert np.all((p > 0) & (p < 1)) and np.all(np.diff(p) > 0)


def _cells(n=3, n_ages=None, grid=GRID):
    n_ages = len(grid.ages) if n_ages is None else n_ages
    rng = np.random.default_rng(0)
    return ChildCells(np.arange(n) % 2, rng.integers(0, 2, n).astype(float), rng.choice([0.5, 2.0], n),
                      rng.uniform(0.1, 1.0, (n, n_ages)))


def test_bellman_residual_small():
    cells = _cells()
    grant = GrantSpec.constant(0.3, GRID.ages)
    values = solve_dp(TRUTH, GRID, PassProbTable({(13, 2): 0.4}, 0.8), cells, grant)
    assert bellman_residual(values, TRUTH, PassProbTable({(13, 2): 0.4}, 0.8), cells, grant) <= 1e-10


def test_single_decision_age_by_hand():
    grid = StateGrid(min_age=17, terminal_age=18, ed_max=11, sec=9, primary_years=6)
    cells = ChildCells(np.array([1]), np.array([1.0]), np.array([2.0]), np.array([[0.5]]))
    params = TRUTH
    values = solve_dp(params, grid, PassProbTable({}, 0.7), cells, GrantSpec.constant(0.2, [17]))
    for ed in (4, 10):
        behind = min((17 - 6) - ed, 3)
        u = (0.8 * 0.2 + params.mu[0] - 0.1 * 17 + 0.4 * 1.0 + params.behind[behind - 1]
             + (params.primary_cost * 2.0 if ed < 6 else params.secondary_cost[1]))
        t_now, t_next = terminal_value(ed, params.terminal, 9), terminal_value(ed + 1, params.terminal, 9)
        assert values.v_school[0, 0, 0, ed] == pytest.approx(u + 0.95 * (0.7 * t_next + 0.3 * t_now), abs=1e-12)
        assert values.v_work[0, 0, 0, ed] == pytest.approx(0.8 * 0.5 + 0.95 * t_now, abs=1e-12)


def test_zero_pass_probability_absorbs_education():
    cells = _cells(1)
    values = solve_dp(TRUTH, GRID, PassProbTable({}, 0.0), cells)
    gap = values.v_school - values.v_work
    a = 2
    uw = TRUTH.money_coef * cells.wages[0, a]
    psi = TRUTH.psi_age_male if cells.male[0] else TRUTH.psi_age_female
    ed = 8
    expected = (TRUTH.mu[1] + psi * 14 + TRUTH.psi_father_ed * cells.father_ed[0]
                + TRUTH.secondary_cost[int(cells.male[0])] - uw)
    assert gap[0, 1, a, ed] == pytest.approx(expected, abs=1e-12)


def test_solve_dp_checks_wage_shape():
    with pytest.raises(StateError):
        solve_dp(TRUTH, GRID, PASS, _cells(2, n_ages=3))


def test_type_posterior():
    one = DpsParams(mu=(1.0,))
    assert type_posterior(one, 12, 5, 1, 0).tolist() == [1.0]
    flat = DpsParams(mu=(1.0, 0.0, -1.0), type_logit=((0.0,) * 5,) * 2)
    assert type_posterior(flat, 12, 5, 1, 0) == pytest.approx([1 / 3] * 3)
    rows = ((0.3, 0.1, -0.2, 0.5, 0.0), (-0.4, 0.0, 0.1, 0.0, 0.7))
    p = type_posterior(DpsParams(mu=(1.0, 2.0, 0.0), type_logit=rows), 14, 6, 0, 1)
    q = type_posterior(DpsParams(mu=(2.0, 1.0, 0.0), type_logit=rows[::-1]), 14, 6, 0, 1)
    assert p == pytest.approx(q[[1, 0, 2]], abs=1e-15) and p.sum() == pytest.approx(1.0)


def _small_data(n=3000, seed=1):
    sim = simulate_children(TRUTH, GRID, PASS, n, seed, wage_fn, behind_probs=[0.6, 0.4])
    return make_data(GRID, sim["age"], sim["ed"], sim["male"], sim["father_ed"], sim["distance"], sim["wages"],
                     y=sim["y"])


def test_likelihood_half_probability_case():
    data = _small_data(500)
    # zero utilities and terminal value make both choices worth exactly zero
    params = DpsParams(mu=(0.0, 0.0), type_logit=((0.3, 0.0, 0.0, 0.0, 0.0),))
    ll, floored = log_likelihood_detail(params, data, GRID, PASS)
    assert ll == pytest.approx(500 * math.log(0.5), abs=1e-9) and floored == 0


def test_single_type_likelihood_is_plain_logit():
    data = _small_data(800)
    params = TRUTH.with_values(["mu_2"], [TRUTH.mu[1]])
    one = DpsParams(**{**params.__dict__, "mu": (5.0,), "type_logit": ()})
    values = solve_dp(one, GRID, PASS, data.cells)
    a = data.age - GRID.min_age
    p = enroll_prob(values.v_school[data.cell, 0, a, data.ed], values.v_work[data.cell, 0, a, data.ed])
    expected = np.dot(data.weight, data.y * np.log(p) + (1 - data.y) * np.log(1 - p))
    assert log_likelihood(one, data, GRID, PASS) == pytest.approx(expected, abs=1e-9)
    assert log_likelihood(TRUTH, data, GRID, PASS) <= 0


def test_mixture_weights_sum_to_one():
    data = _small_data(500)
    assert row_type_probs(TRUTH, data).sum(axis=1) == pytest.approx(np.ones(len(data.y)))


@pytest.mark.parametrize("name", ["money_coef", "behind_2", "alpha2", "mu_1", "type1_father_ed"])
def test_likelihood_finite_difference_consistency(name):
    data = _small_data(500)
    x = TRUTH.flat()[name]

    def f(v):
        return log_likelihood(TRUTH.with_values([name], [v]), data, GRID, PASS)

    def central(h):
        return (f(x + h) - f(x - h)) / (2 * h)

    d1, d2 = central(1e-3), central(5e-4)
    assert abs(d1 - d2) <= 1e-4 * max(1.0, abs(d2))


def test_fit_improves_on_init_and_is_monotone_in_budget():
    data = _small_data()
    free = ["money_coef", "mu_1", "mu_2", "alpha1"]
    init = TRUTH.with_values(free, [0.2, 2.0, 1.0, 1.0])
    short = fit_mle(data, init, GRID, PASS, optimizer=OptimizerSettings(max_iter=20, simplex_iter=10), free=free)
    long = fit_mle(data, init, GRID, PASS, optimizer=OptimizerSettings(max_iter=40, simplex_iter=10), free=free)
    assert short.loglik >= short.init_loglik
    assert short.loglik == pytest.approx(log_likelihood(short.params, data, GRID, PASS), abs=1e-9)
    assert long.loglik >= short.loglik
    assert short.trace[0] == (0, 0, short.init_loglik)


def test_fit_from_optimum_returns_it():
    data = _small_data(2000)
    free = ["mu_1"]
    first = fit_mle(data, TRUTH, GRID, PASS, free=free)
    again = fit_mle(data, first.params, GRID, PASS, free=free)
    assert again.params.mu[0] == pytest.approx(first.params.mu[0], abs=1e-4)
    assert again.loglik == pytest.approx(first.loglik, abs=1e-8)


def test_fit_restarts_and_errors():
    data = _small_data(1000)
    res = fit_mle(data, TRUTH, GRID, PASS, optimizer=OptimizerSettings(restarts=2, max_iter=30, simplex_iter=15),
                  free=["mu_1", "mu_2"], seed=3)
    assert len(res.restarts) == 2 and res.loglik >= res.init_loglik
    ones = make_data(GRID, [13, 14], [6, 7], [0, 1], [0, 0], [1.0, 1.0], wage_fn(0, GRID.ages), y=[1, 1])
    with pytest.raises(ValidationError):
        fit_mle(ones, TRUTH, GRID, PASS)
    bad = TRUTH.with_values(["mu_1"], [math.nan])
    with pytest.raises((ValidationError, OptimizationError)):
        fit_mle(data, bad, GRID, PASS)


def test_dps_cate_null_cases():
    data = _small_data(300)
    assert np.all(dps_cate(TRUTH, data, GRID, PASS, GrantSpec.constant(0.0, GRID.ages)) == 0.0)
    mute = TRUTH.with_values(["grant_util"], [0.0])
    assert np.all(dps_cate(mute, data, GRID, PASS, GrantSpec.constant(1.0, GRID.ages)) == 0.0)
    assert len(dps_cate(TRUTH, data, GRID, PASS, GrantSpec.constant(1.0, GRID.ages))) == 300


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 2.0), st.lists(st.floats(0.0, 3.0), min_size=6, max_size=6))
def test_any_grant_raises_enrollment_at_last_decision_age(seed, grant_util, amounts):
    # at the last age there is no future grant to shift continuation values
    rng = np.random.default_rng(seed)
    flat = {n: float(rng.normal(0, 1)) for n in TRUTH.estimable()}
    params = TRUTH.with_values(list(flat), list(flat.values())).with_values(["grant_util"], [grant_util])
    grant = GrantSpec(dict(zip(GRID.ages.tolist(), amounts)))
    n = 40
    age = np.full(n, GRID.terminal_age - 1)
    ed = np.clip(age - 6 - rng.integers(0, 3, n), 0, 11)
    data = make_data(GRID, age, ed, rng.integers(0, 2, n), rng.integers(0, 2, n), rng.choice([0.5, 2.0], n),
                     wage_fn(0, GRID.ages))
    assert np.all(dps_cate(params, data, GRID, PASS, grant) >= -1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 2.0), st.integers(12, 17))
def test_current_year_grant_raises_enrollment_at_that_age(seed, grant_util, grant_age):
    rng = np.random.default_rng(seed)
    flat = {n: float(rng.normal(0, 1)) for n in TRUTH.estimable()}
    params = TRUTH.with_values(list(flat), list(flat.values())).with_values(["grant_util"], [grant_util])
    grant = GrantSpec({a: (1.0 if a == grant_age else 0.0) for a in GRID.ages})
    n = 30
    age = np.full(n, grant_age)
    ed = np.clip(age - 6 - rng.integers(0, 4, n), 0, 11)
    data = make_data(GRID, age, ed, rng.integers(0, 2, n), rng.integers(0, 2, n), rng.choice([0.5, 2.0], n),
                     wage_fn(1, GRID.ages))
    assert np.all(dps_cate(params, data, GRID, PASS, grant) >= -1e-12)


def test_make_data_state_errors():
    with pytest.raises(StateError):
        make_data(GRID, [11], [3], [0], [0], [1.0], wage_fn(0, GRID.ages))
    with pytest.raises(StateError):
        make_data(GRID, [13], [12], [0], [0], [1.0], wage_fn(0, GRID.ages))
    with pytest.raises(ValidationError):
        make_data(GRID, [13], [5], [0], [0], [1.0], wage_fn(0, GRID.ages), y=[0.5])


def test_make_data_compresses_and_maps_back():
    data = make_data(GRID, [13, 13, 14], [6, 6, 7], [0, 0, 1], [1, 1, 0], [1.0, 1.0, 2.0], wage_fn(0, GRID.ages))
    assert data.n == 3 and len(data.weight) == 2
    assert data.unit_row[0] == data.unit_row[1] != data.unit_row[2]


def test_params_flat_round_trip():
    assert DpsParams.from_flat(TRUTH.flat(), 2) == TRUTH
    with pytest.raises(ValidationError):
        DpsParams(mu=(1.0, 2.0))
    with pytest.raises(ValidationError):
        DpsParams(discount=1.0)


def test_pass_table_csv(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("age,ed,p_pass\n12,6,0.8\n13,7,0.75\n")
    table = load_pass_table(path)
    mat = table.matrix(GRID)
    assert mat[0, 6] == 0.8 and mat[1, 7] == 0.75 and mat[2, 3] == 1.0
    path.write_text("age,ed,p_pass\n12,6,1.5\n")
    with pytest.raises(ValidationError):
        load_pass_table(path)
    path.write_text("age,ed\n")
    with pytest.raises(ParseError):
        load_pass_table(path)


def test_reports(tmp_path):
    data = _small_data(1000)
    fit = fit_mle(data, TRUTH, GRID, PASS, optimizer=OptimizerSettings(max_iter=5, simplex_iter=5), free=["mu_1"])
    write_params(tmp_path / "params.csv", fit.params)
    rows = list(csv.DictReader((tmp_path / "params.csv").open()))
    assert {r["std_flag"] for r in rows} == {"not_computed", "fixed"}
    write_trace(tmp_path / "trace.csv", fit)
    assert (tmp_path / "trace.csv").read_text().startswith("restart,iter,loglik\n0,0,")
    pred = predicted_enrollment(fit.params, data, GRID, PASS)
    write_fit_by(tmp_path / "by_age.csv", data, pred, "age")
    by_age = list(csv.DictReader((tmp_path / "by_age.csv").open()))
    assert [int(r["age"]) for r in by_age] == list(range(12, 18))
    assert sum(int(r["n"]) for r in by_age) == 1000
