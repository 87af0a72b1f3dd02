"""Batch command-line harness: simulate, recommend, evaluate, montecarlo.

Exit codes: 0 success, 1 invalid input, 2 I/O failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dps, forest, sps, stratified, synth
from .config import RunConfig, read_kv, resolve_schedule
from .contrast import (
    constant_rule,
    estimate_contrast,
    lookup_rule,
    model_confidence_set,
    pairwise_matrix,
    write_contrast_report,
    write_mcs_report,
)
from .core import (
    CostSchedule,
    Dataset,
    adjusted_effect,
    ensure_ex_ante,
    evaluation_sample,
    load_covariates,
    load_units,
    split_control,
    write_covariates,
    write_units,
)
from .errors import ConfigError, ParseError, PolicyEvalError, ValidationError

log = logging.getLogger("policyeval")

METHODS = ("stratified", "forest", "sps", "dps", "treat_all", "treat_none", "zero", "oracle")


# --------------------------------------------------------------------------- simulate

def cmd_simulate(spec_path, out_dir, seed: int | None = None) -> int:
    """Write reference, ex-ante target, ex-post target, target covariates and per-cell truth."""
    raw = read_kv(spec_path)
    spec = synth.spec_from_mapping(raw)
    if seed is not None:
        spec = spec.with_sizes(seed=seed)
    sched = resolve_schedule(raw.get("schedule", "morocco"), float(raw.get("kappa", 1000.0)), Path(spec_path).parent)
    reference, ex_ante, ex_post = synth.generate(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(spec.extra_names)
    write_units(out / "reference.csv", reference, names)
    write_units(out / "target_ex_ante.csv", ex_ante, names)
    write_units(out / "target_ex_post.csv", ex_post, names)
    write_covariates(out / "target_covariates.csv", ex_post, names)
    synth.write_truth(out / "truth.csv", spec, sched)
    log.info("simulate: %d reference, %d ex-ante, %d ex-post units -> %s",
             len(reference), len(ex_ante), len(ex_post), out)
    return 0


# --------------------------------------------------------------------------- recommend

def _forest_predictions(cfg: RunConfig, reference: Dataset, targets: Dataset, sched: CostSchedule, out: Path):
    s = cfg.settings("forest")
    features = [f.strip() for f in s["features"].split(",")] if "features" in s else (
        ["age", "male"] + list(reference.covariate_names))
    fcfg = forest.ForestConfig(
        n_trees=int(s.get("n_trees", 2000)), min_leaf=int(s.get("min_leaf", 2)),
        subsample_fraction=float(s.get("subsample_fraction", 0.5)),
        candidate_features_per_split=int(s["mtry"]) if "mtry" in s else None,
        seed=int(s.get("seed", cfg.seed)),
    )
    f1, f0 = forest.fit_potential_outcome_forests(reference, sched, features, fcfg)
    forest.write_importance(out / "forest_importance.csv", f1, f0)
    x, _ = targets.feature_matrix(features)
    return np.atleast_1d(forest.predict_cate(f1, f0, x))


def _roster(cfg: RunConfig):
    if cfg.workers is None:
        return None, None
    roster = sps.load_workers(cfg.workers)
    s = cfg.settings("sps")
    grid = [float(v) for v in s["penalties"].split(",")] if "penalties" in s else np.geomspace(1.0, 1e-4, 25).tolist()
    model = sps.fit_wage_model(roster, grid, int(s.get("folds", 5)), cfg.seed)
    return roster, model


def _income_inputs(data: Dataset, roster, model) -> tuple[np.ndarray, np.ndarray]:
    """Wage offer and non-child income per unit: imputed from the roster, or read as covariates."""
    if model is None:
        try:
            return (np.array([u.covariates["wage_offer"] for u in data.units], dtype=float),
                    np.array([u.covariates["nonchild_income"] for u in data.units], dtype=float))
        except KeyError:
            raise ConfigError("sps/dps need a workers roster or wage_offer and nonchild_income covariates") from None
    households: dict[str, list] = {}
    for p in roster:
        households.setdefault(p.household_id, []).append(p)
    wage, income = [], []
    for u in data.units:
        child = sps.person_from_unit(u)
        members = [p for p in households.get(child.household_id, []) if p.person_id != u.unit_id] + [child]
        wage.append(sps.wage_offer(model, child))
        income.append(sps.nonchild_income(model, members, u.unit_id))
    return np.array(wage), np.array(income)


def _grant_amounts(cfg: RunConfig, data: Dataset) -> tuple[sps.GrantSpec, np.ndarray]:
    cfg.require("grants")
    grants = sps.load_grants(cfg.grants)
    return grants, np.array([grants.grant(a) for a in data.age], dtype=float)


def _sps_predictions(cfg: RunConfig, predictor: Dataset, targets: Dataset, sched: CostSchedule, roster, model):
    e, n = _income_inputs(predictor, roster, model)
    surface = sps.fit_enrollment_surface(e, n, predictor.male, predictor.outcome)
    log.info("sps: bandwidths h_e=%.4g h_n=%.4g h_sex=%.3g", surface.h_e, surface.h_n, surface.h_sex)
    et, nt = _income_inputs(targets, roster, model)
    _, g = _grant_amounts(cfg, targets)
    base, shifted = sps.sps_levels(surface, et, nt, targets.male, g)
    return adjusted_effect(base, shifted, sched.shares(targets.age))


def _dps_arrays(data: Dataset, grid: dps.StateGrid, roster, model):
    def col(name):
        try:
            return np.array([u.covariates[name] for u in data.units], dtype=float)
        except KeyError:
            raise ConfigError(f"dps needs covariate {name!r}") from None

    if model is None:
        wages = np.repeat(col("wage_offer")[:, None], len(grid.ages), axis=1)
    else:
        wages = np.array([[sps.wage_offer(model, u, age=a) for a in grid.ages] for u in data.units])
    return data.age, col("ed").astype(int), data.male, col("father_ed"), col("distance"), wages


def _dps_predictions(cfg: RunConfig, predictor: Dataset, targets: Dataset, sched: CostSchedule, roster, model, out: Path):
    s = cfg.settings("dps")
    grid = dps.StateGrid(min_age=int(s.get("min_age", 6)), ed_max=int(s.get("ed_max", 12)), sec=int(s.get("sec", 12)),
                         primary_years=int(s.get("primary_years", 6)), entry_age=int(s.get("entry_age", 6)))
    pass_table = dps.load_pass_table(cfg.pass_table) if cfg.pass_table is not None else dps.PassProbTable()
    n_types = int(s.get("types", 3))
    gamma = float(s.get("gamma", 1.0))
    init = dps.DpsParams(terminal=(1.0, 0.1, 0.0), mu=tuple(np.linspace(1.0, -1.0, n_types)) if n_types > 1 else (0.0,),
                         type_logit=tuple((0.0,) * len(dps.TYPE_COVARIATES) for _ in range(n_types - 1)))
    free = [name for name in init.estimable() if name != "grant_util"]
    data = dps.make_data(grid, *_dps_arrays(predictor, grid, roster, model), y=predictor.outcome)
    settings = dps.OptimizerSettings(restarts=int(s.get("restarts", 1)), max_iter=int(s.get("max_iter", 2000)))
    fit = dps.fit_mle(data, init, grid, pass_table, optimizer=settings, seed=cfg.seed, free=free)
    # The grant never varies in status-quo data; it is valued like wage income scaled by gamma.
    params = fit.params.with_values(["grant_util"], [gamma * fit.params.money_coef])
    if params.grant_util < 0:
        log.warning("dps: fitted wage coefficient is negative, so the grant lowers school utility")
    log.info("dps: log likelihood %.4f (start %.4f)", fit.loglik, fit.init_loglik)
    dps.write_params(out / "dps_params.csv", params)
    dps.write_trace(out / "dps_trace.csv", fit)
    fitted = dps.predicted_enrollment(params, data, grid, pass_table)
    dps.write_fit_by(out / "dps_fit_by_age.csv", data, fitted, "age")
    dps.write_fit_by(out / "dps_fit_by_ed.csv", data, fitted, "ed")
    grants, _ = _grant_amounts(cfg, targets)
    tdata = dps.make_data(grid, *_dps_arrays(targets, grid, roster, model))
    base, treated = dps.dps_effects(params, tdata, grid, pass_table, grants)
    rows = tdata.unit_row
    return adjusted_effect(base[rows], treated[rows], sched.shares(targets.age))


def _oracle_predictions(cfg: RunConfig, targets: Dataset, sched: CostSchedule):
    s = cfg.settings("oracle")
    if "spec" not in s:
        raise ConfigError("oracle method needs oracle.spec = <dgp config>")
    spec = synth.load_spec((cfg.base / s["spec"]).resolve())
    adj = dict(zip((c.key() for c in spec.cells), synth.adjusted_cates(spec, sched)))
    out = []
    for u in targets.units:
        key = (u.age, u.male) + tuple(u.covariates[n] for n in spec.extra_names)
        if key not in adj:
            raise ValidationError(f"unit {u.unit_id} lies outside the oracle's support")
        out.append(adj[key])
    return np.array(out, dtype=float)


def cmd_recommend(cfg: RunConfig) -> int:
    """Fit each method on ex-ante data and write per-unit assignments and predictions.

    Only the reference experiment and the predictor half of the untreated target
    sample are read; the target holdout is dropped on load and ex-post outcomes are
    never opened.
    """
    cfg.require("reference", "assign_covariates", "out")
    if not cfg.methods:
        raise ConfigError("no methods configured")
    unknown = [m for m in cfg.methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; choose from {METHODS}")
    sched = cfg.cost_schedule()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    reference = ensure_ex_ante(load_units(cfg.reference, "reference"), "recommend")
    predictor = None
    if cfg.target_ex_ante is not None:
        cfg.require("target_ex_ante")
        predictor, _holdout = split_control(load_units(cfg.target_ex_ante, "target_ex_ante"), cfg.split_threshold)
        del _holdout
        ensure_ex_ante(predictor, "recommend")
    targets = load_covariates(cfg.assign_covariates)
    roster = model = None
    if any(m in ("sps", "dps") for m in cfg.methods):
        if predictor is None:
            raise ConfigError("sps and dps need target_ex_ante (its predictor half is the estimation sample)")
        roster, model = _roster(cfg)

    assignments, predictions = [], []
    for method in cfg.methods:
        log.info("recommend: fitting %s", method)
        try:
            cate = None
            if method == "treat_all":
                assign = constant_rule(method, 1).apply(targets)
            elif method == "treat_none":
                assign = constant_rule(method, 0).apply(targets)
            else:
                if method == "zero":
                    cate = np.zeros(len(targets))
                elif method == "stratified":
                    table = stratified.fit_strata(reference, sched)
                    stratified.write_table(out / "stratified_table.csv", table)
                    cate = np.array([stratified.predict(table, u) for u in targets.units])
                elif method == "forest":
                    cate = _forest_predictions(cfg, reference, targets, sched, out)
                elif method == "sps":
                    cate = _sps_predictions(cfg, predictor, targets, sched, roster, model)
                elif method == "dps":
                    cate = _dps_predictions(cfg, predictor, targets, sched, roster, model, out)
                elif method == "oracle":
                    cate = _oracle_predictions(cfg, targets, sched)
                if not np.all(np.isfinite(cate)):
                    raise ValidationError("non-finite effect predictions")
                assign = (cate >= 0).astype(float)
        except PolicyEvalError as exc:
            log.error("method %s failed: %s", method, exc)
            raise
        assignments.extend((uid, method, int(a)) for uid, a in zip(targets.unit_ids, assign))
        if cate is not None:
            predictions.extend((uid, method, float(c)) for uid, c in zip(targets.unit_ids, cate))

    with (out / "assignments.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("unit_id", "method", "assign"))
        writer.writerows(assignments)
    with (out / "predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("unit_id", "method", "cate_adj"))
        writer.writerows((u, m, repr(c)) for u, m, c in predictions)
    log.info("recommend: %d methods x %d units -> %s", len(cfg.methods), len(targets), out)
    return 0


# --------------------------------------------------------------------------- evaluate

def read_assignments(path) -> dict[str, dict[str, int]]:
    """``method -> {unit_id: assign}`` in order of first appearance."""
    table: dict[str, dict[str, int]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"unit_id", "method", "assign"} <= set(reader.fieldnames):
            raise ParseError("assignments need columns unit_id,method,assign", 1)
        for line, row in enumerate(reader, start=2):
            if row["assign"] not in ("0", "1"):
                raise ParseError(f"assignment must be 0 or 1, got {row['assign']!r}", line)
            per = table.setdefault(row["method"], {})
            if row["unit_id"] in per:
                raise ParseError(f"duplicate assignment for unit {row['unit_id']} under {row['method']}", line)
            per[row["unit_id"]] = int(row["assign"])
    return table


def _fmt(x: float, width: int = 9) -> str:
    return f"{x:>{width}.4f}" if math.isfinite(x) else f"{'nan':>{width}}"


def cmd_evaluate(cfg: RunConfig) -> int:
    """Pairwise welfare contrasts and the model confidence set on ex-post target data."""
    if cfg.assignments is None and cfg.out is not None:
        cfg.assignments = Path(cfg.out) / "assignments.csv"
    cfg.require("target_ex_post", "assignments", "out")
    sched = cfg.cost_schedule()
    expost = load_units(cfg.target_ex_post, "target_ex_post")
    if cfg.holdout_only:
        expost = evaluation_sample(expost, cfg.split_threshold)
    table = read_assignments(cfg.assignments)
    methods = cfg.methods or list(table)
    missing = [m for m in methods if m not in table]
    if missing:
        raise ValidationError(f"no assignments for methods {missing}")
    rules = [lookup_rule(m, table[m]) for m in methods]
    matrix = pairwise_matrix(expost, rules, sched)
    estimates = [matrix[i][j] for i in range(len(rules)) for j in range(i + 1, len(rules))]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_contrast_report(out / "contrasts.csv", estimates)
    mcs = model_confidence_set(expost, rules, sched, cfg.alpha, cfg.reps, cfg.seed)
    write_mcs_report(out / "mcs.csv", mcs, methods)

    shares = {m: float(np.mean(list(table[m].values()))) for m in methods}
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("method", "share_treated", "n_assigned", "retained"))
        for m in methods:
            writer.writerow([m, repr(shares[m]), len(table[m]), int(m in mcs.retained)])

    print(f"{'method':<14}{'share treated':>14}")
    for m in methods:
        print(f"{m:<14}{shares[m]:>14.3f}")
    print()
    print(f"{'l':<14}{'m':<14}{'welfare diff':>13}{'SE':>9}{'p':>9}")
    for est in estimates:
        print(f"{est.labels[0]:<14}{est.labels[1]:<14}{_fmt(est.delta_hat, 13)}{_fmt(est.se)}{_fmt(est.p_value)}")
    print()
    print(f"model confidence set at alpha={cfg.alpha}: {', '.join(mcs.retained)}")
    return 0


# --------------------------------------------------------------------------- montecarlo

def _mc_rule(name: str, spec: synth.DgpSpec, sched: CostSchedule):
    if name == "oracle":
        return synth.oracle_rule(spec, sched, "oracle")
    if name == "inverse_oracle":
        return synth.oracle_rule(spec, sched, "inverse_oracle", invert=True)
    if name == "treat_all":
        return constant_rule(name, 1)
    if name == "treat_none":
        return constant_rule(name, 0)
    raise ConfigError(f"unknown Monte Carlo rule {name!r}")


def cmd_montecarlo(spec_path, reps: int, n: int | None, out_dir, seed: int | None = None, level: float = 0.95) -> int:
    """Repeated ex-post draws; per-rep estimate, SE and interval coverage of the true contrast."""
    if reps < 100:
        raise ValidationError("montecarlo needs at least 100 replications")
    raw = read_kv(spec_path)
    spec = synth.spec_from_mapping(raw)
    sched = resolve_schedule(raw.get("schedule", "morocco"), float(raw.get("kappa", 1000.0)), Path(spec_path).parent)
    rule_l = _mc_rule(raw.get("rule_l", "oracle"), spec, sched)
    rule_m = _mc_rule(raw.get("rule_m", "treat_all"), spec, sched)
    n = spec.n_target if n is None else int(n)
    results = monte_carlo(spec, rule_l, rule_m, sched, reps, n, spec.seed if seed is None else seed, level)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "montecarlo_reps.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("rep", "delta_hat", "se", "lower", "upper", "covers"))
        for r, row in enumerate(results["reps"]):
            writer.writerow([r, *(repr(v) for v in row[:4]), int(row[4])])
    summary = results["summary"]
    with (out / "montecarlo_summary.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(tuple(summary))
        writer.writerow([repr(v) if isinstance(v, float) else v for v in summary.values()])
    print(f"true contrast {summary['truth']:.5f}; coverage {summary['coverage']:.3f} over {reps} reps"
          + (" (degenerate: every SE is zero)" if summary["degenerate"] else ""))
    return 0


def monte_carlo(spec: synth.DgpSpec, rule_l, rule_m, sched: CostSchedule, reps: int, n: int, seed: int,
                level: float = 0.95) -> dict:
    truth = synth.true_contrast(spec, rule_l, rule_m, sched)
    rows = []
    for child in np.random.SeedSequence(seed).spawn(reps):
        expost = synth.generate_expost(spec, np.random.default_rng(child), n)
        est = estimate_contrast(expost, rule_l, rule_m, sched)
        lo, hi = est.ci(level)
        rows.append((est.delta_hat, est.se, lo, hi, bool(lo <= truth <= hi)))
    se = np.array([r[1] for r in rows])
    summary = {
        "reps": reps, "n": n, "truth": float(truth),
        "coverage": float(np.mean([r[4] for r in rows])),
        "mean_delta": float(np.mean([r[0] for r in rows])),
        "median_se": float(np.median(se)),
        "degenerate": int(bool(np.all(se == 0))),
    }
    return {"reps": rows, "summary": summary}


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="policyeval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic reference and target data from a DGP config")
    p.add_argument("--config", required=True, help="DGP config (key = value)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    for name, text in (("recommend", "fit methods and write per-unit assignments"),
                       ("evaluate", "compare assignment rules on ex-post target data")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="run config (key = value)")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        if name == "evaluate":
            p.add_argument("--alpha", type=float)
            p.add_argument("--reps", type=int)

    p = sub.add_parser("montecarlo", help="coverage of the contrast interval under a DGP config")
    p.add_argument("--config", required=True, help="DGP config (key = value)")
    p.add_argument("--out", required=True)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    return parser


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.out is not None:
        cfg.out = Path(args.out).resolve()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "alpha", None) is not None:
        if not 0 < args.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        cfg.alpha = args.alpha
    if getattr(args, "reps", None) is not None:
        cfg.reps = args.reps
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out, args.seed)
        if args.command == "montecarlo":
            return cmd_montecarlo(args.config, args.reps, args.n, args.out, args.seed)
        cfg = _run_config(args)
        return cmd_recommend(cfg) if args.command == "recommend" else cmd_evaluate(cfg)
    except PolicyEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
