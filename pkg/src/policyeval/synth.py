"""Synthetic experiments on a finite covariate support, with exact ground truth.

Every cell carries its probability, untreated mean and treatment effect, so welfare
contrasts are computed by enumeration rather than simulation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import format_kv, read_kv
from .contrast import TreatmentRule
from .core import Context, CostSchedule, Dataset, UnitRecord
from .errors import ConfigError, ValidationError


@dataclass(frozen=True)
class Cell:
    age: int
    male: int
    prob: float
    baseline: float
    cate: float
    extras: tuple[float, ...] = ()
    propensity: float | None = None

    def key(self):
        return (self.age, self.male) + tuple(self.extras)


@dataclass(frozen=True)
class DgpSpec:
    cells: tuple[Cell, ...]
    propensity: float = 0.5
    n_reference: int = 2000
    n_target: int = 2000
    seed: int = 0
    extra_names: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.cells:
            raise ValidationError("DGP needs at least one cell")
        probs = np.array([c.prob for c in self.cells])
        if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0, atol=1e-9):
            raise ValidationError("cell probabilities must be non-negative and sum to 1")
        keys = [c.key() for c in self.cells]
        if len(set(keys)) != len(keys):
            raise ValidationError("duplicate covariate cells")
        for c in self.cells:
            if len(c.extras) != len(self.extra_names):
                raise ValidationError("cell extras do not match extra_names")
            if not (0 <= c.baseline <= 1 and 0 <= c.baseline + c.cate <= 1):
                raise ValidationError(f"cell {c.key()}: outcome means leave [0, 1]")
            p = self.cell_propensity(c)
            if not 0 < p < 1:
                raise ValidationError(f"cell {c.key()}: propensity must be interior")
        if self.n_reference < 0 or self.n_target < 0:
            raise ValidationError("sample sizes must be non-negative")

    def cell_propensity(self, cell: Cell) -> float:
        return self.propensity if cell.propensity is None else cell.propensity

    def with_sizes(self, n_reference=None, n_target=None, seed=None) -> "DgpSpec":
        return replace(
            self,
            n_reference=self.n_reference if n_reference is None else n_reference,
            n_target=self.n_target if n_target is None else n_target,
            seed=self.seed if seed is None else seed,
        )


def cell_unit(spec: DgpSpec, cell: Cell, unit_id: str = "cell") -> UnitRecord:
    return UnitRecord(
        unit_id=unit_id, context_id="target", treatment=0, propensity=spec.cell_propensity(cell),
        outcome=cell.baseline, age=cell.age, male=cell.male,
        covariates=dict(zip(spec.extra_names, cell.extras)),
    )


def _draw(spec: DgpSpec, n: int, rng: np.random.Generator, context: str, prefix: str, experiment: bool) -> list[UnitRecord]:
    probs = np.array([c.prob for c in spec.cells])
    idx = rng.choice(len(spec.cells), size=n, p=probs / probs.sum())
    prop = np.array([spec.cell_propensity(c) for c in spec.cells])[idx]
    treat = (rng.random(n) < prop).astype(int) if experiment else np.zeros(n, dtype=int)
    base = np.array([c.baseline for c in spec.cells])[idx]
    effect = np.array([c.cate for c in spec.cells])[idx]
    y = (rng.random(n) < base + treat * effect).astype(float)
    split = rng.random(n)
    units = []
    for i in range(n):
        cell = spec.cells[idx[i]]
        units.append(UnitRecord(
            unit_id=f"{prefix}{i}", context_id=context, treatment=int(treat[i]), propensity=float(prop[i]),
            outcome=float(y[i]), age=cell.age, male=cell.male,
            covariates=dict(zip(spec.extra_names, cell.extras)), split_draw=float(split[i]),
        ))
    return units


def generate(spec: DgpSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Reference experiment, untreated ex-ante target sample, fresh ex-post target experiment."""
    s_ref, s_ante, s_post = np.random.SeedSequence(spec.seed).spawn(3)
    ref_ctx = Context("reference", False, (), frozenset({0, 1}))
    tgt_ctx = Context("target", True, (), frozenset({0}))
    post_ctx = Context("target", True, (), frozenset({0, 1}))
    reference = Dataset(tuple(_draw(spec, spec.n_reference, np.random.default_rng(s_ref), "reference", "r", True)),
                        "reference", (ref_ctx,))
    ex_ante = Dataset(tuple(_draw(spec, spec.n_target, np.random.default_rng(s_ante), "target", "a", False)),
                      "target_ex_ante", (tgt_ctx,))
    ex_post = generate_expost(spec, np.random.default_rng(s_post), contexts=(post_ctx,))
    return reference, ex_ante, ex_post


def generate_expost(spec: DgpSpec, rng: np.random.Generator, n: int | None = None, contexts=None) -> Dataset:
    n = spec.n_target if n is None else n
    contexts = contexts or (Context("target", True, (), frozenset({0, 1})),)
    return Dataset(tuple(_draw(spec, n, rng, "target", "e", True)), "target_ex_post", contexts)


def adjusted_cates(spec: DgpSpec, sched: CostSchedule) -> np.ndarray:
    """Per-cell cost-adjusted effect ``(1-g)(baseline+cate) - baseline``."""
    return np.array([(1 - sched.share(c.age)) * (c.baseline + c.cate) - c.baseline for c in spec.cells])


def true_contrast(spec: DgpSpec, rule_l: TreatmentRule, rule_m: TreatmentRule, sched: CostSchedule) -> float:
    adj = adjusted_cates(spec, sched)
    total = 0.0
    for cell, effect in zip(spec.cells, adj):
        unit = cell_unit(spec, cell)
        total += cell.prob * (rule_l.assign(unit) - rule_m.assign(unit)) * effect
    return float(total)


def oracle_rule(spec: DgpSpec, sched: CostSchedule, label: str = "oracle", invert: bool = False) -> TreatmentRule:
    """Treat exactly the cells whose true adjusted effect is non-negative (or the complement)."""
    table = {c.key(): int((a >= 0) != invert) for c, a in zip(spec.cells, adjusted_cates(spec, sched))}
    names = spec.extra_names

    def key_of(u: UnitRecord):
        return (u.age, u.male) + tuple(u.covariates[n] for n in names)

    def batch(data: Dataset) -> np.ndarray:
        return np.fromiter((table[key_of(u)] for u in data.units), dtype=float, count=len(data))

    return TreatmentRule(label, lambda u: table[key_of(u)], batch)


# Mexican age-sex cell means: untreated enrollment and raw effect by age, boys then girls.
_MEX_BOYS = {6: (0.91, 0.02), 7: (0.96, 0.0), 8: (0.96, 0.01), 9: (0.96, 0.02), 10: (0.96, 0.01), 11: (0.93, 0.03),
             12: (0.86, 0.05), 13: (0.76, 0.07), 14: (0.60, 0.14), 15: (0.46, 0.07), 16: (0.32, 0.03)}
_MEX_GIRLS = {6: (0.89, 0.01), 7: (0.95, 0.0), 8: (0.96, 0.0), 9: (0.95, 0.01), 10: (0.96, 0.0), 11: (0.92, 0.03),
              12: (0.79, 0.09), 13: (0.68, 0.05), 14: (0.52, 0.13), 15: (0.35, 0.06), 16: (0.25, 0.07)}
# Morocco within-sex age shares.
_SHARE_GIRLS = {6: 0.05, 7: 0.07, 8: 0.09, 9: 0.08, 10: 0.10, 11: 0.12, 12: 0.13, 13: 0.12, 14: 0.09, 15: 0.09, 16: 0.06}
_SHARE_BOYS = {6: 0.06, 7: 0.07, 8: 0.08, 9: 0.08, 10: 0.12, 11: 0.12, 12: 0.13, 13: 0.12, 14: 0.10, 15: 0.08, 16: 0.05}


def cct_like_spec(n_reference: int = 4000, n_target: int = 2000, seed: int = 0, propensity: float = 0.5) -> DgpSpec:
    """Ages 6-16 by sex; enrollment falls with age and effects are largest for teens."""
    cells = []
    for male, table, shares in ((1, _MEX_BOYS, _SHARE_BOYS), (0, _MEX_GIRLS, _SHARE_GIRLS)):
        total = sum(shares.values())
        for age, (base, cate) in table.items():
            cells.append(Cell(age, male, 0.5 * shares[age] / total, base, cate))
    return DgpSpec(tuple(cells), propensity, n_reference, n_target, seed)


def two_cell_spec(effect_a: float, effect_b: float, n_target: int = 2000, seed: int = 0,
                  baseline: float = 0.4, propensity: float = 0.5) -> DgpSpec:
    """Two equally likely cells (age 10 girls, age 10 boys) with the given raw effects."""
    cells = (Cell(10, 0, 0.5, baseline, effect_a), Cell(10, 1, 0.5, baseline, effect_b))
    return DgpSpec(cells, propensity, n_target, n_target, seed)


def spec_to_config(spec: DgpSpec, extra: dict | None = None) -> str:
    values = {
        "n_reference": spec.n_reference,
        "n_target": spec.n_target,
        "seed": spec.seed,
        "propensity": repr(spec.propensity),
    }
    if spec.extra_names:
        values["extra_covariates"] = ",".join(spec.extra_names)
    values["cell_fields"] = ",".join(("age", "male") + spec.extra_names + ("prob", "baseline", "cate", "p"))
    for i, c in enumerate(spec.cells):
        p = "" if c.propensity is None else repr(c.propensity)
        fields = [str(c.age), str(c.male)] + [repr(x) for x in c.extras] + [repr(c.prob), repr(c.baseline), repr(c.cate), p]
        values[f"cell.{i}"] = ",".join(fields)
    values.update(extra or {})
    return format_kv(values)


def spec_from_mapping(raw: dict[str, str]) -> DgpSpec:
    try:
        extra_names = tuple(n.strip() for n in raw.get("extra_covariates", "").split(",") if n.strip())
        fields = [f.strip() for f in raw.get("cell_fields", "age,male,prob,baseline,cate").split(",")]
        required = {"age", "male", "prob", "baseline", "cate"} | set(extra_names)
        if not required <= set(fields):
            raise ConfigError(f"cell_fields must include {sorted(required)}")
        cell_keys = sorted((k for k in raw if k.startswith("cell.")), key=lambda k: int(k.split(".", 1)[1]))
        cells = []
        for key in cell_keys:
            parts = [s.strip() for s in raw[key].split(",")]
            if len(parts) < len(fields):
                parts += [""] * (len(fields) - len(parts))
            rec = dict(zip(fields, parts))
            cells.append(Cell(
                age=int(rec["age"]), male=int(rec["male"]), prob=float(rec["prob"]),
                baseline=float(rec["baseline"]), cate=float(rec["cate"]),
                extras=tuple(float(rec[n]) for n in extra_names),
                propensity=float(rec["p"]) if rec.get("p") else None,
            ))
        return DgpSpec(
            tuple(cells), float(raw.get("propensity", 0.5)), int(raw.get("n_reference", 2000)),
            int(raw.get("n_target", 2000)), int(raw.get("seed", 0)), extra_names,
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ConfigError(f"bad DGP config: {exc}") from None


def load_spec(path) -> DgpSpec:
    return spec_from_mapping(read_kv(path))


def write_truth(path, spec: DgpSpec, sched: CostSchedule) -> None:
    adj = adjusted_cates(spec, sched)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["age", "male", *spec.extra_names, "prob", "baseline", "cate", "share", "adjusted_cate"])
        for c, a in zip(spec.cells, adj):
            writer.writerow([c.age, c.male, *[repr(x) for x in c.extras], repr(c.prob), repr(c.baseline),
                             repr(c.cate), repr(sched.share(c.age)), repr(float(a))])

