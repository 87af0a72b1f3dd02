import numpy as np
import pytest

from policyeval.core import Context, CostSchedule, Dataset, UnitRecord


def make_units(t, y, p=0.5, ages=None, male=None, role="target_ex_post", covariates=None, split=None):
    n = len(t)
    p = np.broadcast_to(np.asarray(p, dtype=float), (n,))
    ages = [10] * n if ages is None else ages
    male = [0] * n if male is None else male
    split = [0.5] * n if split is None else split
    units = tuple(
        UnitRecord(f"u{i}", "c", int(t[i]), float(p[i]), float(y[i]), int(ages[i]), int(male[i]),
                   dict(covariates[i]) if covariates is not None else {}, split_draw=float(split[i]))
        for i in range(n)
    )
    return Dataset(units, role, (Context("c", role != "reference", (), frozenset({0, 1}) if role != "target_ex_ante" else frozenset({0})),))


@pytest.fixture
def hand_example():
    """Two treated units with adjusted outcomes 0.9 and 0.8, two controls with 0 and 1."""
    sched = CostSchedule(1000.0, ((0, 0.1), (12, 0.2)))
    data = make_units([1, 1, 0, 0], [1.0, 1.0, 0.0, 1.0], ages=[10, 12, 10, 10])
    return data, sched


@pytest.fixture
def zero_sched():
    return CostSchedule.zero()
