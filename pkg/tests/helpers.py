"""Random dataset generators shared by the test modules."""

import numpy as np

from cqreg import Dataset
from cqreg.errors import SingularDesign


def one_sample(rng, n=None, rate=None):
    n = int(rng.integers(5, 201)) if n is None else n
    rate = rng.uniform(0.2, 1.0) if rate is None else rate
    if rng.random() < 0.5:
        # coarse grid: many ties, including event/censored ties
        x = np.round(rng.exponential(size=n) * rng.choice([5.0, 20.0]), 0) / 10.0
    else:
        x = rng.normal(size=n)
    d = (rng.random(n) < rate).astype(int)
    return Dataset(x, d, np.ones((n, 1)))


def design(rng, n, p):
    cols = [np.ones(n)]
    for _ in range(p - 1):
        if rng.random() < 0.5:
            cols.append(rng.normal(size=n))
        else:
            cols.append(rng.integers(0, 3, n).astype(float))
    return np.column_stack(cols)


def uncensored_regression(rng, n=None, p=None):
    while True:
        n_ = int(rng.integers(6, 31)) if n is None else n
        p_ = int(rng.integers(1, 4)) if p is None else p
        z = design(rng, n_, p_)
        e = rng.normal(size=n_)
        if rng.random() < 0.5:
            e = np.round(e, 1)
        x = z @ rng.normal(size=p_) + e
        try:
            return Dataset(x, np.ones(n_, int), z)
        except SingularDesign:
            continue


def censored_regression(rng, n=None, p=None):
    """Conditionally independent censoring given the covariates."""
    while True:
        n_ = int(rng.integers(10, 201)) if n is None else n
        p_ = int(rng.integers(1, 5)) if p is None else p
        z = design(rng, n_, p_)
        t = z @ rng.normal(size=p_) * 0.3 + rng.normal(size=n_)
        c = rng.normal(size=n_) + rng.uniform(0.0, 2.0)
        if rng.random() < 0.3:
            t, c = np.round(t, 1), np.round(c, 1)
        x = np.minimum(t, c)
        d = (t <= c).astype(int)
        try:
            return Dataset(x, d, z)
        except SingularDesign:
            continue
