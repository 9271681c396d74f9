"""Brute-force reference implementations of the special cases.

Nothing here touches the round solver; these are direct transcriptions of
the textbook definitions, meant as test oracles.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog

from .core import Dataset, StepFunction
from .errors import BeyondSupport, Infeasible, TooLarge


def _one_sample(dataset_or_x, delta=None):
    if isinstance(dataset_or_x, Dataset):
        if dataset_or_x.p != 1:
            raise ValueError("one-sample estimators need an intercept-only dataset")
        return dataset_or_x.x, dataset_or_x.delta
    return np.asarray(dataset_or_x, dtype=np.float64), np.asarray(delta)


def _risk_table(x, delta, weights):
    times = np.unique(x[delta == 1])
    at_risk = np.array([weights[x >= t].sum() for t in times])
    events = np.array([weights[(x == t) & (delta == 1)].sum() for t in times])
    return times, events, at_risk


def kaplan_meier(dataset, delta=None, weights=None) -> StepFunction:
    """Product-limit estimate of the distribution function F."""
    x, d = _one_sample(dataset, delta)
    wt = np.ones(x.size) if weights is None else np.asarray(weights, dtype=np.float64)
    times, events, at_risk = _risk_table(x, d, wt)
    surv = 1.0
    vals = []
    for e, r in zip(events, at_risk):
        surv *= 1.0 - e / r
        vals.append(1.0 - surv)
    return StepFunction(times, vals, 0.0)


def nelson_aalen(dataset, delta=None, weights=None) -> StepFunction:
    """Cumulative hazard with increments (events at t) / (at risk at t)."""
    x, d = _one_sample(dataset, delta)
    wt = np.ones(x.size) if weights is None else np.asarray(weights, dtype=np.float64)
    times, events, at_risk = _risk_table(x, d, wt)
    return StepFunction(times, np.cumsum(events / at_risk), 0.0)


def increments(step: StepFunction) -> np.ndarray:
    return np.diff(np.concatenate([[step.initial_value], step.values]))


def km_inverse(F: StepFunction, tau: float, last_followup: float | None = None) -> float:
    """``sup{t : F(t) <= tau}`` for a right-continuous F.

    Past the total mass of F the supremum is infinite; then the last
    follow-up time is returned when given, else ``BeyondSupport``.
    """
    if not (0.0 <= tau < 1.0):
        raise ValueError("tau must lie in [0, 1)")
    above = np.flatnonzero(F.values > tau)
    if above.size:
        return float(F.jump_points[above[0]])
    if last_followup is None:
        raise BeyondSupport(f"tau={tau} reaches beyond the estimated mass")
    return float(last_followup)


def check_loss(u, tau):
    u = np.asarray(u, dtype=np.float64)
    return np.sum(np.maximum(-u, 0.0) + tau * u)


def _vertices(X, Z):
    """Coefficient vectors of all rank-p interpolating subsets."""
    n, p = Z.shape
    subs = np.array(list(itertools.combinations(range(n), p)), dtype=np.int64)
    zs = Z[subs]
    ok = np.linalg.matrix_rank(zs) == p
    subs, zs = subs[ok], zs[ok]
    if subs.shape[0] == 0:
        raise Infeasible("no rank-p subset")
    return np.linalg.solve(zs, X[subs][..., None])[..., 0]


class VertexTable:
    """All vertices of an uncensored sample with their check-loss parts.

    The loss at ``tau`` is ``neg + tau * tot`` for every vertex, so repeated
    queries cost one pass over the table.
    """

    def __init__(self, dataset: Dataset):
        n, p = dataset.n, dataset.p
        if n > 30 or p > 4:
            raise TooLarge(f"enumeration guard n<=30, p<=4 exceeded (n={n}, p={p})")
        if np.any(dataset.delta != 1):
            raise ValueError("uncensored data required")
        self.betas = _vertices(dataset.x, dataset.z)
        u = dataset.x[None, :] - self.betas @ dataset.z.T
        self.neg = np.maximum(-u, 0.0).sum(axis=1)
        self.tot = u.sum(axis=1)

    def minimum(self, tau):
        obj = self.neg + tau * self.tot
        k = int(np.argmin(obj))
        return float(obj[k]), self.betas[k]


def brute_force_rq(dataset: Dataset, tau: float):
    """Minimum of the regression-quantile check objective over all vertices.

    Returns ``(objective, minimizer)``.
    """
    return VertexTable(dataset).minimum(tau)


def round_objective(X, Z, b, xi=None):
    r = X - Z @ b
    xi = np.ones(X.size) if xi is None else xi
    return float(np.sum(xi * np.maximum(r, 0.0)))


def brute_force_round(dataset: Dataset, below, on, above, xi=None, tol=1e-9):
    """Minimum of ``sum xi (X - Z'b)^+`` over constraint-feasible vertices.

    ``below``, ``on`` and ``above`` index observations constrained to
    ``X <= Z'b``, ``X == Z'b`` and ``X >= Z'b``.

    Returns ``(objective, minimizer)``.
    """
    n, p = dataset.n, dataset.p
    if n > 12:
        raise TooLarge(f"enumeration guard n<=12 exceeded (n={n})")
    X, Z = dataset.x, dataset.z
    below, on, above = (np.asarray(s, dtype=np.int64) for s in (below, on, above))
    best, arg = np.inf, None
    for sub in itertools.combinations(range(n), p):
        zs = Z[list(sub)]
        if np.linalg.matrix_rank(zs) < p:
            continue
        b = np.linalg.solve(zs, X[list(sub)])
        r = X - Z @ b
        scale = tol * (1.0 + np.abs(X))
        if np.any(r[below] > scale[below]) or np.any(r[above] < -scale[above]):
            continue
        if np.any(np.abs(r[on]) > scale[on]):
            continue
        obj = round_objective(X, Z, b, xi)
        if obj < best:
            best, arg = obj, b
    if arg is None:
        raise Infeasible("no vertex satisfies the constraints")
    return float(best), arg


def lp_round(dataset: Dataset, below, on, above, xi=None):
    """The same constrained program solved by a generic LP solver.

    Variables are ``(b, u)`` with ``u >= X - Z'b`` and ``u >= 0``. Suitable
    for sizes beyond the enumeration guard.
    """
    n, p = dataset.n, dataset.p
    X, Z = dataset.x, dataset.z
    xi = np.ones(n) if xi is None else np.asarray(xi, dtype=np.float64)
    c = np.concatenate([np.zeros(p), xi])
    A = [np.hstack([-Z, -np.eye(n)])]
    ub = [-X]
    for i in below:
        row = np.zeros(p + n)
        row[:p] = -Z[i]
        A.append(row[None])
        ub.append([-X[i]])
    for i in above:
        row = np.zeros(p + n)
        row[:p] = Z[i]
        A.append(row[None])
        ub.append([X[i]])
    Aeq = np.zeros((len(on), p + n))
    for r_, i in enumerate(on):
        Aeq[r_, :p] = Z[i]
    beq = X[np.asarray(on, dtype=np.int64)] if len(on) else np.zeros(0)
    bounds = [(None, None)] * p + [(0, None)] * n
    res = linprog(c, A_ub=np.vstack(A), b_ub=np.concatenate(ub),
                  A_eq=Aeq if len(on) else None, b_eq=beq if len(on) else None,
                  bounds=bounds, method="highs")
    if res.status == 2:
        raise Infeasible("constraints are infeasible")
    if res.status != 0:
        raise RuntimeError(res.message)
    return float(res.fun), res.x[:p]
