"""Fitting the whole coefficient process by chaining localized rounds."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import Dataset, QuantileProcess, WeightTrace
from .errors import (IndexOutOfRange, ResidualCheckFailed, SingularDesign, TauOutOfRange,
                     WeightOutOfRange, CycleDetected)

log = logging.getLogger(__name__)

_STATUS = {
    K.OK: "complete",
    K.UNBOUNDED: "unbounded",
    K.ITERATION_LIMIT: "iteration_limit",
    K.SINGULAR_BASIS: "singular_basis",
    K.INFEASIBLE_START: "infeasible_start",
    K.WEIGHT_RANGE: "weight_range",
    K.SIGN_VIOLATION: "sign_violation",
}


@dataclass(frozen=True)
class FitConfig:
    """Options for :func:`fit`.

    Parameters
    ----------
    tau_max : float, optional
        Stop once the cumulative probability reaches this level. ``None``
        runs until the process ends on its own.
    residual_check : bool
        Verify the estimating equation on the result.
    max_rounds : int, optional
        Safety bound on the number of rounds, ``10 n`` by default.
    """

    tau_max: float | None = None
    residual_check: bool = True
    max_rounds: int | None = None

    def __post_init__(self):
        if self.tau_max is not None and not (0.0 < self.tau_max < 1.0):
            raise TauOutOfRange("tau_max must lie in (0, 1)")


def _run(dataset: Dataset, xi: np.ndarray, config: FitConfig) -> QuantileProcess:
    n = dataset.n
    max_rounds = config.max_rounds if config.max_rounds is not None else 10 * n
    tau_max = np.inf if config.tau_max is None else config.tau_max
    out = K.fit_process(dataset.x, dataset.z, dataset.delta, xi, tau_max, max_rounds)
    (status, k, tau_next, taus, lams, betas, bases, ws, gammas, flags, certs, steps,
     eptr, eidx, ew) = out
    status = int(status)
    if k == 0:
        if status == K.SINGULAR_BASIS:
            raise SingularDesign("no rank-p vertex found")
        # nothing estimable at all
        raise WeightOutOfRange(f"first round failed ({_STATUS[status]})")
    if status == K.ITERATION_LIMIT:
        raise CycleDetected("descent did not terminate within its step budget")
    if status in (K.WEIGHT_RANGE, K.SIGN_VIOLATION, K.SINGULAR_BASIS, K.INFEASIBLE_START):
        raise WeightOutOfRange(f"round {k - 1} failed ({_STATUS[status]})")
    if k >= max_rounds and lams[-1] < 1.0 and tau_next < tau_max:
        log.warning("fit stopped after max_rounds=%d at tau=%.6g", max_rounds, tau_next)
    tau_end = float(tau_next)
    nonunique = np.flatnonzero(flags == K.NONUNIQUE)
    if nonunique.size:
        tau_end = min(tau_end, float(taus[nonunique[0]]))
    if tau_end <= 0.0:
        tau_end = float(taus[1]) if taus.size > 1 else float(tau_next)
    trace = WeightTrace(bases=bases, w=ws, gamma=gammas, lambdas=lams, certificate=certs,
                        extra_ptr=eptr, extra_index=eidx, extra_weight=ew, steps=steps)
    return QuantileProcess(breakpoints=taus, coefficients=betas, tau_end=tau_end,
                           round_flags=flags, weight_trace=trace,
                           status=_STATUS[status], names=dataset.names)


def fit(dataset: Dataset, config: FitConfig | None = None, *, xi=None) -> QuantileProcess:
    """Fit the coefficient process solving the censored estimating equation.

    Parameters
    ----------
    dataset : Dataset
    config : FitConfig, optional
    xi : array_like, optional
        Positive per-observation masses (multiplier bootstrap). Unit masses
        by default.

    Returns
    -------
    QuantileProcess
    """
    config = config or FitConfig()
    if xi is None:
        xi = np.ones(dataset.n)
    else:
        xi = np.ascontiguousarray(xi, dtype=np.float64)
        if xi.shape != (dataset.n,) or not np.all(xi > 0) or not np.all(np.isfinite(xi)):
            raise ValueError("weights must be n finite positive numbers")
    proc = _run(dataset, xi, config)
    if config.residual_check:
        check_residual(proc, dataset, xi)
    return proc


def residual_grid(process: QuantileProcess) -> np.ndarray:
    """Breakpoints below ``tau_end`` plus the deciles, sorted."""
    grid = np.concatenate([process.breakpoints, np.arange(1, 10) / 10.0])
    grid = grid[grid < process.tau_end]
    return np.unique(grid)


def _residuals(process, dataset, xi, taus):
    tr = process.weight_trace
    return K.equation_residuals(dataset.x, dataset.z, dataset.delta, xi,
                                process.breakpoints, tr.lambdas, process.coefficients,
                                tr.bases, tr.w, tr.gamma, tr.extra_ptr, tr.extra_index,
                                tr.extra_weight, taus)


def check_residual(process, dataset, xi=None, tol=None):
    if xi is None:
        xi = np.ones(dataset.n)
    grid = residual_grid(process)
    if grid.size == 0:
        return 0.0
    res = _residuals(process, dataset, xi, grid)
    worst = float(np.max(np.abs(res)))
    # weights rescale both sides; measure against the mean mass
    limit = (1e-8 * dataset.n if tol is None else tol) * float(np.mean(xi))
    if worst > limit:
        raise ResidualCheckFailed(f"estimating equation residual {worst:.3g} exceeds {limit:.3g}")
    return worst


def equation_residuals(process: QuantileProcess, dataset: Dataset, taus, xi=None) -> np.ndarray:
    """Vectorized :func:`equation_residual` over an array of probabilities."""
    taus = np.sort(np.atleast_1d(np.asarray(taus, dtype=np.float64)))
    if taus.size and (taus[0] < 0.0 or taus[-1] >= process.tau_end):
        raise TauOutOfRange(f"tau outside [0, {process.tau_end!r})")
    xi = np.ones(dataset.n) if xi is None else np.asarray(xi, dtype=np.float64)
    return _residuals(process, dataset, xi, taus)


def equation_residual(process: QuantileProcess, dataset: Dataset, tau, xi=None) -> np.ndarray:
    """Left minus right side of the estimating equation at ``tau``.

    The right-hand integral is evaluated in closed form segment by segment,
    using the split-weight trace recorded in ``process``.
    """
    tau = float(tau)
    if not (0.0 <= tau < process.tau_end):
        raise TauOutOfRange(f"tau={tau!r} outside [0, {process.tau_end!r})")
    if xi is None:
        xi = np.ones(dataset.n)
    return _residuals(process, dataset, np.asarray(xi, dtype=np.float64),
                      np.array([tau]))[0]


class PhiTrace:
    """Piecewise-linear path of ``phi_i`` over the fitted range.

    Within segment ``k`` the value moves linearly in the relative
    probability ``(tau - tau_k) / (1 - tau_k)``, which is linear in
    ``tau`` as well.
    """

    def __init__(self, starts, start_values, end_values, tau_end):
        self.starts = np.asarray(starts, dtype=np.float64)
        self.start_values = np.asarray(start_values, dtype=np.float64)
        self.end_values = np.asarray(end_values, dtype=np.float64)
        self.tau_end = float(tau_end)

    @property
    def ends(self):
        return np.append(self.starts[1:], 1.0)

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=np.float64)
        k = np.searchsorted(self.starts, tau, side="right") - 1
        k = np.clip(k, 0, self.starts.size - 1)
        s = self.starts[k]
        e = self.ends[k]
        lam = (tau - s) / (1.0 - s)
        full = (e - s) / (1.0 - s)
        frac = np.where(full > 0, lam / np.where(full > 0, full, 1.0), 0.0)
        out = self.start_values[k] + frac * (self.end_values[k] - self.start_values[k])
        return out if out.ndim else float(out)


def phi_trace(process: QuantileProcess, dataset: Dataset, i: int) -> PhiTrace:
    """Reconstruct the below-hyperplane weight of observation ``i``."""
    if not (0 <= i < dataset.n):
        raise IndexOutOfRange(f"observation index {i} outside [0, {dataset.n})")
    tr = process.weight_trace
    K_ = process.breakpoints.size
    start = np.empty(K_)
    end = np.empty(K_)
    for k in range(K_):
        r = dataset.x[i] - dataset.z[i] @ process.coefficients[k]
        basis = tr.bases[k]
        pos = np.flatnonzero(basis == i)
        if pos.size:
            w = tr.w[k, pos[0]]
            g = tr.gamma[k, pos[0]] if dataset.delta[i] == 1 else 0.0
            start[k] = w
            end[k] = w + tr.lambdas[k] * g
            continue
        idx, wt = tr.extras(k)
        hit = np.flatnonzero(idx == i)
        v = wt[hit[0]] if hit.size else (1.0 if r < 0 else 0.0)
        start[k] = end[k] = v
    return PhiTrace(process.breakpoints, start, end, process.tau_end)
