"""Multiplier-bootstrap inference and trimmed-mean effects."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .core import Dataset, QuantileProcess, evaluate_many
from .errors import CqregError, TauOutOfRange, TooFewReplicates
from .estimator import FitConfig, fit

Z95 = NormalDist().inv_cdf(0.975)


def thread_count(requested: int | None = None) -> int:
    """Worker count from the argument or ``CQREG_THREADS`` (0 means all cores)."""
    if requested is None:
        try:
            requested = int(os.environ.get("CQREG_THREADS", "0"))
        except ValueError:
            requested = 0
    if requested <= 0:
        requested = os.cpu_count() or 1
    return max(1, requested)


def replicate_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based stream for replicate ``key``, independent of run order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class PerturbWeights:
    """Positive observation multipliers with unit mean and variance."""

    xi: np.ndarray
    seed: int | None = None
    replicate: int | None = None

    def __post_init__(self):
        if not np.all(np.asarray(self.xi) > 0):
            raise ValueError("multipliers must be positive")

    @classmethod
    def draw(cls, n: int, seed: int, replicate: int = 0) -> "PerturbWeights":
        """Standard exponential multipliers for replicate ``replicate``."""
        xi = replicate_rng(seed, replicate).standard_exponential(n)
        # an exact zero has probability ~0 but would break positivity
        xi = np.maximum(xi, np.finfo(float).tiny)
        return cls(xi, seed, replicate)


def perturbed_fit(dataset: Dataset, weights: PerturbWeights | np.ndarray,
                  config: FitConfig | None = None) -> QuantileProcess:
    """Fit the estimating equation with every term multiplied by its weight."""
    xi = weights.xi if isinstance(weights, PerturbWeights) else weights
    return fit(dataset, config, xi=xi)


def trimmed_mean_effect(process: QuantileProcess, tau1: float, tau2: float) -> np.ndarray:
    """Average of the coefficient process over ``[tau1, tau2)``.

    Exact for the step function: segment overlap widths times segment
    coefficients, divided by ``tau2 - tau1``.
    """
    if not (0.0 <= tau1 < tau2 <= process.tau_end):
        raise TauOutOfRange(f"need 0 <= tau1 < tau2 <= tau_end={process.tau_end!r}")
    lo = process.breakpoints
    hi = np.append(lo[1:], np.inf)
    width = np.clip(np.minimum(hi, tau2) - np.maximum(lo, tau1), 0.0, None)
    return (width @ process.coefficients) / (tau2 - tau1)


@dataclass
class BootstrapSummary:
    taus: np.ndarray
    point: np.ndarray
    draws: np.ndarray
    se: np.ndarray
    ci: np.ndarray
    excluded: np.ndarray
    failed: int
    B: int
    seed: int
    ci_method: str = "wald"
    trimmed: dict | None = field(default=None)

    def to_dict(self):
        out = {
            "taus": self.taus.tolist(),
            "point": self.point.tolist(),
            "se": self.se.tolist(),
            "ci_lower": self.ci[:, :, 0].tolist(),
            "ci_upper": self.ci[:, :, 1].tolist(),
            "excluded": self.excluded.tolist(),
            "failed": self.failed,
            "B": self.B,
            "seed": self.seed,
            "ci_method": self.ci_method,
        }
        if self.trimmed is not None:
            out["trimmed"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                              for k, v in self.trimmed.items()}
        return out


def _interval(point, draws, se, method):
    if method == "wald":
        return np.stack([point - Z95 * se, point + Z95 * se], axis=-1)
    if method == "percentile":
        lo = np.nanquantile(draws, 0.025, axis=0)
        hi = np.nanquantile(draws, 0.975, axis=0)
        return np.stack([lo, hi], axis=-1)
    raise ValueError(f"unknown interval method {method!r}")


def _summarize(point, draws, method):
    """Standard errors and intervals from draws with NaN rows excluded."""
    keep = ~np.isnan(draws[:, 0])
    d = draws[keep]
    se = d.std(axis=0, ddof=1) if d.shape[0] > 1 else np.zeros(point.shape)
    return se, _interval(point, d, se, method), int((~keep).sum())


def bootstrap(dataset: Dataset, taus, B: int = 200, seed: int = 0,
              config: FitConfig | None = None, trim: tuple | None = None,
              ci_method: str = "wald", threads: int | None = None,
              min_fraction: float = 0.5, point_fit: QuantileProcess | None = None
              ) -> BootstrapSummary:
    """Standard errors from ``B`` exponential-multiplier refits.

    Replicates whose fitted range ends at or before a requested ``tau`` are
    excluded at that ``tau`` only; the counts are reported.
    """
    if B < 2:
        raise ValueError("need at least two bootstrap replicates")
    config = config or FitConfig()
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    proc = point_fit if point_fit is not None else fit(dataset, config)
    if np.any(taus < 0) or np.any(taus >= proc.tau_end):
        raise TauOutOfRange(f"requested tau beyond the fitted range; tau_end={proc.tau_end:.6g}")
    point = evaluate_many(proc, taus)
    p = dataset.p
    if trim is not None:
        t1, t2 = trim
        trim_point = trimmed_mean_effect(proc, t1, t2)

    def one(r):
        w = PerturbWeights.draw(dataset.n, seed, r)
        try:
            rp = perturbed_fit(dataset, w, config)
        except CqregError:
            return None
        vals = np.full((taus.size, p), np.nan)
        ok = taus < rp.tau_end
        if ok.any():
            vals[ok] = evaluate_many(rp, taus[ok])
        tv = None
        if trim is not None and t2 <= rp.tau_end:
            tv = trimmed_mean_effect(rp, t1, t2)
        return vals, tv

    nthreads = min(thread_count(threads), B)
    if nthreads > 1:
        with ThreadPoolExecutor(nthreads) as ex:
            results = list(ex.map(one, range(B)))
    else:
        results = [one(r) for r in range(B)]

    draws = np.full((taus.size, B, p), np.nan)
    tdraws = np.full((B, p), np.nan)
    failed = 0
    for r, res in enumerate(results):
        if res is None:
            failed += 1
            continue
        draws[:, r] = res[0]
        if res[1] is not None:
            tdraws[r] = res[1]
    floor = min_fraction * B
    se = np.zeros((taus.size, p))
    ci = np.zeros((taus.size, p, 2))
    excluded = np.zeros(taus.size, dtype=np.int64)
    for k in range(taus.size):
        se[k], ci[k], excluded[k] = _summarize(point[k], draws[k], ci_method)
        if B - excluded[k] < floor:
            raise TooFewReplicates(
                f"only {B - excluded[k]} of {B} replicates reach tau={taus[k]:.6g}")
    trimmed = None
    if trim is not None:
        tse, tci, tex = _summarize(trim_point, tdraws, ci_method)
        if B - tex < floor:
            raise TooFewReplicates(f"only {B - tex} of {B} replicates reach tau2={t2:.6g}")
        trimmed = {"tau1": float(t1), "tau2": float(t2), "estimate": trim_point, "se": tse,
                   "ci_lower": tci[:, 0], "ci_upper": tci[:, 1], "excluded": tex}
    return BootstrapSummary(taus=taus, point=point, draws=draws, se=se, ci=ci,
                            excluded=excluded, failed=failed, B=B, seed=seed,
                            ci_method=ci_method, trimmed=trimmed)
