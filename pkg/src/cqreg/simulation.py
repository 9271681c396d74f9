"""Monte Carlo harness for the three log-linear survival scenarios."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Dataset, evaluate_many
from .errors import CqregError
from .estimator import FitConfig, fit
from .inference import Z95, bootstrap, replicate_rng, thread_count

log = logging.getLogger(__name__)

NAMES = ("intercept", "z1", "z2")


class SimulationAborted(CqregError):
    pass


@dataclass(frozen=True)
class Scenario:
    """Data-generating design.

    Scenario 1 has a kinked effect of ``z1``, scenario 2 constant effects,
    scenario 3 a baseline with an atom at its 0.4 quantile.
    """

    id: int
    c_max: float = 5.0

    def __post_init__(self):
        if self.id not in (1, 2, 3):
            raise ValueError("scenario must be 1, 2 or 3")

    @property
    def default_taus(self):
        return (0.1, 0.3, 0.5, 0.7) if self.id == 3 else (0.1, 0.3, 0.5)

    def quantile_fn(self, tau):
        """True coefficient vector at ``tau``; broadcasts over arrays."""
        tau = np.asarray(tau, dtype=np.float64)
        if self.id == 3:
            t = np.maximum(tau, 0.4)
            return np.stack([np.log(-np.log1p(-t)), t, np.full(tau.shape, 0.5)], axis=-1)
        slope1 = np.minimum(1.25 * tau, 0.5) if self.id == 1 else np.full(tau.shape, 0.5)
        return np.stack([np.log(-np.log1p(-tau)), slope1, np.full(tau.shape, 0.5)], axis=-1)


@dataclass
class Latent:
    log_t: np.ndarray
    c: np.ndarray
    u: np.ndarray


def generate(scenario: Scenario | int, n: int, seed, censor: bool = True, rng=None):
    """Draw one sample; returns ``(Dataset, Latent)``.

    Event times come from the conditional quantile function at a uniform
    draw; censoring is uniform on ``[0, c_max]`` on the original scale and
    the follow-up time is reported on the log scale.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    sc = scenario if isinstance(scenario, Scenario) else Scenario(int(scenario))
    if rng is None:
        rng = replicate_rng(seed, 0)
    z1 = (rng.random(n) < 0.5).astype(np.float64)
    z2 = rng.random(n)
    u = rng.random(n)
    beta = sc.quantile_fn(u)
    log_t = beta[:, 0] + beta[:, 1] * z1 + beta[:, 2] * z2
    c = rng.uniform(0.0, sc.c_max, n)
    if censor:
        with np.errstate(divide="ignore"):
            log_c = np.log(c)
        delta = (log_t <= log_c).astype(np.int64)
        x = np.where(delta == 1, log_t, log_c)
    else:
        delta = np.ones(n, dtype=np.int64)
        x = log_t
    z = np.column_stack([np.ones(n), z1, z2])
    return Dataset(x, delta, z, NAMES, check_rank=False), Latent(log_t, c, u)


@dataclass
class MonteCarloReport:
    scenario: int
    n: int
    reps: int
    B: int
    seed: int
    taus: np.ndarray
    truth: np.ndarray
    bias: np.ndarray
    median_bias: np.ndarray
    sd: np.ndarray
    mean_se: np.ndarray
    coverage: np.ndarray
    used: np.ndarray
    censoring_rate: float
    failures: list

    @property
    def banner(self):
        if self.scenario == 3:
            return ("scenario 3 has a discontinuous baseline: only median-bias is a "
                    "meaningful summary")
        return None

    def to_dict(self):
        return {
            "scenario": self.scenario, "n": self.n, "reps": self.reps, "B": self.B,
            "seed": self.seed, "banner": self.banner, "components": list(NAMES),
            "taus": self.taus.tolist(), "truth": self.truth.tolist(),
            "bias": self.bias.tolist(), "median_bias": self.median_bias.tolist(),
            "sd": self.sd.tolist(), "mean_se": self.mean_se.tolist(),
            "coverage": self.coverage.tolist(), "used": self.used.tolist(),
            "censoring_rate": self.censoring_rate, "failures": self.failures,
        }

    def table(self) -> str:
        """Aligned text table; bias, SD and SE are scaled by 1000, CI in percent."""
        lines = []
        if self.banner:
            lines.append("NOTE: " + self.banner)
        lines.append(f"scenario {self.scenario}, n={self.n}, reps={self.reps}, B={self.B}, "
                     f"censoring {100 * self.censoring_rate:.1f}%")
        head = f"{'tau':>5} {'coef':>10} {'B':>7} {'MB':>7} {'SD':>7} {'SE':>7} {'CI':>6}"
        lines.append(head)
        lines.append("-" * len(head))

        def fmt(v, scale, width, dec=0):
            return f"{'-':>{width}}" if not np.isfinite(v) else f"{v * scale:>{width}.{dec}f}"

        for k, tau in enumerate(self.taus):
            for j, name in enumerate(NAMES):
                lines.append(
                    f"{tau:>5.2f} {name:>10} {fmt(self.bias[k, j], 1000, 7)} "
                    f"{fmt(self.median_bias[k, j], 1000, 7)} {fmt(self.sd[k, j], 1000, 7)} "
                    f"{fmt(self.mean_se[k, j], 1000, 7)} {fmt(self.coverage[k, j], 100, 6, 1)}")
        return "\n".join(lines)


def _replicate(sc, n, taus, B, seed, r, config):
    ds, _ = generate(sc, n, seed, rng=replicate_rng(seed, r, 0))
    try:
        proc = fit(ds, config)
    except CqregError as exc:
        return None, f"replicate {r}: {type(exc).__name__}: {exc}"
    est = np.full((taus.size, 3), np.nan)
    ok = taus < proc.tau_end
    if ok.any():
        est[ok] = evaluate_many(proc, taus[ok])
    se = np.full((taus.size, 3), np.nan)
    if B > 0 and ok.any():
        try:
            bs = bootstrap(ds, taus[ok], B, seed=_boot_seed(seed, r), config=config,
                           threads=1, point_fit=proc)
            se[ok] = bs.se
        except CqregError as exc:
            log.info("replicate %d bootstrap skipped: %s", r, exc)
    return (est, se, 1.0 - ds.delta.mean()), None


def _boot_seed(seed, r):
    return int(np.random.SeedSequence(seed, spawn_key=(r, 1)).generate_state(1, np.uint64)[0])


def run_monte_carlo(scenario: Scenario | int, n: int = 200, reps: int = 200, taus=None,
                    B: int = 0, seed: int = 0, threads: int | None = None,
                    max_failure_rate: float = 0.1) -> MonteCarloReport:
    """Fit ``reps`` simulated samples and compare to the true coefficients.

    With ``B > 0`` each replicate also gets bootstrap standard errors and
    Wald intervals, from which coverage is computed.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    sc = scenario if isinstance(scenario, Scenario) else Scenario(int(scenario))
    taus = np.asarray(sc.default_taus if taus is None else taus, dtype=np.float64)
    config = FitConfig()
    job = lambda r: _replicate(sc, n, taus, B, seed, r, config)  # noqa: E731
    nthreads = min(thread_count(threads), reps)
    if nthreads > 1:
        with ThreadPoolExecutor(nthreads) as ex:
            results = list(ex.map(job, range(reps)))
    else:
        results = [job(r) for r in range(reps)]
    failures = [msg for res, msg in results if res is None]
    if len(failures) > max_failure_rate * reps:
        raise SimulationAborted(f"{len(failures)} of {reps} replicates failed")
    good = [res for res, _ in results if res is not None]
    est = np.stack([g[0] for g in good])
    se = np.stack([g[1] for g in good])
    cens = float(np.mean([g[2] for g in good]))
    truth = sc.quantile_fn(taus)
    err = est - truth
    with np.errstate(invalid="ignore"):
        used = np.sum(~np.isnan(est), axis=0)
        bias = np.nanmean(err, axis=0)
        median_bias = np.nanmedian(err, axis=0)
        sd = np.nanstd(est, axis=0, ddof=1)
        mean_se = np.nanmean(se, axis=0) if B > 0 else np.full(truth.shape, np.nan)
        if B > 0:
            has = ~np.isnan(se)
            cover = (np.abs(err) <= Z95 * se) & has
            coverage = cover.sum(axis=0) / np.maximum(has.sum(axis=0), 1)
        else:
            coverage = np.full(truth.shape, np.nan)
    return MonteCarloReport(scenario=sc.id, n=n, reps=reps, B=B, seed=seed, taus=taus,
                            truth=truth, bias=bias, median_bias=median_bias, sd=sd,
                            mean_se=mean_se, coverage=coverage, used=used,
                            censoring_rate=cens, failures=failures)

