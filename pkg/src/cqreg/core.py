"""Data model: observations, datasets, fitted processes and step functions."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import MalformedRow, SingularDesign, TauOutOfRange

FLAG_NAMES = ("UniqueUncensoredS", "UniqueMixedS", "Nonunique")


@dataclass(frozen=True)
class Observation:
    x: float
    delta: int
    z: tuple

    def __post_init__(self):
        if not math.isfinite(self.x):
            raise MalformedRow(f"non-finite time {self.x!r}")
        if self.delta not in (0, 1):
            raise MalformedRow(f"status must be 0 or 1, got {self.delta!r}")
        if len(self.z) == 0 or self.z[0] != 1:
            raise MalformedRow("covariate vector must start with the intercept 1")


class Dataset:
    """Right-censored sample with an intercept-augmented design.

    Parameters
    ----------
    x : array_like
        Follow-up times, on whatever scale the model is fitted.
    delta : array_like
        1 for an observed event, 0 for a censored time.
    z : array_like
        ``n x p`` design whose first column is identically one.
    names : sequence of str, optional
        Column names, intercept first.
    """

    def __init__(self, x, delta, z, names: Sequence[str] | None = None, check_rank=True):
        x = np.ascontiguousarray(x, dtype=np.float64)
        delta = np.ascontiguousarray(delta, dtype=np.int64)
        z = np.ascontiguousarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[:, None]
        n = x.shape[0]
        if delta.shape != (n,) or z.shape[0] != n:
            raise MalformedRow("x, delta and z disagree in length")
        if n == 0:
            raise MalformedRow("empty dataset")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(z)):
            raise MalformedRow("non-finite values in data")
        if not np.all((delta == 0) | (delta == 1)):
            raise MalformedRow("status must be 0 or 1")
        if not np.all(z[:, 0] == 1.0):
            raise MalformedRow("first design column must be the intercept 1")
        p = z.shape[1]
        if names is None:
            names = ["intercept"] + [f"z{k}" for k in range(1, p)]
        names = list(names)
        if len(names) != p:
            raise MalformedRow("names must match design width")
        if check_rank:
            _check_rank(z, names)
        for arr in (x, delta, z):
            arr.flags.writeable = False
        self.x = x
        self.delta = delta
        self.z = z
        self.names = tuple(names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def observations(self) -> list[Observation]:
        return [Observation(float(self.x[i]), int(self.delta[i]), tuple(self.z[i]))
                for i in range(self.n)]

    @classmethod
    def from_observations(cls, obs: Iterable[Observation], names=None) -> "Dataset":
        obs = list(obs)
        return cls([o.x for o in obs], [o.delta for o in obs], [list(o.z) for o in obs], names)

    def with_times(self, x) -> "Dataset":
        return Dataset(x, self.delta, self.z, self.names, check_rank=False)

    def __repr__(self):
        return f"Dataset(n={self.n}, p={self.p}, events={int(self.delta.sum())})"


def _check_rank(z, names):
    n, p = z.shape
    if np.linalg.matrix_rank(z) == p:
        return
    # name the first column that adds nothing to the span of its predecessors
    for k in range(1, p + 1):
        if np.linalg.matrix_rank(z[:, :k]) < k:
            raise SingularDesign(
                f"design matrix has rank < {p}: column '{names[k - 1]}' is collinear "
                "with earlier columns", column=names[k - 1])
    raise SingularDesign(f"design matrix has rank < {p}")


def _to_float(tok, lineno, what):
    try:
        v = float(tok)
    except (TypeError, ValueError):
        raise MalformedRow(f"row {lineno}: non-numeric {what} {tok!r}") from None
    if not math.isfinite(v):
        raise MalformedRow(f"row {lineno}: non-finite {what} {tok!r}")
    return v


def load_dataset(rows: Iterable[Sequence], names: Sequence[str] | None = None) -> Dataset:
    """Build a dataset from ``(time, status, z1, ..., z_{p-1})`` records.

    An intercept column is prepended; the input order is preserved.
    """
    xs, ds, zs = [], [], []
    width = None
    for lineno, row in enumerate(rows, start=1):
        row = list(row)
        if width is None:
            width = len(row)
            if width < 2:
                raise MalformedRow(f"row {lineno}: need at least time and status")
        if len(row) != width:
            raise MalformedRow(f"row {lineno}: expected {width} fields, got {len(row)}")
        xs.append(_to_float(row[0], lineno, "time"))
        st = _to_float(row[1], lineno, "status")
        if st not in (0.0, 1.0):
            raise MalformedRow(f"row {lineno}: status must be 0 or 1, got {row[1]!r}")
        ds.append(int(st))
        zs.append([1.0] + [_to_float(t, lineno, "covariate") for t in row[2:]])
    if width is None:
        raise MalformedRow("no data rows")
    if names is not None:
        names = ["intercept"] + list(names)
    return Dataset(np.array(xs), np.array(ds), np.array(zs), names)


def read_csv(source, log_time: bool = False) -> Dataset:
    """Read a ``time,status,<covariates...>`` CSV from a path or text stream."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow("empty input") from None
    header = [h.strip() for h in header]
    if len(header) < 2:
        raise MalformedRow("header must contain at least time,status")
    rows = [r for r in reader if r and any(t.strip() for t in r)]
    if len(rows) and any(len(r) != len(header) for r in rows):
        bad = next(i for i, r in enumerate(rows, 1) if len(r) != len(header))
        raise MalformedRow(f"row {bad}: expected {len(header)} fields")
    ds = load_dataset(rows, header[2:])
    if log_time:
        if np.any(ds.x <= 0):
            raise MalformedRow("--log-time requires strictly positive times")
        ds = ds.with_times(np.log(ds.x))
    return ds


@dataclass(frozen=True)
class PartitionState:
    """Bookkeeping of one round at its optimal vertex.

    ``basis`` lists the interpolated set, ``w`` and ``gamma`` are aligned
    with it. ``phi`` covers all observations (censored entries are 0).
    """

    phi: np.ndarray
    delta: np.ndarray
    basis: np.ndarray
    w: np.ndarray
    gamma: np.ndarray
    h_hat: np.ndarray
    certificate: float = 0.0

    @property
    def d_minus(self):
        return np.flatnonzero((self.delta == 1) & (self.phi == 1.0))

    @property
    def d_plus(self):
        return np.flatnonzero((self.delta == 1) & (self.phi == 0.0))

    @property
    def d_zero(self):
        return np.flatnonzero((self.delta == 1) & (self.phi > 0.0) & (self.phi < 1.0))


@dataclass
class WeightTrace:
    """Per-segment record of the interpolated set, split weights and multipliers.

    ``extra_index``/``extra_weight`` hold, for segment ``k`` in the slice
    ``extra_ptr[k]:extra_ptr[k+1]``, observations lying on the hyperplane
    outside the basis together with their resolved side (0 above, 1 below).
    """

    bases: np.ndarray
    w: np.ndarray
    gamma: np.ndarray
    lambdas: np.ndarray
    certificate: np.ndarray
    extra_ptr: np.ndarray
    extra_index: np.ndarray
    extra_weight: np.ndarray
    steps: np.ndarray

    def extras(self, k):
        sl = slice(self.extra_ptr[k], self.extra_ptr[k + 1])
        return self.extra_index[sl], self.extra_weight[sl]


@dataclass
class QuantileProcess:
    """Right-continuous piecewise-constant coefficient process.

    ``coefficients[k]`` applies on ``[breakpoints[k], breakpoints[k+1])``
    and the last one on ``[breakpoints[-1], tau_end)``. Segments at or past
    ``tau_end`` may still be stored for diagnostics.
    """

    breakpoints: np.ndarray
    coefficients: np.ndarray
    tau_end: float
    round_flags: np.ndarray
    weight_trace: WeightTrace | None = None
    status: str = "complete"
    names: tuple = field(default_factory=tuple)

    @property
    def p(self):
        return self.coefficients.shape[1]

    @property
    def flag_names(self):
        return [FLAG_NAMES[int(f)] for f in self.round_flags]

    def segment_index(self, tau):
        return int(np.searchsorted(self.breakpoints, tau, side="right")) - 1

    def __call__(self, tau):
        return evaluate(self, tau)


def evaluate(process: QuantileProcess, tau) -> np.ndarray:
    """Coefficient vector at ``tau``; right value at a breakpoint."""
    tau = float(tau)
    if not (0.0 <= tau < process.tau_end):
        raise TauOutOfRange(f"tau={tau!r} outside [0, {process.tau_end!r})")
    k = process.segment_index(tau)
    return process.coefficients[k].copy()


def evaluate_many(process: QuantileProcess, taus) -> np.ndarray:
    taus = np.asarray(taus, dtype=np.float64)
    if np.any(taus < 0) or np.any(taus >= process.tau_end):
        raise TauOutOfRange(f"tau outside [0, {process.tau_end!r})")
    idx = np.searchsorted(process.breakpoints, taus, side="right") - 1
    return process.coefficients[idx]


class StepFunction:
    """Right-continuous step function.

    Parameters
    ----------
    jump_points : array_like
        Strictly increasing locations.
    values : array_like
        Value on ``[jump_points[k], jump_points[k+1])``.
    initial_value : float
        Value left of the first jump.
    """

    def __init__(self, jump_points, values, initial_value=0.0):
        jp = np.asarray(jump_points, dtype=np.float64)
        vals = np.asarray(values, dtype=np.float64)
        if jp.shape != vals.shape or jp.ndim != 1:
            raise ValueError("jump_points and values must be 1-d of equal length")
        if jp.size > 1 and not np.all(np.diff(jp) > 0):
            raise ValueError("jump_points must be strictly increasing")
        self.jump_points = jp
        self.values = vals
        self.initial_value = float(initial_value)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        k = np.searchsorted(self.jump_points, t, side="right") - 1
        out = np.where(k >= 0, self.values[np.maximum(k, 0)] if self.values.size else
                       self.initial_value, self.initial_value)
        return out if out.ndim else float(out)

    def left_limit(self, t):
        k = int(np.searchsorted(self.jump_points, t, side="left")) - 1
        return self.values[k] if k >= 0 else self.initial_value

    def __repr__(self):
        return f"StepFunction({self.jump_points.size} jumps)"
