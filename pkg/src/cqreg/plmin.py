"""Single-round interface to the localized minimization.

:func:`cqreg.estimator.fit` runs the rounds inside one compiled loop; the
functions here expose a single round for inspection and testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import FLAG_NAMES, Dataset, PartitionState
from .errors import (CycleDetected, Infeasible, NonPositiveBreakpoint, RankDeficientVertex,
                     UnboundedObjective, WeightOutOfRange)

TOL_DUAL = 1e-8


@dataclass
class RoundInput:
    """One round's data.

    Parameters
    ----------
    dataset : Dataset
    phi : ndarray
        Below-hyperplane weights for every observation; censored entries
        are ignored.
    warm_start : ndarray
        A feasible coefficient vector.
    tau : float
        Cumulative probability at the start of the round.
    xi : ndarray, optional
        Observation masses, unit by default.
    basis : ndarray, optional
        Interpolated set at ``warm_start`` if it is already a vertex.
    """

    dataset: Dataset
    phi: np.ndarray
    warm_start: np.ndarray
    tau: float = 0.0
    xi: np.ndarray | None = None
    basis: np.ndarray | None = None

    def masses(self):
        return np.ones(self.dataset.n) if self.xi is None else np.asarray(self.xi, float)

    def classes(self):
        ds = self.dataset
        phi = np.asarray(self.phi, dtype=np.float64)
        if np.any((phi < 0) | (phi > 1)):
            raise WeightOutOfRange("phi values must lie in [0, 1]")
        cls = np.full(ds.n, K.ABOVE, dtype=np.int64)
        cls[(phi > 0) & (phi < 1)] = K.SPLIT
        cls[phi == 1] = K.BELOW
        cls[ds.delta == 0] = K.CENSORED
        return cls


@dataclass
class RoundOutput:
    beta: np.ndarray
    state: PartitionState
    lambda_b: float
    phi_next: np.ndarray
    classification: str
    objective: float
    steps: int


def _start(inp: RoundInput):
    ds = inp.dataset
    n, p = ds.n, ds.p
    cls = inp.classes()
    b = np.array(inp.warm_start, dtype=np.float64)
    basis = np.full(p, -1, dtype=np.int64)
    in_basis = np.zeros(n, dtype=np.bool_)
    if inp.basis is not None:
        members = np.asarray(inp.basis, dtype=np.int64)
    else:
        members = np.flatnonzero(cls == K.SPLIT)
    m = 0
    for i in members:
        trial = np.append(basis[:m], i)
        if np.linalg.matrix_rank(ds.z[trial]) == m + 1:
            basis[m] = i
            in_basis[i] = True
            m += 1
        elif cls[i] == K.SPLIT:
            raise RankDeficientVertex("split observations have dependent covariates")
    if np.any(cls[~in_basis] == K.SPLIT):
        raise RankDeficientVertex("more than p observations carry a split weight")
    return cls, b, basis, in_basis, m


def _check_feasible(inp, cls, b):
    r = inp.dataset.x - inp.dataset.z @ b
    tol = K.activity_tolerance(inp.dataset.x)
    bad = ((cls == K.ABOVE) & (r < -tol)) | ((cls == K.BELOW) & (r > tol)) | \
          ((cls == K.SPLIT) & (np.abs(r) > tol))
    if np.any(bad):
        raise Infeasible(f"warm start violates constraints at {np.flatnonzero(bad)[:5]}")


def _descend(inp, cls, b, basis, in_basis, m, max_steps):
    ds = inp.dataset
    xi = inp.masses()
    pi, sg = K.perturbation(cls, in_basis)
    if m == ds.p:
        bb, Binv = K.basis_solve(ds.x, ds.z, basis)
        b[:] = bb
        ek = K.canonical_ek(Binv, basis, sg)
    else:
        ek = K.partial_ek(ds.z, basis, m, sg)
    tol_x = K.activity_tolerance(ds.x)
    tol_cost = K.TOL_COST * float(np.mean(xi))
    status, m, steps, optimal = K.descend(ds.x, ds.z, cls, xi, b, basis, m, in_basis, ek, pi,
                                          sg, max_steps, tol_x, tol_cost)
    return int(status), int(m), int(steps), bool(optimal), pi, sg


def _raise_status(status):
    if status == K.UNBOUNDED:
        raise UnboundedObjective("no blocking observation along a descent direction")
    if status == K.ITERATION_LIMIT:
        raise CycleDetected("descent did not terminate")
    if status == K.SINGULAR_BASIS:
        raise RankDeficientVertex("interpolated covariates are rank deficient")
    if status == K.INFEASIBLE_START:
        raise Infeasible("starting point violates the round constraints")


def steepest_descent_search(inp: RoundInput, basis=None):
    """One descent step from ``inp.warm_start``.

    Parameters
    ----------
    inp : RoundInput
    basis : array_like, optional
        Observations currently held on the hyperplane (at most ``p``).

    Returns
    -------
    beta : ndarray
        The next point (unchanged when optimal).
    basis : ndarray
        Interpolated members after the step.
    optimal : bool
        True when no feasible descent direction exists.
    """
    if basis is not None:
        inp = RoundInput(inp.dataset, inp.phi, inp.warm_start, inp.tau, inp.xi, basis)
    cls, b, bas, in_basis, m = _start(inp)
    _check_feasible(inp, cls, b)
    status, m, steps, optimal, _, _ = _descend(inp, cls, b, bas, in_basis, m, 1)
    if status == K.ITERATION_LIMIT:  # the single allowed step was taken
        status = K.OK
    _raise_status(status)
    return b, bas[:m].copy(), optimal


def solve_round(inp: RoundInput) -> RoundOutput:
    """Minimize the round objective and extract the dual quantities."""
    ds = inp.dataset
    n, p = ds.n, ds.p
    xi = inp.masses()
    cls, b, basis, in_basis, m = _start(inp)
    _check_feasible(inp, cls, b)
    status, m, steps, optimal, pi, sg = _descend(inp, cls, b, basis, in_basis, m, 50 * n + 100)
    _raise_status(status)
    phi = np.where(ds.delta == 1, np.asarray(inp.phi, dtype=np.float64), 0.0)
    tol_x = K.activity_tolerance(ds.x)
    tol_cost = K.TOL_COST * float(np.mean(xi))
    st, w, gamma, lam, flag, hhat, cert, _, _ = K.round_summary(
        ds.x, ds.z, ds.delta, cls, phi, xi, b, basis, pi, sg, tol_x, tol_cost)
    if st == K.SIGN_VIOLATION or cert > TOL_DUAL * max(1.0, float(np.max(xi))):
        raise CycleDetected("optimality certificate failed at the returned vertex")
    if st == K.WEIGHT_RANGE:
        raise WeightOutOfRange("split weight of a censored member left [0, 1]")
    state = PartitionState(phi=phi, delta=ds.delta, basis=basis.copy(), w=w, gamma=gamma,
                           h_hat=hhat, certificate=float(cert))
    lam = compute_breakpoint(state)
    phi_next = update_weights(state, lam)
    return RoundOutput(beta=b, state=state, lambda_b=lam, phi_next=phi_next,
                       classification=FLAG_NAMES[int(flag)],
                       objective=float(np.sum(xi * np.maximum(ds.x - ds.z @ b, 0.0))),
                       steps=steps)


def resolve_degeneracy(inp: RoundInput, interpolated=None):
    """Choose the ``p``-member interpolated set at an optimal vertex.

    ``inp.warm_start`` must be the vertex. The symbolic perturbation decides
    which of the observations on the hyperplane form the basis.

    Returns
    -------
    basis : ndarray
    w, gamma : ndarray
        Split weights and multipliers aligned with ``basis``.
    """
    ds = inp.dataset
    b0 = np.asarray(inp.warm_start, dtype=np.float64)
    if interpolated is None:
        r = ds.x - ds.z @ b0
        interpolated = np.flatnonzero(np.abs(r) <= K.activity_tolerance(ds.x))
    interpolated = np.asarray(interpolated, dtype=np.int64)
    if interpolated.size < ds.p or np.linalg.matrix_rank(ds.z[interpolated]) < ds.p:
        raise RankDeficientVertex("interpolated covariates do not span the design")
    out = solve_round(RoundInput(ds, inp.phi, b0, inp.tau, inp.xi))
    if not np.allclose(out.beta, b0, rtol=1e-9, atol=1e-9):
        raise RankDeficientVertex("the given point is not an optimal vertex")
    return out.state.basis, out.state.w, out.state.gamma


def compute_breakpoint(state: PartitionState) -> float:
    """Relative probability at which the first split weight reaches 0 or 1."""
    unc = state.delta[state.basis] == 1
    lam = float(K.breakpoint(np.asarray(state.w, float), np.asarray(state.gamma, float), unc))
    if not lam > 0.0:
        raise NonPositiveBreakpoint(f"breakpoint {lam} is not positive")
    return lam


def update_weights(state: PartitionState, lambda_b: float) -> np.ndarray:
    """Weights of every observation at the end of the round."""
    unc = state.delta[state.basis] == 1
    w_new = K.advance_weights(np.asarray(state.w, float), np.asarray(state.gamma, float), unc,
                              float(lambda_b))
    if np.any(w_new[unc] < -1e-9) or np.any(w_new[unc] > 1 + 1e-9):
        raise WeightOutOfRange(f"updated weights {w_new[unc]} leave [0, 1]")
    phi = np.array(state.phi, dtype=np.float64)
    phi[state.basis[unc]] = np.clip(w_new[unc], 0.0, 1.0)
    return phi
