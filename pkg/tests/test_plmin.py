import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cqreg import Dataset
from cqreg.core import PartitionState
from cqreg.errors import Infeasible, NonPositiveBreakpoint, RankDeficientVertex
from cqreg.oracles import brute_force_round, lp_round
from cqreg.plmin import (RoundInput, compute_breakpoint, resolve_degeneracy, solve_round,
                         steepest_descent_search, update_weights)

from helpers import design


def one_sample(x, d):
    return Dataset(np.asarray(x, float), np.asarray(d), np.ones((len(x), 1)))


def state(w, gamma, delta=None):
    w = np.asarray(w, float)
    delta = np.ones(w.size, int) if delta is None else np.asarray(delta)
    return PartitionState(phi=w.copy(), delta=delta, basis=np.arange(w.size), w=w,
                          gamma=np.asarray(gamma, float), h_hat=np.zeros(1))


# frozen values: hand-solved one-sample rounds (hazard 1/3 at the first of
# three events; 1/2 when the smallest time is censored; final round at 3)

def test_round_all_events():
    out = solve_round(RoundInput(one_sample([1, 2, 3], [1, 1, 1]), np.zeros(3), [0.0]))
    assert out.beta[0] == 1.0
    assert out.state.h_hat[0] == 3.0
    assert out.state.gamma[0] == 3.0
    assert out.lambda_b == pytest.approx(1 / 3, abs=1e-15)
    np.testing.assert_array_equal(out.phi_next, [1, 0, 0])


def test_round_censored_first_then_final():
    ds = one_sample([1, 2, 3], [0, 1, 1])
    out = solve_round(RoundInput(ds, np.zeros(3), [0.0]))
    assert out.beta[0] == 2.0 and out.state.h_hat[0] == 2.0 and out.lambda_b == 0.5
    nxt = solve_round(RoundInput(ds, out.phi_next, out.beta, 0.5, basis=out.state.basis))
    assert nxt.beta[0] == 3.0 and nxt.state.gamma[0] == 1.0 and nxt.lambda_b == 1.0
    assert nxt.classification == "UniqueUncensoredS"


def test_descent_blocks_at_first_event():
    inp = RoundInput(one_sample([1, 2], [1, 1]), np.zeros(2), [0.0])
    b, basis, optimal = steepest_descent_search(inp)
    assert b[0] == 1.0 and basis.tolist() == [0]
    _, _, optimal = steepest_descent_search(RoundInput(inp.dataset, inp.phi, b), basis)
    assert optimal


def test_descent_optimal_at_interpolating_vertex():
    # two events on the hyperplane, everything else below
    z = np.array([[1, 0.0], [1, 1.0], [1, 0.5]])
    ds = Dataset([0.0, 1.0, 0.0], [1, 1, 1], z)
    phi = np.array([0.0, 0.0, 1.0])
    b, basis, optimal = steepest_descent_search(RoundInput(ds, phi, [0.0, 1.0]), [0, 1])
    assert optimal
    np.testing.assert_array_equal(b, [0.0, 1.0])


def test_descent_single_free_direction():
    # after the first weight reaches one, the slope can rotate about the
    # remaining member; compare with the enumeration oracle
    rng = np.random.default_rng(11)
    z = design(rng, 9, 2)
    ds = Dataset(z @ [0.2, 0.7] + rng.normal(size=9), np.ones(9, int), z)
    first = solve_round(RoundInput(ds, np.zeros(9), [ds.x.min() - 1, 0.0]))
    out = solve_round(RoundInput(ds, first.phi_next, first.beta, basis=first.state.basis))
    below = np.flatnonzero(first.phi_next == 1)
    above = np.flatnonzero(first.phi_next == 0)
    on = np.flatnonzero((first.phi_next > 0) & (first.phi_next < 1))
    best, _ = brute_force_round(ds, below, on, above)
    assert out.objective == pytest.approx(best, abs=1e-10)


def test_ties_resolved_against_product_limit():
    ds = one_sample([2, 2, 3], [1, 1, 1])
    out = solve_round(RoundInput(ds, np.zeros(3), [0.0]))
    assert out.beta[0] == 2.0 and out.lambda_b == pytest.approx(1 / 3)
    out2 = solve_round(RoundInput(ds, out.phi_next, out.beta, basis=out.state.basis))
    # the two rounds at 2 together carry mass 2/3
    assert out2.beta[0] == 2.0
    assert 1 - (1 - out.lambda_b) * (1 - out2.lambda_b) == pytest.approx(2 / 3)


@pytest.mark.parametrize("delta", [[1, 0], [0, 1]])
def test_event_enters_before_tied_censored(delta):
    out = solve_round(RoundInput(one_sample([1.0, 1.0], delta), np.zeros(2), [0.0]))
    assert delta[out.state.basis[0]] == 1


def test_resolve_degeneracy_selects_p_members():
    ds = one_sample([2, 2, 3], [1, 1, 1])
    basis, w, gamma = resolve_degeneracy(RoundInput(ds, np.zeros(3), [2.0]))
    assert basis.size == 1 and ds.x[basis[0]] == 2.0
    with pytest.raises(RankDeficientVertex):
        resolve_degeneracy(RoundInput(ds, np.zeros(3), [2.5]), interpolated=[])


def test_resolve_degeneracy_passthrough():
    ds = one_sample([1, 2, 3], [1, 1, 1])
    basis, w, gamma = resolve_degeneracy(RoundInput(ds, np.zeros(3), [1.0]))
    assert basis.tolist() == [0] and gamma[0] == 3.0


def test_compute_breakpoint_cases():
    assert compute_breakpoint(state([0.0], [3.0])) == pytest.approx(1 / 3)
    assert compute_breakpoint(state([0.3], [0.0], delta=[0])) == 1.0
    assert compute_breakpoint(state([0.5], [-1.0])) == 0.5
    with pytest.raises(NonPositiveBreakpoint):
        compute_breakpoint(state([1.0], [1.0]))


def test_update_weights_cases():
    assert update_weights(state([0.0], [3.0]), 1 / 3)[0] == 1.0
    assert update_weights(state([0.5], [-1.0]), 0.5)[0] == 0.0
    np.testing.assert_array_equal(update_weights(state([0.25], [0.5]), 1.0), [0.75])


def test_infeasible_warm_start():
    ds = one_sample([1, 2], [1, 1])
    with pytest.raises(Infeasible):
        solve_round(RoundInput(ds, np.zeros(2), [1.5]))


def test_brute_force_round_infeasible():
    z = np.array([[1, 0.0], [1, 1.0], [1, 2.0]])
    ds = Dataset([0.0, 5.0, 0.0], [1, 1, 1], z)
    # 0 and 2 on or above a line that must pass above the middle point
    with pytest.raises(Infeasible):
        brute_force_round(ds, below=[1], on=[0, 2], above=[])


def _random_round(seed, n, p):
    rng = np.random.default_rng(seed)
    z = design(rng, n, p)
    x = np.round(z @ rng.normal(size=p) + rng.normal(size=n), 1)
    d = (rng.random(n) < 0.7).astype(int)
    try:
        return Dataset(x, d, z)
    except Exception:
        return None


@given(st.integers(0, 10_000), st.integers(4, 12), st.integers(1, 3), st.integers(0, 6))
def test_rounds_match_enumeration(seed, n, p, depth):
    """Every round of a chain attains the constrained minimum."""
    ds = _random_round(seed, n, p)
    if ds is None:
        return
    phi = np.zeros(n)
    b = np.zeros(p)
    b[0] = ds.x.min() - 1
    basis = None
    prev = np.inf
    for _ in range(depth + 1):
        out = solve_round(RoundInput(ds, phi, b, basis=basis))
        cls_below = np.flatnonzero((ds.delta == 1) & (phi == 1))
        cls_on = np.flatnonzero((ds.delta == 1) & (phi > 0) & (phi < 1))
        cls_above = np.flatnonzero((ds.delta == 1) & (phi == 0))
        best, _ = brute_force_round(ds, cls_below, cls_on, cls_above)
        assert out.objective == pytest.approx(best, abs=1e-10)
        assert 0 < out.lambda_b <= 1
        assert out.state.certificate <= 1e-8
        assert np.all(out.state.gamma[(out.state.w == 0) & (ds.delta[out.state.basis] == 1)]
                      >= 0)
        assert np.all(out.state.gamma[(out.state.w == 1) & (ds.delta[out.state.basis] == 1)]
                      <= 0)
        assert np.all((out.phi_next >= 0) & (out.phi_next <= 1))
        if out.lambda_b >= 1:
            break
        phi, b, basis = out.phi_next, out.beta, out.state.basis
        prev = out.objective
    del prev


@given(st.integers(0, 10_000), st.integers(5, 40), st.integers(1, 4))
def test_rounds_match_lp(seed, n, p):
    ds = _random_round(seed, n, p)
    if ds is None:
        return
    out = solve_round(RoundInput(ds, np.zeros(n), np.r_[ds.x.min() - 1, np.zeros(p - 1)]))
    best, _ = lp_round(ds, [], [], np.flatnonzero(ds.delta == 1))
    assert out.objective == pytest.approx(best, rel=1e-9, abs=1e-9)


@given(st.integers(0, 10_000), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_response_equivariance(seed, shift):
    rng = np.random.default_rng(seed)
    n = 15
    z = np.column_stack([np.ones(n), rng.normal(size=n)])
    x = z @ [0.0, 1.0] + rng.normal(size=n)
    d = (rng.random(n) < 0.8).astype(int)
    c = np.array(shift)
    a = solve_round(RoundInput(Dataset(x, d, z), np.zeros(n), [x.min() - 1, 0.0]))
    b0 = np.array([x.min() - 1, 0.0]) + c
    b = solve_round(RoundInput(Dataset(x + z @ c, d, z), np.zeros(n), b0))
    np.testing.assert_allclose(b.beta, a.beta + c, atol=1e-9)
    assert b.state.basis.tolist() == a.state.basis.tolist()
    np.testing.assert_allclose(b.state.gamma, a.state.gamma, atol=1e-9)
    assert b.lambda_b == pytest.approx(a.lambda_b, abs=1e-12)
