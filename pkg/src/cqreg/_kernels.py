"""Inner loops of the progressive localized minimization.

Every function here operates on plain arrays so it can be compiled by numba
or executed as ordinary numpy code (see ``_jit``).

Conventions
-----------
A round minimizes ``sum_i xi_i * (X_i - Z_i'b)^+`` subject to sign
constraints on the residuals of uncensored observations, encoded by ``cls``:

* ``CENSORED``: no constraint, cost ``xi_i`` on a positive residual;
* ``ABOVE``: residual >= 0 (phi == 0), cost ``xi_i`` on the residual;
* ``SPLIT``: residual == 0 (0 < phi < 1), always basic;
* ``BELOW``: residual <= 0 (phi == 1), no cost.

Ties are resolved by a symbolic perturbation ``X_i + sg_i * eps**pi_i``.
Everything symbolic is represented by the ``p x p`` matrix ``ek`` whose
column ``c`` is the eps-coefficient (of rank ``pi[basis[c]]``) carried by
the coefficient vector.
"""

import numpy as np

from ._jit import njit

CENSORED = 0
ABOVE = 1
SPLIT = 2
BELOW = 3

UNIQUE_UNCENSORED = 0
UNIQUE_MIXED = 1
NONUNIQUE = 2

OK = 0
UNBOUNDED = 1
ITERATION_LIMIT = 2
SINGULAR_BASIS = 3
INFEASIBLE_START = 4
WEIGHT_RANGE = 5
SIGN_VIOLATION = 6

TOL_ACT = 1e-9
TOL_COST = 1e-9
TOL_LEX = 1e-10
TOL_TIE = 1e-10
TOL_PIVOT = 1e-10
TOL_SNAP = 1e-12
TOL_GAMMA = 1e-11


@njit
def activity_tolerance(X):
    return TOL_ACT * (1.0 + np.abs(X))


@njit
def perturbation(cls, in_basis):
    """Ranks and signs of the symbolic perturbation for one round.

    Nonbasic observations dominate basic ones so that the warm-start basis
    is lexicographically feasible; among nonbasic ones censored precede
    ``ABOVE`` which precede ``BELOW`` (dataset order breaks ties).
    """
    n = cls.shape[0]
    grp = np.empty(n, np.int64)
    count = np.zeros(6, np.int64)
    for i in range(n):
        if in_basis[i]:
            g = 4
        elif cls[i] == CENSORED:
            g = 0
        elif cls[i] == ABOVE:
            g = 1
        elif cls[i] == SPLIT:
            g = 2
        else:
            g = 3
        grp[i] = g
        count[g + 1] += 1
    for g in range(1, 6):
        count[g] += count[g - 1]
    pi = np.empty(n, np.int64)
    for i in range(n):
        pi[i] = count[grp[i]]
        count[grp[i]] += 1
    sg = np.ones(n)
    for i in range(n):
        if cls[i] == BELOW:
            sg[i] = -1.0
    return pi, sg


@njit
def eps_slots(j, Z, ek, m):
    """Eps-coefficients of residual ``j`` on the basis slots ``0..m-1``."""
    p = Z.shape[1]
    c = np.zeros(p)
    for k in range(m):
        acc = 0.0
        for q in range(p):
            acc += Z[j, q] * ek[q, k]
        c[k] = -acc
    return c


@njit
def lex_sign(j, cj, basis, m, pi, sg):
    best = pi[j]
    coef = sg[j]
    for k in range(m):
        if abs(cj[k]) > TOL_LEX and pi[basis[k]] < best:
            best = pi[basis[k]]
            coef = cj[k]
    return 1 if coef > 0 else -1


@njit
def lex_compare(j, aj, cj, k, ak, ck, basis, m, pi, sg):
    """Sign of ``t_j - t_k`` for two crossings tied in their real part."""
    best = pi[j]
    diff = sg[j] / aj
    if pi[k] < best:
        best = pi[k]
        diff = -sg[k] / ak
    for c in range(m):
        d = cj[c] / aj - ck[c] / ak
        if abs(d) > TOL_LEX and pi[basis[c]] < best:
            best = pi[basis[c]]
            diff = d
    if abs(diff) <= TOL_LEX:
        # only the own terms can remain; the smaller rank dominates
        if pi[j] < pi[k]:
            return 1 if sg[j] / aj > 0 else -1
        return 1 if -sg[k] / ak > 0 else -1
    return 1 if diff > 0 else -1


@njit
def residual_signs(X, Z, b, in_basis, basis, m, ek, pi, sg, tol_x):
    """Residuals, their (lexicographic) signs and degeneracy flags."""
    n = X.shape[0]
    r = X - np.dot(Z, b)
    sgn = np.zeros(n, np.int64)
    degen = np.zeros(n, np.bool_)
    for j in range(n):
        if in_basis[j]:
            continue
        if r[j] > tol_x[j]:
            sgn[j] = 1
        elif r[j] < -tol_x[j]:
            sgn[j] = -1
        else:
            degen[j] = True
            cj = eps_slots(j, Z, ek, m)
            sgn[j] = lex_sign(j, cj, basis, m, pi, sg)
    return r, sgn, degen


@njit
def feasible_signs(cls, sgn, in_basis):
    for j in range(cls.shape[0]):
        if in_basis[j]:
            continue
        if cls[j] == ABOVE and sgn[j] < 0:
            return False
        if cls[j] == BELOW and sgn[j] > 0:
            return False
        if cls[j] == SPLIT:
            return False
    return True


@njit
def gradient(Z, xi, cls, sgn, in_basis):
    """Gradient of the nonbasic part of the objective."""
    n, p = Z.shape
    g = np.zeros(p)
    for j in range(n):
        if in_basis[j] or sgn[j] <= 0 or cls[j] == BELOW:
            continue
        for q in range(p):
            g[q] -= xi[j] * Z[j, q]
    return g


@njit
def objective(X, Z, xi, b):
    r = X - np.dot(Z, b)
    tot = 0.0
    for i in range(X.shape[0]):
        if r[i] > 0:
            tot += xi[i] * r[i]
    return tot


@njit
def _sort_group(group, ng, a, Z, ek, basis, m, pi, sg):
    p = Z.shape[1]
    coefs = np.zeros((ng, p))
    for u in range(ng):
        coefs[u] = eps_slots(group[u], Z, ek, m)
    pos = np.arange(ng)
    # insertion sort on the symbolic parts
    for u in range(1, ng):
        v = u
        while v > 0:
            j = group[pos[v - 1]]
            k = group[pos[v]]
            cmp = lex_compare(j, a[j], coefs[pos[v - 1]], k, a[k], coefs[pos[v]],
                              basis, m, pi, sg)
            if cmp > 0:
                tmp = pos[v - 1]
                pos[v - 1] = pos[v]
                pos[v] = tmp
                v -= 1
            else:
                break
    out = np.empty(ng, np.int64)
    for u in range(ng):
        out[u] = group[pos[u]]
    return out


@njit
def crossings(Z, d, r, sgn, degen, in_basis, tol_x):
    """Observations whose residual reaches zero when moving along ``d``."""
    n, p = Z.shape
    a = np.dot(Z, d)
    dmax = np.max(np.abs(d))
    idx = np.empty(n, np.int64)
    t = np.empty(n)
    nc = 0
    for j in range(n):
        if in_basis[j]:
            continue
        scale = 0.0
        for q in range(p):
            scale += abs(Z[j, q])
        if abs(a[j]) <= TOL_PIVOT * scale * dmax or a[j] == 0.0:
            continue
        if sgn[j] * a[j] <= 0:
            continue
        idx[nc] = j
        t[nc] = 0.0 if degen[j] else max(r[j] / a[j], 0.0)
        nc += 1
    return a, idx[:nc], t[:nc]


@njit
def line_search(Z, d, slope, r, sgn, degen, in_basis, cls, xi, basis, m, ek, pi, sg,
                tol_x, tol_cost):
    """Exact minimization along ``d`` from the current point.

    Passes through censored kinks while the objective keeps decreasing and
    stops at the first uncensored observation reaching its constraint.
    Returns ``(entering, a_entering, t_real)``; ``entering == -1`` means the
    objective decreases without bound along ``d``.
    """
    a, idx, t = crossings(Z, d, r, sgn, degen, in_basis, tol_x)
    nc = idx.shape[0]
    if nc == 0:
        return -1, 0.0, 0.0
    # crossings whose residual is within the activity tolerance at the same
    # step are ties; they are ordered by their symbolic parts
    used = np.zeros(nc, np.bool_)
    group = np.empty(nc, np.int64)
    left = nc
    while left > 0:
        u0 = -1
        for u in range(nc):
            if not used[u] and (u0 < 0 or t[u] < t[u0]):
                u0 = u
        t0 = t[u0]
        tie = TOL_TIE * (1.0 + abs(t0))
        ng = 0
        for u in range(nc):
            if used[u]:
                continue
            j = idx[u]
            rj = 0.0 if degen[j] else r[j]
            if u == u0 or t[u] <= t0 + tie or abs(rj - t0 * a[j]) <= tol_x[j]:
                used[u] = True
                group[ng] = j
                ng += 1
        left -= ng
        grp = group[:ng].copy()
        if ng > 1:
            grp = _sort_group(grp, ng, a, Z, ek, basis, m, pi, sg)
        for u in range(ng):
            j = grp[u]
            if cls[j] != CENSORED:
                return j, a[j], t0
            slope += xi[j] * abs(a[j])
            if slope >= -tol_cost:
                return j, a[j], t0
    return -1, 0.0, 0.0


@njit
def canonical_ek(Binv, basis, sg):
    p = Binv.shape[0]
    ek = np.empty((p, p))
    for k in range(p):
        for q in range(p):
            ek[q, k] = Binv[q, k] * sg[basis[k]]
    return ek


@njit
def _row_space(Z, basis, m):
    """Orthonormal basis of the rows of ``Z_K`` and the pseudo-inverse of ``Z_K``."""
    p = Z.shape[1]
    zk = np.empty((m, p))
    for k in range(m):
        zk[k] = Z[basis[k]]
    q, rr = np.linalg.qr(np.ascontiguousarray(zk.T))
    q = np.ascontiguousarray(q)
    pinv = np.dot(q, np.ascontiguousarray(np.linalg.inv(rr).T))
    return zk, q, pinv


@njit
def partial_ek(Z, basis, m, sg):
    """Minimum-norm symbolic part for a partial basis of size ``m``."""
    p = Z.shape[1]
    ek = np.zeros((p, p))
    if m == 0:
        return ek
    zk, q, pinv = _row_space(Z, basis, m)
    for k in range(m):
        for c in range(p):
            ek[c, k] = pinv[c, k] * sg[basis[k]]
    return ek


@njit
def _reproject(X, Z, b, ek, basis, m, sg):
    """Restore ``Z_K b = X_K`` and ``Z_K ek = diag(sg_K)`` after a partial step."""
    p = Z.shape[1]
    zk, q, pinv = _row_space(Z, basis, m)
    res = np.empty(m)
    for k in range(m):
        res[k] = X[basis[k]]
    res -= np.dot(zk, b)
    b += np.dot(pinv, res)
    E = -np.dot(zk, np.ascontiguousarray(ek[:, :m]))
    for k in range(m):
        E[k, k] += sg[basis[k]]
    ek[:, :m] += np.dot(pinv, E)


@njit
def basis_solve(X, Z, basis):
    p = Z.shape[1]
    zs = np.empty((p, p))
    xs = np.empty(p)
    for k in range(p):
        zs[k] = Z[basis[k]]
        xs[k] = X[basis[k]]
    b = np.linalg.solve(zs, xs)
    Binv = np.linalg.inv(zs)
    return b, Binv


@njit
def _null_direction(Z, basis, m, g):
    """Steepest descent direction restricted to ``Z_K d = 0``."""
    p = Z.shape[1]
    P = np.eye(p)
    if m > 0:
        zk, q, pinv = _row_space(Z, basis, m)
        P = P - np.dot(q, q.T)
    d = -np.dot(P, g)
    nd = np.sqrt(np.sum(d * d))
    ng = np.sqrt(np.sum(g * g))
    if nd > 1e-12 * (1.0 + ng):
        return d / nd, False
    for c in range(p):
        col = P[:, c].copy()
        nc = np.sqrt(np.sum(col * col))
        if nc > 1e-8:
            return col / nc, True
    return d, True


@njit
def edge_costs(v, basis, cls, xi):
    """Directional derivatives of the objective along the basis edges.

    ``up[k]`` moves observation ``basis[k]`` below the hyperplane,
    ``down[k]`` moves it above; ``inf`` marks a forbidden direction.
    """
    p = v.shape[0]
    up = np.full(p, np.inf)
    down = np.full(p, np.inf)
    for k in range(p):
        s = basis[k]
        c = cls[s]
        if c == CENSORED:
            up[k] = v[k]
            down[k] = xi[s] - v[k]
        elif c == ABOVE:
            down[k] = xi[s] - v[k]
        elif c == BELOW:
            up[k] = v[k]
    return up, down


@njit
def descend(X, Z, cls, xi, b, basis, m, in_basis, ek, pi, sg, max_steps, tol_x, tol_cost):
    """Run up to ``max_steps`` descent steps in place.

    While fewer than ``p`` observations are interpolated, moves along the
    projected steepest descent direction (phase one). With a full basis,
    pivots along the steepest improving edge.

    Returns ``(status, m, steps, optimal)``.
    """
    n, p = Z.shape
    steps = 0
    while steps < max_steps:
        r, sgn, degen = residual_signs(X, Z, b, in_basis, basis, m, ek, pi, sg, tol_x)
        if not feasible_signs(cls, sgn, in_basis):
            return INFEASIBLE_START, m, steps, False
        g = gradient(Z, xi, cls, sgn, in_basis)
        if m < p:
            d, flat = _null_direction(Z, basis, m, g)
            slope = np.dot(g, d)
            j, aj, t = line_search(Z, d, slope, r, sgn, degen, in_basis, cls, xi, basis, m,
                                   ek, pi, sg, tol_x, tol_cost)
            if j < 0 and flat:
                d = -d
                slope = -slope
                j, aj, t = line_search(Z, d, slope, r, sgn, degen, in_basis, cls, xi, basis,
                                       m, ek, pi, sg, tol_x, tol_cost)
            if j < 0:
                return UNBOUNDED, m, steps, False
            cj = eps_slots(j, Z, ek, m)
            treal = 0.0 if degen[j] else r[j] / aj
            for q in range(p):
                b[q] += treal * d[q]
                for k in range(m):
                    ek[q, k] += d[q] * cj[k] / aj
                ek[q, m] = d[q] * sg[j] / aj
            basis[m] = j
            in_basis[j] = True
            m += 1
            if m < p:
                _reproject(X, Z, b, ek, basis, m, sg)
            else:
                zs = np.empty((p, p))
                for k in range(p):
                    zs[k] = Z[basis[k]]
                if abs(np.linalg.det(zs)) < 1e-300:
                    return SINGULAR_BASIS, m, steps, False
                bb, Binv = basis_solve(X, Z, basis)
                b[:] = bb
                ek[:, :] = canonical_ek(Binv, basis, sg)
            steps += 1
            continue
        bb, Binv = basis_solve(X, Z, basis)
        v = np.dot(np.ascontiguousarray(Binv.T), g)
        up, down = edge_costs(v, basis, cls, xi)
        best = 0.0
        kbest = -1
        sbest = 0.0
        for k in range(p):
            col = Binv[:, k]
            nrm = np.sqrt(np.sum(col * col))
            for side in range(2):
                f = up[k] if side == 0 else down[k]
                if f < -tol_cost:
                    score = f / nrm
                    if kbest < 0 or score < best - 1e-12 * abs(best) or (
                            abs(score - best) <= 1e-12 * abs(best) and basis[k] < basis[kbest]):
                        best = score
                        kbest = k
                        sbest = 1.0 if side == 0 else -1.0
        if kbest < 0:
            return OK, m, steps, True
        d = sbest * Binv[:, kbest]
        slope = up[kbest] if sbest > 0 else down[kbest]
        j, aj, t = line_search(Z, d, slope, r, sgn, degen, in_basis, cls, xi, basis, m,
                               ek, pi, sg, tol_x, tol_cost)
        if j < 0:
            return UNBOUNDED, m, steps, False
        in_basis[basis[kbest]] = False
        basis[kbest] = j
        in_basis[j] = True
        bb, Binv = basis_solve(X, Z, basis)
        if not np.all(np.isfinite(bb)):
            return SINGULAR_BASIS, m, steps, False
        b[:] = bb
        ek[:, :] = canonical_ek(Binv, basis, sg)
        steps += 1
    return ITERATION_LIMIT, m, steps, False


@njit
def breakpoint(w, gamma, uncensored):
    lam = 1.0
    for k in range(w.shape[0]):
        if not uncensored[k] or abs(gamma[k]) <= TOL_GAMMA:
            continue
        target = 1.0 if gamma[k] > 0 else 0.0
        cand = (target - w[k]) / gamma[k]
        if cand < lam:
            lam = cand
    return lam


@njit
def advance_weights(w, gamma, uncensored, lam):
    """Split weights at the end of a round, snapped onto {0, 1} when reached."""
    p = w.shape[0]
    out = w.copy()
    kmin = -1
    best = np.inf
    for k in range(p):
        if not uncensored[k] or abs(gamma[k]) <= TOL_GAMMA:
            continue
        target = 1.0 if gamma[k] > 0 else 0.0
        cand = (target - w[k]) / gamma[k]
        if cand < best:
            best = cand
            kmin = k
    for k in range(p):
        if not uncensored[k]:
            continue
        if abs(gamma[k]) <= TOL_GAMMA:
            continue
        val = w[k] + lam * gamma[k]
        if k == kmin and lam < 1.0:
            val = 1.0 if gamma[k] > 0 else 0.0
        if abs(val - 1.0) <= TOL_SNAP:
            val = 1.0
        elif abs(val) <= TOL_SNAP:
            val = 0.0
        out[k] = val
    return out


@njit
def round_summary(X, Z, delta, cls, phi, xi, b, basis, pi, sg, tol_x, tol_cost):
    """Split weights, dual multipliers and breakpoint at an optimal basis.

    Returns ``(status, w, gamma, lam, flag, hhat, cert, extra_idx, extra_w)``
    where ``cert`` is the sup-norm residual of the dual representation of
    ``hhat`` over the uncensored basis members.
    """
    n, p = Z.shape
    in_basis = np.zeros(n, np.bool_)
    for k in range(p):
        in_basis[basis[k]] = True
    bb, Binv = basis_solve(X, Z, basis)
    ek = canonical_ek(Binv, basis, sg)
    r, sgn, degen = residual_signs(X, Z, b, in_basis, basis, p, ek, pi, sg, tol_x)
    g = gradient(Z, xi, cls, sgn, in_basis)
    v = np.dot(np.ascontiguousarray(Binv.T), g)
    status = OK
    w = np.zeros(p)
    gamma = np.zeros(p)
    unc = np.zeros(p, np.bool_)
    for k in range(p):
        s = basis[k]
        if delta[s] == 0:
            ws = 1.0 - v[k] / xi[s]
            if ws < -1e-8 or ws > 1.0 + 1e-8:
                status = WEIGHT_RANGE
            w[k] = min(max(ws, 0.0), 1.0)
        else:
            unc[k] = True
            w[k] = phi[s]
            gk = 1.0 - w[k] - v[k] / xi[s]
            if cls[s] == ABOVE and gk < -1e-8 * (1.0 + abs(gk)):
                status = SIGN_VIOLATION
            if cls[s] == BELOW and gk > 1e-8 * (1.0 + abs(gk)):
                status = SIGN_VIOLATION
            if cls[s] == ABOVE and gk < 0:
                gk = 0.0
            if cls[s] == BELOW and gk > 0:
                gk = 0.0
            gamma[k] = gk
    lam = breakpoint(w, gamma, unc)
    if lam <= 0.0:
        status = WEIGHT_RANGE
    # rebuild hhat from the indicator form, independently of v
    hhat = np.zeros(p)
    n_extra = 0
    for j in range(n):
        if not in_basis[j] and degen[j]:
            n_extra += 1
    extra_idx = np.empty(n_extra, np.int64)
    extra_w = np.empty(n_extra)
    e = 0
    for j in range(n):
        if in_basis[j]:
            continue
        if degen[j]:
            extra_idx[e] = j
            extra_w[e] = 0.0 if sgn[j] > 0 else 1.0
            e += 1
        if sgn[j] > 0:
            for q in range(p):
                hhat[q] += xi[j] * Z[j, q]
    for k in range(p):
        s = basis[k]
        for q in range(p):
            hhat[q] += xi[s] * (1.0 - w[k]) * Z[s, q]
    cert = 0.0
    for q in range(p):
        acc = 0.0
        for k in range(p):
            if unc[k]:
                acc += Z[basis[k], q] * xi[basis[k]] * gamma[k]
        cert = max(cert, abs(acc - hhat[q]))
    # uniqueness: a zero-cost edge that moves the coefficient vector
    up, down = edge_costs(v, basis, cls, xi)
    flag = UNIQUE_UNCENSORED
    for k in range(p):
        if not unc[k]:
            flag = UNIQUE_MIXED
    for k in range(p):
        for side in range(2):
            f = up[k] if side == 0 else down[k]
            if not np.isfinite(f) or abs(f) > tol_cost:
                continue
            sigma = 1.0 if side == 0 else -1.0
            d = sigma * Binv[:, k]
            a, idx, t = crossings(Z, d, r, sgn, degen, in_basis, tol_x)
            tmin = np.inf
            for u in range(t.shape[0]):
                if t[u] < tmin:
                    tmin = t[u]
            if idx.shape[0] == 0 or tmin > TOL_TIE * (1.0 + np.sqrt(np.sum(b * b))):
                flag = NONUNIQUE
    return status, w, gamma, lam, flag, hhat, cert, extra_idx, extra_w


@njit
def fit_process(X, Z, delta, xi, tau_max, max_rounds):
    """Chain rounds from tau = 0 until the final quantile is reached.

    Returns a tuple of trace arrays; see ``estimator._unpack``.
    """
    n, p = Z.shape
    tol_x = activity_tolerance(X)
    tol_cost = TOL_COST * np.mean(xi)
    cls = np.empty(n, np.int64)
    for i in range(n):
        cls[i] = ABOVE if delta[i] == 1 else CENSORED
    phi = np.zeros(n)
    b = np.zeros(p)
    b[0] = np.min(X) - 1.0
    basis = np.full(p, -1, np.int64)
    in_basis = np.zeros(n, np.bool_)
    m = 0

    cap = max_rounds + 1
    taus = np.empty(cap)
    lams = np.empty(cap)
    betas = np.empty((cap, p))
    bases = np.empty((cap, p), np.int64)
    ws = np.empty((cap, p))
    gammas = np.empty((cap, p))
    flags = np.empty(cap, np.int64)
    certs = np.empty(cap)
    steps_used = np.empty(cap, np.int64)
    ecap = 16
    eptr = np.zeros(cap + 1, np.int64)
    eidx = np.empty(ecap, np.int64)
    ew = np.empty(ecap)

    surv = 1.0  # 1 - tau, accumulated multiplicatively
    tau = 0.0
    k = 0
    status = OK
    while True:
        pi, sg = perturbation(cls, in_basis)
        if m == p:
            bb, Binv = basis_solve(X, Z, basis)
            b[:] = bb
            ek = canonical_ek(Binv, basis, sg)
        else:
            ek = partial_ek(Z, basis, m, sg)
        st, m, nsteps, optimal = descend(X, Z, cls, xi, b, basis, m, in_basis, ek, pi, sg,
                                         50 * n + 100, tol_x, tol_cost)
        if st != OK:
            status = st
            break
        st, w, gamma, lam, flag, hhat, cert, xidx, xw = round_summary(
            X, Z, delta, cls, phi, xi, b, basis, pi, sg, tol_x, tol_cost)
        if st != OK:
            status = st
        if k > 0 and tau <= taus[k - 1]:
            k -= 1  # zero-width segment in floating point; overwrite it
        taus[k] = tau
        lams[k] = lam
        betas[k] = b
        bases[k] = basis
        ws[k] = w
        gammas[k] = gamma
        flags[k] = flag
        certs[k] = cert
        steps_used[k] = nsteps
        ne = xidx.shape[0]
        start = eptr[k]
        if start + ne > ecap:
            while start + ne > ecap:
                ecap *= 2
            tmpi = np.empty(ecap, np.int64)
            tmpw = np.empty(ecap)
            tmpi[:start] = eidx[:start]
            tmpw[:start] = ew[:start]
            eidx = tmpi
            ew = tmpw
        eidx[start:start + ne] = xidx
        ew[start:start + ne] = xw
        eptr[k + 1] = start + ne
        k += 1
        if status != OK or lam >= 1.0:
            break
        unc = np.zeros(p, np.bool_)
        for q in range(p):
            unc[q] = delta[basis[q]] == 1
        wnew = advance_weights(w, gamma, unc, lam)
        for q in range(p):
            if not unc[q]:
                continue
            s = basis[q]
            val = wnew[q]
            if val < -1e-9 or val > 1.0 + 1e-9:
                status = WEIGHT_RANGE
            val = min(max(val, 0.0), 1.0)
            phi[s] = val
            if val == 0.0:
                cls[s] = ABOVE
            elif val == 1.0:
                cls[s] = BELOW
            else:
                cls[s] = SPLIT
        if status != OK:
            break
        surv = surv * (1.0 - lam)
        tau = 1.0 - surv
        if k >= max_rounds or tau >= tau_max:
            break
    tau_next = 1.0 if (k > 0 and lams[k - 1] >= 1.0) else tau
    return (status, k, tau_next, taus[:k].copy(), lams[:k].copy(), betas[:k].copy(),
            bases[:k].copy(), ws[:k].copy(), gammas[:k].copy(), flags[:k].copy(),
            certs[:k].copy(), steps_used[:k].copy(), eptr[:k + 1].copy(),
            eidx[:eptr[k]].copy(), ew[:eptr[k]].copy())


@njit
def segment_phi(X, Z, delta, beta, basis, w, gamma, eidx, ew, lam, tol_x):
    """phi_i at relative position ``lam`` inside one segment, all i.

    Censored observations get their split weight as well (0 or the basis
    weight), which is what the right-hand side integrand needs.
    """
    n, p = Z.shape
    r = X - np.dot(Z, beta)
    out = np.empty(n)
    for i in range(n):
        out[i] = 1.0 if r[i] < 0 else 0.0
    for u in range(eidx.shape[0]):
        out[eidx[u]] = ew[u]
    for k in range(p):
        s = basis[k]
        out[s] = w[k] + lam * gamma[k]
    return out, r


@njit
def equation_residuals(X, Z, delta, xi, taus, lams, betas, bases, ws, gammas, eptr, eidx, ew,
                       query):
    """Left minus right side of the estimating equation at sorted ``query``.

    The right side integrates ``1/(1 - nu)`` in closed form: within a
    segment the split weights of basis members move linearly in the
    relative probability, so each contributes ``(1 - w) L - gamma (L - lam)``
    with ``L = -log(1 - lam)``.
    """
    n, p = Z.shape
    nq = query.shape[0]
    K = taus.shape[0]
    tol_x = activity_tolerance(X)
    out = np.zeros((nq, p))
    rhs = np.zeros(p)
    seg = 0
    for qi in range(nq):
        tau = query[qi]
        while seg + 1 < K and taus[seg + 1] <= tau:
            lam_full = lams[seg]
            rhs += _segment_integral(X, Z, xi, betas[seg], bases[seg], ws[seg], gammas[seg],
                                     eidx[eptr[seg]:eptr[seg + 1]], ew[eptr[seg]:eptr[seg + 1]],
                                     lam_full, tol_x)
            seg += 1
        lam = 1.0 - (1.0 - tau) / (1.0 - taus[seg])
        if lam < 0.0:
            lam = 0.0
        part = _segment_integral(X, Z, xi, betas[seg], bases[seg], ws[seg], gammas[seg],
                                 eidx[eptr[seg]:eptr[seg + 1]], ew[eptr[seg]:eptr[seg + 1]],
                                 lam, tol_x)
        phi, r = segment_phi(X, Z, delta, betas[seg], bases[seg], ws[seg], gammas[seg],
                             eidx[eptr[seg]:eptr[seg + 1]], ew[eptr[seg]:eptr[seg + 1]], lam,
                             tol_x)
        lhs = np.zeros(p)
        for i in range(n):
            if delta[i] == 1 and phi[i] != 0.0:
                for q in range(p):
                    lhs[q] += xi[i] * Z[i, q] * phi[i]
        for q in range(p):
            out[qi, q] = lhs[q] - (rhs[q] + part[q])
    return out


@njit
def _segment_integral(X, Z, xi, beta, basis, w, gamma, eidx, ew, lam, tol_x):
    n, p = Z.shape
    acc = np.zeros(p)
    if lam <= 0.0:
        return acc
    L = -np.log1p(-lam)
    r = X - np.dot(Z, beta)
    coef = np.empty(n)
    for i in range(n):
        coef[i] = L if r[i] > 0 else 0.0
    for u in range(eidx.shape[0]):
        coef[eidx[u]] = (1.0 - ew[u]) * L
    for k in range(p):
        s = basis[k]
        coef[s] = (1.0 - w[k]) * L - gamma[k] * (L - lam)
    for i in range(n):
        if coef[i] != 0.0:
            for q in range(p):
                acc[q] += xi[i] * Z[i, q] * coef[i]
    return acc
