"""Compiled inner loops of the sampler.

Component arrays are dense with capacity ``N + 1`` rows; rows ``0..K-1`` are
the active components and labels are 0-based row indices.  Each component
row carries cached ``lgamma`` values so a unit/component log-likelihood costs
one ``lgamma`` per non-zero count plus one.

All randomness comes from the ``np.random.Generator`` passed in.
"""

import math

import numpy as np
from numba import njit

TINY = 1e-300

AUGMENTED = 0
MARGINAL = 1


@njit(cache=True)
def set_component(k, row, alpha, lg_alpha, abar, lg_abar):
    D = alpha.shape[1]
    tot = 0.0
    for d in range(D):
        a = row[d]
        if a < TINY:
            a = TINY
        alpha[k, d] = a
        lg_alpha[k, d] = math.lgamma(a)
        tot += a
    abar[k] = tot
    lg_abar[k] = math.lgamma(tot)


@njit(cache=True)
def copy_component(src, dst, alpha, lg_alpha, abar, lg_abar):
    for d in range(alpha.shape[1]):
        alpha[dst, d] = alpha[src, d]
        lg_alpha[dst, d] = lg_alpha[src, d]
    abar[dst] = abar[src]
    lg_abar[dst] = lg_abar[src]


@njit(cache=True)
def draw_prior(rng, exp_mean, row):
    """Fill ``row`` with a G0 draw: Exponential total times Dirichlet(1) proportions."""
    D = row.size
    a_bar = rng.exponential(exp_mean)
    tot = 0.0
    for d in range(D):
        e = rng.standard_exponential()
        row[d] = e
        tot += e
    for d in range(D):
        row[d] = a_bar * row[d] / tot


@njit(cache=True)
def unit_ll(i, k, nz_ptr, nz_idx, nz_val, totals, alpha, lg_alpha, abar, lg_abar):
    ab = abar[k]
    ll = lg_abar[k] - math.lgamma(totals[i] + ab)
    for p in range(nz_ptr[i], nz_ptr[i + 1]):
        d = nz_idx[p]
        ll += math.lgamma(nz_val[p] + alpha[k, d]) - lg_alpha[k, d]
    return ll


@njit(cache=True)
def categorical(rng, logw, n):
    """Index drawn with probability proportional to ``exp(logw[:n])``.

    Normalised against the max log weight; ties resolve to the lowest index.
    """
    mx = -np.inf
    for j in range(n):
        if logw[j] > mx:
            mx = logw[j]
    if not mx > -np.inf:
        raise FloatingPointError("all assignment weights are zero")
    cum = np.empty(n)
    tot = 0.0
    for j in range(n):
        tot += math.exp(logw[j] - mx)
        cum[j] = tot
    u = rng.random() * tot
    for j in range(n):
        if u < cum[j]:
            return j
    return n - 1


@njit(cache=True)
def relabel_first_appearance(assign, occ, K, alpha, lg_alpha, abar, lg_abar):
    """Renumber labels in order of first appearance along the unit order."""
    N = assign.size
    D = alpha.shape[1]
    newlab = np.full(K, -1, dtype=np.int64)
    nxt = 0
    for i in range(N):
        c = assign[i]
        if newlab[c] < 0:
            newlab[c] = nxt
            nxt += 1
    if nxt != K:
        raise AssertionError("inactive component survived the purge")
    identity = True
    for k in range(K):
        if newlab[k] != k:
            identity = False
            break
    if identity:
        return
    a2 = alpha[:K].copy()
    la2 = lg_alpha[:K].copy()
    ab2 = abar[:K].copy()
    lab2 = lg_abar[:K].copy()
    oc2 = occ[:K].copy()
    for k in range(K):
        j = newlab[k]
        for d in range(D):
            alpha[j, d] = a2[k, d]
            lg_alpha[j, d] = la2[k, d]
        abar[j] = ab2[k]
        lg_abar[j] = lab2[k]
        occ[j] = oc2[k]
    for i in range(N):
        assign[i] = newlab[assign[i]]


@njit(cache=True)
def sweep_assignments(rng, assign, occ, K, alpha, lg_alpha, abar, lg_abar,
                      nz_ptr, nz_idx, nz_val, totals, gamma, m, exp_mean):
    """One Algorithm-8 scan over all units in index order.  Returns the new K."""
    N = assign.size
    D = alpha.shape[1]
    aux_alpha = np.empty((m, D))
    aux_lg = np.empty((m, D))
    aux_abar = np.empty(m)
    aux_lgabar = np.empty(m)
    row = np.empty(D)
    logw = np.empty(N + m + 1)
    log_fresh = math.log(gamma / m)
    for i in range(N):
        c = assign[i]
        occ[c] -= 1
        start = 0
        if occ[c] == 0:
            # singleton: its parameters become the first auxiliary component
            for d in range(D):
                aux_alpha[0, d] = alpha[c, d]
                aux_lg[0, d] = lg_alpha[c, d]
            aux_abar[0] = abar[c]
            aux_lgabar[0] = lg_abar[c]
            start = 1
            last = K - 1
            if c != last:
                copy_component(last, c, alpha, lg_alpha, abar, lg_abar)
                occ[c] = occ[last]
                for j in range(N):
                    if assign[j] == last:
                        assign[j] = c
            occ[last] = 0
            K -= 1
        for h in range(start, m):
            draw_prior(rng, exp_mean, row)
            set_component(h, row, aux_alpha, aux_lg, aux_abar, aux_lgabar)
        for k in range(K):
            logw[k] = math.log(occ[k]) + unit_ll(
                i, k, nz_ptr, nz_idx, nz_val, totals, alpha, lg_alpha, abar, lg_abar)
        for h in range(m):
            logw[K + h] = log_fresh + unit_ll(
                i, h, nz_ptr, nz_idx, nz_val, totals, aux_alpha, aux_lg, aux_abar, aux_lgabar)
        pick = categorical(rng, logw, K + m)
        if pick >= K:
            copy_from_aux(pick - K, K, aux_alpha, aux_lg, aux_abar, aux_lgabar,
                          alpha, lg_alpha, abar, lg_abar)
            occ[K] = 1
            assign[i] = K
            K += 1
        else:
            assign[i] = pick
            occ[pick] += 1
    relabel_first_appearance(assign, occ, K, alpha, lg_alpha, abar, lg_abar)
    return K


@njit(cache=True)
def copy_from_aux(h, k, aux_alpha, aux_lg, aux_abar, aux_lgabar, alpha, lg_alpha, abar, lg_abar):
    for d in range(alpha.shape[1]):
        alpha[k, d] = aux_alpha[h, d]
        lg_alpha[k, d] = aux_lg[h, d]
    abar[k] = aux_abar[h]
    lg_abar[k] = aux_lgabar[h]


@njit(cache=True)
def table_count(rng, s, a):
    """Occupied tables after seating ``s`` customers in a Polya urn of mass ``a``."""
    if s == 0:
        return 0
    t = 1
    for j in range(1, s):
        if rng.random() * (a + j) < a:
            t += 1
    return t


@njit(cache=True)
def griddy_draw(rng, grid, logdens):
    """Sample from the piecewise-uniform approximation of a density on ``grid``.

    Cell ``j`` spans ``[grid[j], grid[j+1]]`` and gets trapezoid mass
    ``width * (f_j + f_{j+1}) / 2``; the draw is uniform within the chosen cell.
    """
    G = grid.size
    logw = np.empty(G - 1)
    for j in range(G - 1):
        a = logdens[j]
        b = logdens[j + 1]
        hi = a if a > b else b
        if hi == -np.inf:
            logw[j] = -np.inf
        else:
            lo = b if a > b else a
            logw[j] = math.log(grid[j + 1] - grid[j]) + hi + math.log1p(math.exp(lo - hi)) - math.log(2.0)
    j = categorical(rng, logw, G - 1)
    return grid[j] + rng.random() * (grid[j + 1] - grid[j])


@njit(cache=True)
def precision_logdens_augmented(grid, log_grid, tsum, member_totals, exp_mean, out):
    """Log conditional of the total concentration given table counts (up to a constant)."""
    tots = np.sort(member_totals)
    n = tots.size
    for g in range(grid.size):
        x = grid[g]
        lgx = math.lgamma(x)
        acc = 0.0
        j = 0
        while j < n:
            nt = tots[j]
            r = 1
            while j + r < n and tots[j + r] == nt:
                r += 1
            if nt > 0:
                acc += r * (lgx - math.lgamma(nt + x))
            j += r
        out[g] = acc + tsum * log_grid[g] - x / exp_mean


@njit(cache=True)
def precision_logdens_marginal(grid, q, members, nz_ptr, nz_idx, nz_val, totals, exp_mean, out):
    """Log conditional of the total concentration given proportions ``q``: DM product over members."""
    D = q.size
    lgq = np.empty(D)
    for g in range(grid.size):
        x = grid[g]
        lgx = math.lgamma(x)
        for d in range(D):
            lgq[d] = math.lgamma(x * q[d])
        acc = 0.0
        for mi in range(members.size):
            i = members[mi]
            acc += lgx - math.lgamma(totals[i] + x)
            for p in range(nz_ptr[i], nz_ptr[i + 1]):
                d = nz_idx[p]
                acc += math.lgamma(nz_val[p] + x * q[d]) - lgq[d]
        out[g] = acc - x / exp_mean


@njit(cache=True)
def update_components(rng, assign, K, alpha, lg_alpha, abar, lg_abar,
                      nz_ptr, nz_idx, nz_val, totals, grid, log_grid, exp_mean, mode):
    """Auxiliary-variable update of every active component's parameters."""
    N = assign.size
    D = alpha.shape[1]
    # members grouped by component (counting sort keeps unit order)
    cnt = np.zeros(K + 1, dtype=np.int64)
    for i in range(N):
        cnt[assign[i] + 1] += 1
    for k in range(K):
        cnt[k + 1] += cnt[k]
    order = np.empty(N, dtype=np.int64)
    fill = cnt[:K].copy()
    for i in range(N):
        c = assign[i]
        order[fill[c]] = i
        fill[c] += 1
    T = np.zeros(D, dtype=np.int64)
    q = np.empty(D)
    row = np.empty(D)
    logdens = np.empty(grid.size)
    for k in range(K):
        members = order[cnt[k]:cnt[k + 1]]
        if members.size == 0:
            raise AssertionError("empty component reached the parameter update")
        T[:] = 0
        for mi in range(members.size):
            i = members[mi]
            for p in range(nz_ptr[i], nz_ptr[i + 1]):
                d = nz_idx[p]
                T[d] += table_count(rng, nz_val[p], alpha[k, d])
        tot = 0.0
        for d in range(D):
            g = rng.standard_gamma(1.0 + T[d])
            q[d] = g
            tot += g
        for d in range(D):
            q[d] = max(q[d] / tot, TINY)
        if mode == AUGMENTED:
            tsum = 0
            for d in range(D):
                tsum += T[d]
            mtot = np.empty(members.size, dtype=np.int64)
            for mi in range(members.size):
                mtot[mi] = totals[members[mi]]
            precision_logdens_augmented(grid, log_grid, tsum, mtot, exp_mean, logdens)
        else:
            precision_logdens_marginal(grid, q, members, nz_ptr, nz_idx, nz_val, totals,
                                       exp_mean, logdens)
        a_bar = griddy_draw(rng, grid, logdens)
        for d in range(D):
            row[d] = a_bar * q[d]
        set_component(k, row, alpha, lg_alpha, abar, lg_abar)


@njit(cache=True)
def data_log_likelihood(assign, alpha, lg_alpha, abar, lg_abar, nz_ptr, nz_idx, nz_val, totals):
    ll = 0.0
    for i in range(assign.size):
        ll += unit_ll(i, assign[i], nz_ptr, nz_idx, nz_val, totals, alpha, lg_alpha, abar, lg_abar)
    return ll
