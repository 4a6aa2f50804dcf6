"""JIT-compiled inner loops shared by the dual and primal solvers.

The routing matrix is passed as two flat CSR-style index sets:
route_indptr/route_idx give the links on each charger's route, and
user_indptr/user_idx give the chargers behind each link. All floating
point work uses fixed iteration orders so runs are bit-reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def link_flows(x, user_indptr, user_idx, m):
    flow = np.zeros(m)
    for l in range(m):
        s = 0.0
        for k in range(user_indptr[l], user_indptr[l + 1]):
            s += x[user_idx[k]]
        flow[l] = s
    return flow


@njit(cache=True)
def dual_rates(lam, route_indptr, route_idx, w, xbar):
    n = w.shape[0]
    x = np.empty(n)
    for i in range(n):
        price = 0.0
        for k in range(route_indptr[i], route_indptr[i + 1]):
            price += lam[route_idx[k]]
        if price <= 0.0:
            x[i] = xbar[i]
        else:
            xi = w[i] / price
            x[i] = xi if xi < xbar[i] else xbar[i]
    return x


@njit(cache=True)
def dual_step(lam, route_indptr, route_idx, user_indptr, user_idx, c, w, xbar, kappa):
    """One price iteration: rate update from prices, then projected ascent.

    Returns (x, lam_new, residual, max_violation, objective).
    """
    m = c.shape[0]
    x = dual_rates(lam, route_indptr, route_idx, w, xbar)
    lam_new = np.empty(m)
    res_sq = 0.0
    maxviol = -1.0e300
    for l in range(m):
        s = 0.0
        for k in range(user_indptr[l], user_indptr[l + 1]):
            s += x[user_idx[k]]
        g = s - c[l]
        if g > maxviol:
            maxviol = g
        nl = lam[l] + kappa * g
        if nl < 0.0:
            nl = 0.0
        lam_new[l] = nl
        d = nl - lam[l]
        res_sq += d * d
    obj = 0.0
    for i in range(x.shape[0]):
        obj -= w[i] * np.log(x[i])
    return x, lam_new, np.sqrt(res_sq), maxviol, obj


@njit(cache=True)
def project_row_bounded(b, users, lo, cap):
    """Exact projection of b[users] onto {sum <= cap, entries >= lo}.

    Active-set waterfill; used only when the plain halfplane step would
    push an entry below lo. Falls back to all-lo when the set is empty
    (cap < n*lo, i.e. a dead link).
    """
    nl = users.shape[0]
    pinned = np.zeros(nl, dtype=np.bool_)
    for _ in range(nl + 1):
        s = 0.0
        cnt = 0
        for j in range(nl):
            if not pinned[j]:
                s += b[users[j]]
                cnt += 1
        rem = cap - (nl - cnt) * lo
        if cnt == 0 or rem <= 0.0:
            for j in range(nl):
                b[users[j]] = lo
            return
        theta = (s - rem) / cnt
        changed = False
        for j in range(nl):
            if not pinned[j] and b[users[j]] - theta < lo:
                pinned[j] = True
                changed = True
        if not changed:
            for j in range(nl):
                if pinned[j]:
                    b[users[j]] = lo
                else:
                    b[users[j]] -= theta
            return


@njit(cache=True)
def project_pass(b, user_indptr, user_idx, c, x_floor):
    """One head-to-leaf sweep of halfplane projections, in place.

    Each violated link lowers its users' budgets uniformly (the 0/1 rows
    make (c_l - R_l b) R_l^T / ||R_l||^2 a uniform decrement). Because
    budgets only decrease, links already processed stay feasible, so a
    single pass restores R b <= c.
    """
    m = c.shape[0]
    for l in range(m):
        lo = user_indptr[l]
        hi = user_indptr[l + 1]
        nl = hi - lo
        if nl == 0:
            continue
        s = 0.0
        for k in range(lo, hi):
            s += b[user_idx[k]]
        if s <= c[l]:
            continue
        delta = (s - c[l]) / nl
        # fast path: plain halfplane step keeps everyone above the floor
        ok = True
        for k in range(lo, hi):
            if b[user_idx[k]] - delta < x_floor:
                ok = False
                break
        if ok:
            for k in range(lo, hi):
                b[user_idx[k]] -= delta
        else:
            project_row_bounded(b, user_idx[lo:hi], x_floor, c[l])


@njit(cache=True)
def primal_rates(b, w, xbar, x_floor):
    """Rate and marginal-benefit update from budgets.

    Budgets are clamped at x_floor first so w/x stays finite.
    Returns (x, mu).
    """
    n = b.shape[0]
    x = np.empty(n)
    mu = np.empty(n)
    for i in range(n):
        bi = b[i] if b[i] > x_floor else x_floor
        if bi >= xbar[i]:
            x[i] = xbar[i]
            mu[i] = 0.0
        else:
            x[i] = bi
            mu[i] = w[i] / bi
    return x, mu


@njit(cache=True)
def primal_step(b, route_indptr, route_idx, user_indptr, user_idx, c, w, xbar,
                gamma, x_floor):
    """One budget iteration: rates/marginals, gradient step, projection sweep.

    Returns (x, mu, b_new, grad_residual, step_residual, max_violation,
    objective) where grad_residual is ||gamma*mu|| (the pre-projection
    budget change) and step_residual is ||b_new - b|| after projection.
    """
    m = c.shape[0]
    n = b.shape[0]
    x, mu = primal_rates(b, w, xbar, x_floor)
    maxviol = -1.0e300
    for l in range(m):
        s = 0.0
        for k in range(user_indptr[l], user_indptr[l + 1]):
            s += x[user_idx[k]]
        g = s - c[l]
        if g > maxviol:
            maxviol = g
    grad_sq = 0.0
    b_new = np.empty(n)
    for i in range(n):
        bi = b[i] if b[i] > x_floor else x_floor
        step = gamma * mu[i]
        b_new[i] = bi + step
        grad_sq += step * step
    project_pass(b_new, user_indptr, user_idx, c, x_floor)
    step_sq = 0.0
    for i in range(n):
        d = b_new[i] - b[i]
        step_sq += d * d
    obj = 0.0
    for i in range(n):
        obj -= w[i] * np.log(x[i])
    return x, mu, b_new, np.sqrt(grad_sq), np.sqrt(step_sq), maxviol, obj
