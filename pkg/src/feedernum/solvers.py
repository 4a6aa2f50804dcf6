"""EV charging rate optimization: problem instances and the three solvers.

The problem is min sum_i -w_i*log(x_i) over 0 <= x <= xbar subject to
R x <= c. `dual_solve` iterates link prices (projected gradient ascent on
the dual), `primal_solve` iterates per-charger budgets with a sequential
projection sweep (every iterate is feasible), and `centralized_solve` is
the convex-programming reference the distributed runs are compared to.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from time import perf_counter

import numpy as np

from . import _kernels
from .feeder import Feeder, LoadShape, RoutingMatrix, available_capacity, build_routing_matrix

logger = logging.getLogger(__name__)

# budgets are clamped here before rate updates so w/x stays finite; the
# log utility already forbids exact zero rates
X_FLOOR = 1e-6


def _flatten_csr(arrays: tuple[np.ndarray, ...]) -> tuple[np.ndarray, np.ndarray]:
    indptr = np.zeros(len(arrays) + 1, dtype=np.int64)
    for k, a in enumerate(arrays):
        indptr[k + 1] = indptr[k] + len(a)
    if arrays:
        idx = np.concatenate(arrays).astype(np.int32)
    else:
        idx = np.zeros(0, dtype=np.int32)
    return indptr, idx


@dataclass
class NumProblem:
    """One optimization instance: routing, capacities, weights, rate caps."""

    routing: RoutingMatrix
    c: np.ndarray
    w: np.ndarray
    xbar: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        self.xbar = np.asarray(self.xbar, dtype=float)
        if self.c.shape != (self.routing.m,):
            raise ValueError(f"c has shape {self.c.shape}, expected ({self.routing.m},)")
        if self.w.shape != (self.routing.n,) or self.xbar.shape != (self.routing.n,):
            raise ValueError("w and xbar must have one entry per charger")
        if np.any(self.c < 0):
            raise ValueError("capacities must be >= 0")
        if np.any(self.w <= 0) or np.any(self.xbar <= 0):
            raise ValueError("weights and rate caps must be > 0")
        self.route_indptr, self.route_idx = _flatten_csr(self.routing.routes)
        self.user_indptr, self.user_idx = _flatten_csr(self.routing.users)

    @property
    def n(self) -> int:
        return self.routing.n

    @property
    def m(self) -> int:
        return self.routing.m

    @classmethod
    def from_feeder(
        cls,
        feeder: Feeder,
        load_shapes: list[LoadShape],
        minute: int,
        nominal_voltage: float = 240.0,
        three_phase: bool = False,
    ) -> "NumProblem":
        routing = build_routing_matrix(feeder, three_phase=three_phase)
        c = available_capacity(feeder, load_shapes, minute, nominal_voltage, three_phase)
        w = np.array([ch.weight for ch in feeder.chargers])
        xbar = np.array([ch.max_rate_a for ch in feeder.chargers])
        return cls(routing=routing, c=c, w=w, xbar=xbar)

    def subproblem(self, charger_idx: np.ndarray) -> "NumProblem":
        """Restriction to a subset of chargers (capacities unchanged)."""
        charger_idx = np.asarray(charger_idx, dtype=np.int64)
        return NumProblem(
            routing=self.routing.subset(charger_idx),
            c=self.c.copy(),
            w=self.w[charger_idx],
            xbar=self.xbar[charger_idx],
        )

    def truncate_links(self, m_keep: int) -> "NumProblem":
        """Restriction to the first m_keep links (head-to-leaf order)."""
        return NumProblem(
            routing=self.routing.truncate_links(m_keep),
            c=self.c[:m_keep].copy(),
            w=self.w.copy(),
            xbar=self.xbar.copy(),
        )

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            return float("inf")
        return float(-np.sum(self.w * np.log(x)))

    def link_flows(self, x: np.ndarray) -> np.ndarray:
        return _kernels.link_flows(
            np.asarray(x, dtype=float), self.user_indptr, self.user_idx, self.m
        )

    def max_violation(self, x: np.ndarray) -> float:
        return float(np.max(self.link_flows(x) - self.c))

    def to_csv(self, path: str | Path) -> None:
        """Self-contained snapshot: R as sparse triplets plus c, w, xbar."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("kind,row,col,value\n")
            for l, lab in enumerate(self.routing.labels):
                fh.write(f"label,{l},,{lab}\n")
            for i, route in enumerate(self.routing.routes):
                for l in route:
                    fh.write(f"R,{l},{i},1\n")
            for l, v in enumerate(self.c):
                fh.write(f"c,{l},,{v:.12g}\n")
            for i, v in enumerate(self.w):
                fh.write(f"w,,{i},{v:.12g}\n")
            for i, v in enumerate(self.xbar):
                fh.write(f"xbar,,{i},{v:.12g}\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "NumProblem":
        import pandas as pd

        df = pd.read_csv(path, dtype={"kind": str, "value": str}, keep_default_na=False)
        labels = df[df.kind == "label"].sort_values("row")["value"].tolist()
        c_rows = df[df.kind == "c"]
        c = np.zeros(len(c_rows))
        c[c_rows["row"].astype(int).to_numpy()] = c_rows["value"].astype(float).to_numpy()
        w_rows = df[df.kind == "w"]
        w = np.zeros(len(w_rows))
        w[w_rows["col"].astype(int).to_numpy()] = w_rows["value"].astype(float).to_numpy()
        xb_rows = df[df.kind == "xbar"]
        xbar = np.zeros(len(xb_rows))
        xbar[xb_rows["col"].astype(int).to_numpy()] = xb_rows["value"].astype(float).to_numpy()
        routes: list[list[int]] = [[] for _ in range(len(w))]
        r_rows = df[df.kind == "R"]
        for l, i in zip(r_rows["row"].astype(int), r_rows["col"].astype(int)):
            routes[i].append(l)
        from .feeder import routing_from_routes

        routing = routing_from_routes(
            len(c), tuple(np.array(sorted(r), dtype=np.int32) for r in routes), tuple(labels)
        )
        return cls(routing=routing, c=c, w=w, xbar=xbar)


@dataclass
class SolverConfig:
    step_size: float
    epsilon: float = 1e-6
    max_iterations: int = 100_000
    tolerance: float = 1e-9
    # instability detection: residual above growth_factor * initial for
    # growth_window consecutive iterations, or no net progress (best
    # residual never below progress_fraction * initial) by exhaustion
    growth_factor: float = 10.0
    growth_window: int = 100
    progress_fraction: float = 0.1

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step size must be > 0")
        if self.epsilon <= 0:
            raise ValueError("convergence threshold must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max iterations must be >= 1")


@dataclass
class DualState:
    x: np.ndarray
    lam: np.ndarray
    k: int
    residual: float


@dataclass
class PrimalState:
    x: np.ndarray
    b: np.ndarray
    mu: np.ndarray
    k: int
    residual: float


class IterationTrace:
    """Per-iteration record: rates, objective, worst violation, residual."""

    def __init__(self, n: int):
        self.n = n
        self.k: list[int] = []
        self.objective: list[float] = []
        self.max_violation: list[float] = []
        self.residual: list[float] = []
        self.wall_clock: list[float] = []
        self.x: list[np.ndarray] = []
        self.converged = False
        self.unstable = False

    def append(self, k, obj, maxviol, residual, stamp, x):
        self.k.append(k)
        self.objective.append(obj)
        self.max_violation.append(maxviol)
        self.residual.append(residual)
        self.wall_clock.append(stamp)
        self.x.append(x)

    def __len__(self) -> int:
        return len(self.k)

    @property
    def iterations(self) -> int:
        return len(self.k)

    def x_array(self) -> np.ndarray:
        return np.array(self.x) if self.x else np.zeros((0, self.n))

    def final_objective(self) -> float:
        return self.objective[-1] if self.objective else float("nan")

    def to_csv(self, path: str | Path) -> None:
        cols = ",".join(f"x_{i}" for i in range(self.n))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"k,objective,max_violation,residual,{cols}\n")
            for j in range(len(self.k)):
                xs = ",".join(f"{v:.12g}" for v in self.x[j])
                fh.write(
                    f"{self.k[j]},{self.objective[j]:.12g},"
                    f"{self.max_violation[j]:.12g},{self.residual[j]:.12g},{xs}\n"
                )


def dual_x_update(lam: np.ndarray, prob: NumProblem) -> np.ndarray:
    """Price-responsive rates x_i = min(w_i / (R_i^T lam), xbar_i).

    A zero route price means no congestion signal, so the rate cap binds.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("prices must be >= 0")
    return _kernels.dual_rates(lam, prob.route_indptr, prob.route_idx, prob.w, prob.xbar)


def dual_lambda_update(
    lam: np.ndarray, x: np.ndarray, prob: NumProblem, kappa: float
) -> np.ndarray:
    """Projected subgradient price update max(lam + kappa*(Rx - c), 0)."""
    if kappa <= 0:
        raise ValueError("step size must be > 0")
    lam = np.asarray(lam, dtype=float)
    g = prob.link_flows(x) - prob.c
    return np.maximum(lam + kappa * g, 0.0)


def dual_step_bound(prob: NumProblem) -> float:
    """Step-size bound 2 / (xbar_max * L * N) from the dual convergence rule.

    L is the longest route (links per charger), N the most chargers behind
    any one link.
    """
    if prob.n == 0:
        return float("inf")
    xbar_max = float(np.max(prob.xbar))
    l_bar = int(np.max(prob.routing.route_lengths()))
    n_bar = int(np.max(prob.routing.users_per_link()))
    return 2.0 / (xbar_max * l_bar * n_bar)


def dual_step_safe(prob: NumProblem) -> float:
    """Conservative variant of the step bound for unnormalized rate scales.

    The dual Hessian is bounded by (xbar_max^2 / w_min) * R R^T, whose top
    eigenvalue is at most L*N, so this step guarantees descent regardless
    of the ampere scale of the rates (the plain rule divides by xbar to
    the first power and over-steps when xbar >> w).
    """
    if prob.n == 0:
        return float("inf")
    return dual_step_bound(prob) * float(np.min(prob.w)) / float(np.max(prob.xbar))


def dual_solve(prob: NumProblem, cfg: SolverConfig) -> tuple[DualState, IterationTrace]:
    """Iterate price/rate updates until the price change falls below epsilon.

    Prices start at zero (rates start uncontrolled at xbar). Divergence is
    flagged when the residual sits above growth_factor times its initial
    value for growth_window consecutive iterations, or when the run
    exhausts max_iterations without the residual ever dropping below
    progress_fraction of its initial value (a step-size-induced limit
    cycle never makes progress; a merely slow run does).
    """
    lam = np.zeros(prob.m)
    trace = IterationTrace(prob.n)
    x = prob.xbar.copy()
    residual = float("inf")
    r0 = None
    best = float("inf")
    above = 0
    k = 0
    for k in range(cfg.max_iterations):
        x, lam, residual, maxviol, obj = _kernels.dual_step(
            lam, prob.route_indptr, prob.route_idx, prob.user_indptr, prob.user_idx,
            prob.c, prob.w, prob.xbar, cfg.step_size,
        )
        trace.append(k, obj, maxviol, residual, perf_counter(), x)
        if not np.isfinite(residual):
            trace.unstable = True
            break
        if r0 is None:
            r0 = residual
        best = min(best, residual)
        if residual <= cfg.epsilon:
            trace.converged = True
            break
        if residual > cfg.growth_factor * r0:
            above += 1
            if above >= cfg.growth_window:
                trace.unstable = True
                break
        else:
            above = 0
    if not trace.converged and not trace.unstable:
        # exhausted the budget; a limit cycle shows no net progress
        if r0 is not None and r0 > 0 and best > cfg.progress_fraction * r0:
            trace.unstable = True
    return DualState(x=x, lam=lam, k=k, residual=residual), trace


def primal_x_mu_update(b: np.ndarray, prob: NumProblem) -> tuple[np.ndarray, np.ndarray]:
    """Rates x_i = min(b_i, xbar_i) and marginal benefits mu_i.

    mu_i is w_i/x_i except where the rate cap binds (then zero). Budgets
    are clamped at X_FLOOR first so the division is always finite.
    """
    b = np.asarray(b, dtype=float)
    return _kernels.primal_rates(b, prob.w, prob.xbar, X_FLOOR)


def primal_budget_step(b: np.ndarray, mu: np.ndarray, gamma: float) -> np.ndarray:
    """Gradient ascent on budgets: b + gamma * mu (pre-projection)."""
    if gamma <= 0:
        raise ValueError("step size must be > 0")
    return np.asarray(b, dtype=float) + gamma * np.asarray(mu, dtype=float)


def sequential_project(b: np.ndarray, prob: NumProblem) -> np.ndarray:
    """One head-to-leaf sweep of per-link halfplane projections.

    Each violated link l applies b += (c_l - R_l b) R_l^T / ||R_l||^2,
    which only lowers budgets, so a single pass leaves R b <= c on every
    link and a second pass is the identity. Entries that would cross
    X_FLOOR are handled by the exact floor-respecting projection instead.
    """
    out = np.asarray(b, dtype=float).copy()
    _kernels.project_pass(out, prob.user_indptr, prob.user_idx, prob.c, X_FLOOR)
    return out


def default_budgets(prob: NumProblem) -> np.ndarray:
    """Equal-share start: each charger gets its route's worst c_l / n_l.

    Feasible by construction (each link's users sum to at most c_l) and
    strictly positive via the X_FLOOR clamp.
    """
    share = np.full(prob.n, np.inf)
    counts = prob.routing.users_per_link()
    for i, route in enumerate(prob.routing.routes):
        for l in route:
            s = prob.c[l] / counts[l]
            if s < share[i]:
                share[i] = s
    return np.maximum(share, X_FLOOR)


def primal_solve(
    prob: NumProblem, cfg: SolverConfig, b0: np.ndarray | None = None
) -> tuple[PrimalState, IterationTrace]:
    """Iterate budget updates; every recorded rate vector is feasible.

    Per iteration: rates/marginals from the current (feasible) budgets,
    gradient step, convergence check on the raw step gamma*||mu|| (the
    listing's test, taken before projecting), projection sweep, then a
    second check on the post-projection budget change, which is the
    quantity that actually vanishes at the method's fixed point once link
    constraints bind.
    """
    if b0 is None:
        b = default_budgets(prob)
    else:
        b = np.asarray(b0, dtype=float).copy()
        if b.shape != (prob.n,):
            raise ValueError("b0 has wrong shape")
        if float(np.max(prob.link_flows(b) - prob.c)) > cfg.tolerance:
            raise ValueError("initial budgets violate link capacities")
    trace = IterationTrace(prob.n)
    x, mu = primal_x_mu_update(b, prob)
    residual = float("inf")
    k = 0
    for k in range(cfg.max_iterations):
        x, mu, b_new, grad_res, step_res, maxviol, obj = _kernels.primal_step(
            b, prob.route_indptr, prob.route_idx, prob.user_indptr, prob.user_idx,
            prob.c, prob.w, prob.xbar, cfg.step_size, X_FLOOR,
        )
        if grad_res <= cfg.epsilon:
            # listing order: stop before projecting; budgets stay as they
            # were, and x (computed from them) is feasible
            residual = grad_res
            trace.append(k, obj, maxviol, residual, perf_counter(), x)
            trace.converged = True
            break
        residual = step_res
        trace.append(k, obj, maxviol, residual, perf_counter(), x)
        b = b_new
        if step_res <= cfg.epsilon:
            trace.converged = True
            x, mu = primal_x_mu_update(b, prob)
            break
    return PrimalState(x=x, b=b, mu=mu, k=k, residual=residual), trace


def _exclude_dead_routes(prob: NumProblem) -> np.ndarray:
    """Chargers whose route crosses a zero-capacity link are forced to 0."""
    dead_links = np.flatnonzero(prob.c <= 0)
    if len(dead_links) == 0:
        return np.zeros(prob.n, dtype=bool)
    dead = np.zeros(prob.n, dtype=bool)
    dead_set = set(dead_links.tolist())
    for i, route in enumerate(prob.routing.routes):
        if any(int(l) in dead_set for l in route):
            dead[i] = True
    return dead


def centralized_solve(prob: NumProblem, tol: float = 1e-8) -> np.ndarray:
    """Reference optimum from a convex programming solver.

    Chargers routed through a zero-capacity link are infeasible for the
    log utility; they are excluded (rate 0) and reported. The returned
    point is validated against the KKT conditions.
    """
    import cvxpy as cp
    from scipy import sparse

    dead = _exclude_dead_routes(prob)
    if np.all(dead):
        logger.warning("all %d chargers blocked by zero-capacity links", prob.n)
        return np.zeros(prob.n)
    keep = np.flatnonzero(~dead)
    if np.any(dead):
        logger.warning(
            "excluding %d charger(s) blocked by zero-capacity links: %s",
            int(dead.sum()),
            np.flatnonzero(dead).tolist(),
        )
    sub = prob.subproblem(keep) if np.any(dead) else prob

    rows, cols = [], []
    for i, route in enumerate(sub.routing.routes):
        rows.extend(int(l) for l in route)
        cols.extend([i] * len(route))
    r_mat = sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(sub.m, sub.n)
    )
    live = np.flatnonzero(np.diff(r_mat.indptr) > 0)  # links somebody uses
    r_live = r_mat[live]
    c_live = sub.c[live]

    x = cp.Variable(sub.n)
    cons = [r_live @ x <= c_live, x <= sub.xbar, x >= 0]
    objective = cp.Minimize(-sub.w @ cp.log(x))
    cp.Problem(objective, cons).solve(solver=cp.CLARABEL)
    if x.value is None:
        raise RuntimeError("centralized solve failed")
    x_opt = np.clip(np.asarray(x.value, dtype=float), 1e-12, sub.xbar)

    lam = np.maximum(np.asarray(cons[0].dual_value, dtype=float), 0.0)
    eta = np.maximum(np.asarray(cons[1].dual_value, dtype=float), 0.0)
    stationarity = -sub.w / x_opt + r_live.T @ lam + eta
    scale = max(1.0, float(np.max(sub.w / x_opt)))
    kkt = float(np.max(np.abs(stationarity))) / scale
    if kkt > max(1e-5, tol * 100):
        raise RuntimeError(f"KKT stationarity residual {kkt:.2e} above tolerance")

    full = np.zeros(prob.n)
    full[keep] = x_opt
    return full
