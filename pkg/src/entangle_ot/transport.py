"""Exact and entropic discrete optimal transport.

The exact solver runs POT's network simplex and then certifies the result
itself: marginal feasibility, dual feasibility and a zero duality gap are
checked on every call, so a returned :class:`Coupling` is known optimal.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, SandwichViolated, SolverError
from .measures import DiscreteMeasure, EmpiricalJoint, group_rows

for _backend in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot as _pot  # noqa: E402

log = logging.getLogger(__name__)

CERT_TOL = 1e-9
SANDWICH_TOL = 1e-7


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray
    kind: str = "plain"
    c1: Optional[np.ndarray] = None
    c2: Optional[np.ndarray] = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2:
            raise DimensionMismatch("cost must be a 2-d matrix")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValueError("cost entries must be finite and nonnegative")
        object.__setattr__(self, "entries", e)
        if self.kind == "decomposable":
            if self.c1 is None or self.c2 is None:
                raise ValueError("decomposable cost needs c1 and c2")
            if not np.array_equal(e, np.asarray(self.c1) + np.asarray(self.c2)):
                raise ValueError("decomposable cost must equal c1 + c2 exactly")

    @classmethod
    def decomposable(cls, c1, c2):
        c1 = np.asarray(c1, dtype=float)
        c2 = np.asarray(c2, dtype=float)
        return cls(c1 + c2, "decomposable", c1, c2)

    @property
    def shape(self):
        return self.entries.shape

    def power(self, alpha):
        if alpha == 1:
            return self
        return CostMatrix(self.entries ** alpha)


@dataclass(frozen=True)
class Coupling:
    plan: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    objective: float
    dual_row: Optional[np.ndarray] = None
    dual_col: Optional[np.ndarray] = None
    converged: bool = True
    method: str = "exact"

    def duality_gap(self):
        if self.dual_row is None:
            return None
        return self.objective - (self.dual_row @ self.row_marginal + self.dual_col @ self.col_marginal)


def _weights(m):
    if isinstance(m, DiscreteMeasure):
        return np.asarray(m.weights, dtype=float)
    if isinstance(m, EmpiricalJoint):
        return np.asarray(m.weights, dtype=float)
    w = np.asarray(m, dtype=float).reshape(-1)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    return w / w.sum()


def _cost(cost):
    return cost if isinstance(cost, CostMatrix) else CostMatrix(cost)


def solve_exact(mu, nu, cost) -> Coupling:
    """Optimal coupling of ``mu`` and ``nu`` with a duality certificate."""
    a, b = _weights(mu), _weights(nu)
    C = _cost(cost).entries
    if C.shape != (a.size, b.size):
        raise DimensionMismatch(f"cost {C.shape} vs supports ({a.size}, {b.size})")
    # zero-mass atoms are dropped before solving, then given feasible duals
    ia = np.flatnonzero(a > 0)
    ib = np.flatnonzero(b > 0)
    a_s, b_s = a[ia], b[ib]
    a_s = a_s / a_s.sum()
    b_s = b_s / b_s.sum()
    C_s = np.ascontiguousarray(C[np.ix_(ia, ib)])
    G_s, info = _pot.emd(a_s, b_s, C_s, numItermax=max(100000, 50 * C_s.size), log=True)
    if info.get("result_code", 1) != 1:
        raise SolverError(f"network simplex failed: {info.get('warning')}")
    plan = np.zeros_like(C)
    plan[np.ix_(ia, ib)] = G_s
    u = np.empty(a.size)
    v = np.empty(b.size)
    u[ia] = info["u"]
    v[ib] = info["v"]
    # shift so that the dual objective is independent of the dropped atoms
    missing_b = np.setdiff1d(np.arange(b.size), ib)
    if missing_b.size:
        v[missing_b] = np.min(C[np.ix_(ia, missing_b)] - u[ia][:, None], axis=0)
    missing_a = np.setdiff1d(np.arange(a.size), ia)
    if missing_a.size:
        u[missing_a] = np.min(C[missing_a, :] - v[None, :], axis=1)
    a_full = np.zeros_like(a)
    a_full[ia] = a_s
    b_full = np.zeros_like(b)
    b_full[ib] = b_s
    objective = float(np.sum(plan * C))
    coupling = Coupling(plan, a_full, b_full, objective, u, v, True, "exact")
    _certify(coupling, C)
    return coupling


def _certify(c: Coupling, C):
    scale = max(1.0, float(np.max(C)) if C.size else 1.0)
    tol = CERT_TOL * scale
    if np.any(c.plan < -tol):
        raise SolverError("negative plan entries")
    if np.max(np.abs(c.plan.sum(1) - c.row_marginal)) > CERT_TOL:
        raise SolverError("row marginals violated")
    if np.max(np.abs(c.plan.sum(0) - c.col_marginal)) > CERT_TOL:
        raise SolverError("column marginals violated")
    if np.max(c.dual_row[:, None] + c.dual_col[None, :] - C) > tol:
        raise SolverError("dual infeasible")
    gap = c.duality_gap()
    if abs(gap) > tol:
        raise SolverError(f"duality gap {gap:.3e} exceeds tolerance")


def solve_sinkhorn(mu, nu, cost, epsilon=0.05, max_iter=50000, tol=1e-9, scaling=0.5) -> Coupling:
    """Log-domain Sinkhorn with epsilon-scaling warm starts.

    The reported objective is ``<plan, cost>``, the unregularized cost of the
    entropic plan. ``converged`` is False if the row marginals are still
    off by more than ``tol`` after ``max_iter`` iterations at the target
    epsilon; the plan is returned regardless.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a, b = _weights(mu), _weights(nu)
    C = _cost(cost).entries
    if C.shape != (a.size, b.size):
        raise DimensionMismatch(f"cost {C.shape} vs supports ({a.size}, {b.size})")
    with np.errstate(divide="ignore"):
        la, lb = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    cmax = float(C.max()) if C.size else 0.0
    schedule = []
    eps = max(cmax, epsilon)
    while scaling and eps > epsilon:
        schedule.append(eps)
        eps *= scaling
    schedule.append(epsilon)

    def lse_rows(f, g, e):
        return logsumexp((g[None, :] - C) / e + lb[None, :], axis=1)

    err = np.inf
    for stage, e in enumerate(schedule):
        last = stage == len(schedule) - 1
        iters = max_iter if last else 500
        stage_tol = tol if last else 1e-6
        for it in range(iters):
            f = -e * lse_rows(f, g, e)
            g = -e * logsumexp((f[:, None] - C) / e + la[:, None], axis=0)
            if it % 10 == 0 or it == iters - 1:
                logP = (f[:, None] + g[None, :] - C) / e + la[:, None] + lb[None, :]
                err = np.max(np.abs(np.exp(logsumexp(logP, axis=1)) - a))
                if err < stage_tol:
                    break
    logP = (f[:, None] + g[None, :] - C) / epsilon + la[:, None] + lb[None, :]
    plan = np.exp(logP)
    col_err = np.max(np.abs(plan.sum(0) - b))
    row_err = np.max(np.abs(plan.sum(1) - a))
    converged = bool(max(col_err, row_err) < max(tol, 1e-12) * 10)
    if not converged:
        log.warning("sinkhorn stopped with marginal error %.2e", max(col_err, row_err))
    return Coupling(plan, a, b, float(np.sum(plan * C)), None, None, converged, "sinkhorn")


def parse_method(method):
    """Normalize ``"exact"``, ``"sinkhorn"``, ``("sinkhorn", eps)`` or ``"sinkhorn:eps"``."""
    if method is None or method == "exact":
        return "exact", None
    if isinstance(method, str):
        if method == "sinkhorn":
            return "sinkhorn", 0.05
        if method.startswith("sinkhorn:"):
            return "sinkhorn", float(method.split(":", 1)[1])
    if isinstance(method, (tuple, list)) and method[0] == "sinkhorn":
        return "sinkhorn", float(method[1])
    raise ValueError(f"unknown OT method {method!r}")


def optimal_coupling(mu, nu, cost, alpha=1.0, method="exact") -> Coupling:
    """Coupling optimal for the cost raised to ``alpha`` (objective not rooted)."""
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    c = _cost(cost).power(alpha)
    kind, eps = parse_method(method)
    if kind == "exact":
        return solve_exact(mu, nu, c)
    return solve_sinkhorn(mu, nu, c, epsilon=eps)


def wasserstein(mu, nu, cost, alpha=1.0, method="exact") -> float:
    """``W_{alpha,c}``: solve with ``c**alpha`` then take the alpha-th root."""
    cp = optimal_coupling(mu, nu, cost, alpha, method)
    return float(max(cp.objective, 0.0) ** (1.0 / alpha))


def pairwise_euclidean(a, b):
    from scipy.spatial.distance import cdist

    return cdist(np.atleast_2d(a), np.atleast_2d(b))


def _pair_cost(c, a, b):
    return c.pairwise(a, b) if hasattr(c, "pairwise") else np.asarray(c(a, b), dtype=float)


def joint_wasserstein_decomposable(p_out: EmpiricalJoint, q_out: EmpiricalJoint, loss, alpha=1.0,
                                   method="exact") -> float:
    """``W_{alpha, ell, ell}`` between labeled joints in output space.

    The joint cost is ``ell(yhat, yhat') + ell(y, y')`` with labels embedded
    one-hot.
    """
    c1 = loss.pairwise(p_out.inputs, q_out.inputs)
    c2 = loss.pairwise(p_out.one_hot(), q_out.one_hot())
    return wasserstein(p_out, q_out, CostMatrix.decomposable(c1, c2), alpha, method)


def _aggregate(points, weights, labels, num_classes):
    """Merge identical points; returns points, masses and label conditionals."""
    uniq, inv = group_rows(points)
    mass = np.bincount(inv, weights=weights, minlength=uniq.shape[0])
    cond = np.zeros((uniq.shape[0], num_classes))
    np.add.at(cond, (inv, labels), weights)
    cond /= mass[:, None]
    return uniq, mass, cond


def _aggregate_by_label(points, weights, labels, num_classes):
    mass = np.bincount(labels, weights=weights, minlength=num_classes)
    return mass


def sandwich_terms(p: EmpiricalJoint, q: EmpiricalJoint, c1, c2, alpha=1.0, check=True) -> dict:
    """All five terms of the decomposable-cost sandwich.

    ``c1`` is a cost on inputs and ``c2`` a cost on one-hot labels; each is
    either a LossSpec or a callable returning the pairwise matrix. Returns
    ``lower_x, lower_y, joint, upper_x, upper_y``; raises SandwichViolated if
    an inequality fails by more than 1e-7 and ``check`` is set.
    """
    M = max(p.num_classes, q.num_classes)
    yp = np.eye(M)[p.labels]
    yq = np.eye(M)[q.labels]
    C1 = _pair_cost(c1, p.inputs, q.inputs)
    C2 = _pair_cost(c2, yp, yq)
    joint = wasserstein(p, q, CostMatrix.decomposable(C1, C2), alpha)

    # x-direction: optimal plan between unique inputs, label conditionals inside
    ux_p, mx_p, cy_p = _aggregate(p.inputs, p.weights, p.labels, M)
    ux_q, mx_q, cy_q = _aggregate(q.inputs, q.weights, q.labels, M)
    cx = _pair_cost(c1, ux_p, ux_q)
    gx = optimal_coupling(mx_p, mx_q, cx, alpha)
    lower_x = max(gx.objective, 0.0) ** (1 / alpha)
    Cy = _pair_cost(c2, np.eye(M), np.eye(M))
    inner_x = 0.0
    for i, j in zip(*np.nonzero(gx.plan > 0)):
        inner_x += gx.plan[i, j] * _cond_cost(cy_p[i], cy_q[j], Cy, alpha)
    upper_x = lower_x + max(inner_x, 0.0) ** (1 / alpha)

    # y-direction: optimal plan between label marginals, input conditionals inside
    my_p = p.class_mass() if p.num_classes == M else np.bincount(p.labels, p.weights, M)
    my_q = q.class_mass() if q.num_classes == M else np.bincount(q.labels, q.weights, M)
    gy = optimal_coupling(my_p, my_q, Cy, alpha)
    lower_y = max(gy.objective, 0.0) ** (1 / alpha)
    inner_y = 0.0
    for i, j in zip(*np.nonzero(gy.plan > 0)):
        mp = p.labels == i
        mq = q.labels == j
        cc = _pair_cost(c1, p.inputs[mp], q.inputs[mq])
        inner_y += gy.plan[i, j] * optimal_coupling(p.weights[mp], q.weights[mq], cc, alpha).objective
    upper_y = lower_y + max(inner_y, 0.0) ** (1 / alpha)

    terms = dict(lower_x=lower_x, lower_y=lower_y, joint=joint, upper_x=upper_x, upper_y=upper_y)
    if check:
        for name, slack in _sandwich_slacks(terms).items():
            if slack < -SANDWICH_TOL:
                raise SandwichViolated(f"{name} violated by {-slack:.3e}", slack)
    return terms


def _sandwich_slacks(t):
    return {
        "lower_x<=joint": t["joint"] - t["lower_x"],
        "joint<=upper_x": t["upper_x"] - t["joint"],
        "lower_y<=joint": t["joint"] - t["lower_y"],
        "joint<=upper_y": t["upper_y"] - t["joint"],
    }


def _cond_cost(cp, cq, C, alpha):
    """``W^alpha`` between two label distributions given as probability vectors."""
    ip, iq = np.flatnonzero(cp > 0), np.flatnonzero(cq > 0)
    if ip.size == 1 and iq.size == 1:
        return C[ip[0], iq[0]] ** alpha
    return optimal_coupling(cp, cq, C, alpha).objective
