"""Numerical certificates for the transfer bounds.

Every check recomputes the measured quantities (risks, conditional distances,
label shift) from the data, evaluates both sides of one inequality and returns
a :class:`BoundReport`. A check whose preconditions fail returns a report with
``applicable=False`` and ``passed=None`` rather than a silent pass.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import entangle as E
from .errors import ChainViolation
from .measures import (
    EmpiricalJoint,
    _project_simplex,
    get_loss,
    measure_kappa,
    pushforward,
    vertices,
)
from .transport import CostMatrix, wasserstein

DEFAULT_TOL = 1e-7
CSV_HEADER = ("bound_id", "lhs", "rhs", "slack", "passed", "context")


@dataclass(frozen=True)
class AssumptionParams:
    lam: float = 0.0
    kappa: float = 0.0
    delta: float = 0.0
    L: float = math.sqrt(2)
    l: float = math.sqrt(2)  # noqa: E741
    a: float = 1.0
    b: float = 0.1
    epsilon: float = 0.05
    s: int = 1
    kappa_approx: float = 1.0

    def __post_init__(self):
        for name in ("lam", "kappa", "delta", "L", "l", "a", "b", "epsilon", "s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.s >= 1 and not (1.0 / self.s - 1e-12 <= self.a <= 1.0):
            raise ValueError("a must lie in [1/s, 1]")
        if self.kappa_approx < 1:
            raise ValueError("kappa_approx must be >= 1")


@dataclass(frozen=True)
class BoundReport:
    bound_id: str
    lhs: float
    rhs: float
    slack: float
    passed: Optional[bool]
    context: dict = field(default_factory=dict)
    applicable: bool = True

    def row(self):
        ctx = ";".join(f"{k}={_fmt(v)}" for k, v in self.context.items())
        passed = "na" if self.passed is None else str(bool(self.passed)).lower()
        return [self.bound_id, _fmt(self.lhs), _fmt(self.rhs), _fmt(self.slack), passed, ctx]

    def as_dict(self):
        return {
            "bound_id": self.bound_id,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "passed": self.passed,
            "context": {k: (v if isinstance(v, (str, bool)) else float(v)) for k, v in self.context.items()},
            "applicable": self.applicable,
        }


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def make_report(bound_id, lhs, rhs, tol=DEFAULT_TOL, **context) -> BoundReport:
    lhs, rhs = float(lhs), float(rhs)
    slack = math.inf if math.isinf(rhs) and rhs > 0 else rhs - lhs
    return BoundReport(bound_id, lhs, rhs, slack, bool(slack >= -tol), context)


def not_applicable(bound_id, reason, **context) -> BoundReport:
    context["reason"] = reason
    return BoundReport(bound_id, math.nan, math.nan, math.nan, None, context, applicable=False)


def _require_metric(bound_id, loss):
    if not loss.is_metric:
        return not_applicable(bound_id, f"loss {loss.kind} is not a metric")
    return None


# --------------------------------------------------------------------------
# risk decompositions


def check_lemma1_chain(p, q, f, loss, tol=DEFAULT_TOL):
    """Target risk through the input-space joint W1 and the output-space one.

    The first report is ``R_q <= R_p + W_{l.f, l}(p, q)``, the second
    compares that joint W1 with the one between pushforward joints (on merged
    output supports). On empirical measures the two are equal.
    """
    loss = get_loss(loss)
    na = _require_metric("lemma1_risk", loss)
    if na:
        return [na, not_applicable("lemma1_pushforward", na.context["reason"])]
    op, oq = pushforward(p, f), pushforward(q, f)
    rp, rq = E.risk(p, f, loss), E.risk(q, f, loss)
    m = max(p.num_classes, q.num_classes)
    c1 = loss.pairwise(op.inputs, oq.inputs)
    c2 = loss.pairwise(np.eye(m)[p.labels], np.eye(m)[q.labels])
    w_in = wasserstein(p, q, CostMatrix.decomposable(c1, c2))
    w_out = _merged_joint_w1(op, oq, loss, m)
    return [
        make_report("lemma1_risk", rq, rp + w_in, tol, risk_p=rp, w_joint_input=w_in),
        make_report("lemma1_pushforward", rp + w_in, rp + w_out, tol, w_joint_output=w_out),
    ]


def _merged_joint_w1(op, oq, loss, m):
    # collapse identical (output, label) atoms before solving
    def merge(o):
        keys = np.hstack([o.inputs, o.labels[:, None]])
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        w = np.bincount(inv.reshape(-1), weights=o.weights, minlength=uniq.shape[0])
        return uniq[:, :-1], uniq[:, -1].astype(int), w

    xa, ya, wa = merge(op)
    xb, yb, wb = merge(oq)
    lab = np.eye(m)
    c = CostMatrix.decomposable(loss.pairwise(xa, xb), loss.pairwise(lab[ya], lab[yb]))
    return wasserstein(wa, wb, c)


def _terms(p, q, f, loss):
    rep = E.oracle_upper_bound(p, q, f, loss, check=False)
    return rep


def check_corollary(p, q, f, loss, tol=DEFAULT_TOL, report=None):
    """Both forms of the risk bound: through the output marginal and through the label marginal."""
    loss = get_loss(loss)
    na = _require_metric("risk_output_form", loss)
    if na:
        return [na, not_applicable("risk_label_form", na.context["reason"])]
    t = report or _terms(p, q, f, loss)
    return [
        make_report("risk_output_form", t.target_risk, t.source_risk + t.marginal_output_w1 + t.label_entanglement,
                    tol, risk_p=t.source_risk, w_marginal=t.marginal_output_w1, entangle_y=t.label_entanglement),
        make_report("risk_label_form", t.target_risk, t.source_risk + t.label_shift_w1 + t.prediction_entanglement,
                    tol, risk_p=t.source_risk, w_labels=t.label_shift_w1, entangle_yhat=t.prediction_entanglement),
    ]


def check_conversions(p, q, f, loss, tol=DEFAULT_TOL, report=None):
    loss = get_loss(loss)
    na = _require_metric("entangle_y_from_yhat", loss)
    if na:
        return [na, not_applicable("entangle_yhat_from_y", na.context["reason"])]
    t = report or _terms(p, q, f, loss)
    shared = t.source_risk + t.target_risk
    return [
        make_report("entangle_y_from_yhat", t.label_entanglement,
                    t.prediction_entanglement + shared + t.label_shift_w1, tol),
        make_report("entangle_yhat_from_y", t.prediction_entanglement,
                    t.label_entanglement + shared + t.marginal_output_w1, tol),
    ]


def check_objective_equivalence(p, q, f, loss, tol=DEFAULT_TOL, report=None):
    """``V = R_p + W1(p_y, q_y) + E_yhat`` lies within a factor 3 of the OUB."""
    loss = get_loss(loss)
    na = _require_metric("oub_over_3", loss)
    if na:
        return [na, not_applicable("oub_times_3", na.context["reason"])]
    t = report or _terms(p, q, f, loss)
    v = t.source_risk + t.label_shift_w1 + t.prediction_entanglement
    return [
        make_report("oub_over_3", t.oub / 3.0, v, tol, oub=t.oub),
        make_report("oub_times_3", v, 3.0 * t.oub, tol, oub=t.oub),
    ]


def check_label_shift_lower(p, q, f, loss, tol=DEFAULT_TOL, report=None):
    loss = get_loss(loss)
    na = _require_metric("label_shift_lower", loss)
    if na:
        return na
    t = report or _terms(p, q, f, loss)
    return make_report("label_shift_lower", t.label_shift_w1, t.oub, tol, oub=t.oub)


# --------------------------------------------------------------------------
# assumption-level checks


def _sep_factor(loss):
    return (loss.L + loss.l) / loss.l


def _l_separated(bound_id, loss):
    na = _require_metric(bound_id, loss)
    if na:
        return na
    if not (loss.l > 0) or not math.isfinite(loss.L):
        return not_applicable(bound_id, "loss lacks a positive label separation")
    return None


def check_cc_to_lje(p, q, f_cc, loss, params=None, tol=DEFAULT_TOL):
    """Joint risk of a close-conditionals hypothesis against ``2k + ((L+l)/l) d``."""
    loss = get_loss(loss)
    na = _l_separated("cc_to_lje", loss)
    if na:
        return na
    k = E.cc_level(p, q, f_cc, loss)
    d = E.label_shift_w1(p, q, loss)
    lhs = E.risk(p, f_cc, loss) + E.risk(q, f_cc, loss)
    return make_report("cc_to_lje", lhs, 2 * k + _sep_factor(loss) * d, tol, kappa_hat=k, delta_hat=d)


def check_cc_oub_tightness(p, q, f_cc, loss, params=None, tol=DEFAULT_TOL):
    loss = get_loss(loss)
    na = _l_separated("cc_oub_tightness", loss)
    if na:
        return na
    k = E.cc_level(p, q, f_cc, loss)
    d = E.label_shift_w1(p, q, loss)
    u = E.oracle_upper_bound(p, q, f_cc, loss, check=False).oub
    return make_report("cc_oub_tightness", u, 3 * (k + _sep_factor(loss) * d), tol, kappa_hat=k, delta_hat=d)


def mixed_source(p: EmpiricalJoint, q: EmpiricalJoint) -> Optional[EmpiricalJoint]:
    """Source conditionals re-weighted to the target label marginal.

    Returns None if the target has a class the source lacks.
    """
    m = max(p.num_classes, q.num_classes)
    py = np.bincount(p.labels, p.weights, m)
    qy = np.bincount(q.labels, q.weights, m)
    if np.any((qy > 0) & (py <= 0)):
        return None
    ratio = np.divide(qy, py, out=np.zeros(m), where=py > 0)
    return EmpiricalJoint(p.inputs, p.labels, p.weights * ratio[p.labels], m)


def check_not_cc(p, q, f, loss, kappa=None, tol=DEFAULT_TOL):
    """``k q_y(y_min) <= R_p q_y(y_max) + R_q + R_r`` for one hypothesis.

    ``kappa`` defaults to the measured CC level of ``f``; a larger value
    means ``f`` is not a witness of the violation and the check does not
    apply.
    """
    loss = get_loss(loss)
    na = _require_metric("not_cc", loss)
    if na:
        return na
    k_hat = E.cc_level(p, q, f, loss)
    k = k_hat if kappa is None else float(kappa)
    if k > k_hat + tol:
        return not_applicable("not_cc", "kappa exceeds the measured level of f", kappa=k, kappa_hat=k_hat)
    r = mixed_source(p, q)
    if r is None:
        return not_applicable("not_cc", "target class absent from source")
    m = max(p.num_classes, q.num_classes)
    qy = np.bincount(q.labels, q.weights, m)
    q_min, q_max = qy[qy > 0].min(), qy.max()
    rp, rq, rr = E.risk(p, f, loss), E.risk(q, f, loss), E.risk(r, f, loss)
    return make_report("not_cc", k * q_min, rp * q_max + rq + rr, tol,
                       kappa=k, q_min=q_min, q_max=q_max, risk_r=rr)


# --------------------------------------------------------------------------
# gradual shift


@dataclass(frozen=True)
class GradualChain:
    """Stages ``q^(0) .. q^(s)`` sharing labels; ``q^(0)`` is the source."""

    stages: tuple
    mixture: np.ndarray
    target: EmpiricalJoint

    @property
    def s(self):
        return len(self.stages) - 1

    @property
    def source(self):
        return self.stages[0]


def chain_links(chain: GradualChain, f, loss):
    """Largest per-class output-space W1 across each consecutive link."""
    loss = get_loss(loss)
    return np.array([
        np.nanmax(E.class_conditional_w1(a, b, f, loss))
        for a, b in zip(chain.stages[:-1], chain.stages[1:])
    ])


def _gs_params(chain, params):
    if params is None:
        params = AssumptionParams(a=max(float(np.max(chain.mixture)), 1.0 / chain.s), s=chain.s)
    return params


def check_gs_implies_cc(chain: GradualChain, f, loss, params=None, tol=DEFAULT_TOL):
    """Measured CC level of ``f`` against ``b + eps (a/2) s (s+1)``.

    Raises ChainViolation if a pushforward link reaches ``epsilon``.
    """
    loss = get_loss(loss)
    params = _gs_params(chain, params)
    na = _require_metric("gs_implies_cc", loss)
    if na:
        return na
    links = chain_links(chain, f, loss)
    if np.any(links >= params.epsilon):
        raise ChainViolation(f"link distance {links.max():.4g} is not below epsilon {params.epsilon}")
    if np.any(chain.mixture > params.a + 1e-12):
        raise ChainViolation("mixture weight exceeds the cap a")
    rp = E.risk(chain.source, f, loss)
    if rp >= params.b:
        return not_applicable("gs_implies_cc", "source risk not below b", risk_p=rp, b=params.b)
    k = E.cc_level(chain.source, chain.target, f, loss)
    s, a, eps = params.s, params.a, params.epsilon
    return make_report("gs_implies_cc", k, params.b + eps * (a / 2) * s * (s + 1), tol,
                       risk_p=rp, max_link=float(links.max()), s=s, a=a)


def check_gs_entanglement_cap(p, chain: GradualChain, f, loss, params=None, tol=DEFAULT_TOL):
    """Label entanglement under a gradual shift against ``2b + eps a s(s+1) + 2 d (L+l)/l``."""
    loss = get_loss(loss)
    params = _gs_params(chain, params)
    na = _l_separated("gs_entanglement_cap", loss)
    if na:
        return na
    links = chain_links(chain, f, loss)
    if np.any(links >= params.epsilon) or np.any(chain.mixture > params.a + 1e-12):
        return not_applicable("gs_entanglement_cap", "shift is not a gradual chain", max_link=float(links.max()))
    rp = E.risk(p, f, loss)
    if rp >= params.b:
        return not_applicable("gs_entanglement_cap", "source risk not below b", risk_p=rp, b=params.b)
    q = chain.target
    ey = E.label_entanglement(p, q, f, loss)
    d = E.label_shift_w1(p, q, loss)
    s, a, eps = params.s, params.a, params.epsilon
    rhs = 2 * params.b + eps * a * s * (s + 1) + 2 * d * _sep_factor(loss)
    return make_report("gs_entanglement_cap", ey, rhs, tol, delta_hat=d, risk_p=rp)


# --------------------------------------------------------------------------
# approximate-triangle and KL variants


def _all_points(p, q, f):
    m = max(p.num_classes, q.num_classes)
    return np.vstack([pushforward(p, f).inputs, pushforward(q, f).inputs, vertices(m)])


def check_kappa_variants(p, q, f, loss, kappa=None, tol=DEFAULT_TOL):
    """Risk bounds for a loss obeying only ``l(a,b) <= k (l(a,c) + l(c,b))``.

    ``kappa`` defaults to the largest triple ratio over every output and label
    vertex involved, which is all the bound needs.
    """
    loss = get_loss(loss)
    if loss.kind == "cross_entropy":
        return [not_applicable(b, "loss is not symmetric") for b in ("kappa_output_form", "kappa_label_form")]
    if kappa is None:
        pts = np.unique(_all_points(p, q, f), axis=0)
        kappa = measure_kappa(loss.pairwise(pts, pts))
    if not math.isfinite(kappa):
        return [not_applicable(b, "loss has no finite triangle constant") for b in ("kappa_output_form", "kappa_label_form")]
    t = E.oracle_upper_bound(p, q, f, loss, check=False)
    k, k2 = kappa, kappa * kappa
    return [
        make_report("kappa_output_form", t.target_risk,
                    k2 * t.source_risk + k * t.marginal_output_w1 + k2 * t.label_entanglement, tol, kappa=k),
        make_report("kappa_label_form", t.target_risk,
                    k2 * t.source_risk + k2 * t.label_shift_w1 + k * t.prediction_entanglement, tol, kappa=k),
    ]


def kl_divergence(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    if np.any((a > 0) & (b <= 0)):
        return math.inf
    mask = a > 0
    return max(0.0, float(np.sum(a[mask] * np.log(a[mask] / b[mask]))))


def quantizer(bins):
    """Model post-processor snapping each output to its histogram cell.

    Each output lands in a fixed-width cell per axis; the cell centre is
    projected back onto the simplex. Returns ``(q, cell_ids)`` callables.
    """
    def cells(out):
        return np.clip(np.floor(np.asarray(out) * bins), 0, bins - 1).astype(int)

    def snap(out):
        return _project_simplex((cells(out) + 0.5) / bins)

    return snap, cells


def _histograms(op, oq, cells):
    cp, cq = cells(op.inputs), cells(oq.inputs)
    keys, inv = np.unique(np.vstack([cp, cq]), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    hp = np.bincount(inv[: len(cp)], weights=op.weights, minlength=len(keys))
    hq = np.bincount(inv[len(cp):], weights=oq.weights, minlength=len(keys))
    return hp, hq


def check_kl_corollary(p, q, f, loss, bins=8, tol=DEFAULT_TOL):
    """Risk bounds with the W1 terms replaced by ``L sqrt(min KL / 2)``.

    The output form is certified for the quantized model that reports the
    centre of each histogram cell, so that the KL between histograms controls
    the output transport exactly. The label form uses ``f`` itself.
    """
    loss = get_loss(loss)
    na = _require_metric("kl_output_form", loss)
    if na:
        return [na, not_applicable("kl_label_form", na.context["reason"])]
    snap, cells = quantizer(bins)

    def f_q(x):
        return snap(f(x))

    op, oq = pushforward(p, f), pushforward(q, f)
    hp, hq = _histograms(op, oq, cells)
    kl_out = min(kl_divergence(hp, hq), kl_divergence(hq, hp))
    t_q = E.oracle_upper_bound(p, q, f_q, loss, check=False)
    rhs_out = t_q.source_risk + loss.L * math.sqrt(kl_out / 2) + t_q.label_entanglement

    m = max(p.num_classes, q.num_classes)
    py = np.bincount(p.labels, p.weights, m)
    qy = np.bincount(q.labels, q.weights, m)
    kl_lab = min(kl_divergence(py, qy), kl_divergence(qy, py))
    t = E.oracle_upper_bound(p, q, f, loss, check=False)
    rhs_lab = t.source_risk + loss.L * math.sqrt(kl_lab / 2) + t.prediction_entanglement
    return [
        make_report("kl_output_form", t_q.target_risk, rhs_out, tol, kl=kl_out, bins=bins),
        make_report("kl_label_form", t.target_risk, rhs_lab, tol, kl=kl_lab),
    ]


# --------------------------------------------------------------------------


BOUND_GROUPS = ("lemma1", "corollary", "conversions", "equivalence", "label_shift", "cc_to_lje",
                "cc_tightness", "not_cc", "kl", "gs", "kappa")


def certify_all(p, q, f, loss, chain=None, f_cc=None, tol=DEFAULT_TOL, bins=8, include=None, method="exact"):
    """Run every applicable check on one (source, target, model) triple.

    ``include`` restricts the run to some of BOUND_GROUPS. ``method`` only
    affects the estimator-based groups (corollary, conversions, equivalence,
    label_shift); with Sinkhorn those are approximate and may fail at a zero
    tolerance.
    """
    loss = get_loss(loss)
    groups = set(BOUND_GROUPS if include is None else include)
    unknown = groups - set(BOUND_GROUPS)
    if unknown:
        raise ValueError(f"unknown bound groups {sorted(unknown)}")
    out = []
    if loss.is_metric:
        t = E.oracle_upper_bound(p, q, f, loss, method, check=False)
        g = f if f_cc is None else f_cc
        if "lemma1" in groups:
            out += check_lemma1_chain(p, q, f, loss, tol)
        if "corollary" in groups:
            out += check_corollary(p, q, f, loss, tol, t)
        if "conversions" in groups:
            out += check_conversions(p, q, f, loss, tol, t)
        if "equivalence" in groups:
            out += check_objective_equivalence(p, q, f, loss, tol, t)
        if "label_shift" in groups:
            out.append(check_label_shift_lower(p, q, f, loss, tol, t))
        if "cc_to_lje" in groups:
            out.append(check_cc_to_lje(p, q, g, loss, tol=tol))
        if "cc_tightness" in groups:
            out.append(check_cc_oub_tightness(p, q, g, loss, tol=tol))
        if "not_cc" in groups:
            out.append(check_not_cc(p, q, f, loss, tol=tol))
        if "kl" in groups:
            out += check_kl_corollary(p, q, f, loss, bins, tol)
        if chain is not None and "gs" in groups:
            try:
                out.append(check_gs_implies_cc(chain, f, loss, tol=tol))
            except ChainViolation as exc:
                out.append(not_applicable("gs_implies_cc", str(exc)))
            out.append(check_gs_entanglement_cap(p, chain, f, loss, tol=tol))
    if "kappa" in groups:
        out += check_kappa_variants(p, q, f, loss, tol=tol)
    return out
