"""Entanglement estimators, oracle upper bound and Wasserstein regularized risk.

All quantities are computed on the empirical measures themselves. Tied model
outputs are merged into one support point carrying the mixture of their
labels, so the label term of the output coupling is a small transport problem
between label distributions instead of a single label loss.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BoundViolated
from .measures import EmpiricalJoint, LossSpec, get_loss, group_rows, pushforward
from .transport import optimal_coupling, parse_method, wasserstein

OUB_TOL = 1e-7

REPORT_FIELDS = (
    "label_entanglement",
    "prediction_entanglement",
    "marginal_output_w1",
    "label_shift_w1",
    "source_risk",
    "target_risk",
    "oub",
    "wrr",
)


def _outputs(joint, f):
    return pushforward(joint, f) if f is not None else joint


def risk(joint: EmpiricalJoint, f, loss) -> float:
    """Weighted mean of ``ell(f(x_i), e_{y_i})``."""
    loss = get_loss(loss)
    out = _outputs(joint, f)
    return float(out.weights @ loss.pointwise(out.inputs, joint.one_hot()))


def _label_distributions(out: EmpiricalJoint, num_classes):
    """Unique outputs, their masses and the label distribution at each."""
    uniq, inv = group_rows(out.inputs)
    mass = np.bincount(inv, weights=out.weights, minlength=uniq.shape[0])
    cond = np.zeros((uniq.shape[0], num_classes))
    np.add.at(cond, (inv, out.labels), out.weights)
    return uniq, mass, cond / mass[:, None]


def _label_w1(a, b, label_cost):
    ia, ib = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    if ia.size == 1 and ib.size == 1:
        return float(label_cost[ia[0], ib[0]])
    return optimal_coupling(a, b, label_cost).objective


def output_coupling(p, q, f, loss, method="exact"):
    """Optimal coupling of the output marginals on merged output supports.

    Returns ``(coupling, (uniq_p, cond_p), (uniq_q, cond_q))``.
    """
    loss = get_loss(loss)
    m = max(p.num_classes, q.num_classes)
    up, mp, cp = _label_distributions(_outputs(p, f), m)
    uq, mq, cq = _label_distributions(_outputs(q, f), m)
    g = optimal_coupling(mp, mq, loss.pairwise(up, uq), 1.0, method)
    return g, (up, cp), (uq, cq)


def label_entanglement(p, q, f, loss, method="exact") -> float:
    """``E_y``: label distance averaged over the optimal output coupling."""
    loss = get_loss(loss)
    m = max(p.num_classes, q.num_classes)
    g, (_, cp), (_, cq) = output_coupling(p, q, f, loss, method)
    lc = loss.label_cost(m)
    total = 0.0
    rows, cols = np.nonzero(g.plan > 0)
    for i, j in zip(rows, cols):
        total += g.plan[i, j] * _label_w1(cp[i], cq[j], lc)
    return float(total)


def _class_outputs(out, label):
    mask = out.labels == label
    return out.inputs[mask], out.weights[mask] / out.weights[mask].sum()


def label_coupling(p, q, loss):
    loss = get_loss(loss)
    m = max(p.num_classes, q.num_classes)
    a = np.bincount(p.labels, p.weights, m)
    b = np.bincount(q.labels, q.weights, m)
    return optimal_coupling(a, b, loss.label_cost(m))


def prediction_entanglement(p, q, f, loss, method="exact") -> float:
    """``E_yhat``: output-space W1 between conditionals matched by the label coupling."""
    loss = get_loss(loss)
    op, oq = _outputs(p, f), _outputs(q, f)
    g = label_coupling(p, q, loss)
    total = 0.0
    for i, j in zip(*np.nonzero(g.plan > 0)):
        xa, wa = _class_outputs(op, i)
        xb, wb = _class_outputs(oq, j)
        total += g.plan[i, j] * wasserstein(wa, wb, loss.pairwise(xa, xb), 1.0, method)
    return float(total)


def marginal_output_w1(p, q, f, loss, method="exact") -> float:
    loss = get_loss(loss)
    op, oq = _outputs(p, f), _outputs(q, f)
    return wasserstein(op.weights, oq.weights, loss.pairwise(op.inputs, oq.inputs), 1.0, method)


def label_shift_w1(p, q, loss) -> float:
    return label_coupling(p, q, loss).objective


def class_conditional_w1(p, q, f, loss, method="exact") -> np.ndarray:
    """Per-class ``W1(f#p_{x|y}, f#q_{x|y})``; NaN where a class is missing on a side."""
    loss = get_loss(loss)
    op, oq = _outputs(p, f), _outputs(q, f)
    m = max(p.num_classes, q.num_classes)
    out = np.full(m, np.nan)
    mp = np.bincount(p.labels, p.weights, m)
    mq = np.bincount(q.labels, q.weights, m)
    for y in range(m):
        if mp[y] > 0 and mq[y] > 0:
            xa, wa = _class_outputs(op, y)
            xb, wb = _class_outputs(oq, y)
            out[y] = wasserstein(wa, wb, loss.pairwise(xa, xb), 1.0, method)
    return out


def cc_level(p, q, f, loss, method="exact") -> float:
    """Measured close-conditionals level ``R_p(f) + max_y W1(f#p_{x|y}, f#q_{x|y})``."""
    per_class = class_conditional_w1(p, q, f, loss, method)
    worst = np.nanmax(per_class) if np.any(np.isfinite(per_class)) else 0.0
    return risk(p, f, loss) + float(worst)


@dataclass(frozen=True)
class EntanglementReport:
    label_entanglement: float
    prediction_entanglement: float
    marginal_output_w1: float
    label_shift_w1: float
    source_risk: float
    target_risk: float
    oub: float
    wrr: float
    approximate: bool = False

    def as_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps({k: getattr(self, k) for k in REPORT_FIELDS + ("approximate",)})

    def to_csv(self, header=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(REPORT_FIELDS)
        w.writerow([repr(float(getattr(self, k))) for k in REPORT_FIELDS])
        return buf.getvalue()


def oracle_upper_bound(p, q, f, loss, method="exact", check=True) -> EntanglementReport:
    """Full report for ``f``; needs target labels.

    With a metric loss and the exact solver the target risk must not exceed
    the oracle upper bound, otherwise BoundViolated is raised.
    """
    loss = get_loss(loss)
    rp, rq = risk(p, f, loss), risk(q, f, loss)
    w = marginal_output_w1(p, q, f, loss, method)
    ey = label_entanglement(p, q, f, loss, method)
    eyh = prediction_entanglement(p, q, f, loss, method)
    d = label_shift_w1(p, q, loss)
    oub = rp + w + ey
    rep = EntanglementReport(ey, eyh, w, d, rp, rq, oub, rp + w, parse_method(method)[0] != "exact")
    if check and loss.is_metric and not rep.approximate and rq > oub + OUB_TOL:
        raise BoundViolated(f"target risk {rq:.9g} exceeds oracle bound {oub:.9g}", oub - rq)
    return rep


def minibatch_entanglement(p, q, f, loss, batch_size, rng, method="exact"):
    """Label entanglement averaged over one pass of paired random minibatches."""
    n = max(len(p), len(q))
    ip = rng.permutation(len(p))
    iq = rng.permutation(len(q))
    vals = []
    for start in range(0, n, batch_size):
        bp = np.take(ip, np.arange(start, start + batch_size), mode="wrap")
        bq = np.take(iq, np.arange(start, start + batch_size), mode="wrap")
        vals.append(label_entanglement(p.subset(bp), q.subset(bq), f, loss, method))
    return float(np.mean(vals))


def is_metric_loss(loss: LossSpec) -> bool:
    return get_loss(loss).is_metric
