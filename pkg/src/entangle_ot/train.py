"""Small numpy classifiers trained under risk and transport objectives.

Objectives:

``erm``         source risk
``wrr``         source risk + W between source and target output marginals
``jdot_lite``   wrr + feature_weight * W between hidden features (mlp only)
``lje_oracle``  source risk + target risk (uses target labels)
``cc_oracle``   source risk + worst per-class output W (uses target labels)

Transport terms are differentiated with the optimal plan held fixed for the
step. Output and feature transport always use the Euclidean ground cost, also
when the risk is cross-entropy.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import entangle as E
from .errors import ConfigInvalid, Diverged, FeatureTermUnavailable, MissingClass
from .measures import EmpiricalJoint, euclidean_loss
from .transport import optimal_coupling, pairwise_euclidean, parse_method

log = logging.getLogger(__name__)

OBJECTIVES = ("erm", "wrr", "jdot_lite", "lje_oracle", "cc_oracle")
HISTORY_FIELDS = ("epoch", "src_acc", "tgt_acc", "risk_p", "risk_q", "w_marginal", "entangle_y", "objective")


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Model:
    """Linear-softmax or one-hidden-layer network with a softmax head.

    Parameters live in one flat vector; ``shapes`` gives the layout.
    """

    def __init__(self, kind, input_dim, num_classes, hidden=16, activation="relu", params=None):
        if kind not in ("linear", "mlp"):
            raise ValueError("kind must be 'linear' or 'mlp'")
        if activation not in ("relu", "tanh"):
            raise ValueError("activation must be 'relu' or 'tanh'")
        self.kind = kind
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.hidden = int(hidden) if kind == "mlp" else 0
        self.activation = activation
        size = sum(int(np.prod(s)) for s in self.shapes)
        if params is None:
            params = np.zeros(size)
        params = np.asarray(params, dtype=float).reshape(-1)
        if params.size != size:
            raise ValueError(f"expected {size} parameters, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise ValueError("parameters must be finite")
        self.params = params.copy()

    @property
    def shapes(self):
        d, m, h = self.input_dim, self.num_classes, self.hidden
        if self.kind == "linear":
            return [(d, m), (m,)]
        return [(d, h), (h,), (h, m), (m,)]

    def unpack(self, params=None):
        params = self.params if params is None else params
        out, i = [], 0
        for s in self.shapes:
            k = int(np.prod(s))
            out.append(params[i:i + k].reshape(s))
            i += k
        return out

    @classmethod
    def initialize(cls, kind, input_dim, num_classes, rng, hidden=16, activation="relu"):
        m = cls(kind, input_dim, num_classes, hidden, activation)
        chunks = []
        fan_ins = [input_dim, input_dim] if kind == "linear" else [input_dim, input_dim, hidden, hidden]
        for s, fan_in in zip(m.shapes, fan_ins):
            bound = 1.0 / math.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, size=int(np.prod(s))))
        m.params = np.concatenate(chunks)
        return m

    def copy(self, params=None):
        return Model(self.kind, self.input_dim, self.num_classes, self.hidden or 16, self.activation,
                     self.params if params is None else params)

    def forward(self, x, params=None):
        """Returns ``(probs, cache)``; ``cache['h']`` holds hidden features for mlp."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "linear":
            w, b = self.unpack(params)
            z = x @ w + b
            return softmax(z), {"x": x}
        w1, b1, w2, b2 = self.unpack(params)
        a = x @ w1 + b1
        h = np.maximum(a, 0.0) if self.activation == "relu" else np.tanh(a)
        z = h @ w2 + b2
        return softmax(z), {"x": x, "a": a, "h": h}

    def __call__(self, x):
        return self.forward(x)[0]

    def features(self, x):
        if self.kind != "mlp":
            raise FeatureTermUnavailable("linear models have no hidden features")
        return self.forward(x)[1]["h"]

    def backward(self, cache, probs, g_out=None, g_logits=None, g_h=None, params=None):
        """Chain rule from output, logit and hidden-feature gradients to a flat vector."""
        dz = np.zeros_like(probs)
        if g_out is not None:
            dz += probs * (g_out - np.sum(g_out * probs, axis=1, keepdims=True))
        if g_logits is not None:
            dz += g_logits
        x = cache["x"]
        if self.kind == "linear":
            return np.concatenate([(x.T @ dz).ravel(), dz.sum(0)])
        w1, b1, w2, b2 = self.unpack(params)
        h = cache["h"]
        dh = dz @ w2.T
        if g_h is not None:
            dh = dh + g_h
        da = dh * (cache["a"] > 0) if self.activation == "relu" else dh * (1.0 - h ** 2)
        return np.concatenate([(x.T @ da).ravel(), da.sum(0), (h.T @ dz).ravel(), dz.sum(0)])

    def accuracy(self, joint: EmpiricalJoint):
        pred = np.argmax(self(joint.inputs), axis=1)
        return float(joint.weights @ (pred == joint.labels))

    def to_dict(self):
        return {"kind": self.kind, "input_dim": self.input_dim, "num_classes": self.num_classes,
                "hidden": self.hidden, "activation": self.activation, "params": self.params.tolist()}

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"kind", "input_dim", "num_classes", "hidden", "activation", "params"}
        if extra:
            raise ValueError(f"unknown model keys {sorted(extra)}")
        return cls(d["kind"], d["input_dim"], d["num_classes"], d.get("hidden", 16) or 16,
                   d.get("activation", "relu"), d["params"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "erm"
    loss: str = "euclidean"
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 10
    ot_method: str = "exact"
    wasserstein_order: int = 1
    class_balanced_sampling: bool = False
    seed: int = 0
    feature_weight: float = 1e-3
    wrr_weight: float = 1.0
    model: str = "linear"
    hidden: int = 16
    activation: str = "relu"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigInvalid(f"objective must be one of {OBJECTIVES}")
        if self.loss not in ("euclidean", "cross_entropy"):
            raise ConfigInvalid("loss must be 'euclidean' or 'cross_entropy'")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigInvalid("optimizer must be 'adam' or 'sgd'")
        if not self.lr > 0:
            raise ConfigInvalid("lr must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigInvalid("batch_size must be positive and epochs nonnegative")
        if self.wasserstein_order not in (1, 2):
            raise ConfigInvalid("wasserstein_order must be 1 or 2")
        if self.model not in ("linear", "mlp"):
            raise ConfigInvalid("model must be 'linear' or 'mlp'")
        try:
            parse_method(self.ot_method)
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from None

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigInvalid(f"unknown config keys {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from None

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# objective terms


def _risk_and_grad(probs, labels, weights, loss):
    """Weighted risk plus its gradient, as (value, g_out, g_logits)."""
    m = probs.shape[1]
    onehot = np.eye(m)[labels]
    if loss == "cross_entropy":
        py = np.clip(probs[np.arange(len(labels)), labels], 1e-300, None)
        val = float(weights @ -np.log(py))
        return val, None, weights[:, None] * (probs - onehot)
    diff = probs - onehot
    norm = np.linalg.norm(diff, axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    g = np.where(norm[:, None] > 0, diff / safe[:, None], 0.0)
    return float(weights @ norm), weights[:, None] * g, None


def _transport(u, wu, v, wv, alpha, method, plan=None):
    """``W_alpha`` between weighted clouds and gradients w.r.t. both clouds."""
    c = pairwise_euclidean(u, v)
    if plan is None:
        plan = optimal_coupling(wu, wv, c, alpha, method).plan
    cost = c ** alpha if alpha != 1 else c
    s = float(np.sum(plan * cost))
    diff = u[:, None, :] - v[None, :, :]
    if alpha == 1:
        safe = np.where(c > 0, c, 1.0)
        unit = np.where(c[..., None] > 0, diff / safe[..., None], 0.0)
        gu = np.einsum("ij,ijk->ik", plan, unit)
        gv = -np.einsum("ij,ijk->jk", plan, unit)
        return s, gu, gv, plan
    gu = np.einsum("ij,ijk->ik", plan, 2 * diff)
    gv = -np.einsum("ij,ijk->jk", plan, 2 * diff)
    w = math.sqrt(s)
    scale = 1.0 / (2 * w) if w > 0 else 0.0
    return w, gu * scale, gv * scale, plan


def _check_classes(bp, bq, m):
    missing = [y for y in range(m) if not (np.any(bp.labels == y) and np.any(bq.labels == y))]
    if missing:
        raise MissingClass(f"classes {missing} absent from a batch")


def ot_plans(model, bp, bq, config):
    """Optimal plans (and the worst class for cc_oracle) at the current parameters."""
    return _evaluate(model, bp, bq, config, None, want_grad=False)[2]


def objective_value(model, bp, bq, config, plans=None):
    """Objective on a pair of batches and its term breakdown.

    With ``plans`` given, transport terms use those plans instead of
    re-solving (the surrogate whose gradient :func:`gradient` returns).
    """
    val, terms, _, _ = _evaluate(model, bp, bq, config, plans, want_grad=False)
    return val, terms


def gradient(model, bp, bq, config, plans=None):
    return _evaluate(model, bp, bq, config, plans, want_grad=True)[3]


def _evaluate(model, bp, bq, config, plans, want_grad):
    obj = config.objective
    if obj == "jdot_lite" and model.kind != "mlp":
        raise FeatureTermUnavailable("jdot_lite needs hidden features")
    alpha, method = config.wasserstein_order, config.ot_method
    params = model.params
    pp, cp = model.forward(bp.inputs)
    terms, new_plans = {}, {}
    rp, gop, glp = _risk_and_grad(pp, bp.labels, bp.weights, config.loss)
    terms["risk_p"] = rp
    value = rp
    gq_out = gq_log = gp_h = gq_h = None
    need_q = obj != "erm"
    if need_q:
        pq, cq = model.forward(bq.inputs)
        gq_out = np.zeros_like(pq)

    if obj in ("wrr", "jdot_lite"):
        plan = None if plans is None else plans["output"]
        w, gu, gv, plan = _transport(pp, bp.weights, pq, bq.weights, alpha, method, plan)
        new_plans["output"] = plan
        terms["w_output"] = w
        value += config.wrr_weight * w
        gop = _add(gop, config.wrr_weight * gu)
        gq_out += config.wrr_weight * gv
        if obj == "jdot_lite":
            plan = None if plans is None else plans["features"]
            w, gu, gv, plan = _transport(cp["h"], bp.weights, cq["h"], bq.weights, alpha, method, plan)
            new_plans["features"] = plan
            terms["w_features"] = w
            value += config.feature_weight * w
            gp_h, gq_h = config.feature_weight * gu, config.feature_weight * gv
    elif obj == "lje_oracle":
        rq, gqo, gql = _risk_and_grad(pq, bq.labels, bq.weights, config.loss)
        terms["risk_q"] = rq
        value += rq
        if gqo is not None:
            gq_out += gqo
        gq_log = gql
    elif obj == "cc_oracle":
        m = model.num_classes
        _check_classes(bp, bq, m)
        per = []
        for y in range(m):
            a, b = bp.labels == y, bq.labels == y
            plan = None if plans is None else plans["class"][y]
            w, gu, gv, plan = _transport(pp[a], bp.weights[a] / bp.weights[a].sum(), pq[b],
                                         bq.weights[b] / bq.weights[b].sum(), alpha, method, plan)
            per.append((w, gu, gv, plan, a, b))
        new_plans["class"] = [t[3] for t in per]
        if plans is not None and "worst" in plans:
            worst = plans["worst"]
        else:
            worst = int(np.argmax([t[0] for t in per]))  # first index wins ties
        new_plans["worst"] = worst
        w, gu, gv, _, a, b = per[worst]
        terms["w_class_max"] = w
        value += w
        gop = _add(gop, np.zeros_like(pp))
        gop[a] += gu
        gq_out[b] += gv

    grad = None
    if want_grad:
        grad = model.backward(cp, pp, gop, glp, gp_h, params)
        if need_q:
            grad = grad + model.backward(cq, pq, gq_out, gq_log, gq_h, params)
    return float(value), terms, new_plans, grad


def _add(a, b):
    return b.copy() if a is None else a + b


# --------------------------------------------------------------------------
# training loop


class Adam:
    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad ** 2
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * mh / (np.sqrt(vh) + self.eps)


class SGD:
    def __init__(self, size, lr):
        self.lr = lr

    def step(self, params, grad):
        return params - self.lr * grad


def _batches(rng, source, target, config):
    """Index pairs for one epoch."""
    n = max(len(source), len(target))
    steps = max(1, math.ceil(n / config.batch_size))
    bs = config.batch_size
    if config.class_balanced_sampling:
        m = max(source.num_classes, target.num_classes)
        if bs < m:
            raise ConfigInvalid("batch_size must be at least the number of classes")
        per = bs // m
        out = []
        for _ in range(steps):
            ip = np.concatenate([rng.choice(np.flatnonzero(source.labels == y), per) for y in range(m)])
            iq = np.concatenate([rng.choice(np.flatnonzero(target.labels == y), per) for y in range(m)])
            out.append((ip, iq))
        return out
    ip, iq = rng.permutation(len(source)), rng.permutation(len(target))
    return [(np.take(ip, np.arange(k * bs, (k + 1) * bs), mode="wrap"),
             np.take(iq, np.arange(k * bs, (k + 1) * bs), mode="wrap")) for k in range(steps)]


def _has_all(source, target, ip, iq, m):
    return all(np.any(source.labels[ip] == y) and np.any(target.labels[iq] == y) for y in range(m))


def _batch_entanglement(model, source, target, config, rng, loss):
    """Label entanglement averaged over one epoch of batches from the training sampler."""
    vals = [E.label_entanglement(source.subset(ip), target.subset(iq), model, loss)
            for ip, iq in _batches(rng, source, target, config)]
    return float(np.mean(vals))


@dataclass
class FitResult:
    model: Model
    history: list

    def history_csv(self):
        return history_to_csv(self.history)


def history_to_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_FIELDS)
    for row in history:
        w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])
    return buf.getvalue()


def fit(source: EmpiricalJoint, target: EmpiricalJoint, config: TrainConfig, model: Optional[Model] = None):
    """Train ``model`` (fresh if None) and record one history row per epoch.

    Target labels are used only by the oracle objectives, by class-balanced
    sampling of the target, and by the diagnostics in the history.
    """
    train_seq, eval_seq, init_seq = np.random.SeedSequence(config.seed).spawn(3)
    rng = np.random.Generator(np.random.Philox(train_seq))
    eval_rng = np.random.Generator(np.random.Philox(eval_seq))
    m = max(source.num_classes, target.num_classes)
    if model is None:
        model = Model.initialize(config.model, source.dim, m, np.random.Generator(np.random.Philox(init_seq)),
                                 config.hidden, config.activation)
    model = model.copy()
    opt = (Adam(model.params.size, config.lr, config.beta1, config.beta2, config.adam_eps)
           if config.optimizer == "adam" else SGD(model.params.size, config.lr))
    metric = euclidean_loss()
    history = []
    for epoch in range(1, config.epochs + 1):
        values = []
        for ip, iq in _batches(rng, source, target, config):
            if config.objective == "cc_oracle":
                tries = 0
                while not _has_all(source, target, ip, iq, m):
                    tries += 1
                    if tries > 20:
                        raise MissingClass("could not draw batches containing every class")
                    ip, iq = _batches(rng, source, target, config)[0]
            bp, bq = source.subset(ip), target.subset(iq)
            val, _, plans, grad = _evaluate(model, bp, bq, config, None, want_grad=True)
            if not (math.isfinite(val) and np.all(np.isfinite(grad))):
                raise Diverged(f"non-finite objective in epoch {epoch}", model.copy(), history)
            new = opt.step(model.params, grad)
            if not np.all(np.isfinite(new)):
                raise Diverged(f"non-finite parameters in epoch {epoch}", model.copy(), history)
            model.params = new
            values.append(val)
        row = {
            "epoch": epoch,
            "src_acc": model.accuracy(source),
            "tgt_acc": model.accuracy(target),
            "risk_p": E.risk(source, model, metric),
            "risk_q": E.risk(target, model, metric),
            "w_marginal": E.marginal_output_w1(source, target, model, metric),
            "entangle_y": _batch_entanglement(model, source, target, config, eval_rng, metric),
            "objective": float(np.mean(values)),
        }
        log.info("epoch %d: %s", epoch, row)
        history.append(row)
    return FitResult(model, history)
