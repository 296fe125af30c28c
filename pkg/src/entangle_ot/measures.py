"""Discrete measures, labeled empirical joints and losses on the label simplex.

Labels are hard class indices. Whenever a loss is evaluated against a label,
the label is embedded as the one-hot vertex of the probability simplex, so a
prediction ``f(x)`` and a label ``y`` live in the same space.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptyClass, InvalidMeasure

WEIGHT_TOL = 1e-12


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _normalize(weights, n):
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != n:
        raise InvalidMeasure(f"{w.shape[0]} weights for {n} points")
    if not np.all(np.isfinite(w)):
        raise InvalidMeasure("weights must be finite")
    if np.any(w < 0):
        raise InvalidMeasure("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise InvalidMeasure("weights must have positive total mass")
    if abs(total - 1.0) > WEIGHT_TOL:
        w = w / total
    return w


def _as_points(points):
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise InvalidMeasure("points must be a non-empty (n, d) array")
    if not np.all(np.isfinite(x)):
        raise InvalidMeasure("points must be finite")
    return x


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud. Duplicate points are kept as separate atoms."""

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points, weights=None):
        x = _as_points(points)
        n = x.shape[0]
        w = np.full(n, 1.0 / n) if weights is None else _normalize(weights, n)
        object.__setattr__(self, "points", _readonly(x))
        object.__setattr__(self, "weights", _readonly(w))

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class EmpiricalJoint:
    """Weighted labeled sample ``{(x_i, y_i, w_i)}`` over inputs x labels."""

    inputs: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    num_classes: int

    def __init__(self, inputs, labels, weights=None, num_classes=None):
        x = _as_points(inputs)
        y = np.asarray(labels).reshape(-1)
        if y.shape[0] != x.shape[0]:
            raise InvalidMeasure(f"{y.shape[0]} labels for {x.shape[0]} inputs")
        if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
            raise InvalidMeasure("labels must be integer class indices")
        y = y.astype(int)
        if np.any(y < 0):
            raise InvalidMeasure("labels must be nonnegative")
        m = int(y.max()) + 1 if num_classes is None else int(num_classes)
        if np.any(y >= m):
            raise InvalidMeasure(f"label index out of range for {m} classes")
        n = x.shape[0]
        w = np.full(n, 1.0 / n) if weights is None else _normalize(weights, n)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", _readonly(x))
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "num_classes", m)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def one_hot(self):
        return one_hot(self.labels, self.num_classes)

    def input_marginal(self):
        return DiscreteMeasure(self.inputs, self.weights)

    def class_mass(self):
        return np.bincount(self.labels, weights=self.weights, minlength=self.num_classes)

    def subset(self, idx):
        idx = np.asarray(idx)
        return EmpiricalJoint(self.inputs[idx], self.labels[idx], self.weights[idx], self.num_classes)

    def reweighted(self, weights):
        return EmpiricalJoint(self.inputs, self.labels, weights, self.num_classes)


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def vertices(num_classes):
    return np.eye(num_classes)


def pushforward(joint: EmpiricalJoint, f) -> EmpiricalJoint:
    """Map ``(x, y) -> (f(x), y)``; labels and weights are untouched."""
    out = np.asarray(f(joint.inputs), dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    if out.shape[0] != len(joint):
        raise InvalidMeasure("model returned the wrong number of outputs")
    return EmpiricalJoint(out, joint.labels, joint.weights, joint.num_classes)


def conditional(joint: EmpiricalJoint, label: int) -> DiscreteMeasure:
    mask = joint.labels == label
    mass = joint.weights[mask].sum()
    if not mask.any() or mass <= 0:
        raise EmptyClass(f"class {label} has no mass")
    return DiscreteMeasure(joint.inputs[mask], joint.weights[mask] / mass)


def label_marginal(joint: EmpiricalJoint) -> DiscreteMeasure:
    """Class masses as a measure on the one-hot vertices ``e_0..e_{M-1}``."""
    return DiscreteMeasure(vertices(joint.num_classes), joint.class_mass())


def group_rows(points):
    """Unique rows and, for every input row, the index of its unique row."""
    uniq, inverse = np.unique(np.asarray(points), axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


# --------------------------------------------------------------------------
# losses


def _project_simplex(v):
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(v)
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, v.shape[1] + 1)
    cond = u - css / k > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def _euclidean(a, b):
    return cdist(np.atleast_2d(a), np.atleast_2d(b))


def _sqeuclidean(a, b):
    return cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean")


def _kronecker(a, b):
    return (cdist(np.atleast_2d(a), np.atleast_2d(b), "chebyshev") > 0).astype(float)


def _cross_entropy(a, b):
    # ell(yhat, y) = -sum_k y_k log yhat_k; first argument is the prediction
    a = np.clip(np.atleast_2d(a), 1e-300, None)
    return -np.log(a) @ np.atleast_2d(b).T


@dataclass(frozen=True)
class LossSpec:
    """A loss on the simplex together with its certified constants.

    ``upper`` is the bound L, ``sep`` the separation l between distinct
    one-hot labels and ``kappa`` the approximate-triangle constant (1 for
    metrics).
    """

    kind: str
    upper: float
    sep: float
    kappa: float
    matrix: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def L(self):
        return self.upper

    @property
    def l(self):  # noqa: E743
        return self.sep

    @property
    def is_metric(self):
        return self.kind in ("euclidean", "kronecker") or (
            self.kind == "custom" and self.kappa == 1.0
        )

    def pairwise(self, a, b):
        """Matrix ``[ell(a_i, b_j)]`` between rows of ``a`` and ``b``."""
        if self.kind == "euclidean":
            return _euclidean(a, b)
        if self.kind == "sqeuclidean":
            return _sqeuclidean(a, b)
        if self.kind == "kronecker":
            return _kronecker(a, b)
        if self.kind == "cross_entropy":
            return _cross_entropy(a, b)
        if self.kind == "custom":
            ia, ib = _vertex_index(a), _vertex_index(b)
            return self.matrix[np.ix_(ia, ib)]
        raise ValueError(f"unknown loss kind {self.kind!r}")

    def pointwise(self, pred, target):
        """``ell(pred_i, target_i)`` row by row."""
        pred = np.atleast_2d(pred)
        target = np.atleast_2d(target)
        if self.kind == "euclidean":
            return np.linalg.norm(pred - target, axis=1)
        if self.kind == "sqeuclidean":
            return np.sum((pred - target) ** 2, axis=1)
        if self.kind == "kronecker":
            return np.any(pred != target, axis=1).astype(float)
        if self.kind == "cross_entropy":
            return -np.sum(target * np.log(np.clip(pred, 1e-300, None)), axis=1)
        if self.kind == "custom":
            return self.matrix[_vertex_index(pred), _vertex_index(target)]
        raise ValueError(f"unknown loss kind {self.kind!r}")

    def label_cost(self, num_classes):
        v = vertices(num_classes)
        return self.pairwise(v, v)


def _vertex_index(a):
    a = np.atleast_2d(a)
    idx = np.argmax(a, axis=1)
    if not np.allclose(a, np.eye(a.shape[1])[idx]):
        raise ValueError("custom-matrix losses are only defined on one-hot labels")
    return idx


def euclidean_loss():
    s = math.sqrt(2.0)
    return LossSpec("euclidean", upper=s, sep=s, kappa=1.0)


def squared_euclidean_loss():
    return LossSpec("sqeuclidean", upper=2.0, sep=2.0, kappa=2.0)


def kronecker_loss():
    return LossSpec("kronecker", upper=1.0, sep=1.0, kappa=1.0)


def cross_entropy_loss():
    # unbounded and not a semi-metric; only usable as a training risk
    return LossSpec("cross_entropy", upper=math.inf, sep=math.nan, kappa=math.inf)


def custom_loss(matrix):
    c = np.asarray(matrix, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("custom loss matrix must be square")
    if np.any(np.diag(c) != 0) or not np.allclose(c, c.T) or np.any(c < 0):
        raise ValueError("custom loss matrix must be symmetric, nonnegative, zero-diagonal")
    off = c[~np.eye(c.shape[0], dtype=bool)]
    kappa = measure_kappa(c)
    return LossSpec("custom", upper=float(c.max()), sep=float(off.min()) if off.size else 0.0,
                    kappa=kappa, matrix=_readonly(c))


LOSSES: dict = {
    "euclidean": euclidean_loss,
    "sqeuclidean": squared_euclidean_loss,
    "squared_euclidean": squared_euclidean_loss,
    "kronecker": kronecker_loss,
    "cross_entropy": cross_entropy_loss,
}


def get_loss(name) -> LossSpec:
    if isinstance(name, LossSpec):
        return name
    try:
        return LOSSES[name]()
    except KeyError:
        raise ValueError(f"unknown loss {name!r}") from None


def measure_kappa(d):
    """Smallest kappa with ``d[i,j] <= kappa (d[i,k] + d[k,j])`` over all triples.

    ``d`` is a precomputed square distance matrix. Triples with a zero
    denominator are skipped when the numerator is also zero; otherwise kappa is
    infinite.
    """
    d = np.asarray(d, dtype=float)
    best = 1.0
    for k in range(d.shape[0]):
        den = d[:, k][:, None] + d[k, :][None, :]
        num = d
        zero = den <= 0
        if np.any(zero & (num > 0)):
            return math.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(zero, 0.0, num / np.where(zero, 1.0, den))
        best = max(best, float(r.max()))
    return best


def certify_loss(loss: LossSpec, points, tol=1e-12):
    """Check the loss axioms on every pair and triple drawn from ``points``.

    Returns a dict of booleans; the one-hot vertices are always included so
    the separation constant is checked too.
    """
    pts = np.atleast_2d(points)
    m = pts.shape[1]
    pts = np.vstack([pts, vertices(m)])
    d = loss.pairwise(pts, pts)
    out = {
        "identity": bool(np.all(np.abs(np.diag(d)) <= tol)),
        "symmetric": bool(np.allclose(d, d.T, atol=tol, rtol=0)),
        "bounded": bool(np.all(d >= -tol) and np.all(d <= loss.upper + tol)),
    }
    vd = loss.label_cost(m)
    off = vd[~np.eye(m, dtype=bool)]
    out["separated"] = bool(off.size == 0 or off.min() >= loss.sep - tol)
    out["approx_triangle"] = bool(measure_kappa(d) <= loss.kappa + 1e-9)
    return out


# --------------------------------------------------------------------------
# JSON measure files


def _check_finite_list(values, what):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidMeasure(f"{what} contains NaN or Inf")
    return arr


def measure_to_dict(m) -> dict:
    if isinstance(m, EmpiricalJoint):
        return {
            "points": m.inputs.tolist(),
            "weights": m.weights.tolist(),
            "labels": m.labels.tolist(),
            "num_classes": m.num_classes,
        }
    return {"points": m.points.tolist(), "weights": m.weights.tolist()}


def measure_from_dict(d: dict):
    if not isinstance(d, dict) or "points" not in d:
        raise InvalidMeasure("measure file needs a 'points' field")
    unknown = set(d) - {"points", "weights", "labels", "num_classes"}
    if unknown:
        raise InvalidMeasure(f"unknown keys {sorted(unknown)}")
    pts = _check_finite_list(d["points"], "points")
    w = d.get("weights")
    if w is not None:
        w = _check_finite_list(w, "weights")
    if "labels" in d:
        return EmpiricalJoint(pts, d["labels"], w, d.get("num_classes"))
    return DiscreteMeasure(pts, w)


def save_measure(m, path):
    with open(path, "w") as fh:
        json.dump(measure_to_dict(m), fh)


def load_measure(path):
    with open(path) as fh:
        return measure_from_dict(json.load(fh))


Model = Callable[[np.ndarray], np.ndarray]
