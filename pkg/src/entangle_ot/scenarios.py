"""Seeded synthetic distribution shifts.

Class conditionals are isotropic Gaussians. Four kinds of shift are offered:

* ``covariate``: the target is the source translated by a fixed vector;
* ``label_shift``: same class samplers, different class weights;
* ``gradual``: an s-stage chain of translated copies of the source
  conditionals, mixed into the target;
* ``entangling``: target classes take the means of other source classes on
  selected coordinates (then translated), so pairs matched by geometry carry
  different labels.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .bounds import GradualChain
from .errors import ChainGenerationFailed, ConfigInvalid
from .measures import EmpiricalJoint, measure_to_dict
from .transport import pairwise_euclidean, wasserstein

KINDS = ("covariate", "label_shift", "gradual", "entangling")


@dataclass(frozen=True)
class ShiftConfig:
    kind: str = "covariate"
    classes: int = 2
    points_per_domain: int = 200
    input_dim: int = 2
    class_means: Optional[list] = None
    mean_scale: float = 3.0
    class_cov_scale: float = 1.0
    seed: int = 0
    translation: Optional[list] = None
    source_weights: Optional[list] = None
    target_weights: Optional[list] = None
    a: Optional[float] = None
    epsilon: float = 0.05
    s: int = 1
    mixture: Optional[list] = None
    permutation: Optional[list] = None
    swap_dims: Optional[list] = None
    retries: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigInvalid(f"kind must be one of {KINDS}")
        m, n, d = self.classes, self.points_per_domain, self.input_dim
        if m < 1 or d < 1:
            raise ConfigInvalid("classes and input_dim must be positive")
        if n < m:
            raise ConfigInvalid("points_per_domain must be at least the number of classes")
        if self.class_cov_scale <= 0:
            raise ConfigInvalid("class_cov_scale must be positive")
        if self.class_means is not None and np.shape(self.class_means) != (m, d):
            raise ConfigInvalid(f"class_means must have shape ({m}, {d})")
        if self.translation is not None and np.shape(self.translation) != (d,):
            raise ConfigInvalid(f"translation must have length {d}")
        for name in ("source_weights", "target_weights"):
            w = getattr(self, name)
            if w is not None:
                w = np.asarray(w, float)
                if w.shape != (m,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                    raise ConfigInvalid(f"{name} must be {m} nonnegative weights summing to 1")
        if self.kind == "gradual":
            if self.s < 1 or self.epsilon <= 0:
                raise ConfigInvalid("gradual shift needs s >= 1 and epsilon > 0")
            a = self.cap
            if not (1.0 / self.s - 1e-12 <= a <= 1.0):
                raise ConfigInvalid("a must lie in [1/s, 1]")
            r = self.mixture_weights
            if r.shape != (self.s,) or np.any(r < 0) or abs(r.sum() - 1) > 1e-9 or np.any(r > a + 1e-12):
                raise ConfigInvalid("mixture must be s weights summing to 1, each at most a")
        if self.permutation is not None and sorted(self.permutation) != list(range(m)):
            raise ConfigInvalid("permutation must reorder 0..classes-1")
        if self.swap_dims is not None and any(not 0 <= k < d for k in self.swap_dims):
            raise ConfigInvalid("swap_dims out of range")

    @property
    def cap(self):
        return 1.0 / self.s if self.a is None else float(self.a)

    @property
    def mixture_weights(self):
        if self.mixture is None:
            return np.full(self.s, 1.0 / self.s)
        return np.asarray(self.mixture, float)

    def to_dict(self):
        return asdict(self)

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

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class Scenario:
    source: EmpiricalJoint
    target: EmpiricalJoint
    chain: Optional[GradualChain] = None
    config: Optional[ShiftConfig] = field(default=None, compare=False)

    def to_dict(self):
        out = {"source": measure_to_dict(self.source), "target": measure_to_dict(self.target)}
        if self.chain is not None:
            out["chain"] = [measure_to_dict(st) for st in self.chain.stages]
            out["mixture"] = self.chain.mixture.tolist()
        return out


def default_means(m, d, scale):
    """Class means spread evenly: simplex vertices if they fit, else a circle."""
    if d >= m:
        v = np.eye(d)[:m] * scale
        return v - v.mean(axis=0) if m > 1 else v
    if d == 1:
        return np.linspace(-scale, scale, m)[:, None]
    ang = 2 * np.pi * np.arange(m) / m
    out = np.zeros((m, d))
    out[:, 0], out[:, 1] = scale * np.cos(ang), scale * np.sin(ang)
    return out


def class_counts(weights, n):
    """Deterministic per-class counts by largest remainder."""
    raw = np.asarray(weights, float) * n
    counts = np.floor(raw).astype(int)
    rest = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rest]] += 1
    return counts


def _sample(rng, means, weights, n, cov_scale):
    counts = class_counts(weights, n)
    labels = np.repeat(np.arange(len(counts)), counts)
    x = means[labels] + rng.normal(scale=np.sqrt(cov_scale), size=(n, means.shape[1]))
    return EmpiricalJoint(x, labels, None, len(counts))


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def generate(config: ShiftConfig) -> Scenario:
    m, d, n = config.classes, config.input_dim, config.points_per_domain
    means = (np.asarray(config.class_means, float) if config.class_means is not None
             else default_means(m, d, config.mean_scale))
    uniform = np.full(m, 1.0 / m)
    ws = np.asarray(config.source_weights, float) if config.source_weights is not None else uniform
    wt = np.asarray(config.target_weights, float) if config.target_weights is not None else ws
    shift = np.zeros(d) if config.translation is None else np.asarray(config.translation, float)
    rng = _rng(config.seed)
    source = _sample(rng, means, ws, n, config.class_cov_scale)

    if config.kind == "covariate":
        target = _sample(rng, means + shift, wt, n, config.class_cov_scale)
        return Scenario(source, target, None, config)
    if config.kind == "label_shift":
        target = _sample(rng, means, wt, n, config.class_cov_scale)
        return Scenario(source, target, None, config)
    if config.kind == "entangling":
        perm = list(range(m))[::-1] if config.permutation is None else list(config.permutation)
        dims = list(range(d)) if config.swap_dims is None else list(config.swap_dims)
        tmeans = means.copy()
        tmeans[:, dims] = means[perm][:, dims]
        target = _sample(rng, tmeans + shift, wt, n, config.class_cov_scale)
        return Scenario(source, target, None, config)
    return _gradual(config, source, shift)


def _gradual(config, source, direction):
    norm = np.linalg.norm(direction)
    unit = np.eye(config.input_dim)[0] if norm == 0 else direction / norm
    step = 0.9 * config.epsilon * unit
    stages = [source]
    for i in range(1, config.s + 1):
        stages.append(EmpiricalJoint(source.inputs + i * step, source.labels, source.weights, source.num_classes))
    for attempt in range(config.retries):
        if _links_ok(stages, config.epsilon):
            break
        # shrink the step if a link somehow fails to verify
        step = step * 0.5
        stages = [source] + [
            EmpiricalJoint(source.inputs + i * step, source.labels, source.weights, source.num_classes)
            for i in range(1, config.s + 1)
        ]
    else:
        raise ChainGenerationFailed("could not build a chain with links below epsilon")
    r = config.mixture_weights
    target = EmpiricalJoint(
        np.vstack([st.inputs for st in stages[1:]]),
        np.concatenate([st.labels for st in stages[1:]]),
        np.concatenate([ri * st.weights for ri, st in zip(r, stages[1:])]),
        source.num_classes,
    )
    return Scenario(source, target, GradualChain(tuple(stages), r, target), config)


def _links_ok(stages, eps):
    for a, b in zip(stages[:-1], stages[1:]):
        for y in range(a.num_classes):
            ma, mb = a.labels == y, b.labels == y
            if not ma.any():
                continue
            w = wasserstein(a.weights[ma], b.weights[mb], pairwise_euclidean(a.inputs[ma], b.inputs[mb]))
            if w >= eps:
                return False
    return True
