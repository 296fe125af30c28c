"""Command-line entry point.

Exit codes: 0 ok, 1 a bound was violated, 2 usage or input error,
3 solver failure, 4 training diverged. ``ENTANGLE_OT_LOG`` sets the log
level (error, info or debug).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bounds as B
from . import entangle as E
from .errors import ConfigInvalid, Diverged, EntangleOTError, SolverError
from .gaussian import GaussianPair, cross_term_check, random_pair, verify_scaled_decomposition
from .measures import DiscreteMeasure, EmpiricalJoint, get_loss, load_measure
from .scenarios import ShiftConfig, generate
from .train import Model, TrainConfig, fit, history_to_csv
from .transport import optimal_coupling, pairwise_euclidean

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT, EXIT_SOLVER, EXIT_DIVERGED = 0, 1, 2, 3, 4

log = logging.getLogger("entangle_ot")


class InputError(Exception):
    pass


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigInvalid(f"{where} must be a JSON object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigInvalid(f"unknown keys in {where}: {sorted(extra)}")


def _emit(text, args):
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _scenario(cfg, seed):
    d = dict(cfg)
    if seed is not None:
        d["seed"] = seed
    return generate(ShiftConfig.from_dict(d))


def _model(spec, dim, num_classes, seed):
    """A model from a file path, an inline dict, or ``{"random": true, ...}``."""
    if spec is None:
        spec = {"random": True}
    if isinstance(spec, str):
        return Model.load(spec)
    if spec.get("random"):
        _check_keys(spec, {"random", "kind", "hidden", "activation", "scale"}, "model")
        rng = np.random.Generator(np.random.Philox(0 if seed is None else seed))
        m = Model.initialize(spec.get("kind", "linear"), dim, num_classes, rng,
                             spec.get("hidden", 16), spec.get("activation", "relu"))
        m.params = m.params * float(spec.get("scale", 1.0))
        return m
    return Model.from_dict(spec)


def _data(cfg, seed):
    """Source, target and optional chain from a scenario or two measure files."""
    if "scenario" in cfg:
        sc = _scenario(cfg["scenario"], seed)
        return sc.source, sc.target, sc.chain
    if "source" in cfg and "target" in cfg:
        p, q = load_measure(cfg["source"]), load_measure(cfg["target"])
        if not isinstance(p, EmpiricalJoint) or not isinstance(q, EmpiricalJoint):
            raise InputError("source and target files need labels")
        return p, q, None
    raise ConfigInvalid("config needs a scenario or source/target files")


# --------------------------------------------------------------------------


def cmd_ot(args):
    cfg = _load_json(args.config) if args.config else {}
    _check_keys(cfg, {"mu", "nu", "cost", "alpha", "method", "coupling_out"}, "ot config")
    mu_path = args.mu or cfg.get("mu")
    nu_path = args.nu or cfg.get("nu")
    if not mu_path or not nu_path:
        raise InputError("ot needs two measure files")
    mu, nu = load_measure(mu_path), load_measure(nu_path)
    xa = mu.points if isinstance(mu, DiscreteMeasure) else mu.inputs
    xb = nu.points if isinstance(nu, DiscreteMeasure) else nu.inputs
    if xa.shape[1] != xb.shape[1]:
        raise InputError("measures live in different dimensions")
    cost = args.cost or cfg.get("cost", "euclidean")
    if cost == "euclidean":
        c = pairwise_euclidean(xa, xb)
    elif cost == "sqeuclidean":
        c = pairwise_euclidean(xa, xb) ** 2
    else:
        raise InputError(f"unknown cost {cost!r}")
    alpha = args.alpha if args.alpha is not None else float(cfg.get("alpha", 1.0))
    method = args.method or cfg.get("method", "exact")
    cp = optimal_coupling(mu.weights, nu.weights, c, alpha, method)
    value = max(cp.objective, 0.0) ** (1.0 / alpha)
    if args.format == "json":
        _emit(json.dumps({"wasserstein": value, "alpha": alpha, "method": method}) + "\n", args)
    else:
        _emit(f"{value!r}\n", args)
    out = args.coupling_out or cfg.get("coupling_out")
    if out:
        with open(out, "w") as fh:
            json.dump({"plan": cp.plan.tolist(), "objective": cp.objective, "converged": cp.converged}, fh)
    return EXIT_OK


def _verify_one(cfg, seed, tol):
    p, q, chain = _data(cfg, seed)
    loss = get_loss(cfg.get("loss", "euclidean"))
    m = max(p.num_classes, q.num_classes)
    f = _model(cfg.get("model"), p.dim, m, seed)
    f_cc = _model(cfg["cc_model"], p.dim, m, seed) if "cc_model" in cfg else None
    groups = cfg.get("bounds")
    if groups in (None, "all", ["all"]):
        groups = None
    return B.certify_all(p, q, f, loss, chain, f_cc, tol, cfg.get("kl_bins", 8), groups,
                         cfg.get("method", "exact"))


def _gaussian_reports(spec, seed, tol):
    if spec is True or spec == {}:
        rng = np.random.Generator(np.random.Philox(0 if seed is None else seed))
        pair = random_pair(rng, 2, 2, float(rng.uniform(0.3, 3.0)))
    elif isinstance(spec, str):
        pair = GaussianPair.load(spec)
    else:
        pair = GaussianPair.from_dict(spec)
    return [verify_scaled_decomposition(pair, rel_tol=max(tol, 1e-6)),
            cross_term_check(pair, seed=0 if seed is None else seed)]


def _report_text(reports, fmt):
    if fmt == "json":
        return json.dumps([r.as_dict() for r in reports], default=float) + "\n"
    return B.reports_to_csv(reports)


def cmd_verify(args):
    cfg = _load_json(args.config) if args.config else None
    if cfg is None:
        raise InputError("verify needs --config")
    _check_keys(cfg, {"scenario", "source", "target", "model", "cc_model", "loss", "bounds", "kl_bins",
                      "method", "gaussian", "seeds"}, "verify config")
    tol = B.DEFAULT_TOL if args.tolerance is None else args.tolerance
    seeds = cfg.get("seeds") or [args.seed]
    reports = []
    if "scenario" in cfg or "source" in cfg:
        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            for batch in pool.map(lambda s: _verify_one(cfg, s, tol), seeds):
                reports += batch
    if cfg.get("gaussian"):
        reports += _gaussian_reports(cfg["gaussian"], args.seed, tol)
    _emit(_report_text(reports, args.format), args)
    failed = [r for r in reports if r.passed is False]
    for r in failed:
        log.error("bound %s violated by %.3e", r.bound_id, -r.slack)
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_entangle(args):
    cfg = _load_json(args.config) if args.config else None
    if cfg is None:
        raise InputError("entangle needs --config")
    _check_keys(cfg, {"scenario", "source", "target", "model", "loss", "method"}, "entangle config")
    p, q, _ = _data(cfg, args.seed)
    loss = get_loss(cfg.get("loss", "euclidean"))
    f = _model(cfg.get("model"), p.dim, max(p.num_classes, q.num_classes), args.seed)
    rep = E.oracle_upper_bound(p, q, f, loss, cfg.get("method", "exact"), check=False)
    _emit(rep.to_json() + "\n" if args.format == "json" else rep.to_csv(), args)
    return EXIT_OK


def cmd_train(args):
    cfg = _load_json(args.config) if args.config else None
    if cfg is None:
        raise InputError("train needs --config")
    _check_keys(cfg, {"scenario", "source", "target", "train"}, "train config")
    p, q, _ = _data(cfg, args.seed)
    tcfg = dict(cfg.get("train", {}))
    if args.seed is not None:
        tcfg["seed"] = args.seed
    tc = TrainConfig.from_dict(tcfg)
    result = fit(p, q, tc)
    hist = history_to_csv(result.history)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "history.csv"), "w") as fh:
            fh.write(hist)
        result.model.save(os.path.join(args.out, "model.json"))
    last = result.history[-1] if result.history else None
    if last is not None:
        row = {"objective": tc.objective, "src_acc": last["src_acc"], "tgt_acc": last["tgt_acc"],
               "risk_p": last["risk_p"], "risk_q": last["risk_q"],
               "wrr": last["risk_p"] + last["w_marginal"], "entangle_y": last["entangle_y"]}
        if args.format == "json":
            sys.stdout.write(json.dumps(row) + "\n")
        else:
            sys.stdout.write(",".join(row) + "\n")
            sys.stdout.write(",".join(v if isinstance(v, str) else repr(float(v)) for v in row.values()) + "\n")
    if not args.out:
        sys.stdout.write(hist)
    return EXIT_OK


def cmd_gaussian(args):
    spec = _load_json(args.config) if args.config else True
    tol = B.DEFAULT_TOL if args.tolerance is None else args.tolerance
    reports = _gaussian_reports(spec, args.seed, tol)
    _emit(_report_text(reports, args.format), args)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VIOLATION


def cmd_gen(args):
    cfg = _load_json(args.config) if args.config else None
    if cfg is None:
        raise InputError("gen needs --config")
    sc = _scenario(cfg, args.seed)
    _emit(json.dumps(sc.to_dict()) + "\n", args)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="seed overriding the config")
    common.add_argument("--out", help="output path (default: standard output)")
    common.add_argument("--tolerance", type=float, default=None, help="slack tolerance for bound checks")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers across seeds")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    parser = argparse.ArgumentParser(prog="entangle-ot", description="OT bounds and entanglement diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ot", parents=[common], help="Wasserstein distance between two measure files")
    p.add_argument("mu", nargs="?")
    p.add_argument("nu", nargs="?")
    p.add_argument("--cost", choices=("euclidean", "sqeuclidean"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--method", help="exact, sinkhorn or sinkhorn:<eps>")
    p.add_argument("--coupling-out", help="write the optimal plan as JSON")
    p.set_defaults(func=cmd_ot)
    sub.add_parser("verify", parents=[common], help="certify bounds on a scenario").set_defaults(func=cmd_verify)
    sub.add_parser("train", parents=[common], help="train a classifier").set_defaults(func=cmd_train)
    sub.add_parser("entangle", parents=[common], help="one-shot entanglement report").set_defaults(func=cmd_entangle)
    sub.add_parser("gaussian", parents=[common], help="scaled-covariance Gaussian check").set_defaults(func=cmd_gaussian)
    sub.add_parser("gen", parents=[common], help="export a generated scenario").set_defaults(func=cmd_gen)
    return parser


def _setup_logging():
    level = os.environ.get("ENTANGLE_OT_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Diverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InputError, ConfigInvalid, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EntangleOTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
