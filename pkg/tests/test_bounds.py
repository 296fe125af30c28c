import math

import numpy as np
import pytest

from entangle_ot import bounds as B
from entangle_ot import entangle as E
from entangle_ot.errors import ChainViolation
from entangle_ot.measures import (
    EmpiricalJoint,
    cross_entropy_loss,
    euclidean_loss,
    kronecker_loss,
    squared_euclidean_loss,
)
from entangle_ot.scenarios import ShiftConfig, generate

from conftest import random_joint, random_model


def draws(rng, count, m=2):
    for _ in range(count):
        p = random_joint(rng, int(rng.integers(m, 8)), m)
        q = random_joint(rng, int(rng.integers(m, 8)), m, shift=rng.normal(size=2))
        yield p, q, random_model(rng, 2, m)


@pytest.mark.parametrize("loss", [euclidean_loss(), kronecker_loss()], ids=["euclidean", "kronecker"])
def test_certify_all_random(rng, loss):
    for p, q, f in draws(rng, 40, m=3):
        for r in B.certify_all(p, q, f, loss):
            assert r.passed is not False, (r.bound_id, r.slack)


def test_nonmetric_loss_is_not_applicable(rng):
    p, q, f = next(draws(rng, 1))
    reps = B.certify_all(p, q, f, squared_euclidean_loss())
    ids = {r.bound_id: r for r in reps}
    assert ids["kappa_output_form"].passed
    assert all(r.passed is None for r in reps if not r.bound_id.startswith("kappa"))


def test_kappa_variants_cross_entropy_na(rng):
    p, q, f = next(draws(rng, 1))
    assert all(r.passed is None for r in B.check_kappa_variants(p, q, f, cross_entropy_loss()))


def test_kappa_two_for_squared_distance(rng):
    for p, q, f in draws(rng, 30):
        for r in B.check_kappa_variants(p, q, f, squared_euclidean_loss(), kappa=2.0):
            assert r.passed, (r.bound_id, r.slack)


def test_label_shift_lower_by_hand():
    # outputs equal the one-hot labels; half the source mass moves from e0 to e1
    p = EmpiricalJoint(np.eye(2), [0, 1])
    q = EmpiricalJoint(np.eye(2)[[1, 1]], [1, 1])
    r = B.check_label_shift_lower(p, q, None, euclidean_loss())
    # shift is sqrt(2)/2; bound is 0 risk + sqrt(2)/2 transport + sqrt(2)/2 entanglement
    assert r.lhs == pytest.approx(math.sqrt(2) / 2)
    assert r.rhs == pytest.approx(math.sqrt(2))


def test_not_cc_and_mixed_source():
    p = EmpiricalJoint([[0.0], [1.0], [2.0]], [0, 1, 1], [0.5, 0.25, 0.25])
    q = EmpiricalJoint([[0.0], [1.0]], [0, 1], [0.2, 0.8])
    r = B.mixed_source(p, q)
    np.testing.assert_allclose(r.weights, [0.2, 0.4, 0.4])
    assert B.mixed_source(EmpiricalJoint([[0.0]], [0], num_classes=2), q) is None
    f = lambda x: np.tile([0.5, 0.5], (len(x), 1))  # noqa: E731
    rep = B.check_not_cc(p, q, f, euclidean_loss())
    assert rep.passed
    assert B.check_not_cc(p, q, f, euclidean_loss(), kappa=100.0).passed is None


def test_gradual_checks_and_chain_violation():
    sc = generate(ShiftConfig(kind="gradual", s=2, epsilon=0.05, mean_scale=5.0, points_per_domain=40,
                              seed=0, translation=[1.0, 1.0]))
    f = lambda x: np.tile([0.5, 0.5], (len(x), 1))  # noqa: E731
    assert B.chain_links(sc.chain, f, euclidean_loss()).max() == pytest.approx(0.0)
    loss = euclidean_loss()
    # constant output has risk sqrt(2)/2 > b, so the checks do not apply
    assert B.check_gs_implies_cc(sc.chain, f, loss).passed is None

    def sharp(x):
        return np.eye(2)[(x[:, 0] > 0).astype(int)] * 0.98 + 0.01

    far = B.GradualChain(tuple(sc.chain.stages[:1]) + (EmpiricalJoint(sc.source.inputs * -1, sc.source.labels),),
                         np.array([1.0]), sc.target)
    with pytest.raises(ChainViolation):
        B.check_gs_implies_cc(far, sharp, loss)
    assert B.check_gs_entanglement_cap(sc.source, far, sharp, loss).passed is None


def test_kl_divergence_values():
    assert B.kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert B.kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert B.kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf


def test_quantizer_snaps_to_simplex():
    snap, cells = B.quantizer(4)
    out = snap(np.array([[0.1, 0.9], [0.5, 0.5], [1.0, 0.0]]))
    np.testing.assert_allclose(out.sum(1), 1.0)
    assert cells(np.array([[1.0, 0.0]])).tolist() == [[3, 0]]


def test_kl_corollary_random(rng):
    for p, q, f in draws(rng, 30):
        for r in B.check_kl_corollary(p, q, f, euclidean_loss()):
            assert r.passed, (r.bound_id, r.slack)


def test_report_csv_and_na_row():
    rep = B.make_report("x", 1.0, 2.0, note="a")
    na = B.not_applicable("y", "why")
    text = B.reports_to_csv([rep, na])
    lines = text.strip().split("\n")
    assert lines[0] == "bound_id,lhs,rhs,slack,passed,context"
    assert lines[1] == "x,1.0,2.0,1.0,true,note=a"
    assert lines[2].split(",")[4] == "na"


def test_make_report_tolerance():
    assert B.make_report("x", 1.0 + 5e-8, 1.0).passed
    assert not B.make_report("x", 1.0 + 1e-6, 1.0).passed
    assert B.make_report("x", 5.0, math.inf).slack == math.inf


def test_assumption_params_validation():
    with pytest.raises(ValueError):
        B.AssumptionParams(a=0.1, s=2)
    with pytest.raises(ValueError):
        B.AssumptionParams(kappa=-1)
    with pytest.raises(ValueError):
        B.AssumptionParams(kappa_approx=0.5)


def test_certify_all_rejects_unknown_group(rng):
    p, q, f = next(draws(rng, 1))
    with pytest.raises(ValueError):
        B.certify_all(p, q, f, euclidean_loss(), include=["nope"])


def test_cc_checks_on_shared_conditionals(rng):
    sc = generate(ShiftConfig(kind="label_shift", target_weights=[0.4, 0.6], points_per_domain=60, seed=3))
    f = random_model(rng, 2, 2)
    loss = euclidean_loss()
    assert B.check_cc_to_lje(sc.source, sc.target, f, loss).passed
    assert B.check_cc_oub_tightness(sc.source, sc.target, f, loss).passed
    assert E.label_shift_w1(sc.source, sc.target, loss) == pytest.approx(0.1 * math.sqrt(2))
