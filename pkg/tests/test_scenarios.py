import json

import numpy as np
import pytest

from entangle_ot.errors import ConfigInvalid
from entangle_ot.measures import euclidean_loss, label_marginal
from entangle_ot.bounds import chain_links
from entangle_ot.scenarios import ShiftConfig, class_counts, default_means, generate


def test_same_seed_same_data():
    cfg = ShiftConfig(kind="covariate", seed=7, translation=[1.0, 0.0])
    a, b = generate(cfg), generate(cfg)
    np.testing.assert_array_equal(a.source.inputs, b.source.inputs)
    np.testing.assert_array_equal(a.target.inputs, b.target.inputs)
    c = generate(ShiftConfig(kind="covariate", seed=8, translation=[1.0, 0.0]))
    assert not np.array_equal(a.source.inputs, c.source.inputs)


def test_class_counts_largest_remainder():
    assert class_counts(np.array([0.2, 0.8]), 10).tolist() == [2, 8]
    assert class_counts(np.array([1 / 3] * 3), 10).sum() == 10


def test_label_shift_weights():
    sc = generate(ShiftConfig(kind="label_shift", source_weights=[0.5, 0.5], target_weights=[0.2, 0.8],
                              points_per_domain=100))
    np.testing.assert_allclose(label_marginal(sc.source).weights, [0.5, 0.5])
    np.testing.assert_allclose(label_marginal(sc.target).weights, [0.2, 0.8])


def test_covariate_translation_moves_means():
    sc = generate(ShiftConfig(kind="covariate", translation=[4.0, 0.0], points_per_domain=2000))
    diff = sc.target.inputs.mean(0) - sc.source.inputs.mean(0)
    np.testing.assert_allclose(diff, [4.0, 0.0], atol=0.15)


def test_entangling_swaps_chosen_coordinates():
    cfg = ShiftConfig(kind="entangling", class_means=[[-3, -1], [3, 1]], swap_dims=[1], points_per_domain=4000)
    sc = generate(cfg)
    for y, expected in ((0, [-3, 1]), (1, [3, -1])):
        got = sc.target.inputs[sc.target.labels == y].mean(0)
        np.testing.assert_allclose(got, expected, atol=0.15)


@pytest.mark.parametrize("s", [1, 2, 5])
def test_gradual_chain_links_below_epsilon(s):
    sc = generate(ShiftConfig(kind="gradual", s=s, epsilon=0.05, points_per_domain=50, translation=[1.0, 0.0]))
    assert sc.chain.s == s
    np.testing.assert_allclose(sc.chain.mixture, np.full(s, 1 / s))
    links = chain_links(sc.chain, lambda x: x, euclidean_loss())
    assert np.all(links < 0.05)
    assert len(sc.target) == s * len(sc.source)


def test_default_means_are_spread():
    m = default_means(3, 2, 3.0)
    d = np.linalg.norm(m[:, None] - m[None], axis=-1)
    assert d[~np.eye(3, dtype=bool)].min() > 1.0


def test_config_validation(tmp_path):
    with pytest.raises(ConfigInvalid):
        ShiftConfig(kind="sideways")
    with pytest.raises(ConfigInvalid):
        ShiftConfig(target_weights=[0.5, 0.6])
    with pytest.raises(ConfigInvalid):
        ShiftConfig(kind="gradual", s=3, a=0.2)
    with pytest.raises(ConfigInvalid):
        ShiftConfig.from_dict({"kind": "covariate", "colour": 1})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"kind": "label_shift", "seed": 3}))
    assert ShiftConfig.load(path).seed == 3


def test_scenario_serializes():
    sc = generate(ShiftConfig(kind="gradual", s=2, points_per_domain=10))
    d = json.loads(json.dumps(sc.to_dict()))
    assert len(d["chain"]) == 3 and len(d["mixture"]) == 2
