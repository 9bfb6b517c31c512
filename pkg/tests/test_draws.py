import numpy as np
import pytest

from vcbart.draws import DrawRecord, PackedForest, PosteriorDraws
from vcbart.trees import (PolynomialSplitPrior, RegressionTree,
                          encode_regression_tree, sample_tree_structure)


def random_forest(n_trees, rng, R=3):
    theta = np.full(R, 1 / R)
    out = []
    for _ in range(n_trees):
        structure = sample_tree_structure(PolynomialSplitPrior(), theta, rng)
        out.append(RegressionTree(structure,
                                  rng.standard_normal(structure.n_leaves)))
    return out


def test_packed_forest_round_trips_and_sums():
    rng = np.random.default_rng(0)
    trees = random_forest(12, rng)
    packed = PackedForest.from_trees(trees)
    assert packed.n_trees == 12

    Z = rng.uniform(size=(400, 3))
    want = np.zeros(400)
    for i in range(400):
        want[i] = sum(t.evaluate(Z[i]) for t in trees)
    np.testing.assert_allclose(packed.evaluate_sum(Z), want, atol=1e-12)

    back = packed.to_trees()
    assert [encode_regression_tree(t) for t in back] == \
        [encode_regression_tree(t) for t in trees]


def test_packed_forest_handles_root_only_trees():
    rng = np.random.default_rng(1)
    trees = [RegressionTree(sample_tree_structure(
        PolynomialSplitPrior(), np.array([1.0]), rng,
        max_depth=0), np.array([2.5]))]
    packed = PackedForest.from_trees(trees)
    Z = rng.uniform(size=(5, 1))
    np.testing.assert_allclose(packed.evaluate_sum(Z), 2.5)


def make_draws(n_records, seed=0, meta=None):
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n_records):
        forests = [PackedForest.from_trees(random_forest(2, rng))
                   for _ in range(2)]
        records.append(DrawRecord(
            forests=forests,
            sigma=float(rng.uniform(0.5, 1.5)),
            split_probs=[np.full(3, 1 / 3)] * 2,
            concentrations=[1.0, 2.0],
            concentration_index=[50, 60],
            split_count_matrix=np.zeros((2, 3), dtype=np.int64),
        ))
    base_meta = {"p": 1, "R": 3, "n_trees": 2, "y_mean": 1.0, "y_sd": 2.0,
                 "z_min": [0.0, 0.0, 0.0], "z_max": [1.0, 1.0, 1.0]}
    base_meta.update(meta or {})
    return PosteriorDraws(records, base_meta)


def test_sigma_reporting_undoes_standardization():
    d = make_draws(4)
    raw = np.array([r.sigma for r in d.records])
    np.testing.assert_allclose(d.sigmas(), raw * 2.0)


def test_merge_concatenates_records_and_checks_meta():
    a, b = make_draws(3, seed=1), make_draws(2, seed=2)
    merged = PosteriorDraws.merge([a, b])
    assert merged.n_draws == 5
    assert merged.n_ensembles == 2

    odd = make_draws(2, seed=3, meta={"R": 4, "z_min": [0.0] * 4,
                                      "z_max": [1.0] * 4})
    with pytest.raises(Exception):
        PosteriorDraws.merge([a, odd])


def test_scale_z_applies_training_affine_map_with_clipping():
    d = make_draws(1, meta={"z_min": [0.0, 10.0, 0.0],
                            "z_max": [1.0, 30.0, 1.0]})
    z = np.array([[0.5, 20.0, 2.0]])
    scaled = d.scale_z(z)
    np.testing.assert_allclose(scaled, [[0.5, 0.5, 1.0]])
