import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment

from factories import random_layout, random_primitive
from oracles import brute_force_assignment
from primscene.categories import CATEGORIES
from primscene.exceptions import (
    ConfigError,
    InvalidCostError,
    InvalidProbabilityError,
    InvalidVarianceError,
)
from primscene.matching import (
    LossWeightTable,
    MatchWeights,
    bce,
    cost_matrix,
    ground_loss,
    hungarian,
    kl_loss,
    load_weight_table,
    match_category,
    match_cost,
    object_loss,
    object_loss_batch,
)
from primscene.scene import SceneLayout, ScenePrimitive, pad_layout


def as_prediction(layout, rng=None):
    """Ground truth turned into a confident prediction, optionally shuffled per category."""
    prims = []
    for group in layout.by_category().values():
        group = [dataclasses.replace(p, confidence=float(p.exists)) for p in group]
        if rng is not None:
            group = [group[i] for i in rng.permutation(len(group))]
        prims.extend(group)
    return SceneLayout(layout.pose_id, layout.ground, prims)


class TestHungarian:
    @given(st.integers(1, 6).flatmap(
        lambda n: arrays(np.float64, (n, n), elements=st.floats(-50, 50, allow_nan=False))))
    @settings(max_examples=200, deadline=None)
    def test_optimal_cost_matches_scipy(self, cost):
        res = hungarian(cost)
        rows, cols = linear_sum_assignment(cost)
        assert res.cost == pytest.approx(cost[rows, cols].sum(), abs=1e-9)
        assert sorted(res.sigma.tolist()) == list(range(len(cost)))

    @given(st.integers(1, 6).flatmap(
        lambda n: arrays(np.int64, (n, n), elements=st.integers(0, 3))))
    @settings(max_examples=300, deadline=None)
    def test_lexicographic_tie_break(self, cost):
        best, perm = brute_force_assignment(cost)
        res = hungarian(cost.astype(float))
        assert res.cost == best
        assert res.sigma.tolist() == perm.tolist()

    def test_six_by_six(self):
        cost = np.array([
            [7, 53, 183, 439, 863, 497],
            [497, 383, 563, 79, 973, 287],
            [287, 63, 343, 169, 583, 327],
            [627, 343, 773, 959, 943, 767],
            [767, 473, 103, 699, 303, 637],
            [637, 943, 123, 769, 353, 903],
        ], float)
        best, perm = brute_force_assignment(cost)
        res = hungarian(cost)
        assert res.cost == best and res.sigma.tolist() == perm.tolist()

    def test_all_equal_gives_identity(self):
        assert hungarian(np.ones((5, 5))).sigma.tolist() == [0, 1, 2, 3, 4]

    def test_empty(self):
        res = hungarian(np.zeros((0, 0)))
        assert res.cost == 0.0 and len(res.sigma) == 0

    @pytest.mark.parametrize("cost, err", [
        (np.zeros((2, 3)), ConfigError),
        (np.zeros(3), ConfigError),
        (np.array([[0.0, np.nan], [1.0, 0.0]]), InvalidCostError),
        (np.array([[0.0, np.inf], [1.0, 0.0]]), InvalidCostError),
    ])
    def test_errors(self, cost, err):
        with pytest.raises(err):
            hungarian(cost)


class TestBCE:
    def test_values(self):
        np.testing.assert_allclose(bce([1.0, 0.0, 1.0], [0.5, 0.5, 0.9]),
                                   [np.log(2), np.log(2), -np.log(0.9)])

    def test_clamped_extremes(self):
        assert bce(1.0, 0.0) == pytest.approx(-np.log(1e-7))
        assert bce(0.0, 0.0) == pytest.approx(1e-7, rel=1e-3)

    @pytest.mark.parametrize("q", [-0.1, 1.5, np.nan])
    def test_rejects_bad_probabilities(self, q):
        with pytest.raises(InvalidProbabilityError):
            bce(1.0, q)


class TestCosts:
    def test_pad_against_absent_prediction_costs_nothing(self):
        pred = ScenePrimitive("VS", (3, 1, 0), (1, 0, 1, 0, 0, 1), exists=1, confidence=0.0)
        assert match_cost(ScenePrimitive.pad("VS"), pred) == pytest.approx(0.0, abs=1e-5)

    def test_hand_computed(self):
        gt = ScenePrimitive("P", (1, 2, 3), (1, 0, 1, 0, 0, 1))
        pred = ScenePrimitive("P", (1.5, 2, 2), (2, 0.5, 1, 0, 0, 1), confidence=0.8)
        expected = 6 * -np.log(0.8) + 3 * 1.5 + 3 * 1.5
        assert match_cost(gt, pred) == pytest.approx(expected)
        assert match_cost(gt, pred, MatchWeights(1, 0, 0)) == pytest.approx(-np.log(0.8))

    def test_cost_matrix_agrees_with_pairwise(self, rng):
        gt = [random_primitive(rng, "CB") for _ in range(3)] + [ScenePrimitive.pad("CB")]
        pred = [random_primitive(rng, "CB", confidence=float(rng.random())) for _ in range(4)]
        m = cost_matrix(gt, pred)
        for i, g in enumerate(gt):
            for j, p in enumerate(pred):
                assert m[i, j] == pytest.approx(match_cost(g, p))

    def test_mismatched_categories(self, rng):
        with pytest.raises(ConfigError):
            match_cost(random_primitive(rng, "P"), random_primitive(rng, "O"))
        with pytest.raises(ConfigError):
            match_category([random_primitive(rng, "P")], [])

    def test_permuted_prediction_recovered(self, rng):
        gt = [random_primitive(rng, "O") for _ in range(5)]
        perm = rng.permutation(5)
        pred = [dataclasses.replace(gt[k], confidence=1.0) for k in perm]
        sigma = match_category(gt, pred).sigma
        assert np.array_equal(perm[sigma], np.arange(5))


class TestObjectLoss:
    def test_group_weights(self):
        table = LossWeightTable()
        assert table.for_category("VE") == MatchWeights(5, 15, 12)
        assert table.for_category("P") == MatchWeights(3, 9, 7)
        assert table.for_category("H") == MatchWeights(1, 3, 2)
        assert table.match == MatchWeights(6, 3, 3)

    def test_exact_prediction_near_zero(self, rng):
        gt = pad_layout(random_layout(rng, n_prims=30, pads=False))
        loss = object_loss(gt, as_prediction(gt, rng))
        present = {p.category for p in gt.real_primitives()}
        assert set(loss.per_category) == present
        # only the clamped BCE floor remains, once per slot
        table = LossWeightTable()
        n_real = {c: sum(p.category == c for p in gt.real_primitives()) for c in present}
        floor = sum(table.for_category(c.code).prob * c.count * 1e-7 / n_real[c.code]
                    for c in CATEGORIES if c.code in present)
        assert loss.total == pytest.approx(floor, rel=1e-3)

    def test_hand_computed_single_category(self):
        gt = pad_layout(SceneLayout(primitives=[ScenePrimitive("P", (1, 0, 0), (1, 0, 1, 0, 0, 1))]))
        moved = ScenePrimitive("P", (1.2, 0, 0), (1, 0, 1, 0, 0, 1), confidence=1.0)
        pred = as_prediction(pad_layout(SceneLayout(primitives=[moved])))
        # medium group: centre weight 9; the other slots are pad against pad
        n_pad = next(c.count for c in CATEGORIES if c.code == "P") - 1
        expected = 9 * 0.2 + (3 + 3 * n_pad) * 1e-7
        assert object_loss(gt, pred).per_category["P"] == pytest.approx(expected, rel=1e-4)

    def test_missing_prediction_costs_bce(self):
        gt = pad_layout(SceneLayout(primitives=[ScenePrimitive("H", (1, 0, 0), (1, 0, 1, 0, 0, 1))]))
        pred = as_prediction(pad_layout(SceneLayout()))
        # one real object matched to an empty slot, low group (1, 3, 2):
        # BCE at the clamp, centre L1 of 1 and Cholesky L1 of 3 against zero geometry
        n_pad = next(c.count for c in CATEGORIES if c.code == "H") - 1
        expected = -np.log(1e-7) + 3 * 1.0 + 2 * 3.0 + n_pad * 1e-7
        assert object_loss(gt, pred).total == pytest.approx(expected, rel=1e-6)

    def test_unpadded_rejected(self, rng):
        layout = random_layout(rng, n_prims=5, pads=False)
        with pytest.raises(ConfigError):
            object_loss(layout, layout)

    def test_batch_mean(self, rng):
        gts = [pad_layout(random_layout(rng, n_prims=8, pads=False)) for _ in range(3)]
        preds = [pad_layout(random_layout(rng, n_prims=8, pads=False, with_confidence=True))
                 for _ in range(3)]
        each = [object_loss(g, p).total for g, p in zip(gts, preds)]
        assert object_loss_batch(gts, preds) == pytest.approx(np.mean(each))
        with pytest.raises(ConfigError):
            object_loss_batch([], [])


class TestGroundAndKL:
    def test_uniform_height_error(self):
        B = np.zeros((8, 8, 5))
        B[..., :2] = 1
        H = np.random.default_rng(0).normal(size=B.shape)
        assert ground_loss(H, B, H + 0.1, B) == pytest.approx(0.9, abs=1e-6)

    def test_height_ignores_unoccupied(self):
        B = np.zeros((4, 4, 5))
        B[0, 0, 0] = 1
        H_hat = np.full(B.shape, 100.0)
        H_hat[0, 0, 0] = 0.5
        assert ground_loss(np.zeros(B.shape), B, H_hat, B) == pytest.approx(4.5, abs=1e-6)

    def test_occupancy_term(self):
        B = np.ones((2, 2, 5))
        table = LossWeightTable(occupancy=2.0, height=0.0)
        assert ground_loss(np.zeros(B.shape), B, np.zeros(B.shape), B * 0.5, table) \
            == pytest.approx(2 * np.log(2))

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            ground_loss(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))

    def test_kl_unit_case(self):
        mu, var = np.ones((4, 4, 64)), np.ones((4, 4, 64))
        assert kl_loss(mu, var) == pytest.approx(32e-6)
        assert kl_loss(mu, var, weight=1.0) == pytest.approx(32.0)
        assert kl_loss(np.zeros((3, 8)), np.ones((3, 8))) == 0.0

    @given(arrays(np.float64, (3, 5), elements=st.floats(-3, 3)),
           arrays(np.float64, (3, 5), elements=st.floats(0.05, 5)))
    @settings(max_examples=100, deadline=None)
    def test_kl_non_negative(self, mu, var):
        assert kl_loss(mu, var, weight=1.0) >= -1e-12

    @pytest.mark.parametrize("var", [0.0, -1.0, np.nan])
    def test_kl_rejects_bad_variance(self, var):
        with pytest.raises(InvalidVarianceError):
            kl_loss(np.zeros(3), np.array([1.0, var, 1.0]))


class TestWeightTable:
    def test_json_round_trip(self, tmp_path):
        table = LossWeightTable(occupancy=2.0, kl=1e-5)
        path = tmp_path / "w.json"
        path.write_text(json.dumps(table.to_dict()))
        assert load_weight_table(path) == table

    def test_partial_override(self, tmp_path):
        path = tmp_path / "w.json"
        path.write_text(json.dumps({"groups": {"low": [2, 2, 2]}, "ground": {"height": 1}}))
        table = load_weight_table(path)
        assert table.groups["low"] == MatchWeights(2, 2, 2)
        assert table.groups["high"] == MatchWeights(5, 15, 12) and table.height == 1.0

    @pytest.mark.parametrize("text", ["{not json", '{"groups": {"low": [1, 2]}}',
                                      '{"match": [1, -1, 1]}'])
    def test_bad_tables(self, tmp_path, text):
        path = tmp_path / "w.json"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_weight_table(path)
