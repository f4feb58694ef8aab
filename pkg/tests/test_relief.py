"""Tests for extreme/typical tagging and Relief feature weights."""
# pylint: disable=missing-function-docstring  # test names are self-documenting

import json
import logging

import numpy as np
import pytest

from src.errors import EmptyCategoryError
from src.features import (
    Category,
    CategoryTag,
    FeatureVector,
    fit_threshold,
    optimize_weights,
    tag_categories,
)


def _tagged(a_rows, b_rows):
    """Feature vectors and tags with B points first (indices 0..) then A points."""
    rows = [*b_rows, *a_rows]
    vectors = [FeatureVector(r, i) for i, r in enumerate(rows)]
    tags = [
        CategoryTag(i, 0.0, Category.B_TYPICAL if i < len(b_rows) else Category.A_EXTREME)
        for i in range(len(rows))
    ]
    return vectors, tags


def _twins(rng, theta, n_b=40, n_a=10, offset=3.0, noise=1e-3, dim=9):
    b_rows = rng.normal(size=(n_b, dim))
    a_rows = b_rows[:n_a].copy() + rng.normal(0.0, noise, size=(n_a, dim))
    a_rows[:, theta] += offset
    return a_rows, b_rows


def _brute_force_z(a_rows, b_rows):
    z = np.zeros(a_rows.shape[1])
    for a in a_rows:
        dists = [np.sum(np.abs(a - b)) for b in b_rows]
        j = int(np.argmin(dists))
        z += np.abs(a - b_rows[j])
    return z


def _projected_gradient_ascent(z, steps=500, lr=1.0):
    w = np.full(z.size, 1.0 / np.sqrt(z.size))
    for _ in range(steps):
        w = np.clip(w + lr * z, 0.0, None)
        w = w / np.linalg.norm(w)
    return w


class TestTagCategories:

    def test_constant_residual_all_typical(self, caplog):
        with caplog.at_level(logging.WARNING):
            tags = tag_categories(np.full(20, 4.0), 0.9)
        assert all(t.category == Category.B_TYPICAL for t in tags)
        assert "zero variance" in caplog.text

    def test_returns_indices_from_one(self, rng):
        tags = tag_categories(rng.normal(size=30), 0.9)
        assert [t.index for t in tags] == list(range(1, 30))

    def test_outlier_difference_is_extreme(self, rng):
        delta = rng.normal(size=200)
        delta[50] = 30.0
        residual = np.concatenate([[0.0], np.cumsum(delta)])
        tags = tag_categories(residual, 0.95)
        assert tags[50].index == 51
        assert tags[50].is_extreme
        assert tags[50].delta_y == pytest.approx(30.0)

    def test_xi_near_one_tags_nothing(self, rng):
        tags = tag_categories(np.cumsum(rng.normal(size=100)), 0.999999)
        assert not any(t.is_extreme for t in tags)

    def test_threshold_quantile(self, rng):
        threshold = fit_threshold(rng.normal(size=50), 0.95)
        assert threshold.z == pytest.approx(1.959964, abs=1e-5)

    def test_threshold_round_trip(self, rng):
        threshold = fit_threshold(rng.normal(size=50), 0.9)
        again = type(threshold).from_dict(threshold.to_dict())
        assert again == threshold

    @pytest.mark.parametrize("xi", [0.0, 1.0, -0.5])
    def test_invalid_xi(self, xi):
        with pytest.raises(ValueError):
            tag_categories(np.arange(10.0), xi)

    def test_too_short(self):
        with pytest.raises(ValueError):
            tag_categories([1.0, 2.0], 0.9)


class TestOptimizeWeights:

    def test_single_separating_dimension(self, rng):
        b_rows = rng.normal(size=(20, 9))
        a_rows = b_rows[:5].copy()
        a_rows[:, 0] += 2.0
        result = optimize_weights(*_tagged(a_rows, b_rows))
        np.testing.assert_allclose(result.weights.w, np.eye(9)[0], atol=1e-12)

    def test_identical_categories_fall_back_to_uniform(self, rng, caplog):
        rows = rng.normal(size=(6, 4))
        with caplog.at_level(logging.WARNING):
            result = optimize_weights(*_tagged(rows[:3], rows[:3]))
        np.testing.assert_allclose(result.weights.w, np.full(4, 0.5))
        assert result.fallback
        assert "uniform" in caplog.text

    def test_three_four_margins(self):
        result = optimize_weights(*_tagged([[3.0, 4.0]], [[0.0, 0.0]]), standardize=False)
        np.testing.assert_allclose(result.weights.w, [0.6, 0.8])
        np.testing.assert_allclose(result.margins, [3.0 * 0.6 + 4.0 * 0.8])

    def test_empty_category(self, rng):
        rows = rng.normal(size=(5, 3))
        vectors = [FeatureVector(r, i) for i, r in enumerate(rows)]
        tags = [CategoryTag(i, 0.0, Category.B_TYPICAL) for i in range(5)]
        with pytest.raises(EmptyCategoryError):
            optimize_weights(vectors, tags)

    def test_untagged_features_ignored(self, rng):
        vectors, tags = _tagged([[3.0, 4.0]], [[0.0, 0.0]])
        vectors.append(FeatureVector([100.0, -100.0], 99))
        result = optimize_weights(vectors, tags, standardize=False)
        np.testing.assert_allclose(result.weights.w, [0.6, 0.8])

    def test_nearest_tie_goes_to_lowest_index(self):
        result = optimize_weights(*_tagged([[1.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]]), standardize=False)
        assert result.neighbour_indices == (0,)
        assert result.extreme_indices == (2,)

    def test_constraints_hold(self, rng):
        for _ in range(20):
            a_rows, b_rows = rng.normal(size=(5, 9)), rng.normal(size=(15, 9))
            result = optimize_weights(*_tagged(a_rows, b_rows))
            assert np.linalg.norm(result.weights.w) == pytest.approx(1.0, abs=1e-9)
            assert np.all(result.weights.w >= 0)
            assert np.all(result.margins >= 0)

    def test_matches_projected_gradient_ascent(self, rng):
        for _ in range(50):
            a_rows = rng.normal(size=(int(rng.integers(1, 8)), 9))
            b_rows = rng.normal(size=(int(rng.integers(1, 12)), 9))
            result = optimize_weights(*_tagged(a_rows, b_rows), standardize=False)
            expected = _projected_gradient_ascent(_brute_force_z(a_rows, b_rows))
            np.testing.assert_allclose(result.weights.w, expected, atol=1e-6)

    def test_dominant_dimension(self, rng):
        theta = 6
        result = optimize_weights(*_tagged(*_twins(rng, theta)))
        assert result.weights.w[theta] >= 0.9

    def test_scale_equivariance(self, rng):
        a_rows, b_rows = rng.normal(size=(6, 9)), rng.normal(size=(20, 9))
        base = optimize_weights(*_tagged(a_rows, b_rows), standardize=False)
        scaled = optimize_weights(*_tagged(a_rows * 7.5, b_rows * 7.5), standardize=False)
        np.testing.assert_allclose(scaled.weights.w, base.weights.w, atol=1e-12)

    def test_monotone_in_gap(self, rng):
        theta = 2
        b_rows = rng.normal(0.0, 10.0, size=(30, 9))
        a_rows = b_rows[:6] + rng.normal(0.0, 0.5, size=(6, 9))
        before = optimize_weights(*_tagged(a_rows, b_rows), standardize=False)
        wider = a_rows.copy()
        wider[:, theta] += 0.5 * np.sign(a_rows[:, theta] - b_rows[:6, theta])
        after = optimize_weights(*_tagged(wider, b_rows), standardize=False)
        assert after.neighbour_indices == before.neighbour_indices
        assert after.weights.w[theta] >= before.weights.w[theta]

    def test_json_dump(self, rng, tmp_path):
        result = optimize_weights(*_tagged(*_twins(rng, 1)))
        path = tmp_path / "relief.json"
        result.save(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data["xi"] == 0.9
        assert len(data["weights"]) == 9
        assert len(data["margins"]) == 10
        assert {"index", "nearest_typical", "margin"} <= set(data["margins"][0])
