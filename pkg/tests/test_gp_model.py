"""Tests for covariance construction, the NLML objective, fitting and pruning."""
# pylint: disable=missing-function-docstring  # test names are self-documenting

import math

import numpy as np
import pytest

from src.errors import CovarianceError, FitError
from src.features import Category, CategoryTag, FeatureScaler, FeatureVector, FeatureWeights
from src.gp import (
    FegpModel,
    FitOptions,
    Hyperparams,
    KernelKind,
    Optimizer,
    PrunePolicy,
    TrainingWindow,
    build_covariance,
    fit,
    fit_with_trace,
    kernel,
    load_model,
    nlml,
    nlml_and_grad,
    noise_estimate,
    prune,
    save_model,
)
from src.gp.model import factorize
from src.gp.posterior import predict_fegp

FE = KernelKind.FEATURE_EMBEDDED


def _window(rng, n, dim=9, mean=0.0):
    return TrainingWindow(np.arange(n), rng.normal(size=n), rng.normal(size=(n, dim)), mean)


def _weights(rng, dim=9):
    v = np.abs(rng.normal(size=dim)) + 1e-3
    return FeatureWeights(v / np.linalg.norm(v))


def _prior_sample(seed, n=200, sigma=1.0, beta=1.0, sigma_n=0.2):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 8.0, size=(n, 2))
    w = FeatureWeights.uniform(2)
    window = TrainingWindow(np.arange(n), np.zeros(n), x)
    cov = build_covariance(window, w, Hyperparams(sigma, beta, sigma_n))
    y = np.linalg.cholesky(cov) @ rng.normal(size=n)
    return TrainingWindow(np.arange(n), y, x), w


class TestTrainingWindow:

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            TrainingWindow([0, 1], [1.0], [[0.0], [1.0]])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            TrainingWindow([], [], np.zeros((0, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            TrainingWindow([0], [np.nan], [[0.0]])

    def test_append(self, rng):
        window = _window(rng, 3)
        longer = window.append(FeatureVector(np.ones(9), 7), 2.5)
        assert list(longer.indices) == [0, 1, 2, 7]
        assert longer.targets[-1] == 2.5
        assert len(window) == 3

    def test_append_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            _window(rng, 3).append(FeatureVector(np.ones(4), 7), 1.0)

    def test_position(self, rng):
        window = TrainingWindow([5, 9, 12], [1.0, 2.0, 3.0], rng.normal(size=(3, 2)))
        assert window.position(9) == 1
        with pytest.raises(ValueError):
            window.position(10)


class TestBuildCovariance:

    def test_single_point(self, rng):
        h = Hyperparams(1.5, 1.0, 0.3)
        cov = build_covariance(_window(rng, 1), _weights(rng), h)
        np.testing.assert_allclose(cov, [[1.5**2 + 0.3**2]])

    def test_duplicate_rows_need_jitter(self):
        h = Hyperparams(1.0, 1.0, 0.0)
        window = TrainingWindow([0, 1], [1.0, 1.0], [[0.5, 0.5], [0.5, 0.5]])
        raw = np.ones((2, 2))
        assert factorize(raw, h.signal_var).jitter > 0
        cov = build_covariance(window, FeatureWeights.uniform(2), h)
        assert cov[0, 0] > 1.0
        assert cov[0, 0] - 1.0 <= 1e-6
        assert cov[0, 1] == 1.0

    def test_indefinite_matrix_raises(self):
        with pytest.raises(CovarianceError):
            factorize(np.array([[1.0, 2.0], [2.0, 1.0]]), 1.0)

    def test_matches_kernel_entrywise(self, rng):
        h = Hyperparams(1.2, 1.7, 0.4)
        w = _weights(rng)
        window = _window(rng, 8)
        cov = build_covariance(window, w, h)
        vectors = window.feature_vectors()
        for i in range(8):
            for j in range(8):
                expected = kernel(vectors[i], vectors[j], w, h) + (h.noise_var if i == j else 0.0)
                assert cov[i, j] == pytest.approx(expected, rel=1e-14, abs=0)

    def test_symmetric(self, rng):
        cov = build_covariance(_window(rng, 12), _weights(rng), Hyperparams(1.0, 2.0, 0.1))
        assert np.max(np.abs(cov - cov.T)) == 0.0

    def test_naive_kind_uses_time(self):
        h = Hyperparams(1.0, 2.0, 0.0)
        window = TrainingWindow([0, 2], [0.0, 0.0], [[9.0], [-9.0]])
        cov = build_covariance(window, None, h, KernelKind.NAIVE_TIME)
        assert cov[0, 1] == pytest.approx(math.exp(-4.0 / 8.0))


class TestNlml:

    def test_single_point_at_mean(self):
        h = Hyperparams(1.3, 1.0, 0.2)
        window = TrainingWindow([0], [0.7], [[1.0]], mean=0.7)
        assert nlml(window, FeatureWeights([1.0]), h) == pytest.approx(math.log(1.3**2 + 0.2**2))

    def test_single_point_residual(self):
        h = Hyperparams(1.3, 1.0, 0.2)
        c = 1.3**2 + 0.2**2
        window = TrainingWindow([0], [2.5], [[1.0]], mean=1.0)
        assert nlml(window, FeatureWeights([1.0]), h) == pytest.approx(1.5**2 / c + math.log(c))

    def test_two_independent_points(self):
        h = Hyperparams(1.0, 0.1, 0.5)
        c = 1.0 + 0.25
        window = TrainingWindow([0, 1], [1.0, -2.0], [[0.0], [1e3]])
        expected = (1.0 / c + math.log(c)) + (4.0 / c + math.log(c))
        assert nlml(window, FeatureWeights([1.0]), h) == pytest.approx(expected)

    def test_gradient_matches_finite_differences(self, rng):
        step = 1e-5
        for _ in range(50):
            n = int(rng.integers(2, 16))
            window = _window(rng, n, dim=3, mean=float(rng.normal()))
            w = _weights(rng, 3)
            theta = np.log([rng.uniform(0.5, 2.0), rng.uniform(0.5, 3.0), rng.uniform(0.2, 1.0)])
            value, grad = nlml_and_grad(theta, window, w)
            assert value == pytest.approx(nlml(window, w, Hyperparams.from_log(theta)))
            fd = np.zeros(3)
            for k in range(3):
                e = np.zeros(3)
                e[k] = step
                fd[k] = (nlml_and_grad(theta + e, window, w)[0] - nlml_and_grad(theta - e, window, w)[0]) / (2 * step)
            np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-6)

    def test_gradient_with_fixed_noise(self, rng):
        window = _window(rng, 10, dim=2)
        w = _weights(rng, 2)
        theta = np.log([1.2, 0.9])
        _, grad = nlml_and_grad(theta, window, w, fixed_noise=0.3)
        assert grad.shape == (2,)
        step = 1e-5
        e = np.array([step, 0.0])
        fd = (nlml_and_grad(theta + e, window, w, fixed_noise=0.3)[0]
              - nlml_and_grad(theta - e, window, w, fixed_noise=0.3)[0]) / (2 * step)
        assert grad[0] == pytest.approx(fd, rel=1e-4)


class TestFit:

    @pytest.mark.slow
    def test_recovers_prior_parameters(self):
        truth = np.log([1.0, 1.0, 0.2])
        successes = 0
        for seed in range(5):
            window, w = _prior_sample(seed)
            h = fit(window, w, FE, FitOptions(restarts=5, seed=seed))
            if np.all(np.abs(h.to_log() - truth) <= 0.3):
                successes += 1
        assert successes >= 4

    def test_never_worse_than_start(self, rng):
        window = _window(rng, 40, dim=4)
        result = fit_with_trace(window, _weights(rng, 4), FE, FitOptions(restarts=3))
        assert result.objective <= result.start_objective
        finished = [o.objective for o in result.restarts if o.objective is not None]
        assert result.objective == min(finished)

    def test_restart_from_optimum_is_fixed_point(self):
        window, w = _prior_sample(0, n=60)
        first = fit_with_trace(window, w, FE, FitOptions(restarts=3))
        again = fit_with_trace(window, w, FE, FitOptions(restarts=1), start=first.hyper)
        assert abs(again.objective - first.objective) <= 1e-6 * max(1.0, abs(first.objective))

    def test_gradient_descent_descends(self):
        window, w = _prior_sample(1, n=50)
        opts = FitOptions(restarts=2, optimizer=Optimizer.GRADIENT_DESCENT, max_iter=300)
        result = fit_with_trace(window, w, FE, opts)
        assert result.objective <= result.start_objective
        assert math.isfinite(result.objective)

    def test_fixed_noise(self):
        window, w = _prior_sample(2, n=50)
        h = fit(window, w, FE, FitOptions(restarts=1, fix_noise=True))
        assert h.sigma_n == pytest.approx(noise_estimate(window.targets))

    def test_deterministic(self):
        window, w = _prior_sample(3, n=40)
        assert fit(window, w, FE, FitOptions(seed=9)) == fit(window, w, FE, FitOptions(seed=9))

    def test_needs_two_points(self, rng):
        with pytest.raises(FitError):
            fit(_window(rng, 1), _weights(rng), FE)

    def test_naive_kind(self, rng):
        t = np.arange(60)
        window = TrainingWindow(t, np.sin(t / 6.0) + 0.05 * rng.normal(size=60), np.zeros((60, 1)))
        h = fit(window, None, KernelKind.NAIVE_TIME, FitOptions(restarts=2))
        assert h.beta > 1.0
        assert h.sigma_n < 0.5


def _tags(extreme):
    return [CategoryTag(i, 0.0, Category.A_EXTREME if i in extreme else Category.B_TYPICAL) for i in range(30)]


class TestPrune:

    def _window(self, n=30):
        return TrainingWindow(np.arange(n), np.arange(n, dtype=float), np.zeros((n, 1)))

    def test_small_window_unchanged(self):
        window = self._window(5)
        assert prune(window, [], PrunePolicy(max_size=10)) is window

    def test_zero_fraction_truncates(self):
        pruned = prune(self._window(), _tags({0, 1, 2}), PrunePolicy(max_size=10, extreme_keep_fraction=0.0))
        assert list(pruned.indices) == list(range(20, 30))

    def test_extreme_quota_and_fill(self):
        extreme = {1, 4, 7, 10, 13, 16, 19, 29}
        pruned = prune(self._window(), _tags(extreme), PrunePolicy(max_size=10, extreme_keep_fraction=0.5))
        # five most recent extreme points, five most recent typical points
        assert list(pruned.indices) == [10, 13, 16, 19, 24, 25, 26, 27, 28, 29]

    def test_tops_up_with_extreme_points(self):
        extreme = set(range(0, 28))
        pruned = prune(self._window(), _tags(extreme), PrunePolicy(max_size=10, extreme_keep_fraction=0.3))
        assert list(pruned.indices) == list(range(20, 30))

    def test_is_subsequence(self, rng):
        extreme = set(rng.choice(30, 12, replace=False).tolist())
        window = self._window()
        pruned = prune(window, _tags(extreme), PrunePolicy(max_size=11, extreme_keep_fraction=0.7))
        assert len(pruned) == 11
        assert list(pruned.indices) == sorted(pruned.indices)
        assert set(pruned.indices) <= set(window.indices)
        np.testing.assert_array_equal(pruned.targets, pruned.indices.astype(float))


class TestModelSerialization:

    def test_save_and_load(self, rng, tmp_path):
        window = _window(rng, 12)
        scaler = FeatureScaler.fit(window.features)
        model = FegpModel(window, _weights(rng), Hyperparams(1.1, 2.0, 0.3), FE, scaler)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        history = rng.normal(size=8)
        np.testing.assert_allclose(predict_fegp(loaded, history).mus, predict_fegp(model, history).mus, rtol=1e-12)
        assert loaded.kernel_kind == FE

    def test_rejects_unknown_version(self, rng):
        model = FegpModel(_window(rng, 3), _weights(rng), Hyperparams(1.0, 1.0, 0.1))
        data = model.to_dict()
        data["format_version"] = 99
        with pytest.raises(ValueError):
            FegpModel.from_dict(data)

    def test_feature_model_needs_weights(self, rng):
        with pytest.raises(ValueError):
            FegpModel(_window(rng, 3), None, Hyperparams(1.0, 1.0, 0.1))
