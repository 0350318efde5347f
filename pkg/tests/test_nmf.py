import time

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.data.synthetic import SynthConfig, generate
from src.models.matrix import Matrix, frobenius_sq
from src.models.nmf import (
    FactorPair,
    FitConfig,
    RescaleMode,
    default_pattern_labels,
    fit,
    learner_index,
    permute,
    reconstruct,
    rescale,
)


def small_fit_config(**kwargs) -> FitConfig:
    defaults = dict(k=3, seed=0, tol=1e-7, max_iter=300, restarts=2)
    defaults.update(kwargs)
    return FitConfig(**defaults)


class TestFitConfig:
    def test_defaults(self):
        cfg = FitConfig()
        assert cfg.k == 8
        assert cfg.restarts == 10
        assert cfg.rescale_mode is RescaleMode.MAX

    def test_rescale_mode_from_string(self):
        assert FitConfig(rescale_mode="mean").rescale_mode is RescaleMode.MEAN

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"k": 0},
            {"seed": -1},
            {"tol": 0.0},
            {"max_iter": 0},
            {"restarts": 0},
            {"rescale_mode": "median"},
            {"residual_tol": -1e-3},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FitConfig(**kwargs)


class TestFit:
    def test_objective_never_increases(self, synthetic):
        fp = fit(synthetic.x, small_fit_config(restarts=1))
        trace = np.array(fp.objective_trace)
        assert (np.diff(trace) <= 1e-9 * trace[0]).all()

    def test_recovers_noiseless_synthetic_data(self, synthetic, fast_fit):
        fp = fit(synthetic.x, fast_fit)
        assert fp.converged
        assert fp.relative_residual(synthetic.x) <= 1e-2
        assert (fp.p_mat.data >= 0).all() and (fp.a_mat.data >= 0).all()

    def test_rank_one_is_exact(self, rng):
        u, v = rng.random(6) + 0.1, rng.random(9) + 0.1
        x = Matrix(np.outer(u, v))
        fp = fit(x, small_fit_config(k=1, restarts=1))
        assert fp.relative_residual(x) <= 1e-12
        assert fp.converged

    def test_zero_matrix(self):
        fp = fit(Matrix.zeros(4, 5), small_fit_config(k=2))
        assert_array_equal(fp.approximation(), np.zeros((4, 5)))
        assert fp.objective == 0.0
        assert fp.converged
        assert fp.dead_patterns == (0, 1)

    def test_deterministic(self, synthetic, fast_fit):
        first, second = fit(synthetic.x, fast_fit), fit(synthetic.x, fast_fit)
        assert first.p_mat == second.p_mat
        assert first.a_mat == second.a_mat
        assert first.objective_trace == second.objective_trace

    def test_more_restarts_never_worse(self, synthetic):
        one = fit(synthetic.x, small_fit_config(restarts=1))
        three = fit(synthetic.x, small_fit_config(restarts=3))
        assert three.objective <= one.objective

    def test_names_and_labels(self, synthetic, fast_fit):
        fp = fit(synthetic.x, fast_fit)
        assert fp.feature_names == synthetic.x.row_names
        assert fp.learner_ids == synthetic.x.col_names
        assert fp.labels == default_pattern_labels(3) == ("pattern_1", "pattern_2", "pattern_3")

    def test_k_above_bound_names_it(self):
        with pytest.raises(ValueError, match=r"min\(features, learners\)"):
            fit(Matrix(np.ones((3, 5))), small_fit_config(k=4))

    def test_rejects_negative_entries(self):
        values = np.ones((3, 3))
        values[1, 2] = -0.5
        with pytest.raises(ValueError, match="row 1, column 2"):
            fit(Matrix(values), small_fit_config(k=1))

    def test_warm_start_from_true_patterns(self, synthetic):
        fp = fit(synthetic.x, small_fit_config(restarts=1), init_p=synthetic.p_true.data)
        assert fp.relative_residual(synthetic.x) <= 1e-6

    def test_warm_start_shape_is_checked(self, synthetic):
        with pytest.raises(ValueError, match="Initial patterns"):
            fit(synthetic.x, small_fit_config(), init_p=np.ones((2, 2)))

    def test_noiseless_fit_converges_with_default_stopping(self, synthetic):
        fp = fit(synthetic.x, FitConfig(k=3, restarts=2))
        assert fp.converged
        assert fp.n_iter < FitConfig().max_iter

    def test_residual_floor_stops_no_later(self, synthetic):
        loose = fit(synthetic.x, small_fit_config(restarts=1, residual_tol=1e-2))
        exact = fit(synthetic.x, small_fit_config(restarts=1, residual_tol=0.0))
        assert loose.converged
        assert loose.n_iter <= exact.n_iter
        assert loose.objective_trace == exact.objective_trace[: loose.n_iter]


class TestRescale:
    @pytest.fixture
    def raw(self, rng) -> FactorPair:
        a = rng.random((10, 3)) * 4.0
        a[:, 2] = 0.0
        return FactorPair.from_arrays(rng.random((5, 3)), a)

    def test_max_mode(self, raw):
        scaled = rescale(raw, RescaleMode.MAX)
        assert_allclose(scaled.a_mat.data[:, :2].max(axis=0), 1.0)
        assert_allclose(scaled.approximation(), raw.approximation(), rtol=1e-12, atol=1e-14)

    def test_mean_mode(self, raw):
        scaled = rescale(raw, "mean")
        assert_allclose(scaled.a_mat.data[:, :2].mean(axis=0), 1.0)
        assert_allclose(scaled.approximation(), raw.approximation(), rtol=1e-12, atol=1e-14)

    def test_zero_column_is_untouched(self, raw):
        scaled = rescale(raw, RescaleMode.MAX)
        assert_array_equal(scaled.p_mat.data[:, 2], raw.p_mat.data[:, 2])

    def test_none_is_identity(self, raw):
        scaled = rescale(raw, RescaleMode.NONE)
        assert scaled.p_mat == raw.p_mat
        assert scaled.a_mat == raw.a_mat

    def test_idempotent(self, raw):
        once = rescale(raw, RescaleMode.MAX)
        twice = rescale(once, RescaleMode.MAX)
        assert_allclose(twice.p_mat.data, once.p_mat.data, rtol=1e-15)


class TestReconstruct:
    def test_matches_loop_oracle(self, rng):
        p, a = rng.random((6, 3)), rng.random((4, 3))
        fp = FactorPair.from_arrays(p, a, learner_ids=["a", "b", "c", "d"])
        for j in range(4):
            expected = [sum(p[i, k] * a[j, k] for k in range(3)) for i in range(6)]
            assert_allclose(reconstruct(fp, j), expected, rtol=0, atol=1e-12)

    def test_by_learner_id(self, rng):
        fp = FactorPair.from_arrays(rng.random((3, 2)), rng.random((2, 2)), learner_ids=["x", "y"])
        assert_array_equal(reconstruct(fp, "y"), reconstruct(fp, 1))
        assert learner_index(fp, "x") == 0

    def test_positions_start_at_zero(self, rng):
        fp = FactorPair.from_arrays(rng.random((3, 2)), rng.random((4, 2)))
        assert learner_index(fp, 0) == 0
        assert learner_index(fp, 3) == 3
        assert_allclose(reconstruct(fp, 0), fp.p_mat.data @ fp.a_mat.data[0], rtol=1e-15)
        with pytest.raises(ValueError):
            learner_index(fp, 4)

    def test_zero_affinities_give_zero(self, rng):
        a = rng.random((3, 2))
        a[1] = 0.0
        fp = FactorPair.from_arrays(rng.random((4, 2)), a)
        assert_array_equal(reconstruct(fp, 1), np.zeros(4))

    @pytest.mark.parametrize("learner", ["nobody", 5, -1])
    def test_unknown_learner(self, rng, learner):
        fp = FactorPair.from_arrays(rng.random((3, 2)), rng.random((2, 2)), learner_ids=["x", "y"])
        with pytest.raises(ValueError):
            reconstruct(fp, learner)


class TestFactorPair:
    def test_rejects_negative_factors(self):
        with pytest.raises(ValueError, match="Negative entry in patterns"):
            FactorPair.from_arrays(-np.ones((2, 1)), np.ones((3, 1)))

    def test_with_labels(self, rng):
        fp = FactorPair.from_arrays(rng.random((3, 2)), rng.random((4, 2)))
        labelled = fp.with_labels(["active", "visual"])
        assert labelled.labels == ("active", "visual")
        assert labelled.a_mat.col_names == ("active", "visual")
        with pytest.raises(ValueError):
            fp.with_labels(["only_one"])

    def test_permute_keeps_product(self, rng):
        fp = FactorPair.from_arrays(rng.random((5, 3)), rng.random((4, 3)))
        moved = permute(fp, [2, 0, 1])
        assert_array_equal(moved.p_mat.data[:, 0], fp.p_mat.data[:, 2])
        assert_allclose(moved.approximation(), fp.approximation(), rtol=1e-15)
        assert moved.labels == fp.labels
        with pytest.raises(ValueError):
            permute(fp, [0, 0, 1])


@pytest.mark.slow
class TestFitAtScale:
    def test_objective_traces_never_increase(self):
        start = time.perf_counter()
        for seed in range(100):
            x = Matrix(np.random.default_rng(seed).random((15, 40)))
            trace = np.array(fit(x, FitConfig(k=4, seed=seed, restarts=1)).objective_trace)
            assert (np.diff(trace) <= 1e-10 * trace[0]).all(), f"seed {seed}"
        assert time.perf_counter() - start < 60

    def test_recovers_noiseless_data_at_course_shape(self):
        data = generate(SynthConfig(p=21, n=120, k=4, seed=3))
        start = time.perf_counter()
        fp = fit(data.x, FitConfig(k=4, seed=0, restarts=20))
        assert time.perf_counter() - start < 120
        assert fp.relative_residual(data.x) <= 1e-2
        assert fp.converged


class TestScaleIdentity:
    @pytest.mark.parametrize("mode", [RescaleMode.MAX, RescaleMode.MEAN])
    def test_product_and_affinity_argmax_are_unchanged(self, rng, mode):
        for _ in range(50):
            p, n, k = int(rng.integers(2, 25)), int(rng.integers(2, 120)), int(rng.integers(1, 9))
            a = rng.random((n, k)) * rng.uniform(0.01, 100.0, size=k)
            if k > 1 and rng.random() < 0.3:
                a[:, 0] = 0.0
            raw = FactorPair.from_arrays(rng.random((p, k)) * 10.0, a)
            scaled = rescale(raw, mode)
            product = raw.approximation()
            assert frobenius_sq(scaled.approximation() - product) <= 1e-20 * frobenius_sq(product)
            assert_array_equal(scaled.a_mat.data.argmax(axis=0), raw.a_mat.data.argmax(axis=0))
