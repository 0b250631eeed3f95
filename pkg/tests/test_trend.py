import numpy as np
import pytest

from volatrend.errors import ValidationError
from volatrend.grid import GridSpec
from volatrend.operators import build_temporal
from volatrend.pdip import GaussianConjugateOracle, solve_dual
from volatrend.trend import DEFAULT_LAMBDA_GRID, cross_validate_trend, fit_trend


def trend_objective(y, beta, lam):
    D = build_temporal(GridSpec(1, 1, y.size))
    return 0.5 * float(np.sum((y - beta) ** 2)) + lam * float(np.abs(D @ beta).sum())


class TestFitTrend:
    def test_lambda_zero_returns_data(self, rng):
        y = rng.standard_normal(30)
        fit = fit_trend(y, 0.0)
        assert np.array_equal(fit.beta, y)
        assert np.array_equal(fit.residuals, np.zeros(30))

    def test_huge_lambda_gives_affine_least_squares(self, rng):
        T = 50
        t = np.arange(T, dtype=float)
        y = 0.3 * t - 2.0 + rng.standard_normal(T)
        fit = fit_trend(y, 1e8)
        slope, intercept = np.polyfit(t, y, 1)
        assert np.abs(fit.beta - (slope * t + intercept)).max() < 1e-5
        D = build_temporal(GridSpec(1, 1, T))
        assert np.abs(D @ fit.beta).max() < 1e-6

    def test_affine_data_unchanged(self):
        t = np.arange(20, dtype=float)
        y = 1.5 * t + 0.7
        for lam in (0.1, 10.0, 1e5):
            fit = fit_trend(y, lam)
            assert np.abs(fit.beta - y).max() < 1e-7

    def test_residual_identity(self, rng):
        y = rng.standard_normal(25)
        fit = fit_trend(y, 3.0)
        assert np.array_equal(fit.residuals, y - fit.beta)

    def test_objective_beats_candidates(self, rng):
        T = 40
        y = rng.standard_normal(T).cumsum()
        lam = 5.0
        fit = fit_trend(y, lam)
        obj = trend_objective(y, fit.beta, lam)
        assert obj <= trend_objective(y, y, lam) + 1e-8
        t = np.arange(T, dtype=float)
        slope, intercept = np.polyfit(t, y, 1)
        assert obj <= trend_objective(y, slope * t + intercept, lam) + 1e-8

    def test_duality_gap_contract(self, rng):
        y = rng.standard_normal(35).cumsum()
        lam = 2.0
        fit = fit_trend(y, lam)
        D = build_temporal(GridSpec(1, 1, 35))
        res = solve_dual(GaussianConjugateOracle(y), D, np.full(33, lam))
        gap = lam * float(np.abs(D @ res.x).sum()) - float(res.nu @ (D @ res.x))
        assert gap <= 1e-8 * (1.0 + trend_objective(y, fit.beta, lam))
        assert np.all(np.abs(res.nu) <= lam + 1e-10)

    def test_penalty_monotone_in_lambda(self, rng):
        y = rng.standard_normal(40).cumsum()
        D = build_temporal(GridSpec(1, 1, 40))
        pen = [float(np.abs(D @ fit_trend(y, lam).beta).sum()) for lam in (0.5, 5.0, 50.0)]
        assert pen[0] >= pen[1] >= pen[2] - 1e-10

    def test_knot_count_drops_with_lambda(self, rng):
        y = rng.standard_normal(60).cumsum()
        D = build_temporal(GridSpec(1, 1, 60))
        knots = [
            int(np.sum(np.abs(D @ fit_trend(y, lam).beta) > 1e-6)) for lam in (0.1, 10.0, 1e4)
        ]
        assert knots[0] >= knots[1] >= knots[2]

    def test_too_short_series(self):
        with pytest.raises(ValidationError):
            fit_trend(np.ones(2), 1.0)


class TestCrossValidation:
    def test_affine_plus_noise_prefers_smooth(self, rng):
        t = np.arange(60, dtype=float)
        y = 0.5 * t + 1.0 + 0.01 * rng.standard_normal(60)
        fit = cross_validate_trend(y, lambda_grid=[0.01, 1.0, 100.0, 1e4])
        errors = [e for _, e in fit.cv_table]
        assert fit.lambda_used >= 100.0
        # errors settle downward as the fit smooths toward the truth
        assert errors[-1] <= errors[0] + 1e-12

    def test_single_lambda_grid(self, rng):
        y = rng.standard_normal(30)
        fit = cross_validate_trend(y, lambda_grid=[7.5])
        assert fit.lambda_used == 7.5
        assert len(fit.cv_table) == 1

    def test_table_length_matches_grid(self, rng):
        y = rng.standard_normal(30)
        grid = [0.1, 1.0, 10.0]
        fit = cross_validate_trend(y, lambda_grid=grid)
        assert len(fit.cv_table) == len(grid)
        assert [lam for lam, _ in fit.cv_table] == grid

    def test_default_grid(self):
        assert len(DEFAULT_LAMBDA_GRID) == 16
        assert DEFAULT_LAMBDA_GRID[0] == pytest.approx(1e-2)
        assert DEFAULT_LAMBDA_GRID[-1] == pytest.approx(1e4)

    def test_needs_enough_points(self):
        with pytest.raises(ValidationError):
            cross_validate_trend(np.ones(10), lambda_grid=[1.0], n_folds=5)

    def test_empty_grid_rejected(self, rng):
        with pytest.raises(ValidationError):
            cross_validate_trend(rng.standard_normal(30), lambda_grid=[])
