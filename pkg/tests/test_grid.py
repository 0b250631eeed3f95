import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volatrend.errors import ValidationError
from volatrend.grid import (
    Field,
    GridSpec,
    annual_average_sd,
    flatten_index,
    negative_log_likelihood,
    unflatten_index,
    variance_change_map,
)

from conftest import golden_section_min


def field_from(spec, values):
    return Field(spec, np.asarray(values, dtype=float))


class TestIndexing:
    def test_origin_maps_to_zero(self):
        spec = GridSpec(3, 4, 5)
        assert flatten_index(0, 0, 0, spec) == 0

    def test_bijection_onto_range(self):
        spec = GridSpec(2, 2, 4)
        seen = {
            flatten_index(i, j, t, spec)
            for i, j, t in itertools.product(range(2), range(2), range(4))
        }
        assert seen == set(range(16))

    def test_round_trip(self):
        spec = GridSpec(2, 2, 4)
        assert unflatten_index(flatten_index(1, 1, 3, spec), spec) == (1, 1, 3)

    def test_out_of_range_raises(self):
        spec = GridSpec(2, 2, 4)
        with pytest.raises(IndexError):
            flatten_index(2, 0, 0, spec)
        with pytest.raises(IndexError):
            unflatten_index(16, spec)

    @given(
        st.integers(1, 10), st.integers(1, 10), st.integers(3, 10), st.data()
    )
    @settings(max_examples=60, deadline=None)
    def test_bijection_property(self, n_r, n_c, n_t, data):
        spec = GridSpec(n_r, n_c, n_t)
        i = data.draw(st.integers(0, n_r - 1))
        j = data.draw(st.integers(0, n_c - 1))
        t = data.draw(st.integers(0, n_t - 1))
        k = flatten_index(i, j, t, spec)
        assert 0 <= k < spec.size
        assert unflatten_index(k, spec) == (i, j, t)

    def test_cube_view_matches_flatten_order(self):
        spec = GridSpec(2, 3, 4)
        values = np.arange(spec.size, dtype=float)
        f = Field(spec, values)
        for i, j, t in itertools.product(range(2), range(3), range(4)):
            assert f.cube()[i, j, t] == values[flatten_index(i, j, t, spec)]


class TestGridSpecValidation:
    def test_needs_three_time_steps(self):
        with pytest.raises(ValidationError):
            GridSpec(2, 2, 2)

    def test_year_boundaries_must_partition(self):
        with pytest.raises(ValidationError):
            GridSpec(1, 1, 10, year_boundaries=(0, 5))
        with pytest.raises(ValidationError):
            GridSpec(1, 1, 10, year_boundaries=(0, 5, 5, 10))
        spec = GridSpec(1, 1, 10, year_boundaries=(0, 5, 10))
        assert spec.n_years == 2

    def test_field_length_checked(self):
        with pytest.raises(ValidationError):
            Field(GridSpec(2, 2, 3), np.zeros(11))

    def test_field_values_read_only(self):
        f = Field.zeros(GridSpec(1, 1, 3))
        with pytest.raises(ValueError):
            f.values[0] = 1.0


class TestNegativeLogLikelihood:
    def test_zero_data_zero_params(self):
        spec = GridSpec(1, 2, 5)  # ten cells
        assert negative_log_likelihood(Field.zeros(spec), Field.zeros(spec)) == 0.0

    def test_unit_case(self):
        spec = GridSpec(1, 1, 3)
        y = field_from(spec, [1.0, 0.0, 0.0])
        h = Field.zeros(spec)
        assert negative_log_likelihood(y, h) == pytest.approx(1.0)

    def test_unpenalized_minimum_value(self):
        # single active cell with y = 2, h = log 4 gives log4 + 1
        spec = GridSpec(1, 1, 3)
        y = field_from(spec, [2.0, 0.0, 0.0])
        h = field_from(spec, [math.log(4.0), 0.0, 0.0])
        assert negative_log_likelihood(y, h) == pytest.approx(math.log(4.0) + 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            negative_log_likelihood(
                Field.zeros(GridSpec(1, 1, 3)), Field.zeros(GridSpec(1, 1, 4))
            )

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_convex_in_h(self, seed):
        rng = np.random.default_rng(seed)
        spec = GridSpec(2, 2, 3)
        y = Field(spec, rng.standard_normal(spec.size))
        h1 = Field(spec, rng.standard_normal(spec.size))
        h2 = Field(spec, rng.standard_normal(spec.size))
        theta = rng.uniform(0.05, 0.95)
        mix = Field(spec, theta * h1.values + (1 - theta) * h2.values)
        lhs = negative_log_likelihood(y, mix)
        rhs = theta * negative_log_likelihood(y, h1) + (1 - theta) * negative_log_likelihood(y, h2)
        assert lhs <= rhs + 1e-9

    @pytest.mark.parametrize("y_val", [0.5, 1.0, 2.0, 7.5])
    def test_single_cell_minimizer_is_log_y_sq(self, y_val):
        h_star = golden_section_min(lambda h: h + y_val**2 * math.exp(-h), -20, 20)
        assert h_star == pytest.approx(math.log(y_val**2), abs=1e-6)


class TestAnnualSummaries:
    def test_constant_field_gives_unit_sd(self):
        spec = GridSpec(2, 2, 6, year_boundaries=(0, 3, 6))
        out = annual_average_sd(Field.zeros(spec))
        assert out.shape == (2, 2, 2)
        assert np.allclose(out, 1.0)

    def test_constant_sd_three(self):
        spec = GridSpec(1, 2, 4, year_boundaries=(0, 2, 4))
        h = Field(spec, np.full(spec.size, 2 * math.log(3.0)))
        assert np.allclose(annual_average_sd(h), 3.0)

    def test_hand_average(self):
        # one location, first year holds h = (0, 2 log 3): mean SD (1 + 3)/2
        spec = GridSpec(1, 1, 4, year_boundaries=(0, 2, 4))
        h = field_from(spec, [0.0, 2 * math.log(3.0), 0.0, 0.0])
        out = annual_average_sd(h)
        assert out[0, 0, 0] == pytest.approx(2.0)

    def test_requires_year_boundaries(self):
        with pytest.raises(ValidationError):
            annual_average_sd(Field.zeros(GridSpec(1, 1, 4)))


class TestVarianceChangeMap:
    def test_constant_field_no_change(self):
        spec = GridSpec(2, 3, 6, year_boundaries=(0, 2, 4, 6))
        assert np.allclose(variance_change_map(Field.zeros(spec)), 0.0)

    def test_two_years(self):
        spec = GridSpec(1, 1, 4, year_boundaries=(0, 2, 4))
        h = field_from(spec, np.log([1.0, 1.0, 1.5, 1.5]))
        assert variance_change_map(h)[0, 0] == pytest.approx(0.5)

    def test_three_years_cumulative(self):
        spec = GridSpec(1, 1, 6, year_boundaries=(0, 2, 4, 6))
        h = field_from(spec, np.log([1.0, 1.0, 1.2, 1.2, 1.6, 1.6]))
        assert variance_change_map(h)[0, 0] == pytest.approx(0.8)

    def test_base_year_out_of_range(self):
        spec = GridSpec(1, 1, 4, year_boundaries=(0, 2, 4))
        with pytest.raises(ValidationError):
            variance_change_map(Field.zeros(spec), base_year=2)
