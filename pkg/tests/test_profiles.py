"""Profile generators: smoothing filter, solar and demand series, tariffs."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lemsim.profiles import (
    ProfileConfig,
    SUPPORT_WIDTHS,
    generate_demand,
    generate_dso_prices,
    generate_generation,
    load_profiles_csv,
    smooth,
)

GOLDEN_DIR = "tests/golden"


def quiet(**kw) -> ProfileConfig:
    base = dict(noise_sigma=0.0, cloud_probability=0.0)
    base.update(kw)
    return ProfileConfig(**base)


class TestSmooth:
    def test_window_one_is_identity(self):
        series = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
        np.testing.assert_array_equal(smooth(series, 1), series)

    def test_constant_series_is_fixed_point(self):
        series = np.full(10, 7.5)
        for window in (1, 2, 3, 5, 9):
            np.testing.assert_allclose(smooth(series, window), series)

    def test_spike_window_three_hand_computed(self):
        # Truncated edges: [0,10,0] -> [(0+10)/2, 10/3, (10+0)/2]
        out = smooth(np.array([0.0, 10.0, 0.0]), 3)
        np.testing.assert_allclose(out, [5.0, 10.0 / 3.0, 5.0])

    def test_rejects_window_below_one(self):
        with pytest.raises(ValueError):
            smooth(np.zeros(3), 0)

    @given(
        values=st.lists(st.floats(0.0, 1e4), min_size=1, max_size=30),
        window=st.integers(1, 9),
    )
    def test_output_stays_in_input_range(self, values, window):
        series = np.asarray(values)
        out = smooth(series, window)
        assert len(out) == len(series)
        assert out.min() >= series.min() - 1e-9
        assert out.max() <= series.max() + 1e-9


class TestGeneration:
    def test_zero_capacity_gives_all_zeros(self):
        series = generate_generation(ProfileConfig(nominal_capacity=0.0, seed=3))
        np.testing.assert_array_equal(series, np.zeros(24))

    def test_noiseless_peak_equals_capacity_before_smoothing(self):
        config = quiet(nominal_capacity=60.0, irradiance_peak_period=12, smoothing_window=1)
        series = generate_generation(config)
        assert series[12] == pytest.approx(60.0)
        assert np.argmax(series) == 12

    def test_zero_outside_dilated_support(self):
        config = ProfileConfig(
            nominal_capacity=60.0, irradiance_peak_period=12, irradiance_width=2.0, seed=11
        )
        series = generate_generation(config)
        # Smoothing smears one period beyond the hard truncation radius.
        radius = SUPPORT_WIDTHS * config.irradiance_width + 1
        for t in range(24):
            if abs(t - 12) > radius:
                assert series[t] == 0.0

    def test_nonnegative_and_deterministic(self):
        config = ProfileConfig(seed=7)
        a = generate_generation(config)
        b = generate_generation(config)
        np.testing.assert_array_equal(a, b)
        assert (a >= 0).all()

    def test_seed_changes_series(self):
        a = generate_generation(ProfileConfig(seed=7))
        b = generate_generation(ProfileConfig(seed=8))
        assert not np.array_equal(a, b)

    def test_golden_seed7(self):
        series = generate_generation(ProfileConfig(nominal_capacity=60.0, seed=7))
        golden = np.loadtxt(f"{GOLDEN_DIR}/generation_seed7.csv", delimiter=",")
        np.testing.assert_allclose(series, golden, rtol=0, atol=1e-12)


class TestDemand:
    def test_zero_magnitudes_give_all_zeros(self):
        config = ProfileConfig(
            demand_morning_magnitude=0.0, demand_evening_magnitude=0.0, seed=5
        )
        np.testing.assert_array_equal(generate_demand(config), np.zeros(24))

    def test_noiseless_peaks_at_configured_periods(self):
        config = quiet(
            demand_morning_peak=8,
            demand_evening_peak=19,
            demand_morning_magnitude=20.0,
            demand_evening_magnitude=30.0,
            smoothing_window=1,
        )
        series = generate_demand(config)
        local_maxima = {
            t
            for t in range(1, 23)
            if series[t] >= series[t - 1] and series[t] >= series[t + 1]
        }
        assert local_maxima == {8, 19}

    def test_golden_seed7(self):
        series = generate_demand(ProfileConfig(seed=7))
        golden = np.loadtxt(f"{GOLDEN_DIR}/demand_seed7.csv", delimiter=",")
        np.testing.assert_allclose(series, golden, rtol=0, atol=1e-12)

    def test_nonnegative(self):
        for seed in range(10):
            assert (generate_demand(ProfileConfig(seed=seed)) >= 0).all()


class TestDsoPrices:
    def test_multiplier_one_gives_flat_series(self):
        fit, utility = generate_dso_prices(ProfileConfig(), 50.0, 250.0, peak_multiplier=1.0)
        np.testing.assert_array_equal(fit, np.full(24, 50.0))
        np.testing.assert_array_equal(utility, np.full(24, 250.0))

    def test_evening_window_elevated(self):
        config = ProfileConfig(demand_morning_peak=8, demand_evening_peak=19)
        fit, utility = generate_dso_prices(config, 50.0, 250.0, peak_multiplier=1.2, peak_halfwidth=2)
        assert utility[19] == pytest.approx(300.0)
        assert utility[21] == pytest.approx(300.0)
        assert utility[12] == pytest.approx(250.0)
        assert fit[19] == pytest.approx(60.0)

    def test_utility_strictly_above_fit_everywhere(self):
        config = ProfileConfig()
        fit, utility = generate_dso_prices(config, 50.0, 250.0, peak_multiplier=1.2)
        assert (utility - fit).min() > 0

    def test_rejects_inverted_tariffs(self):
        with pytest.raises(ValueError):
            generate_dso_prices(ProfileConfig(), 250.0, 50.0)

    def test_rejects_multiplier_below_one(self):
        with pytest.raises(ValueError):
            generate_dso_prices(ProfileConfig(), 50.0, 250.0, peak_multiplier=0.9)


class TestCsvLoading:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "profiles.csv"
        path.write_text("# comment\na,b\n1.0,2.0\n3.5,4.5\n")
        data = load_profiles_csv(str(path))
        np.testing.assert_array_equal(data["a"], [1.0, 3.5])
        np.testing.assert_array_equal(data["b"], [2.0, 4.5])

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1.0\n")
        with pytest.raises(ValueError):
            load_profiles_csv(str(path))


class TestValidation:
    def test_peak_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            generate_demand(ProfileConfig(demand_morning_peak=24))

    def test_negative_capacity_rejected(self):
        with pytest.raises(ValueError):
            generate_generation(ProfileConfig(nominal_capacity=-1.0))
