import math

import numpy as np
import pytest
import scipy.stats

from mapsim import channel as ch
from mapsim.geometry import Location3D

C = 299_792_458.0


def map_params(**kw):
    return ch.default_map_channel(**kw)


def mbs_params(**kw):
    return ch.default_mbs_channel(**kw)


class TestElevation:
    def test_vertical_link(self):
        assert ch.elevation_angle(Location3D(0, 0, 100), Location3D(0, 0, 0)) == 90.0

    def test_equal_legs(self):
        assert ch.elevation_angle(Location3D(100, 0, 100), Location3D(0, 0, 0)) == pytest.approx(45.0)

    def test_direct_trig(self):
        # independent evaluation: atan(dz / horizontal)
        expected = math.degrees(math.atan2(70.0, math.hypot(50.0, 50.0)))
        got = ch.elevation_angle(Location3D(50, 50, 70), Location3D(0, 0, 0))
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(44.71, abs=0.01)

    def test_radians(self):
        got = ch.elevation_angle(Location3D(0, 0, 50), Location3D(0, 0, 0), unit=ch.RADIANS)
        assert got == pytest.approx(math.pi / 2)


class TestLosProbability:
    def test_theta_equals_alpha(self):
        p = map_params()
        assert ch.los_probability(p.los_alpha, p) == pytest.approx(1.0 / (1.0 + p.los_alpha), rel=0, abs=0)

    def test_alpha_to_zero_limit(self):
        p = map_params(los_alpha=0.0)
        assert ch.los_probability(13.0, p) == 1.0

    def test_direct_evaluation(self):
        p = map_params()
        oracle = 1.0 / (1.0 + 10.37 * math.exp(-0.05 * (45.0 - 10.37)))
        assert ch.los_probability(45.0, p) == pytest.approx(oracle, rel=1e-12)

    def test_monotone_and_bounded(self):
        p = map_params()
        thetas = np.linspace(0.0, 90.0, 500)
        probs = ch.los_probability(thetas, p)
        assert np.all(np.diff(probs) > 0)
        assert np.all((probs > 0) & (probs < 1))


class TestAtgPathloss:
    def test_28ghz_100m(self):
        oracle = 20 * math.log10(4 * math.pi * 28e9 * 100.0 / C)
        got = ch.atg_pathloss(100.0, True, map_params())
        assert got == pytest.approx(oracle, rel=1e-12)
        assert got == pytest.approx(101.39, abs=0.01)

    def test_unit_log_argument(self):
        p = map_params(carrier_freq_ghz=C / (4 * math.pi) / 1e9)
        assert ch.atg_pathloss(1.0, True, p) == pytest.approx(0.0, abs=1e-9)

    def test_doubling_distance(self):
        p = map_params()
        delta = ch.atg_pathloss(200.0, True, p) - ch.atg_pathloss(100.0, True, p)
        assert delta == pytest.approx(20 * math.log10(2), rel=1e-12)

    def test_monotone_in_distance(self):
        p = map_params()
        d = np.linspace(1.0, 500.0, 200)
        pl = ch.atg_pathloss(d, True, p)
        assert np.all(np.diff(pl) > 0)

    def test_nonpositive_distance_raises(self):
        with pytest.raises(ValueError):
            ch.atg_pathloss(0.0, True, map_params())
        with pytest.raises(ValueError):
            ch.atg_pathloss(-5.0, False, map_params())

    def test_shadowing_added(self):
        p = map_params()
        base = ch.atg_pathloss(50.0, True, p)
        assert ch.atg_pathloss(50.0, True, p, shadowing_db=3.5) == pytest.approx(base + 3.5)


class TestExpectedAtgPathloss:
    def test_degenerate_mixture(self):
        assert ch.expected_atg_pathloss(1.0, 100.0, 120.0) == 100.0

    def test_midpoint(self):
        assert ch.expected_atg_pathloss(0.5, 100.0, 120.0) == pytest.approx(110.0)

    def test_equal_operands(self):
        assert ch.expected_atg_pathloss(0.3541, 101.39, 101.39) == pytest.approx(101.39)


class TestGtgPathloss:
    def test_los_row(self):
        # MBS LoS row: alpha=2, beta=31.4, eta=2.1 at 2 GHz, 100 m
        oracle = 10 * 2.0 * math.log10(100.0) + 31.4 + 10 * 2.1 * math.log10(2.0)
        got = ch.gtg_pathloss(100.0, True, mbs_params())
        assert got == pytest.approx(oracle, rel=1e-12)
        assert got == pytest.approx(77.72, abs=0.01)

    def test_distance_term_vanishes_at_1m(self):
        p = mbs_params()
        expected = p.abg_beta_los + 10 * p.abg_eta_los * math.log10(p.carrier_freq_ghz)
        assert ch.gtg_pathloss(1.0, True, p) == pytest.approx(expected)

    def test_nlos_row(self):
        oracle = 10 * 3.5 * math.log10(100.0) + 24.4 + 10 * 1.9 * math.log10(2.0)
        got = ch.gtg_pathloss(100.0, False, mbs_params())
        assert got == pytest.approx(oracle, rel=1e-12)
        assert got == pytest.approx(100.12, abs=0.01)

    def test_monotone_in_distance(self):
        p = mbs_params()
        d = np.linspace(1.0, 2000.0, 300)
        for los in (True, False):
            pl = ch.gtg_pathloss(d, los, p)
            assert np.all(np.diff(pl) > 0)

    def test_nonpositive_distance_raises(self):
        with pytest.raises(ValueError):
            ch.gtg_pathloss(0.0, True, mbs_params())


class TestFading:
    def test_unit_mean(self):
        rng = np.random.default_rng(7)
        samples = ch.sample_fading(1.0, rng, size=1_000_000)
        assert samples.mean() == pytest.approx(1.0, abs=0.01)
        assert np.all(samples > 0)

    def test_nu1_is_exponential(self):
        rng = np.random.default_rng(11)
        samples = ch.sample_fading(1.0, rng, size=100_000)
        stat = scipy.stats.kstest(samples, "expon")
        assert stat.pvalue > 0.01

    def test_nu10_variance(self):
        rng = np.random.default_rng(13)
        samples = ch.sample_fading(10.0, rng, size=500_000)
        assert samples.var() == pytest.approx(0.1, abs=0.005)

    def test_invalid_nu(self):
        with pytest.raises(ValueError):
            ch.sample_fading(0.0, np.random.default_rng(0))


class TestSinr:
    def test_serving_equals_noise(self):
        assert ch.sinr(-90.0, [], -90.0) == pytest.approx(1.0)

    def test_equal_interferer_dominates_noise(self):
        assert ch.sinr(-60.0, [-60.0], -200.0) == pytest.approx(1.0, rel=1e-10)

    def test_linear_domain_arithmetic(self):
        # oracle in linear milliwatts
        signal = 10 ** (-60.0 / 10)
        denom = 2 * 10 ** (-70.0 / 10) + 10 ** (-90.0 / 10)
        assert ch.sinr(-60.0, [-70.0, -70.0], -90.0) == pytest.approx(signal / denom, rel=1e-12)

    def test_decreases_with_interference(self):
        lo = ch.sinr(-60.0, [-75.0], -90.0)
        hi = ch.sinr(-60.0, [-70.0], -90.0)
        assert hi < lo


class TestShannonRate:
    def test_zero_sinr(self):
        assert ch.shannon_rate(10e6, 0.0) == 0.0

    def test_sinr_one(self):
        assert ch.shannon_rate(500e6, 1.0) == 5.0e8

    def test_log2_16(self):
        assert ch.shannon_rate(10e6, 15.0) == pytest.approx(4.0e7, rel=1e-12)

    def test_concave_increasing(self):
        s = np.linspace(0.0, 100.0, 400)
        r = ch.shannon_rate(1e6, s)
        assert np.all(np.diff(r) > 0)
        assert np.all(np.diff(np.diff(r)) < 1e-6)

    def test_bandwidth_scaling(self):
        assert ch.shannon_rate(7e6, 3.3) / 7e6 == pytest.approx(ch.shannon_rate(1e5, 3.3) / 1e5)


class TestConversions:
    def test_round_trip(self):
        values = np.linspace(-120.0, 60.0, 1000)
        back = ch.linear_to_db(ch.db_to_linear(values))
        assert np.max(np.abs((back - values) / np.where(values == 0, 1.0, values))) < 1e-9


class TestAntennaGain:
    def test_two_level_pattern(self):
        p = map_params()  # aperture 90 deg: main lobe needs elevation >= 45
        assert ch.antenna_gain_dbi(60.0, p) == p.antenna_gain_main_dbi
        assert ch.antenna_gain_dbi(30.0, p) == p.antenna_gain_side_dbi

    def test_hemispherical_aperture(self):
        p = mbs_params()  # aperture 180: everything above the horizon is main
        assert ch.antenna_gain_dbi(0.5, p) == p.antenna_gain_main_dbi


class TestParamsValidation:
    def test_bad_bandwidth(self):
        with pytest.raises(ValueError):
            map_params(bandwidth_hz=0.0)

    def test_bad_aperture(self):
        with pytest.raises(ValueError):
            map_params(aperture_angle_deg=200.0)

    def test_bad_nu(self):
        with pytest.raises(ValueError):
            map_params(nakagami_nu=-1.0)

    def test_link_budget_invariants(self):
        with pytest.raises(ValueError):
            ch.LinkBudget(pathloss_db=100.0, rx_power_dbm=-60.0, sinr_linear=-0.1, rate_bps=1.0)


class TestLocation3D:
    def test_negative_altitude_rejected(self):
        with pytest.raises(ValueError):
            Location3D(0.0, 0.0, -1.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            Location3D(math.nan, 0.0, 0.0)

    def test_array_round_trip(self):
        loc = Location3D(1.5, -2.0, 30.0)
        assert Location3D.from_array(loc.as_array()) == loc
