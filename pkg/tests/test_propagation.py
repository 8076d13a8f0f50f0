"""Unit tests for propagation module."""

import math

import numpy as np
import pytest

from src.propagation import (
    AttenuationParams,
    BodyGeometry,
    LinkParams,
    PropagationError,
    VACUUM_IMPEDANCE_OHM,
    attenuation_w,
    creeping_field,
    free_space_rss_db,
    on_body_rss_db,
    polarization_penalty_db,
    proximity_coupling_std_db,
)


@pytest.fixture
def body():
    """Create a default body geometry."""
    return BodyGeometry(surface_radius_m=0.15)


@pytest.fixture
def link():
    """Create a 900 MHz on-body link."""
    return LinkParams(tx_power_w=1e-3, tx_gain=1.0, rx_gain=1.0, distance_m=0.3, frequency_hz=9.0e8)


class TestGeometry:
    """Test cases for the parameter types."""

    def test_wavenumber_derived(self, link):
        """Test wavenumber equals 2*pi*f/c."""
        expected = 2 * math.pi * 9.0e8 / 299_792_458.0
        assert link.wavenumber == pytest.approx(expected, rel=1e-9)

    def test_antenna_height_limit(self):
        """Test antenna heights above 2 cm are rejected."""
        with pytest.raises(PropagationError, match="antenna_height_tx_m"):
            BodyGeometry(antenna_height_tx_m=0.03)

    def test_permittivity_real_part(self):
        """Test permittivity real part below 1 is rejected."""
        with pytest.raises(PropagationError, match="permittivity"):
            BodyGeometry(permittivity=complex(0.5, -1.0))

    def test_invalid_link(self):
        """Test non-positive link values are rejected."""
        with pytest.raises(PropagationError):
            LinkParams(0.0, 1.0, 1.0, 0.3, 9e8)
        with pytest.raises(PropagationError):
            LinkParams(1.0, 1.0, 1.0, -0.3, 9e8)

    def test_negative_attenuation(self):
        """Test negative attenuation coefficients are rejected."""
        with pytest.raises(PropagationError):
            AttenuationParams(base_decay_per_m=-1.0)


class TestAttenuation:
    """Test cases for attenuation_w."""

    def test_near_zero_distance(self, body):
        """Test attenuation tends to one at zero distance."""
        assert attenuation_w(1e-12, body, AttenuationParams()) == pytest.approx(1.0)

    def test_closed_form(self, body):
        """Test pure exponential decay evaluates to 1/e at one metre."""
        params = AttenuationParams(base_decay_per_m=1.0, curvature_coeff=0.0, height_coeff=0.0)
        assert attenuation_w(1.0, body, params) == pytest.approx(math.exp(-1.0))

    def test_monotone(self, body):
        """Test doubling distance never increases the factor."""
        distances = np.linspace(0.01, 0.9, 50)
        for params in (AttenuationParams(), AttenuationParams(5.0, 0.5, 1.0)):
            assert np.all(attenuation_w(2 * distances, body, params) <= attenuation_w(distances, body, params))

    def test_non_positive_distance(self, body):
        """Test zero distance is rejected."""
        with pytest.raises(PropagationError, match="positive"):
            attenuation_w(0.0, body, AttenuationParams())


class TestCreepingField:
    """Test cases for creeping_field."""

    def test_matches_term_by_term(self, link, body):
        """Test the field equals an independent evaluation of both terms."""
        att = AttenuationParams(base_decay_per_m=5.0)
        k = 2 * math.pi * link.frequency_hz / 299_792_458.0
        amplitude = math.sqrt(VACUUM_IMPEDANCE_OHM / (2 * math.pi)) * math.sqrt(link.tx_power_w)
        total = 0j
        for path in (0.3, 2 * math.pi * 0.15 - 0.3):
            total += amplitude / path * complex(math.cos(k * path), -math.sin(k * path)) * attenuation_w(path, body, att)

        assert abs(creeping_field(link, body, att)) == pytest.approx(abs(total), rel=1e-12)

    def test_antipodal_doubles(self, body):
        """Test both terms coincide at the antipode."""
        att = AttenuationParams()
        antipode = math.pi * body.surface_radius_m
        link = LinkParams(1e-3, 1.0, 1.0, antipode, 9e8)
        amplitude = math.sqrt(VACUUM_IMPEDANCE_OHM / (2 * math.pi)) * math.sqrt(1e-3)
        single = amplitude / antipode * attenuation_w(antipode, body, att)

        assert abs(creeping_field(link, body, att)) == pytest.approx(2 * single, rel=1e-12)

    def test_relabel_symmetry(self, body):
        """Test |E| is unchanged when d is swapped with the long way round."""
        att = AttenuationParams()
        short = LinkParams(1e-3, 1.0, 1.0, 0.2, 2.4e9)
        long = LinkParams(1e-3, 1.0, 1.0, body.circumference_m - 0.2, 2.4e9)
        assert abs(creeping_field(short, body, att)) == pytest.approx(abs(creeping_field(long, body, att)), rel=1e-12)

    def test_power_scaling(self, body):
        """Test the field vanishes as transmit power goes to zero."""
        att = AttenuationParams()
        strong = abs(creeping_field(LinkParams(1e-3, 1.0, 1.0, 0.3, 9e8), body, att))
        weak = abs(creeping_field(LinkParams(1e-15, 1.0, 1.0, 0.3, 9e8), body, att))
        assert weak == pytest.approx(strong * math.sqrt(1e-12), rel=1e-9)

    def test_distance_beyond_circumference(self, body):
        """Test a distance past the circumference is rejected."""
        link = LinkParams(1e-3, 1.0, 1.0, 1.0, 9e8)
        with pytest.raises(PropagationError, match="must lie inside"):
            creeping_field(link, body, AttenuationParams())


class TestOnBodyRss:
    """Test cases for on_body_rss_db."""

    def test_deterministic(self, link, body):
        """Test identical inputs give identical outputs."""
        att = AttenuationParams()
        assert on_body_rss_db(link, body, att) == on_body_rss_db(link, body, att)

    def test_additive_offset(self, link, body):
        """Test a +6 dB offset adds exactly 6 dB."""
        att = AttenuationParams()
        assert on_body_rss_db(link, body, att, 6.0) - on_body_rss_db(link, body, att) == pytest.approx(6.0)

    def test_affine_in_offset(self, link, body):
        """Test the response to an offset sweep is affine with slope 1."""
        offsets = np.linspace(-10, 10, 21)
        values = on_body_rss_db(link, body, AttenuationParams(), offsets)
        slope, _ = np.polyfit(offsets, values, 1)
        assert slope == pytest.approx(1.0, abs=1e-9)

    def test_rx_gain(self, body):
        """Test receive gain is added in dB."""
        att = AttenuationParams()
        base = on_body_rss_db(LinkParams(1e-3, 1.0, 1.0, 0.3, 9e8), body, att)
        boosted = on_body_rss_db(LinkParams(1e-3, 1.0, 10.0, 0.3, 9e8), body, att)
        assert boosted - base == pytest.approx(10.0)


class TestFreeSpace:
    """Test cases for free_space_rss_db."""

    def test_inverse_square(self):
        """Test doubling distance costs 20*log10(2) dB."""
        near = free_space_rss_db(1.0, 9e8, 1.0, 1.0, 1.0)
        far = free_space_rss_db(2.0, 9e8, 1.0, 1.0, 1.0)
        assert near - far == pytest.approx(20 * math.log10(2), abs=1e-12)

    def test_hand_evaluation(self):
        """Test 900 MHz at 1 m against the Friis formula."""
        wavelength = 299_792_458.0 / 9e8
        expected = 10 * math.log10((wavelength / (4 * math.pi)) ** 2)
        assert free_space_rss_db(1.0, 9e8, 1.0, 1.0, 1.0) == pytest.approx(expected, abs=1e-12)

    def test_strictly_decreasing(self):
        """Test RSS decreases with distance."""
        values = free_space_rss_db(np.linspace(0.1, 5.0, 30), 2.4e9, 1e-3, 2.0, 2.0)
        assert np.all(np.diff(values) < 0)

    def test_invalid_inputs(self):
        """Test non-positive inputs are rejected."""
        with pytest.raises(PropagationError):
            free_space_rss_db(0.0, 9e8, 1.0, 1.0, 1.0)
        with pytest.raises(PropagationError):
            free_space_rss_db(1.0, 9e8, 0.0, 1.0, 1.0)


class TestPolarization:
    """Test cases for polarization_penalty_db."""

    def test_aligned(self):
        """Test aligned antennas carry no penalty."""
        assert polarization_penalty_db(0.0) == 0.0
        assert polarization_penalty_db(180.0) == pytest.approx(0.0, abs=1e-12)

    def test_sixty_degrees(self):
        """Test the cosine law at 60 degrees."""
        assert polarization_penalty_db(60.0) == pytest.approx(20 * math.log10(0.5), abs=1e-9)

    def test_near_vertical_worse(self):
        """Test 80 degrees attenuates more than 45 degrees."""
        assert polarization_penalty_db(80.0) < polarization_penalty_db(45.0)

    def test_floor_and_symmetry(self):
        """Test the -40 dB floor and symmetry about 90 degrees."""
        assert polarization_penalty_db(90.0) == pytest.approx(-40.0)
        assert polarization_penalty_db(30.0) == pytest.approx(polarization_penalty_db(150.0))

    def test_out_of_range(self):
        """Test angles outside [0, 180] are rejected."""
        with pytest.raises(PropagationError, match="angle_deg"):
            polarization_penalty_db(190.0)


class TestProximityCoupling:
    """Test cases for proximity_coupling_std_db."""

    def test_far_field(self):
        """Test coupling vanishes at 2 m."""
        assert proximity_coupling_std_db(2.0) < 0.1

    def test_bounds(self):
        """Test the near and mid-range bounds."""
        assert proximity_coupling_std_db(0.29) >= 2.0
        assert proximity_coupling_std_db(0.5) <= 0.5
        assert proximity_coupling_std_db(0.2) > proximity_coupling_std_db(0.5)

    def test_monotone(self):
        """Test coupling never increases over a distance sweep."""
        values = proximity_coupling_std_db(np.linspace(0.1, 2.0, 100))
        assert np.all(np.diff(values) <= 0)

    def test_non_positive(self):
        """Test zero distance is rejected."""
        with pytest.raises(PropagationError):
            proximity_coupling_std_db(0.0)
