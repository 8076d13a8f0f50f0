"""Unit tests for shared domain types."""

import numpy as np
import pytest

from src.models import (
    AttackerConfig,
    AttackerKind,
    Band,
    DynamicsKind,
    DynamicsProfile,
    MovementEvent,
    MovementScript,
    SampleSeries,
    ScenarioError,
    ScenarioSpec,
    TagPosition,
)


class TestSampleSeries:
    """Test cases for SampleSeries."""

    def test_samples_read_only(self):
        """Test samples are copied into a read-only float array."""
        series = SampleSeries([1, 2, 3], 100)
        assert series.samples.dtype == float
        with pytest.raises(ValueError):
            series.samples[0] = 5.0

    def test_rejects_non_finite(self):
        """Test NaN samples are rejected."""
        with pytest.raises(ScenarioError, match="finite"):
            SampleSeries([1.0, float("nan")], 100)

    def test_rejects_bad_rate(self):
        """Test a zero sample rate is rejected."""
        with pytest.raises(ScenarioError):
            SampleSeries([1.0], 0)

    def test_times_and_duration(self):
        """Test time axis starts at start_time_s."""
        series = SampleSeries(np.zeros(4), 2, start_time_s=1.0)
        assert series.duration_s == 2.0
        np.testing.assert_allclose(series.times(), [1.0, 1.5, 2.0, 2.5])


class TestMovementScript:
    """Test cases for MovementScript."""

    def test_offset_accumulates(self):
        """Test offsets ramp linearly and hold afterwards."""
        script = MovementScript((MovementEvent(1.0, 1.0, -10.0), MovementEvent(3.0, 1.0, 6.0)))
        offset = script.offset_db(np.array([0.0, 1.5, 2.0, 3.5, 5.0]))
        np.testing.assert_allclose(offset, [0.0, -5.0, -10.0, -7.0, -4.0])

    def test_small_delta_rejected(self):
        """Test deltas of 4 dB or less are rejected."""
        with pytest.raises(ScenarioError, match="must exceed"):
            MovementScript((MovementEvent(0.0, 0.1, 4.0),)).validate()

    def test_overlap_rejected(self):
        """Test overlapping events are rejected."""
        script = MovementScript((MovementEvent(0.0, 1.0, 5.0), MovementEvent(0.5, 1.0, -5.0)))
        with pytest.raises(ScenarioError, match="overlap"):
            script.validate()

    def test_min_gap(self):
        """Test the minimum gap between events is enforced."""
        script = MovementScript((MovementEvent(0.0, 1.0, 5.0), MovementEvent(1.001, 1.0, -5.0)))
        script.validate(min_gap_s=0.0005)
        with pytest.raises(ScenarioError, match="Gap"):
            script.validate(min_gap_s=0.01)

    def test_alternating_signs(self):
        """Test alternating scripts start downwards and stay within the delta range."""
        script = MovementScript.alternating(4, np.random.default_rng(0), 0.2, 0.001, 0.2, (13.0, 17.0))
        deltas = [event.delta_db for event in script.events]
        assert [d < 0 for d in deltas] == [True, False, True, False]
        assert all(13.0 <= abs(d) <= 17.0 for d in deltas)
        assert script.events[1].start_s == pytest.approx(0.2 + 0.201)


class TestScenarioSpec:
    """Test cases for ScenarioSpec."""

    def test_defaults(self):
        """Test the default scenario is a genuine chest tag at 900 MHz."""
        spec = ScenarioSpec()
        assert spec.is_genuine
        assert spec.band is Band.MHZ_900
        assert spec.samples_per_bit == 100
        spec.validate()

    def test_duration_too_short(self):
        """Test an explicit duration that cannot hold the movements is rejected."""
        with pytest.raises(ScenarioError, match="cannot hold"):
            ScenarioSpec(duration_s=0.3).validate()

    def test_zero_movements(self):
        """Test zero movements are only allowed when not required."""
        spec = ScenarioSpec(movement_count=0)
        spec.validate(require_movement=False)
        with pytest.raises(ScenarioError, match="movement_count"):
            spec.validate()

    def test_with_flat(self):
        """Test flat keys reach nested configuration."""
        spec = ScenarioSpec().with_flat(
            {"band": 2400, "attacker": "powerful", "distance_m": "0.5", "bitrate_bps": 2000,
             "dynamics": "walkers", "walker_distance_m": 0.4, "tag_position": "Wrist"}
        )
        assert spec.band is Band.GHZ_2_4
        assert spec.attacker.kind is AttackerKind.POWERFUL
        assert spec.attacker.distance_m == 0.5
        assert spec.backscatter.bitrate_bps == 2000
        assert spec.dynamics == DynamicsProfile(DynamicsKind.WALKERS_NEARBY, 0.4)
        assert spec.tag_position is TagPosition.WRIST

    def test_with_flat_unknown_key(self):
        """Test unknown flat keys are rejected."""
        with pytest.raises(ScenarioError, match="Unknown scenario keys: colour"):
            ScenarioSpec().with_flat({"colour": "red"})

    def test_with_flat_bad_value(self):
        """Test unparseable values become ScenarioError."""
        with pytest.raises(ScenarioError):
            ScenarioSpec().with_flat({"movement_count": "many"})

    def test_attacker_direction_range(self):
        """Test attacker directions outside 1..5 are rejected."""
        with pytest.raises(ScenarioError, match="direction"):
            AttackerConfig(kind=AttackerKind.TAG, direction=6)


class TestDynamicsProfile:
    """Test cases for DynamicsProfile parsing."""

    def test_parse_with_distance(self):
        """Test walkers:<distance> syntax."""
        profile = DynamicsProfile.parse("walkers:0.3")
        assert profile.kind is DynamicsKind.WALKERS_NEARBY
        assert profile.walker_distance_m == 0.3
        assert profile.label() == "walkers:0.3"

    def test_parse_unknown(self):
        """Test unknown profiles are rejected."""
        with pytest.raises(ScenarioError, match="Unknown dynamics"):
            DynamicsProfile.parse("running")
