"""Unit tests for the trial harness."""

from dataclasses import replace

import pytest

from src.harness import (
    REPORT_COLUMNS,
    HarnessError,
    MetricsReport,
    ReportError,
    SweepAxis,
    TrialOutcome,
    apply_axis,
    derive_seed,
    export_report,
    latency_study,
    read_report,
    run_trials,
    score,
    sweep,
)
from src.models import AttackerConfig, AttackerKind, DynamicsKind, DynamicsProfile, ScenarioSpec
from src.pipeline import FinalVerdict, PipelineError

MASTER_SEED = 2024
CALIBRATION_TRIALS = 100


def fake_trial(index, seed, spec, params):
    """Stand-in for a synthesized trial: genuine trials pass every group."""
    genuine = spec.is_genuine
    return TrialOutcome(
        index=index,
        seed=seed,
        genuine=genuine,
        groups=spec.movement_count,
        expected_groups=spec.movement_count,
        on_body_groups=spec.movement_count if genuine else 0,
        final=FinalVerdict.ON_BODY if genuine else FinalVerdict.ATTACKER,
        samples_used=(1000,),
    )


@pytest.fixture
def patched_trial(mocker):
    """Replace trial execution with fake_trial."""
    return mocker.patch("src.harness._run_trial", side_effect=fake_trial)


class TestSeeds:
    """Test cases for trial seed derivation."""

    def test_deterministic_and_distinct(self):
        """Test seeds repeat per index and differ across indices."""
        seeds = [derive_seed(42, i) for i in range(100)]
        assert seeds == [derive_seed(42, i) for i in range(100)]
        assert len(set(seeds)) == 100
        assert all(0 <= s < 2 ** 63 for s in seeds)

    def test_master_seed_matters(self):
        """Test different master seeds give different trial seeds."""
        assert derive_seed(1, 0) != derive_seed(2, 0)


class TestSweepAxis:
    """Test cases for axis parsing."""

    @pytest.mark.parametrize("text", ["AttackerDistance", "attacker_distance", "attacker-distance"])
    def test_parse(self, text):
        """Test axis names are matched loosely."""
        assert SweepAxis.parse(text) is SweepAxis.ATTACKER_DISTANCE

    def test_unknown(self):
        """Test unknown axes are rejected."""
        with pytest.raises(HarnessError, match="Unknown sweep axis"):
            SweepAxis.parse("Humidity")


class TestScore:
    """Test cases for scoring."""

    def _outcome(self, index, genuine, on_body, final, expected=5, groups=5):
        return TrialOutcome(index, index, genuine, groups, expected, on_body, final)

    def test_rates(self):
        """Test TP and FP come from disjoint populations."""
        outcomes = [
            self._outcome(0, True, 5, FinalVerdict.ON_BODY),
            self._outcome(1, True, 4, FinalVerdict.ON_BODY),
            self._outcome(2, False, 1, FinalVerdict.ATTACKER),
            self._outcome(3, False, 0, FinalVerdict.ATTACKER),
        ]
        report = score(outcomes, "MovementCount", "5")
        assert report.tp_rate == pytest.approx(0.9)
        assert report.fp_rate == pytest.approx(0.1)
        assert report.vote_tp_rate == 1.0
        assert report.vote_fp_rate == 0.0
        assert report.genuine_groups == 10
        assert report.attacker_groups == 10
        assert report.per_axis_breakdown == {"5": (report.tp_rate, report.fp_rate)}

    def test_missing_groups_count_as_failures(self):
        """Test undetected movements lower the TP rate."""
        report = score([self._outcome(0, True, 3, FinalVerdict.ON_BODY, expected=5, groups=3)])
        assert report.tp_rate == pytest.approx(0.6)
        assert report.fp_rate is None

    def test_rate_range_checked(self):
        """Test rates outside [0, 1] are rejected."""
        with pytest.raises(HarnessError, match="tp_rate"):
            MetricsReport(n_trials=1, tp_rate=1.5, fp_rate=None)


class TestRunTrials:
    """Test cases for run_trials."""

    def test_mixed_population(self, patched_trial, small_scenario, constant_attacker_scenario):
        """Test odd trial indices use the attacker template."""
        report = run_trials(small_scenario, 6, 9, attacker_template=constant_attacker_scenario, max_workers=3)
        assert report.n_trials == 6
        assert report.tp_rate == 1.0
        assert report.fp_rate == 0.0
        for call in patched_trial.call_args_list:
            index, seed, spec, _ = call.args
            assert spec.is_genuine == (index % 2 == 0)
            assert seed == derive_seed(9, index)

    def test_order_independent(self, patched_trial, small_scenario):
        """Test serial and threaded runs give the same report."""
        serial = run_trials(small_scenario, 8, 3, max_workers=1)
        threaded = run_trials(small_scenario, 8, 3, max_workers=4)
        assert serial == threaded

    def test_zero_trials(self, small_scenario):
        """Test at least one trial is required."""
        with pytest.raises(HarnessError, match="n_trials"):
            run_trials(small_scenario, 0, 1)

    def test_requires_movement(self, small_scenario):
        """Test scenarios without movements cannot be scored."""
        with pytest.raises(HarnessError, match="Invalid scenario"):
            run_trials(replace(small_scenario, movement_count=0), 1, 1)

    def test_trial_errors_wrapped(self, small_scenario, mocker):
        """Test pipeline failures surface as HarnessError."""
        mocker.patch("src.harness._run_trial", side_effect=PipelineError("boom"))
        with pytest.raises(HarnessError, match="boom"):
            run_trials(small_scenario, 2, 1, max_workers=1)

    def test_real_trials_reproducible(self, small_scenario):
        """Test a real run is reproducible from its master seed."""
        first = run_trials(small_scenario, 2, 5, max_workers=1)
        second = run_trials(small_scenario, 2, 5, max_workers=2)
        assert first == second
        assert first.tp_rate is not None
        assert first.fp_rate is None


class TestAxes:
    """Test cases for axis substitution."""

    def test_attacker_axis_needs_attacker(self, small_scenario, params):
        """Test attacker axes reject a purely genuine run."""
        with pytest.raises(HarnessError, match="requires an attacker"):
            apply_axis(small_scenario, params, SweepAxis.ATTACKER_DISTANCE, 0.5)

    def test_attacker_axis_on_attacker_template(self, small_scenario, constant_attacker_scenario, params):
        """Test attacker axes change only the attacker template in mixed runs."""
        spec, _, other = apply_axis(
            small_scenario, params, SweepAxis.ATTACKER_DISTANCE, "0.5", constant_attacker_scenario
        )
        assert spec is small_scenario
        assert other.attacker.distance_m == 0.5

    def test_attacker_kind(self, constant_attacker_scenario, params):
        """Test the attacker kind axis."""
        spec, _, _ = apply_axis(constant_attacker_scenario, params, SweepAxis.ATTACKER_KIND, "powerful")
        assert spec.attacker.kind is AttackerKind.POWERFUL

    def test_movement_count_zero(self, small_scenario, params):
        """Test zero movements are rejected."""
        with pytest.raises(HarnessError, match="MovementCount"):
            apply_axis(small_scenario, params, SweepAxis.MOVEMENT_COUNT, 0)

    def test_latency_samples(self, small_scenario, params):
        """Test latency samples become a segment limit."""
        _, value_params, _ = apply_axis(small_scenario, params, SweepAxis.LATENCY_SAMPLES, 500)
        assert value_params.segment_limit_s == pytest.approx(0.005)
        with pytest.raises(HarnessError, match="shorter than one bit"):
            apply_axis(small_scenario, params, SweepAxis.LATENCY_SAMPLES, 50)

    def test_traffic_and_walkers(self, small_scenario, params):
        """Test continuous traffic and walker distance values."""
        spec, _, _ = apply_axis(small_scenario, params, SweepAxis.TRAFFIC_RATE, "continuous")
        assert spec.traffic_rate_pkt_s is None
        spec, _, _ = apply_axis(small_scenario, params, SweepAxis.WALKER_DISTANCE, "0.3")
        assert spec.dynamics.kind is DynamicsKind.WALKERS_NEARBY
        assert spec.dynamics.walker_distance_m == 0.3

    def test_bad_value(self, small_scenario, params):
        """Test unparseable values are rejected."""
        with pytest.raises(HarnessError, match="Invalid value"):
            apply_axis(small_scenario, params, SweepAxis.TAG_ANGLE, "sideways")


class TestSweep:
    """Test cases for sweep and latency_study."""

    def test_one_report_per_value(self, patched_trial, small_scenario):
        """Test sweep order and per-value trial counts."""
        results = sweep(small_scenario, "MovementCount", [1, 3, 5], 4, 7, max_workers=1)
        assert [value for value, _ in results] == [1, 3, 5]
        assert [r.value for _, r in results] == ["1", "3", "5"]
        assert all(r.axis == "MovementCount" for _, r in results)
        assert sum(r.n_trials for _, r in results) == 4 * 3
        assert [r.genuine_groups for _, r in results] == [4, 12, 20]

    def test_invalid_value_checked_first(self, patched_trial, small_scenario):
        """Test a bad value fails before any trial runs."""
        with pytest.raises(HarnessError):
            sweep(small_scenario, "MovementCount", [3, 0], 2, 1)
        patched_trial.assert_not_called()

    def test_empty_values(self, small_scenario):
        """Test an empty sweep is rejected."""
        with pytest.raises(HarnessError, match="at least one value"):
            sweep(small_scenario, "Band", [], 2, 1)

    def test_latency_study(self, patched_trial, small_scenario):
        """Test segment lengths reach the pipeline parameters."""
        results = latency_study(small_scenario, [5.0, 20.0], 2, 1, max_workers=1)
        assert [r.value for _, r in results] == ["5", "20"]
        limits = {call.args[3].segment_limit_s for call in patched_trial.call_args_list}
        assert limits == {0.005, 0.02}

    def test_latency_below_one_bit(self, small_scenario):
        """Test segment lengths shorter than one bit are rejected."""
        with pytest.raises(HarnessError, match="shorter than one bit"):
            latency_study(small_scenario, [0.5], 2, 1)


class TestReports:
    """Test cases for report export and read-back."""

    def test_round_trip(self, tmp_path):
        """Test exported reports read back identically."""
        reports = [
            MetricsReport(10, 0.9, 0.1, 1.0, 0.0, 50, 50, 4.8, 1200, "AttackerDistance", "0.5",
                          {"0.5": (0.9, 0.1)}),
            MetricsReport(10, 1 / 3, None, None, None, 30, 0, 3.0, None, "AttackerDistance", "1",
                          {"1": (1 / 3, None)}),
        ]
        path = export_report(reports, tmp_path / "report.csv")
        assert read_report(path) == reports

    def test_byte_reproducible(self, tmp_path):
        """Test equal reports give identical files."""
        reports = [MetricsReport(4, 0.75, 0.25, axis="Band", value="900")]
        a = export_report(reports, tmp_path / "a.csv").read_bytes()
        b = export_report(reports, tmp_path / "b.csv").read_bytes()
        assert a == b

    def test_empty_report(self, tmp_path):
        """Test an empty report list writes only the header."""
        path = export_report([], tmp_path / "empty.csv")
        assert path.read_text() == ",".join(REPORT_COLUMNS) + "\n"
        assert read_report(path) == []

    def test_missing_columns(self, tmp_path):
        """Test foreign CSV files are rejected."""
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ReportError, match="missing columns"):
            read_report(path)

    def test_missing_file(self, tmp_path):
        """Test unreadable paths carry the path in the error."""
        with pytest.raises(ReportError, match="missing.csv"):
            read_report(tmp_path / "missing.csv")


@pytest.fixture(scope="module")
def genuine_template():
    """Create the default five-movement genuine scenario."""
    return ScenarioSpec()


def attacker_template(kind, distance_m, **attacker):
    """Default scenario with an attacker in place of the tag."""
    return ScenarioSpec(attacker=AttackerConfig(kind=kind, distance_m=distance_m, **attacker))


class TestCalibratedRates:
    """Acceptance rates over seeded trial runs of the default scenario."""

    def test_genuine_true_positive_rate(self, genuine_template):
        """Test genuine groups are accepted at least 94% of the time."""
        report = run_trials(genuine_template, CALIBRATION_TRIALS, MASTER_SEED)
        assert report.tp_rate >= 0.94
        assert report.vote_tp_rate >= 0.99

    @pytest.mark.parametrize("kind", [AttackerKind.CONSTANT_POWER, AttackerKind.TAG])
    def test_close_attacker_false_positive_rate(self, kind):
        """Test attackers half a metre away are accepted at most 5% of the time."""
        report = run_trials(attacker_template(kind, 0.5), CALIBRATION_TRIALS, MASTER_SEED)
        assert report.tp_rate is None
        assert report.fp_rate <= 0.05

    def test_powerful_attacker_false_positive_rate(self):
        """Test a powerful attacker reacting after 50 ms is rarely accepted."""
        template = attacker_template(AttackerKind.POWERFUL, 1.0, reaction_latency_s=0.05)
        report = run_trials(template, CALIBRATION_TRIALS, MASTER_SEED)
        assert report.fp_rate <= 0.07

    def test_slight_motion_true_positive_rate(self, genuine_template):
        """Test slight body motion keeps the genuine rate above 92%."""
        template = replace(genuine_template, dynamics=DynamicsProfile(kind=DynamicsKind.SLIGHT_MOTION))
        report = run_trials(template, CALIBRATION_TRIALS, MASTER_SEED)
        assert report.tp_rate >= 0.92

    def test_more_movements_vote_better(self, genuine_template):
        """Test the vote improves with more movements and is near certain at five."""
        results = sweep(genuine_template, "MovementCount", [1, 3, 5], CALIBRATION_TRIALS, MASTER_SEED)
        rates = [report.vote_tp_rate for _, report in results]
        assert rates[0] <= rates[1] + 0.02
        assert rates[1] <= rates[2] + 0.02
        assert rates[2] >= 0.99

    def test_longer_segments_help(self, genuine_template):
        """Test the genuine rate does not fall as segments lengthen."""
        results = latency_study(genuine_template, [20.0, 50.0, 150.0], CALIBRATION_TRIALS, MASTER_SEED)
        rates = [report.tp_rate for _, report in results]
        assert rates[0] <= rates[1] + 0.02
        assert rates[1] <= rates[2] + 0.02
        assert rates[2] >= 0.92

    def test_distant_attacker_rejected(self):
        """Test the false positive rate does not grow with attacker distance."""
        template = attacker_template(AttackerKind.CONSTANT_POWER, 1.0)
        results = sweep(template, "AttackerDistance", [0.3, 1.0, 2.0], CALIBRATION_TRIALS, MASTER_SEED)
        rates = [report.fp_rate for _, report in results]
        assert rates[1] <= rates[0] + 0.02
        assert rates[2] <= rates[1] + 0.02
        assert rates[1] <= 0.05
