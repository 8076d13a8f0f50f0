"""Seeded Monte-Carlo trials, parameter sweeps and metric reports."""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.models import (
    AttackerKind,
    Band,
    DynamicsProfile,
    ScenarioError,
    ScenarioSpec,
    TagPosition,
)
from src.pipeline import (
    FinalVerdict,
    GroupVerdict,
    PipelineError,
    PipelineParams,
    authenticate,
)
from src.synth import synthesize

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "axis",
    "value",
    "n_trials",
    "tp_rate",
    "fp_rate",
    "vote_tp_rate",
    "vote_fp_rate",
    "genuine_groups",
    "attacker_groups",
    "mean_groups_per_trial",
    "latency_samples_used",
]


class HarnessError(Exception):
    """Invalid trial, sweep or latency request."""
    pass


class ReportError(Exception):
    """Metric report I/O errors."""
    pass


class SweepAxis(Enum):
    ATTACKER_DISTANCE = "AttackerDistance"
    ATTACKER_DIRECTION = "AttackerDirection"
    MOVEMENT_COUNT = "MovementCount"
    BODY_DYNAMICS = "BodyDynamics"
    TAG_POSITION = "TagPosition"
    BAND = "Band"
    TRAFFIC_RATE = "TrafficRate"
    TAG_ANGLE = "TagAngle"
    LATENCY_SAMPLES = "LatencySamples"
    ATTACKER_KIND = "AttackerKind"
    REACTION_LATENCY = "ReactionLatency"
    WALKER_DISTANCE = "WalkerDistance"

    @classmethod
    def parse(cls, value: Union[str, "SweepAxis"]) -> "SweepAxis":
        if isinstance(value, SweepAxis):
            return value
        key = str(value).replace("_", "").replace("-", "").lower()
        for axis in cls:
            if axis.value.lower() == key:
                return axis
        raise HarnessError(f"Unknown sweep axis: {value}")


@dataclass(frozen=True)
class TrialOutcome:
    """Scored result of one trial."""

    index: int
    seed: int
    genuine: bool
    groups: int
    expected_groups: int
    on_body_groups: int
    final: FinalVerdict
    samples_used: Tuple[int, ...] = ()


@dataclass(frozen=True)
class MetricsReport:
    """TP/FP rates over one run; a rate is None when its population is empty."""

    n_trials: int
    tp_rate: Optional[float]
    fp_rate: Optional[float]
    vote_tp_rate: Optional[float] = None
    vote_fp_rate: Optional[float] = None
    genuine_groups: int = 0
    attacker_groups: int = 0
    mean_groups_per_trial: float = 0.0
    latency_samples_used: Optional[int] = None
    axis: str = ""
    value: str = ""
    per_axis_breakdown: Dict[str, Tuple[Optional[float], Optional[float]]] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("tp_rate", "fp_rate", "vote_tp_rate", "vote_fp_rate"):
            rate = getattr(self, name)
            if rate is not None and not 0.0 <= rate <= 1.0:
                raise HarnessError(f"{name} out of range: {rate}")


def derive_seed(master_seed: int, index: int) -> int:
    """Independent 63-bit seed for trial ``index``."""
    sequence = np.random.SeedSequence(int(master_seed) % 2 ** 64, spawn_key=(int(index),))
    return int(sequence.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _run_trial(
    index: int,
    seed: int,
    spec: ScenarioSpec,
    params: PipelineParams,
) -> TrialOutcome:
    labeled = synthesize(spec, seed)
    verdict = authenticate(labeled.series, params)
    samples_per_bit = spec.samples_per_bit
    used = tuple(
        int(round(((g.pre_bits[1] - g.pre_bits[0]) + (g.post_bits[1] - g.post_bits[0])) / 2 * samples_per_bit))
        for g in verdict.groups
    )
    return TrialOutcome(
        index=index,
        seed=seed,
        genuine=spec.is_genuine,
        groups=verdict.groups_used,
        expected_groups=max(verdict.groups_used, spec.movement_count),
        on_body_groups=sum(1 for v in verdict.per_group if v is GroupVerdict.ON_BODY),
        final=verdict.final,
        samples_used=used,
    )


def _execute(tasks: List[Callable[[], TrialOutcome]], max_workers: int, progress: bool) -> List[TrialOutcome]:
    results: List[Optional[TrialOutcome]] = [None] * len(tasks)
    if max_workers <= 1:
        iterator = tqdm(tasks, desc="trials", disable=not progress)
        for index, task in enumerate(iterator):
            results[index] = task()
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            futures = {executor.submit(task): index for index, task in enumerate(tasks)}
            for future in tqdm(as_completed(futures), total=len(futures), desc="trials", disable=not progress):
                results[futures[future]] = future.result()
    return [outcome for outcome in results if outcome is not None]


def _rate(hits: int, total: int) -> Optional[float]:
    return hits / total if total else None


def score(
    outcomes: Sequence[TrialOutcome],
    axis: str = "",
    value: str = "",
) -> MetricsReport:
    """Group-level TP/FP rates plus trial-level vote rates."""
    genuine = [o for o in outcomes if o.genuine]
    attackers = [o for o in outcomes if not o.genuine]
    genuine_groups = sum(o.expected_groups for o in genuine)
    attacker_groups = sum(o.expected_groups for o in attackers)
    tp_rate = _rate(sum(o.on_body_groups for o in genuine), genuine_groups)
    fp_rate = _rate(sum(o.on_body_groups for o in attackers), attacker_groups)
    used = [samples for o in outcomes for samples in o.samples_used]

    return MetricsReport(
        n_trials=len(outcomes),
        tp_rate=tp_rate,
        fp_rate=fp_rate,
        vote_tp_rate=_rate(sum(o.final is FinalVerdict.ON_BODY for o in genuine), len(genuine)),
        vote_fp_rate=_rate(sum(o.final is FinalVerdict.ON_BODY for o in attackers), len(attackers)),
        genuine_groups=genuine_groups,
        attacker_groups=attacker_groups,
        mean_groups_per_trial=sum(o.groups for o in outcomes) / len(outcomes) if outcomes else 0.0,
        latency_samples_used=int(round(float(np.mean(used)))) if used else None,
        axis=axis,
        value=value,
        per_axis_breakdown={value: (tp_rate, fp_rate)} if axis else {},
    )


def run_trials(
    spec_template: ScenarioSpec,
    n_trials: int,
    master_seed: int,
    params: Optional[PipelineParams] = None,
    *,
    attacker_template: Optional[ScenarioSpec] = None,
    max_workers: int = 4,
    progress: bool = False,
    axis: str = "",
    value: str = "",
) -> MetricsReport:
    """Synthesize, authenticate and score ``n_trials`` seeded trials.

    With ``attacker_template`` the run mixes populations: even trial indices
    use ``spec_template`` and odd ones the attacker template.

    Args:
        spec_template: Scenario of every (or every even) trial
        n_trials: Number of trials, at least one
        master_seed: Seed from which every trial seed is derived
        params: Pipeline parameters
        attacker_template: Optional second scenario for odd trial indices
        max_workers: Thread pool size; 1 runs in the calling thread
        progress: Show a progress bar

    Returns:
        Scored report; identical inputs give identical reports
    """
    if n_trials < 1:
        raise HarnessError(f"n_trials must be >= 1, got {n_trials}")
    params = params or PipelineParams()
    for template in (spec_template, attacker_template):
        if template is None:
            continue
        try:
            template.validate(require_movement=True)
        except ScenarioError as e:
            raise HarnessError(f"Invalid scenario: {e}")

    tasks = []
    for index in range(n_trials):
        spec = attacker_template if attacker_template is not None and index % 2 == 1 else spec_template
        seed = derive_seed(master_seed, index)
        tasks.append(lambda index=index, seed=seed, spec=spec: _run_trial(index, seed, spec, params))

    logger.info(f"Running {n_trials} trials (master seed {master_seed}){f' for {axis}={value}' if axis else ''}")
    try:
        outcomes = _execute(tasks, max_workers, progress)
    except (PipelineError, ScenarioError) as e:
        raise HarnessError(f"Trial failed: {e}")
    report = score(outcomes, axis, value)
    logger.info(
        f"{n_trials} trials: tp={_fmt(report.tp_rate)} fp={_fmt(report.fp_rate)} "
        f"groups/trial={report.mean_groups_per_trial:.2f}"
    )
    return report


def _fmt(rate: Optional[float]) -> str:
    return "n/a" if rate is None else f"{rate:.3f}"


def _with_attacker(
    spec: ScenarioSpec,
    attacker_template: Optional[ScenarioSpec],
    **changes: Any,
) -> Tuple[ScenarioSpec, Optional[ScenarioSpec]]:
    if not spec.is_genuine:
        return replace(spec, attacker=replace(spec.attacker, **changes)), attacker_template
    if attacker_template is not None and not attacker_template.is_genuine:
        return spec, replace(attacker_template, attacker=replace(attacker_template.attacker, **changes))
    raise HarnessError("axis requires an attacker scenario")


def apply_axis(
    template: ScenarioSpec,
    params: PipelineParams,
    axis: SweepAxis,
    value: Any,
    attacker_template: Optional[ScenarioSpec] = None,
) -> Tuple[ScenarioSpec, PipelineParams, Optional[ScenarioSpec]]:
    """Substitute one axis value into the templates or the pipeline parameters."""

    def both(**changes: Any) -> Tuple[ScenarioSpec, Optional[ScenarioSpec]]:
        other = replace(attacker_template, **changes) if attacker_template is not None else None
        return replace(template, **changes), other

    try:
        if axis is SweepAxis.ATTACKER_DISTANCE:
            spec, other = _with_attacker(template, attacker_template, distance_m=float(value))
        elif axis is SweepAxis.ATTACKER_DIRECTION:
            spec, other = _with_attacker(template, attacker_template, direction=int(value))
        elif axis is SweepAxis.REACTION_LATENCY:
            spec, other = _with_attacker(template, attacker_template, reaction_latency_s=float(value))
        elif axis is SweepAxis.ATTACKER_KIND:
            kind = AttackerKind(str(value).lower())
            if kind is AttackerKind.NONE:
                raise HarnessError("AttackerKind sweep values must name an attacker")
            spec, other = _with_attacker(template, attacker_template, kind=kind)
        elif axis is SweepAxis.MOVEMENT_COUNT:
            count = int(value)
            if count < 1:
                raise HarnessError(f"MovementCount must be >= 1, got {value}")
            spec, other = both(movement_count=count)
        elif axis is SweepAxis.BODY_DYNAMICS:
            spec, other = both(dynamics=DynamicsProfile.parse(value))
        elif axis is SweepAxis.WALKER_DISTANCE:
            spec, other = both(dynamics=DynamicsProfile.walkers_nearby(float(value)))
        elif axis is SweepAxis.TAG_POSITION:
            spec, other = both(tag_position=TagPosition(str(value).lower()))
        elif axis is SweepAxis.BAND:
            spec, other = both(band=Band.parse(value))
        elif axis is SweepAxis.TRAFFIC_RATE:
            rate = None if str(value).lower() == "continuous" else float(value)
            spec, other = both(traffic_rate_pkt_s=rate)
        elif axis is SweepAxis.TAG_ANGLE:
            spec, other = both(tag_angle_deg=float(value))
        elif axis is SweepAxis.LATENCY_SAMPLES:
            samples = int(value)
            if samples < template.samples_per_bit:
                raise HarnessError(f"LatencySamples {samples} is shorter than one bit")
            return template, replace(params, segment_limit_s=samples / template.sample_rate_hz), attacker_template
        else:
            raise HarnessError(f"Unsupported axis: {axis}")
        for candidate in (spec, other):
            if candidate is not None:
                candidate.validate(require_movement=True)
    except HarnessError:
        raise
    except (TypeError, ValueError) as e:
        raise HarnessError(f"Invalid value {value!r} for axis {axis.value}: {e}")
    return spec, params, other


def sweep(
    template: ScenarioSpec,
    axis: Union[str, SweepAxis],
    values: Sequence[Any],
    n_trials: int,
    seed: int,
    params: Optional[PipelineParams] = None,
    *,
    attacker_template: Optional[ScenarioSpec] = None,
    max_workers: int = 4,
    progress: bool = False,
) -> List[Tuple[Any, MetricsReport]]:
    """One run per axis value, every run on the same trial seeds."""
    axis = SweepAxis.parse(axis)
    if not values:
        raise HarnessError("sweep needs at least one value")
    params = params or PipelineParams()

    # validate every value before running anything
    runs = [(value, apply_axis(template, params, axis, value, attacker_template)) for value in values]
    results = []
    for value, (spec, value_params, other) in runs:
        report = run_trials(
            spec,
            n_trials,
            seed,
            value_params,
            attacker_template=other,
            max_workers=max_workers,
            progress=progress,
            axis=axis.value,
            value=str(value),
        )
        results.append((value, report))
    return results


def latency_study(
    spec: ScenarioSpec,
    segment_lengths_ms: Sequence[float],
    n_trials: int,
    seed: int,
    params: Optional[PipelineParams] = None,
    *,
    attacker_template: Optional[ScenarioSpec] = None,
    max_workers: int = 4,
    progress: bool = False,
) -> List[Tuple[float, MetricsReport]]:
    """TP/FP as a function of how much of each stable segment is used."""
    params = params or PipelineParams()
    bit_ms = 1000.0 / spec.backscatter.bitrate_bps
    for length in segment_lengths_ms:
        if length <= 0 or length + 1e-9 < bit_ms:
            raise HarnessError(f"segment length {length} ms is shorter than one bit ({bit_ms:g} ms)")

    results = []
    for length in segment_lengths_ms:
        report = run_trials(
            spec,
            n_trials,
            seed,
            replace(params, segment_limit_s=length / 1000.0),
            attacker_template=attacker_template,
            max_workers=max_workers,
            progress=progress,
            axis="LatencyMs",
            value=f"{length:g}",
        )
        results.append((length, report))
    return results


def report_frame(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """Reports as a frame in report column order; missing values are NA."""
    rows = [{column: getattr(report, column) for column in REPORT_COLUMNS} for report in reports]
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    for column in ("n_trials", "genuine_groups", "attacker_groups", "latency_samples_used"):
        frame[column] = frame[column].astype("Int64")
    for column in ("tp_rate", "fp_rate", "vote_tp_rate", "vote_fp_rate", "mean_groups_per_trial"):
        frame[column] = frame[column].astype("float64")
    return frame


def export_report(reports: Sequence[MetricsReport], path: Union[str, Path]) -> Path:
    """Write reports as CSV, one row per report in the given order."""
    path = Path(path)
    frame = report_frame(reports)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise ReportError(f"Cannot write report {path}: {e}")
    logger.info(f"Wrote {len(frame)} report rows to {path}")
    return path


def _optional(value: Any) -> Optional[float]:
    return None if pd.isna(value) else float(value)


def read_report(path: Union[str, Path]) -> List[MetricsReport]:
    """Parse a CSV written by :func:`export_report`."""
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            dtype={"axis": str, "value": str},
            keep_default_na=False,
            na_values=[""],
            float_precision="round_trip",
        )
    except (OSError, pd.errors.ParserError) as e:
        raise ReportError(f"Cannot read report {path}: {e}")
    except pd.errors.EmptyDataError:
        raise ReportError(f"Report {path} is empty")

    missing = [column for column in REPORT_COLUMNS if column not in frame.columns]
    if missing:
        raise ReportError(f"Report {path} is missing columns: {', '.join(missing)}")

    reports = []
    for row in frame.to_dict("records"):
        axis = "" if pd.isna(row["axis"]) else str(row["axis"])
        value = "" if pd.isna(row["value"]) else str(row["value"])
        tp_rate, fp_rate = _optional(row["tp_rate"]), _optional(row["fp_rate"])
        latency = row["latency_samples_used"]
        reports.append(
            MetricsReport(
                n_trials=int(row["n_trials"]),
                tp_rate=tp_rate,
                fp_rate=fp_rate,
                vote_tp_rate=_optional(row["vote_tp_rate"]),
                vote_fp_rate=_optional(row["vote_fp_rate"]),
                genuine_groups=int(row["genuine_groups"]),
                attacker_groups=int(row["attacker_groups"]),
                mean_groups_per_trial=float(row["mean_groups_per_trial"]),
                latency_samples_used=None if pd.isna(latency) else int(latency),
                axis=axis,
                value=value,
                per_axis_breakdown={value: (tp_rate, fp_rate)} if axis else {},
            )
        )
    return reports

