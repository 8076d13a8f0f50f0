"""Backscatter authentication pipeline.

Stages, in order: smoothing, two-level backscatter demodulation within the
main path's level segments, main-path trace extraction, drift screening of
the state-detection trace, trace slopes, movement-state detection and
selection, segment grouping, and the two-stage attacker
defense with a majority vote.

Every decision is differential, so adding a constant dB offset to a series
does not change its verdict.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.cluster.vq import kmeans2
from scipy.stats import theilslopes

from src.models import SampleSeries

logger = logging.getLogger(__name__)

MIN_SAMPLES_PER_BIT = 10
DRIFT_BLOCK_FACTOR = 50
CONTEXT_WIDENING = (1, 2, 4)
STEP_WINDOW_FACTOR = 8
KMEANS_ITERATIONS = 8


class PipelineError(Exception):
    """Pipeline failures."""
    pass


class PipelineConfigError(PipelineError):
    """Invalid pipeline parameters for the series at hand."""
    pass


class NoBackscatterDetected(PipelineError):
    """No separable two-level reflection anywhere in the series."""
    pass


@dataclass(frozen=True)
class PipelineParams:
    """Detection thresholds and window sizes.

    ``segment_limit_s`` keeps only the bits of each stable segment nearest
    the movement; ``None`` uses whole segments.
    """

    smooth_window: int = 50
    w_coeff: float = 1.2
    slope_threshold_db: float = 10.0
    state_diff_threshold_db: float = 4.0
    variance_threshold_db: float = 2.5
    auth_threshold_db: float = 4.5
    min_stable_intervals: int = 3
    trace_window: int = 20
    context_bits: int = 6
    separability_ratio: float = 3.0
    min_depth_db: float = 0.2
    drift_threshold_db_per_s: float = 0.5
    carrier_gap_db: float = 35.0
    segment_limit_s: Optional[float] = None

    def __post_init__(self):
        if self.smooth_window < 2:
            raise PipelineConfigError(f"smooth_window must be >= 2, got {self.smooth_window}")
        if self.min_stable_intervals < 1:
            raise PipelineConfigError("min_stable_intervals must be >= 1")
        if self.trace_window < 1 or self.context_bits < 1:
            raise PipelineConfigError("trace_window and context_bits must be >= 1")
        for name in (
            "w_coeff",
            "slope_threshold_db",
            "state_diff_threshold_db",
            "variance_threshold_db",
            "auth_threshold_db",
            "separability_ratio",
            "min_depth_db",
            "drift_threshold_db_per_s",
            "carrier_gap_db",
        ):
            if not getattr(self, name) > 0:
                raise PipelineConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.segment_limit_s is not None and self.segment_limit_s <= 0:
            raise PipelineConfigError("segment_limit_s must be positive")

    def interval_length(self, sample_rate_hz: int, bitrate_bps: int) -> int:
        """Slope interval N in trace windows."""
        n = int(round(self.w_coeff * sample_rate_hz / bitrate_bps / self.trace_window))
        if n < 1:
            raise PipelineConfigError(
                f"slope interval rounds to {n}; lower trace_window or raise w_coeff"
            )
        return n

    def guard_bits(self, sample_rate_hz: int, bitrate_bps: int) -> int:
        """Bits dropped on the movement side of every segment."""
        interval = self.interval_length(sample_rate_hz, bitrate_bps)
        samples_per_bit = sample_rate_hz / bitrate_bps
        return 2 * self.context_bits + math.ceil(2 * interval * self.trace_window / samples_per_bit) + 1


@dataclass(frozen=True, eq=False)
class BackscatterStream:
    """Demodulated reflections, one entry per bit interval.

    ``reflection_power`` is NaN for bits that did not reflect or could not
    be decoded. ``bit_boundaries`` has one more entry than there are bits.
    """

    reflection_power: np.ndarray
    decoded_bits: np.ndarray
    bit_boundaries: np.ndarray
    sample_rate_hz: int
    bitrate_bps: int

    @property
    def n_bits(self) -> int:
        return int(self.decoded_bits.size)


@dataclass(frozen=True, eq=False)
class MainPathTrace:
    values: np.ndarray
    window: int

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class SlopeSeries:
    """Trace slopes; thresholds compare against ``window_mean_diff`` (dB)."""

    raw: np.ndarray
    window_mean_diff: np.ndarray
    normalized: np.ndarray
    interval: int
    trace: MainPathTrace

    @property
    def trace_length(self) -> int:
        return len(self.trace)

    def __len__(self) -> int:
        return int(self.raw.size)


class StateKind(Enum):
    STABLE = "Stable"
    VARYING = "Varying"


@dataclass(frozen=True)
class StateMark:
    """A half-open interval ``[start, end)`` of the trace."""

    kind: StateKind
    start: int
    end: int
    mean_db: float

    @property
    def interval(self) -> Tuple[int, int]:
        return (self.start, self.end)


class SegmentClass(Enum):
    FAST = "Fast"
    SLOW = "Slow"


class GroupVerdict(Enum):
    ON_BODY = "OnBody"
    ATTACKER = "Attacker"
    POWERFUL_ATTACKER = "PowerfulAttacker"


class FinalVerdict(Enum):
    ON_BODY = "OnBody"
    ATTACKER = "Attacker"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True, eq=False)
class SegmentGroup:
    """Reflection power before and after one transmitter movement."""

    pre: np.ndarray
    movement: StateMark
    post: np.ndarray
    pre_mean_db: float
    post_mean_db: float
    pre_var: float
    post_var: float
    pre_var_normalized: float
    post_var_normalized: float
    pre_bits: Tuple[int, int]
    post_bits: Tuple[int, int]

    @property
    def mean_difference_db(self) -> float:
        return abs(self.pre_mean_db - self.post_mean_db)


@dataclass(frozen=True)
class Verdict:
    per_group: Tuple[GroupVerdict, ...]
    final: FinalVerdict
    groups_used: int
    groups: Tuple[SegmentGroup, ...] = ()
    diagnostics: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.groups_used < 1 and self.final is not FinalVerdict.INCONCLUSIVE:
            raise PipelineError("a verdict without groups must be Inconclusive")


def carrier_mask(samples: np.ndarray, carrier_gap_db: float) -> np.ndarray:
    """True where a carrier was present; packet gaps sit far below the signal."""
    if samples.size == 0:
        return np.zeros(0, dtype=bool)
    return samples > np.percentile(samples, 99) - carrier_gap_db


def masked_moving_average(values: np.ndarray, mask: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average over valid samples; windows shrink at the edges.

    Samples whose window holds no valid sample keep their input value.
    """
    kernel = np.ones(window)
    weights = mask.astype(float)
    total = np.convolve(np.where(mask, values, 0.0), kernel, mode="same")
    count = np.convolve(weights, kernel, mode="same")
    out = values.astype(float).copy()
    filled = count > 0.5
    out[filled] = total[filled] / count[filled]
    return out


def smooth(series: SampleSeries, params: Optional[PipelineParams] = None) -> SampleSeries:
    """Centered moving average over carrier samples."""
    params = params or PipelineParams()
    if len(series) < params.smooth_window:
        raise PipelineError(
            f"series of {len(series)} samples is shorter than the smoothing window ({params.smooth_window})"
        )
    values = series.samples
    mask = carrier_mask(values, params.carrier_gap_db)
    return series.with_samples(masked_moving_average(values, mask, params.smooth_window))


def _bit_boundaries(n_samples: int, sample_rate_hz: int, bitrate_bps: int) -> np.ndarray:
    n_bits = -(-n_samples * bitrate_bps // sample_rate_hz)
    k = np.arange(n_bits + 1, dtype=np.int64)
    bounds = -(-k * sample_rate_hz // bitrate_bps)
    bounds[-1] = n_samples
    return bounds


def _bit_levels(values: np.ndarray, mask: np.ndarray, bounds: np.ndarray, trim: int) -> np.ndarray:
    weighted = np.concatenate(([0.0], np.cumsum(np.where(mask, values, 0.0))))
    counts = np.concatenate(([0], np.cumsum(mask)))
    starts = np.minimum(bounds[:-1] + trim, bounds[1:])
    ends = np.maximum(bounds[1:] - trim, starts)
    spans = ends - starts
    valid = counts[ends] - counts[starts]
    levels = np.full(spans.size, np.nan)
    usable = (spans > 0) & (valid * 2 >= spans) & (valid > 0)
    levels[usable] = (weighted[ends] - weighted[starts])[usable] / valid[usable]
    return levels


def lower_envelope(levels: np.ndarray, half_width: int) -> np.ndarray:
    """Running minimum over ``2 * half_width + 1`` bits.

    Away from steps it sits on the non-reflecting level whatever the bits
    are, unless a run of reflecting bits outlasts the window.
    """
    if half_width < 1 or levels.size == 0:
        return levels.astype(float).copy()
    padded = np.pad(levels, half_width, mode="edge")
    return sliding_window_view(padded, 2 * half_width + 1).min(axis=1)


def level_steps(levels: np.ndarray, params: PipelineParams) -> np.ndarray:
    """Positions where the non-reflecting level steps by more than ``state_diff_threshold_db``.

    The step statistic is the difference between the lower envelope's means
    over the ``STEP_WINDOW_FACTOR * context_bits`` bits after and before each
    position; every run above the threshold contributes its peak. A position
    is the index of the first bit at the new level.

    Args:
        levels: Bit levels (dB) without gaps
        params: Pipeline parameters

    Returns:
        Sorted step positions, each in ``[1, len(levels))``
    """
    half = max(1, params.context_bits // 2)
    window = STEP_WINDOW_FACTOR * params.context_bits
    n = levels.size
    if n < window:
        return np.zeros(0, dtype=np.int64)

    envelope = lower_envelope(levels, half)
    cumulative = np.concatenate(([0.0], np.cumsum(envelope)))
    position = np.arange(1, n)
    lo = np.maximum(position - window, 0)
    hi = np.minimum(position + window, n)
    before = (cumulative[position] - cumulative[lo]) / (position - lo)
    after = (cumulative[hi] - cumulative[position]) / (hi - position)
    diff = after - before
    covered = (position - lo >= window // 2) & (hi - position >= window // 2)
    above = covered & (np.abs(diff) > params.state_diff_threshold_db)

    changes = np.flatnonzero(np.diff(np.concatenate(([0], above.astype(np.int8), [0]))))
    steps = []
    for start, end in zip(changes[::2], changes[1::2]):
        peak = start + int(np.argmax(np.abs(diff[start:end])))
        # the envelope drops half a window early and rises half a window late
        shift = half if diff[peak] < 0 else -half
        cut = int(np.clip(position[peak] + shift, 1, n - 1))
        # bits far below the higher side's floor belong to the lower side
        if diff[peak] < 0:
            floor = before[peak] - params.state_diff_threshold_db
            while cut > 1 and levels[cut - 1] < floor:
                cut -= 1
        else:
            floor = after[peak] - params.state_diff_threshold_db
            while cut < n - 1 and levels[cut] < floor:
                cut += 1
        steps.append(cut)
    return np.unique(np.asarray(steps, dtype=np.int64))


def _split_levels(context: np.ndarray, params: PipelineParams) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Two-level k-means on a context; None when the levels are not separable."""
    centroids, labels = kmeans2(
        context,
        np.array([context.min(), context.max()]),
        iter=KMEANS_ITERATIONS,
        minit="matrix",
        missing="warn",
    )
    if np.unique(labels).size < 2:
        return None
    if centroids[0] > centroids[1]:
        centroids = centroids[::-1]
        labels = 1 - labels
    gap = centroids[1] - centroids[0]
    pooled = math.sqrt(float(np.mean((context - centroids[labels]) ** 2)))
    if gap < params.min_depth_db or gap <= params.separability_ratio * pooled:
        return None
    return centroids, labels


class _SegmentContexts:
    """Two-level splits confined to the level segments between steps.

    Bits within ``half`` of a step are transition bits: they never enter a
    context and are judged against the splits on both sides of the step.
    """

    def __init__(self, levels: np.ndarray, steps: np.ndarray, params: PipelineParams):
        self.levels = levels
        self.steps = steps
        self.params = params
        self.half = max(1, params.context_bits // 2)
        n = levels.size
        position = np.arange(n)
        self.segment = np.searchsorted(steps, position, side="right")
        transition = np.zeros(n, dtype=bool)
        for step in steps:
            transition[max(0, step - self.half):min(n, step + self.half + 1)] = True
        self.transition = transition
        self.members = [
            np.flatnonzero((self.segment == index) & ~transition) for index in range(steps.size + 1)
        ]

    def split_near(self, position: int, segment: int) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Split of the context nearest ``position`` inside ``segment``.

        Returns:
            (centroids, labels, context positions), or None when inseparable
        """
        members = self.members[segment]
        if members.size == 0:
            return None
        anchor = int(np.searchsorted(members, position))
        for factor in CONTEXT_WIDENING:
            radius = self.params.context_bits * factor
            size = 2 * radius + 1
            lo = max(0, min(anchor - radius, members.size - size))
            chosen = members[lo:lo + size]
            context = self.levels[chosen]
            if np.ptp(context) > 0:
                split = _split_levels(context, self.params)
                if split is not None:
                    return split[0], split[1], chosen
            if chosen.size == members.size:
                break
        return None

    def decode(self, position: int) -> Optional[Tuple[bool, float]]:
        """Whether the bit reflected and its local non-reflecting level."""
        segment = int(self.segment[position])
        if not self.transition[position]:
            split = self.split_near(position, segment)
            if split is None:
                return None
            centroids, labels, chosen = split
            label = labels[int(np.searchsorted(chosen, position))]
            return bool(label == 1), float(centroids[0])

        nearest = int(np.argmin(np.abs(self.steps - position)))
        level = self.levels[position]
        best = None
        for side in (nearest, nearest + 1):
            split = self.split_near(position, side)
            if split is None:
                continue
            centroids = split[0]
            distance = np.abs(centroids - level)
            label = int(np.argmin(distance))
            if best is None or distance[label] < best[0]:
                best = (float(distance[label]), label == 1, float(centroids[0]))
        if best is None:
            return None
        return best[1], best[2]


def extract_backscatter(
    smoothed: SampleSeries,
    bitrate_bps: int,
    params: Optional[PipelineParams] = None,
) -> Tuple[BackscatterStream, SampleSeries]:
    """Demodulate the on/off reflections and remove them from the series.

    Each bit's level is the mean of its central samples. The main path's
    steps split the bits into level segments; a two-level split of the
    surrounding bits of the same segment decides whether a bit reflected.
    The reflected path's power is recovered from the bit level and the
    segment's local non-reflecting level, and the residual is the series
    with every reflecting bit lowered to that level.

    Returns:
        The backscatter stream and the residual main-path series

    Raises:
        PipelineConfigError: If bits are too short for the smoothing window
        NoBackscatterDetected: If no context separates into two levels
    """
    params = params or PipelineParams()
    fs = smoothed.sample_rate_hz
    samples_per_bit = fs / bitrate_bps
    if samples_per_bit < MIN_SAMPLES_PER_BIT:
        raise PipelineConfigError(
            f"{samples_per_bit:.1f} samples per bit is below the minimum of {MIN_SAMPLES_PER_BIT}"
        )
    if samples_per_bit < 2 * params.smooth_window:
        raise PipelineConfigError(
            f"{samples_per_bit:.1f} samples per bit cannot survive a smoothing window of {params.smooth_window}"
        )

    values = smoothed.samples
    mask = carrier_mask(values, params.carrier_gap_db)
    bounds = _bit_boundaries(values.size, fs, bitrate_bps)
    levels = _bit_levels(values, mask, bounds, math.ceil(params.smooth_window / 2))
    n_bits = levels.size

    decoded = np.zeros(n_bits, dtype=np.int8)
    reflection = np.full(n_bits, np.nan)
    contribution = np.zeros(n_bits)
    valid_bits = np.flatnonzero(~np.isnan(levels))
    valid_levels = levels[valid_bits]
    steps = level_steps(valid_levels, params)
    contexts = _SegmentContexts(valid_levels, steps, params)
    separable = 0

    for position, bit in enumerate(valid_bits):
        result = contexts.decode(position)
        if result is None:
            continue
        separable += 1
        reflecting, low = result
        if reflecting and levels[bit] > low:
            high = levels[bit]
            decoded[bit] = 1
            contribution[bit] = high - low
            reflection[bit] = 10.0 * np.log10(10 ** (high / 10.0) - 10 ** (low / 10.0))

    if separable == 0:
        raise NoBackscatterDetected(f"no separable reflection levels in {n_bits} bits")
    logger.debug(
        f"Demodulated {n_bits} bits, {int(decoded.sum())} reflecting, {separable} separable contexts, "
        f"{steps.size} level steps"
    )

    per_sample = np.repeat(contribution, np.diff(bounds))
    residual = values - masked_moving_average(per_sample, mask, params.smooth_window)
    residual = np.where(mask, residual, values)
    stream = BackscatterStream(reflection, decoded, bounds, fs, int(bitrate_bps))
    return stream, smoothed.with_samples(residual)


def extract_trace(
    residual: SampleSeries,
    trace_window: int,
    carrier_gap_db: float = 35.0,
) -> MainPathTrace:
    """Non-overlapping window means of the residual over carrier samples."""
    values = residual.samples
    if trace_window < 1 or values.size < trace_window:
        raise PipelineError(f"residual of {values.size} samples is shorter than the trace window ({trace_window})")

    mask = carrier_mask(values, carrier_gap_db)
    n_windows = -(-values.size // trace_window)
    padded = n_windows * trace_window
    sums = np.zeros(padded)
    sums[:values.size] = np.where(mask, values, 0.0)
    counts = np.zeros(padded)
    counts[:values.size] = mask
    sums = sums.reshape(n_windows, trace_window).sum(axis=1)
    counts = counts.reshape(n_windows, trace_window).sum(axis=1)

    means = np.full(n_windows, np.nan)
    filled = counts > 0
    if not filled.any():
        raise PipelineError("residual has no carrier samples")
    means[filled] = sums[filled] / counts[filled]
    if not filled.all():
        index = np.arange(n_windows)
        means[~filled] = np.interp(index[~filled], index[filled], means[filled])
    return MainPathTrace(means, trace_window)


def drift_slope(trace: MainPathTrace, sample_rate_hz: int, params: PipelineParams) -> Optional[float]:
    """Slow drift of the main path in dB/s, measured inside level plateaus only.

    The trace is cut into blocks of ``DRIFT_BLOCK_FACTOR * smooth_window``
    samples. Blocks that hold a level step are dropped, and the remaining
    blocks form plateaus wherever consecutive block means stay within
    ``state_diff_threshold_db``. The drift is the median of the plateaus'
    Theil-Sen slopes, so movement steps never set it.

    Returns:
        The slope, or None when no plateau spans three blocks
    """
    block = max(1, DRIFT_BLOCK_FACTOR * params.smooth_window // trace.window)
    n_blocks = len(trace) // block
    if n_blocks < 3:
        return None

    blocks = trace.values[:n_blocks * block].reshape(n_blocks, block)
    flat = np.ptp(blocks, axis=1) <= params.state_diff_threshold_db
    means = blocks.mean(axis=1)
    centers = (np.arange(n_blocks) * block + block / 2) * trace.window / sample_rate_hz

    plateaus: List[List[int]] = []
    for index in range(n_blocks):
        if not flat[index]:
            plateaus.append([])
            continue
        if plateaus and plateaus[-1] and abs(means[index] - means[plateaus[-1][-1]]) <= params.state_diff_threshold_db:
            plateaus[-1].append(index)
        else:
            plateaus.append([index])

    found = [theilslopes(means[p], centers[p])[0] for p in plateaus if len(p) >= 3]
    if not found:
        return None
    return float(np.median(found))


def remove_drift(trace: MainPathTrace, sample_rate_hz: int, params: PipelineParams) -> MainPathTrace:
    """Detrended copy of the trace for state detection.

    Drift within ``drift_threshold_db_per_s`` leaves the trace untouched.
    Stable-state and group means always come from the original trace.
    """
    slope = drift_slope(trace, sample_rate_hz, params)
    if slope is None or abs(slope) <= params.drift_threshold_db_per_s:
        return trace
    logger.debug(f"Removing drift of {slope:.3f} dB/s from the state-detection trace")
    t = np.arange(len(trace)) * trace.window / sample_rate_hz
    return MainPathTrace(trace.values - slope * t, trace.window)


def slopes(
    trace: MainPathTrace,
    params: PipelineParams,
    sample_rate_hz: int,
    bitrate_bps: int,
) -> SlopeSeries:
    """Difference of adjacent N-window sums of |trace|, divided by N squared."""
    interval = params.interval_length(sample_rate_hz, bitrate_bps)
    magnitude = np.abs(trace.values)
    if magnitude.size < 2 * interval:
        raise PipelineError(f"trace of {magnitude.size} windows is shorter than 2N = {2 * interval}")

    sums = sliding_window_view(magnitude, interval).sum(axis=1)
    count = magnitude.size - 2 * interval + 1
    before = sums[:count]
    after = sums[interval:interval + count]
    raw = np.abs(after - before) / interval ** 2

    span = raw.max() - raw.min()
    normalized = (raw - raw.min()) / span if span > 0 else np.zeros_like(raw)
    return SlopeSeries(raw, raw * interval, normalized, interval, trace)


def detect_states(slope_series: SlopeSeries, params: PipelineParams) -> List[StateMark]:
    """Mark stable and varying intervals of the trace.

    A slope index is stable when it and the ``min_stable_intervals`` slope
    intervals before it all sit below the threshold. Marks are returned in
    trace coordinates and tile the whole trace.
    """
    diff = slope_series.window_mean_diff
    if diff.size == 0:
        return []
    interval = slope_series.interval
    lookback = params.min_stable_intervals * interval

    index = np.arange(diff.size)
    last_violation = np.maximum.accumulate(np.where(diff >= params.slope_threshold_db, index, -1))
    stable = last_violation < np.maximum(index - lookback, 0)
    stable &= diff < params.slope_threshold_db

    edges = np.flatnonzero(np.diff(stable.astype(np.int8))) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [diff.size]))

    marks = []
    for position, (start, end) in enumerate(zip(starts, ends)):
        trace_start = 0 if position == 0 else int(start) + interval
        trace_end = slope_series.trace_length if position == len(starts) - 1 else int(end) + interval
        kind = StateKind.STABLE if stable[start] else StateKind.VARYING
        mean = float(np.mean(slope_series.trace.values[trace_start:trace_end]))
        marks.append(StateMark(kind, trace_start, trace_end, mean))
    return marks


def _with_means(marks: Sequence[StateMark], trace: MainPathTrace) -> List[StateMark]:
    return [
        StateMark(mark.kind, mark.start, mark.end, float(np.mean(trace.values[mark.start:mark.end])))
        for mark in marks
    ]


def select_movement_states(
    states: Sequence[StateMark],
    trace: MainPathTrace,
    params: PipelineParams,
) -> List[Tuple[StateMark, StateMark, StateMark]]:
    """Keep stable/varying/stable triples whose stable levels differ enough."""
    marks = _with_means(states, trace)
    triples = []
    for pre, varying, post in zip(marks, marks[1:], marks[2:]):
        if (pre.kind, varying.kind, post.kind) != (StateKind.STABLE, StateKind.VARYING, StateKind.STABLE):
            continue
        if abs(pre.mean_db - post.mean_db) > params.state_diff_threshold_db:
            triples.append((pre, varying, post))
        else:
            logger.debug(f"Discarded dynamic-effect triple at trace {varying.interval}")
    return triples


def segment_variance(
    segment: np.ndarray,
    run_segments: Optional[Sequence[np.ndarray]] = None,
) -> Tuple[float, float]:
    """Variance of |x| about its mean, and its min-max position among the run's segments.

    Returns:
        (raw variance in dB squared, normalized variance in [0, 1])
    """
    values = np.abs(np.asarray(segment, dtype=float))
    if values.size < 2:
        raise PipelineError(f"segment of {values.size} values is too short for a variance")
    raw = float(np.sum((values - values.mean()) ** 2) / values.size)
    if not run_segments:
        return raw, 0.0
    run = [segment_variance(other)[0] for other in run_segments]
    low, high = min(run + [raw]), max(run + [raw])
    return raw, (raw - low) / (high - low) if high > low else 0.0


def _segment_bits(
    bs: BackscatterStream,
    mark: StateMark,
    trace_window: int,
    guard: int,
    limit_bits: Optional[int],
    before_movement: bool,
) -> Tuple[int, int]:
    start_sample = mark.start * trace_window
    end_sample = min(mark.end * trace_window, int(bs.bit_boundaries[-1]))
    first = int(np.searchsorted(bs.bit_boundaries, start_sample, side="left"))
    last = int(np.searchsorted(bs.bit_boundaries, end_sample, side="right")) - 1
    if before_movement:
        last -= guard
        if limit_bits is not None:
            first = max(first, last - limit_bits)
    else:
        first += guard
        if limit_bits is not None:
            last = min(last, first + limit_bits)
    return first, max(first, last)


def segment_and_group(
    bs: BackscatterStream,
    triples: Sequence[Tuple[StateMark, StateMark, StateMark]],
    params: Optional[PipelineParams] = None,
    diagnostics: Optional[List[str]] = None,
) -> List[SegmentGroup]:
    """Cut the reflection power into pre/post segments around each movement."""
    params = params or PipelineParams()
    guard = params.guard_bits(bs.sample_rate_hz, bs.bitrate_bps)
    limit_bits = None
    if params.segment_limit_s is not None:
        limit_bits = max(1, int(math.floor(params.segment_limit_s * bs.bitrate_bps + 1e-9)))

    segments = []
    for index, (pre_mark, varying, post_mark) in enumerate(triples):
        pre_bits = _segment_bits(bs, pre_mark, params.trace_window, guard, limit_bits, True)
        post_bits = _segment_bits(bs, post_mark, params.trace_window, guard, limit_bits, False)
        pre = bs.reflection_power[pre_bits[0]:pre_bits[1]]
        post = bs.reflection_power[post_bits[0]:post_bits[1]]
        pre, post = pre[~np.isnan(pre)], post[~np.isnan(post)]
        if pre.size < 2 or post.size < 2:
            message = (
                f"group {index} skipped: {pre.size} reflecting bits before and "
                f"{post.size} after movement at trace {varying.interval}"
            )
            logger.warning(message)
            if diagnostics is not None:
                diagnostics.append(message)
            continue
        segments.append((pre, varying, post, pre_bits, post_bits))

    run = [part for pre, _, post, _, _ in segments for part in (pre, post)]
    groups = []
    for pre, varying, post, pre_bits, post_bits in segments:
        pre_var, pre_norm = segment_variance(pre, run)
        post_var, post_norm = segment_variance(post, run)
        groups.append(
            SegmentGroup(
                pre=pre,
                movement=varying,
                post=post,
                pre_mean_db=float(pre.mean()),
                post_mean_db=float(post.mean()),
                pre_var=pre_var,
                post_var=post_var,
                pre_var_normalized=pre_norm,
                post_var_normalized=post_norm,
                pre_bits=pre_bits,
                post_bits=post_bits,
            )
        )
    return groups


def classify_powerful(group: SegmentGroup, params: PipelineParams) -> Tuple[SegmentClass, SegmentClass]:
    """Fast when the segment's standard deviation exceeds the variance threshold."""
    return tuple(
        SegmentClass.FAST if math.sqrt(variance) > params.variance_threshold_db else SegmentClass.SLOW
        for variance in (group.pre_var, group.post_var)
    )


def authenticate_group(group: SegmentGroup, params: PipelineParams) -> GroupVerdict:
    if SegmentClass.FAST in classify_powerful(group, params):
        return GroupVerdict.POWERFUL_ATTACKER
    if group.mean_difference_db > params.auth_threshold_db:
        return GroupVerdict.ON_BODY
    return GroupVerdict.ATTACKER


def majority_vote(per_group: Sequence[GroupVerdict]) -> FinalVerdict:
    """Strict majority of OnBody against everything else; ties are Inconclusive."""
    on_body = sum(1 for verdict in per_group if verdict is GroupVerdict.ON_BODY)
    off_body = len(per_group) - on_body
    if on_body > off_body:
        return FinalVerdict.ON_BODY
    if off_body > on_body:
        return FinalVerdict.ATTACKER
    return FinalVerdict.INCONCLUSIVE


def authenticate(
    series: SampleSeries,
    params: Optional[PipelineParams] = None,
    *,
    bitrate_bps: Optional[int] = None,
) -> Verdict:
    """Run the whole pipeline on one series.

    Args:
        series: Received RSS series
        params: Pipeline parameters (defaults when omitted)
        bitrate_bps: Tag bitrate; falls back to the series metadata

    Returns:
        The verdict; Inconclusive with a diagnostic when no backscatter is found
    """
    params = params or PipelineParams()
    bitrate = bitrate_bps if bitrate_bps is not None else series.bitrate_bps
    if not bitrate:
        raise PipelineConfigError("bitrate_bps is required (argument or series metadata)")

    diagnostics: List[str] = []
    smoothed = smooth(series, params)
    try:
        stream, residual = extract_backscatter(smoothed, bitrate, params)
    except NoBackscatterDetected as e:
        logger.warning(f"Inconclusive: {e}")
        return Verdict((), FinalVerdict.INCONCLUSIVE, 0, (), (f"no backscatter detected: {e}",))

    trace = extract_trace(residual, params.trace_window, params.carrier_gap_db)
    detection_trace = remove_drift(trace, series.sample_rate_hz, params)
    slope_series = slopes(detection_trace, params, series.sample_rate_hz, bitrate)
    states = detect_states(slope_series, params)
    triples = select_movement_states(states, trace, params)
    groups = segment_and_group(stream, triples, params, diagnostics)
    logger.debug(f"{len(states)} state marks, {len(triples)} movement triples, {len(groups)} groups")

    per_group = tuple(authenticate_group(group, params) for group in groups)
    final = majority_vote(per_group)
    if not groups:
        diagnostics.append("no movement groups detected")
    elif final is FinalVerdict.INCONCLUSIVE:
        diagnostics.append(f"tied vote over {len(groups)} groups")
    return Verdict(per_group, final, len(groups), tuple(groups), tuple(diagnostics))
