"""Labeled RSS series synthesis for genuine-tag and attacker scenarios."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import signal

from src.models import (
    AttackerConfig,
    AttackerKind,
    Band,
    DynamicsKind,
    DynamicsProfile,
    LabeledSeries,
    MovementScript,
    SampleSeries,
    ScenarioError,
    ScenarioSpec,
    SourceLabel,
    TagPosition,
)
from src.propagation import (
    AttenuationParams,
    BodyGeometry,
    LinkParams,
    free_space_rss_db,
    on_body_rss_db,
    polarization_penalty_db,
    proximity_coupling_std_db,
)

logger = logging.getLogger(__name__)

DEFAULT_TX_POWER_W = 1e-8
ANTENNA_GAIN = 10 ** 0.3  # 3 dBi
MAIN_LINK_DISTANCE_M = 0.3
MAIN_BODY = BodyGeometry(surface_radius_m=0.15, antenna_height_tx_m=0.01, antenna_height_rx_m=0.01)
NOISE_FLOOR_DB = -120.0
MIN_SAMPLES_PER_BIT = 10
RIPPLE_FREQUENCY_RATIO = 0.23
DYNAMICS_GRID_HZ = 1000
TAG_ATTACKER_COUPLING = 1.3
FLAT_LEVEL_TOLERANCE_DB = 1e-3

BAND_ATTENUATION: Dict[Band, AttenuationParams] = {
    Band.MHZ_900: AttenuationParams(base_decay_per_m=2.0, curvature_coeff=0.02, height_coeff=20.0),
    Band.GHZ_2_4: AttenuationParams(base_decay_per_m=3.5, curvature_coeff=0.02, height_coeff=20.0),
}
BAND_JITTER_SCALE: Dict[Band, float] = {Band.MHZ_900: 1.0, Band.GHZ_2_4: 1.2}


@dataclass(frozen=True)
class TagPlacement:
    """Tag link geometry and how strongly body motion couples into it."""

    surface_radius_m: float
    distance_m: float
    jitter_coupling: float


TAG_PLACEMENTS: Dict[TagPosition, TagPlacement] = {
    TagPosition.CHEST: TagPlacement(0.16, 0.35, 1.0),
    TagPosition.WAIST: TagPlacement(0.15, 0.25, 1.0),
    TagPosition.WRIST: TagPlacement(0.12, 0.55, 1.4),
    TagPosition.NECK: TagPlacement(0.13, 0.6, 1.3),
}

# direction -> (shadowing loss dB, body coupling factor)
DIRECTION_PROFILES: Dict[int, Tuple[float, float]] = {
    1: (0.0, 1.0),
    2: (3.0, 1.2),
    3: (3.0, 1.2),
    4: (-2.0, 1.5),
    5: (-2.0, 1.5),
}

# profile -> (peak amplitude dB, cutoff Hz)
_BODY_JITTER = {
    DynamicsKind.STATIC: (0.25, 2.0),
    DynamicsKind.SLIGHT_MOTION: (1.2, 4.0),
}
WALKER_CUTOFF_HZ = 1.5


class SynthConfigError(ScenarioError):
    """Invalid synthesis configuration."""
    pass


def _streams(seed: int, count: int) -> List[np.random.Generator]:
    sequence = np.random.SeedSequence(int(seed) % 2 ** 64)
    return [np.random.default_rng(child) for child in sequence.spawn(count)]


def _link(band: Band, distance_m: float) -> LinkParams:
    return LinkParams(
        tx_power_w=DEFAULT_TX_POWER_W,
        tx_gain=ANTENNA_GAIN,
        rx_gain=ANTENNA_GAIN,
        distance_m=distance_m,
        frequency_hz=band.frequency_hz,
    )


def main_rest_level_db(band: Band) -> float:
    """Resting main-path RSS of the on-body transmitter to receiver link."""
    return on_body_rss_db(_link(band, MAIN_LINK_DISTANCE_M), MAIN_BODY, BAND_ATTENUATION[band])


def tag_offset_db(position: TagPosition, band: Band) -> float:
    """Level of a tag link at ``position`` relative to a chest-worn tag."""
    att = BAND_ATTENUATION[band]

    def level(placement: TagPlacement) -> float:
        body = BodyGeometry(surface_radius_m=placement.surface_radius_m)
        return on_body_rss_db(_link(band, placement.distance_m), body, att)

    return level(TAG_PLACEMENTS[position]) - level(TAG_PLACEMENTS[TagPosition.CHEST])


def tag_rest_level_db(scenario: ScenarioSpec) -> float:
    """Resting level of the genuine tag's reflected path."""
    rho = 10 ** (scenario.backscatter.reflection_depth_db / 10.0) - 1.0
    return (
        main_rest_level_db(scenario.band)
        + 10.0 * math.log10(rho)
        + tag_offset_db(scenario.tag_position, scenario.band)
        + polarization_penalty_db(scenario.tag_angle_deg)
    )


def packet_gating(
    traffic_rate_pkt_s: float,
    packet_duration_s: float,
    series_len: int,
    sample_rate_hz: int,
) -> np.ndarray:
    """Carrier-on mask for periodic packet traffic."""
    if traffic_rate_pkt_s <= 0 or packet_duration_s <= 0:
        raise SynthConfigError("traffic rate and packet duration must be positive")
    duty = traffic_rate_pkt_s * packet_duration_s
    if duty > 1.0 + 1e-12:
        raise SynthConfigError(f"duty cycle {duty:.3f} exceeds 1")
    if duty >= 1.0:
        return np.ones(series_len, dtype=bool)

    period = sample_rate_hz / traffic_rate_pkt_s
    on_length = int(round(packet_duration_s * sample_rate_hz))
    if on_length < 1:
        raise SynthConfigError("packet shorter than one sample")
    if on_length >= period:
        return np.ones(series_len, dtype=bool)

    mask = np.zeros(series_len, dtype=bool)
    starts = np.round(np.arange(math.ceil(series_len / period)) * period).astype(int)
    for start in starts:
        mask[start:start + on_length] = True
    return mask


def _band_limited(rng: np.random.Generator, n_grid: int, cutoff_hz: float) -> np.ndarray:
    sos = signal.butter(2, cutoff_hz, fs=DYNAMICS_GRID_HZ, output="sos")
    return signal.sosfiltfilt(sos, rng.standard_normal(n_grid))


def body_dynamics(
    series_len: int,
    profile: DynamicsProfile,
    seed: int,
    sample_rate_hz: int = 100_000,
) -> np.ndarray:
    """Additive slow jitter (dB) caused by body motion and the surroundings."""
    if profile.kind is DynamicsKind.NONE or series_len == 0:
        return np.zeros(series_len)

    rng = np.random.default_rng(np.random.SeedSequence(int(seed) % 2 ** 64))
    duration = series_len / sample_rate_hz
    n_grid = max(int(math.ceil(duration * DYNAMICS_GRID_HZ)) + 2, 64)

    base_kind = DynamicsKind.SLIGHT_MOTION if profile.kind is DynamicsKind.SLIGHT_MOTION else DynamicsKind.STATIC
    amplitude, cutoff = _BODY_JITTER[base_kind]
    jitter = _band_limited(rng, n_grid, cutoff)
    jitter = jitter / np.max(np.abs(jitter)) * amplitude

    if profile.kind is DynamicsKind.WALKERS_NEARBY:
        walkers = _band_limited(rng, n_grid, WALKER_CUTOFF_HZ)
        jitter = jitter + walkers / np.std(walkers) * proximity_coupling_std_db(profile.walker_distance_m)

    grid_t = np.arange(n_grid) / DYNAMICS_GRID_HZ
    t = np.arange(series_len) / sample_rate_hz
    return np.interp(t, grid_t, jitter)


def attacker_base_level_db(attacker: AttackerConfig, reference_level_db: float, frequency_hz: float) -> float:
    """Where an attacker lands: the tag's level when mimicked from 1 m, moved to its placement."""
    shadow_db, _ = DIRECTION_PROFILES[attacker.direction]
    path = free_space_rss_db(attacker.distance_m, frequency_hz, 1.0, 1.0, 1.0)
    reference = free_space_rss_db(1.0, frequency_hz, 1.0, 1.0, 1.0)
    return reference_level_db + path - reference - shadow_db


def monitor_sensitivity(distance_m: float) -> float:
    """Fraction of the on-body movement offset an attacker at ``distance_m`` observes."""
    return math.exp(-distance_m / 2.0)


def attacker_reflection(
    attacker: AttackerConfig,
    monitored_main_db: SampleSeries,
    seed: int,
    *,
    reference_level_db: float,
    frequency_hz: float = 9.0e8,
) -> np.ndarray:
    """Level (dB) of the attacker's fake reflection at every sample.

    Constant-power and tag attackers sit at a fixed level set by their
    off-body path. A powerful attacker watches ``monitored_main_db`` and,
    ``reaction_latency_s`` after the monitored level departs from its last
    reference by more than ``monitor_threshold_db``, changes its power by
    the departure plus Gaussian tracking error.

    Args:
        attacker: Attacker configuration; ``kind`` must not be NONE
        monitored_main_db: Main-path level as seen by the attacker
        seed: Seed of the tracking-error stream
        reference_level_db: Genuine tag resting level the attacker mimics
        frequency_hz: Carrier frequency of the off-body path

    Raises:
        SynthConfigError: If no attacker is configured
    """
    if attacker.kind is AttackerKind.NONE:
        raise SynthConfigError("attacker_reflection requires an attacker")

    monitored = monitored_main_db.samples
    n = monitored.size
    output = np.full(n, attacker_base_level_db(attacker, reference_level_db, frequency_hz))
    if attacker.kind is not AttackerKind.POWERFUL or n == 0:
        return output

    rng = np.random.default_rng(np.random.SeedSequence(int(seed) % 2 ** 64))
    latency = max(1, int(round(attacker.reaction_latency_s * monitored_main_db.sample_rate_hz)))
    reference = monitored[0]
    start = 0
    while start < n:
        departures = np.flatnonzero(np.abs(monitored[start:] - reference) > attacker.monitor_threshold_db)
        if departures.size == 0:
            break
        apply_at = start + int(departures[0]) + latency
        if apply_at >= n:
            break
        step = monitored[apply_at] - reference + rng.normal(0.0, attacker.power_step_noise_db)
        output[apply_at:] += step
        logger.debug(f"Powerful attacker stepped {step:+.2f} dB at sample {apply_at}")
        reference = monitored[apply_at]
        start = apply_at
    return output


def _movement_intervals(script: MovementScript, sample_rate_hz: int, n: int) -> Tuple[Tuple[int, int], ...]:
    intervals = []
    for event in script.events:
        start = min(int(math.ceil(event.start_s * sample_rate_hz)), n)
        end = min(int(math.ceil(event.end_s * sample_rate_hz)), n)
        intervals.append((start, max(start, end)))
    return tuple(intervals)


def synthesize(scenario: ScenarioSpec, seed: Optional[int] = None) -> LabeledSeries:
    """Synthesize one labeled RSS series.

    Args:
        scenario: Complete scenario description
        seed: Seed for every random stream; defaults to ``scenario.seed``

    Returns:
        The received series with per-sample ground truth

    Raises:
        SynthConfigError: If the scenario is invalid
    """
    seed = scenario.seed if seed is None else seed
    fs = scenario.sample_rate_hz
    bitrate = scenario.backscatter.bitrate_bps
    if fs < MIN_SAMPLES_PER_BIT * bitrate:
        raise SynthConfigError(
            f"sample rate {fs} Hz gives fewer than {MIN_SAMPLES_PER_BIT} samples per bit at {bitrate} bps"
        )
    try:
        scenario.validate(require_movement=False)
    except SynthConfigError:
        raise
    except ScenarioError as e:
        raise SynthConfigError(str(e))

    script_rng, bit_rng, noise_rng, attacker_rng, *dynamics_seeds = _streams(seed, 6)
    if scenario.backscatter.bit_seed is not None:
        bit_rng = np.random.default_rng(scenario.backscatter.bit_seed)

    script = MovementScript.alternating(
        scenario.movement_count,
        script_rng,
        scenario.lead_s,
        scenario.ramp_s,
        scenario.hold_s,
        scenario.delta_range_db,
    )
    try:
        script.validate(min_gap_s=3 * 1.2 / bitrate)
    except ScenarioError as e:
        raise SynthConfigError(str(e))

    n = int(round(scenario.effective_duration_s * fs))
    t = np.arange(n) / fs
    offset = script.offset_db(t)
    band_scale = BAND_JITTER_SCALE[scenario.band]
    body_seed = int(dynamics_seeds[0].integers(2 ** 63))
    jitter = body_dynamics(n, scenario.dynamics, body_seed, fs) * band_scale

    main_rest = main_rest_level_db(scenario.band)
    main_db = main_rest + offset + jitter

    n_bits = (n - 1) * bitrate // fs + 1 if n else 0
    bits = bit_rng.integers(0, 2, size=n_bits).astype(np.int8)
    sample_bits = bits[(np.arange(n, dtype=np.int64) * bitrate) // fs]
    intervals = _movement_intervals(script, fs, n)

    tag_rest = tag_rest_level_db(scenario)
    if scenario.is_genuine:
        placement = TAG_PLACEMENTS[scenario.tag_position]
        reflect_db = tag_rest + jitter * placement.jitter_coupling
        if scenario.backscatter.correlated_with_main:
            reflect_db = reflect_db + offset
        reflect_label = SourceLabel.GENUINE_REFLECT
    else:
        attacker = scenario.attacker
        monitored = SampleSeries(main_rest + offset * monitor_sensitivity(attacker.distance_m), fs)
        reflect_db = attacker_reflection(
            attacker,
            monitored,
            int(attacker_rng.integers(2 ** 63)),
            reference_level_db=tag_rest,
            frequency_hz=scenario.band.frequency_hz,
        )
        _, coupling = DIRECTION_PROFILES[attacker.direction]
        if attacker.kind is AttackerKind.TAG:
            coupling *= TAG_ATTACKER_COUPLING
        sigma = proximity_coupling_std_db(attacker.distance_m) * coupling
        for _, end in intervals:
            reflect_db[end:] += attacker_rng.normal(0.0, sigma)
        if scenario.dynamics.kind is DynamicsKind.WALKERS_NEARBY:
            walker_seed = int(dynamics_seeds[1].integers(2 ** 63))
            reflect_db = reflect_db + body_dynamics(n, scenario.dynamics, walker_seed, fs)
        reflect_label = SourceLabel.ATTACKER_REFLECT

    received = 10.0 * np.log10(10 ** (main_db / 10.0) + sample_bits * 10 ** (reflect_db / 10.0))
    received += scenario.ripple_db * np.sin(2.0 * np.pi * RIPPLE_FREQUENCY_RATIO * np.arange(n))
    received += noise_rng.normal(0.0, scenario.noise_std_db, size=n) if scenario.noise_std_db > 0 else 0.0
    received += scenario.drift_db_per_s * t

    if scenario.traffic_rate_pkt_s is None:
        carrier = np.ones(n, dtype=bool)
    else:
        carrier = packet_gating(scenario.traffic_rate_pkt_s, scenario.packet_duration_s, n, fs)
        gap_noise = noise_rng.normal(0.0, max(scenario.noise_std_db, 0.1), size=n)
        received = np.where(carrier, received, NOISE_FLOOR_DB + gap_noise)

    labels = np.where(sample_bits == 1, reflect_label.value, SourceLabel.MAIN_ONLY.value).astype("<U8")
    labels[~carrier] = SourceLabel.NO_CARRIER.value

    logger.debug(
        f"Synthesized {n} samples ({scenario.attacker.kind.value}, {len(intervals)} movements, seed {seed})"
    )
    return LabeledSeries(
        series=SampleSeries(received, fs, 0.0, bitrate, seed),
        source_labels=labels,
        movement_intervals=intervals,
        scenario=scenario,
        bits=bits,
        main_db=main_db,
        reflect_db=reflect_db,
        carrier_mask=carrier,
    )


def path_correlation(labeled: LabeledSeries, window: int) -> float:
    """Pearson correlation of windowed reflected-path and main-path levels.

    A reflected level that stays flat carries no correlation and yields 0.
    """
    if window < 1:
        raise SynthConfigError("window must be >= 1")
    usable = (len(labeled.main_db) // window) * window
    if usable < 2 * window:
        raise SynthConfigError("series too short for the correlation window")
    main = labeled.main_db[:usable].reshape(-1, window).mean(axis=1)
    reflect = labeled.reflect_db[:usable].reshape(-1, window).mean(axis=1)
    if np.ptp(main) < FLAT_LEVEL_TOLERANCE_DB or np.ptp(reflect) < FLAT_LEVEL_TOLERANCE_DB:
        return 0.0
    return float(np.corrcoef(main, reflect)[0, 1])
