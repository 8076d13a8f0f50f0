"""Domain types shared by the synthesizer, the pipeline and the harness."""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np


class ScenarioError(ValueError):
    """Invalid scenario description."""
    pass


class Band(Enum):
    """Carrier band of the on-body link."""

    MHZ_900 = 900
    GHZ_2_4 = 2400

    @property
    def frequency_hz(self) -> float:
        return 9.0e8 if self is Band.MHZ_900 else 2.4e9

    @classmethod
    def parse(cls, value: Any) -> "Band":
        if isinstance(value, Band):
            return value
        text = str(value).strip().lower().replace("mhz", "").replace("ghz", "")
        if text in ("900", "0.9", "9e8"):
            return cls.MHZ_900
        if text in ("2400", "2.4", "2.4e9"):
            return cls.GHZ_2_4
        raise ScenarioError(f"Unknown band: {value}")


class TagPosition(Enum):
    """Where the genuine tag is worn."""

    CHEST = "chest"
    WAIST = "waist"
    WRIST = "wrist"
    NECK = "neck"


class AttackerKind(Enum):
    """Source of the reflections the receiver sees."""

    NONE = "none"
    CONSTANT_POWER = "constant"
    POWERFUL = "powerful"
    TAG = "tag"


class DynamicsKind(Enum):
    NONE = "none"
    STATIC = "static"
    SLIGHT_MOTION = "slight"
    WALKERS_NEARBY = "walkers"


class SourceLabel(Enum):
    """Per-sample ground truth of which path produced the received power."""

    MAIN_ONLY = "main"
    GENUINE_REFLECT = "genuine"
    ATTACKER_REFLECT = "attacker"
    NO_CARRIER = "gap"


@dataclass(frozen=True)
class DynamicsProfile:
    """Body and surroundings motion during a run."""

    kind: DynamicsKind = DynamicsKind.STATIC
    walker_distance_m: float = 2.0

    def __post_init__(self):
        if self.walker_distance_m <= 0:
            raise ScenarioError("walker_distance_m must be positive")

    @classmethod
    def none(cls) -> "DynamicsProfile":
        return cls(DynamicsKind.NONE)

    @classmethod
    def static(cls) -> "DynamicsProfile":
        return cls(DynamicsKind.STATIC)

    @classmethod
    def slight_motion(cls) -> "DynamicsProfile":
        return cls(DynamicsKind.SLIGHT_MOTION)

    @classmethod
    def walkers_nearby(cls, distance_m: float) -> "DynamicsProfile":
        return cls(DynamicsKind.WALKERS_NEARBY, float(distance_m))

    @classmethod
    def parse(cls, value: Any, walker_distance_m: Optional[float] = None) -> "DynamicsProfile":
        """Parse ``static``, ``slight``, ``walkers`` or ``walkers:<distance>``."""
        if isinstance(value, DynamicsProfile):
            return value
        text = str(value).strip().lower()
        name, _, distance = text.partition(":")
        try:
            kind = DynamicsKind(name)
        except ValueError:
            raise ScenarioError(f"Unknown dynamics profile: {value}")
        if distance:
            try:
                walker_distance_m = float(distance)
            except ValueError:
                raise ScenarioError(f"Invalid walker distance in: {value}")
        if walker_distance_m is None:
            return cls(kind)
        return cls(kind, float(walker_distance_m))

    def label(self) -> str:
        if self.kind is DynamicsKind.WALKERS_NEARBY:
            return f"walkers:{self.walker_distance_m:g}"
        return self.kind.value


@dataclass(frozen=True, eq=False)
class SampleSeries:
    """Uniformly sampled RSS values in dB.

    ``bitrate_bps`` and ``seed`` are optional metadata carried through the
    series file header.
    """

    samples: np.ndarray
    sample_rate_hz: int
    start_time_s: float = 0.0
    bitrate_bps: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if int(self.sample_rate_hz) <= 0:
            raise ScenarioError("sample_rate_hz must be positive")
        values = np.array(self.samples, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ScenarioError("samples must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "samples", values)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(len(self)) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "SampleSeries":
        return replace(self, samples=samples)


@dataclass(frozen=True)
class MovementEvent:
    """One transmitter movement: ramp the main path by ``delta_db`` over ``duration_s``."""

    start_s: float
    duration_s: float
    delta_db: float

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass(frozen=True)
class MovementScript:
    """Time-ordered transmitter movements; the level holds between events."""

    events: Tuple[MovementEvent, ...] = ()

    MIN_DELTA_DB = 4.0

    def validate(self, min_gap_s: float = 0.0) -> None:
        previous: Optional[MovementEvent] = None
        for event in self.events:
            if event.start_s < 0 or event.duration_s <= 0:
                raise ScenarioError(f"Invalid movement timing: {event}")
            if abs(event.delta_db) <= self.MIN_DELTA_DB:
                raise ScenarioError(
                    f"Movement delta {event.delta_db} dB must exceed {self.MIN_DELTA_DB} dB"
                )
            if previous is not None:
                gap = event.start_s - previous.end_s
                if gap < 0:
                    raise ScenarioError("Movement events overlap or are out of order")
                if gap < min_gap_s:
                    raise ScenarioError(
                        f"Gap of {gap:.4f} s between movements is below {min_gap_s:.4f} s"
                    )
            previous = event

    def offset_db(self, times: np.ndarray) -> np.ndarray:
        """Cumulative main-path offset at each time."""
        offset = np.zeros_like(np.asarray(times, dtype=float))
        for event in self.events:
            progress = np.clip((times - event.start_s) / event.duration_s, 0.0, 1.0)
            offset += event.delta_db * progress
        return offset

    @classmethod
    def alternating(
        cls,
        count: int,
        rng: np.random.Generator,
        lead_s: float,
        ramp_s: float,
        hold_s: float,
        delta_range_db: Tuple[float, float],
    ) -> "MovementScript":
        """Back-and-forth movements, first one moving the level down."""
        low, high = delta_range_db
        magnitudes = rng.uniform(low, high, size=count)
        events = []
        for index, magnitude in enumerate(magnitudes):
            sign = -1.0 if index % 2 == 0 else 1.0
            start = lead_s + index * (ramp_s + hold_s)
            events.append(MovementEvent(start, ramp_s, sign * float(magnitude)))
        return cls(tuple(events))


@dataclass(frozen=True)
class BackscatterConfig:
    """On/off reflection keying of the tag."""

    bitrate_bps: int = 1000
    reflection_depth_db: float = 3.0
    bit_seed: Optional[int] = None
    correlated_with_main: bool = True

    def __post_init__(self):
        if self.bitrate_bps <= 0:
            raise ScenarioError("bitrate_bps must be positive")
        if self.reflection_depth_db <= 0:
            raise ScenarioError("reflection_depth_db must be positive")


@dataclass(frozen=True)
class AttackerConfig:
    """Off-body impersonator. ``kind=NONE`` means the genuine tag is present."""

    kind: AttackerKind = AttackerKind.NONE
    distance_m: float = 1.0
    direction: int = 1
    reaction_latency_s: float = 0.05
    monitor_threshold_db: float = 4.0
    power_step_noise_db: float = 2.0

    def __post_init__(self):
        if self.distance_m <= 0:
            raise ScenarioError("attacker distance_m must be positive")
        if self.direction not in (1, 2, 3, 4, 5):
            raise ScenarioError(f"attacker direction must be 1..5, got {self.direction}")
        if self.kind is AttackerKind.POWERFUL and self.reaction_latency_s <= 0:
            raise ScenarioError("reaction_latency_s must be positive for a powerful attacker")
        if self.monitor_threshold_db <= 0 or self.power_step_noise_db < 0:
            raise ScenarioError("invalid powerful-attacker monitoring parameters")


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete description of one simulated experiment."""

    band: Band = Band.MHZ_900
    tag_position: TagPosition = TagPosition.CHEST
    attacker: AttackerConfig = field(default_factory=AttackerConfig)
    dynamics: DynamicsProfile = field(default_factory=DynamicsProfile.static)
    movement_count: int = 5
    traffic_rate_pkt_s: Optional[float] = None
    packet_duration_s: float = 0.005
    tag_angle_deg: float = 0.0
    duration_s: Optional[float] = None
    seed: int = 0
    sample_rate_hz: int = 100_000
    backscatter: BackscatterConfig = field(default_factory=BackscatterConfig)
    noise_std_db: float = 0.5
    ripple_db: float = 0.5
    drift_db_per_s: float = 0.0
    lead_s: float = 0.2
    ramp_s: float = 0.0005
    hold_s: float = 0.2
    delta_range_db: Tuple[float, float] = (13.0, 17.0)

    @property
    def is_genuine(self) -> bool:
        return self.attacker.kind is AttackerKind.NONE

    @property
    def required_duration_s(self) -> float:
        return self.lead_s + self.movement_count * (self.ramp_s + self.hold_s)

    @property
    def effective_duration_s(self) -> float:
        return self.duration_s if self.duration_s is not None else self.required_duration_s

    @property
    def samples_per_bit(self) -> float:
        return self.sample_rate_hz / self.backscatter.bitrate_bps

    def validate(self, require_movement: bool = True) -> None:
        if self.movement_count < (1 if require_movement else 0):
            raise ScenarioError(f"movement_count must be >= 1, got {self.movement_count}")
        if self.sample_rate_hz <= 0:
            raise ScenarioError("sample_rate_hz must be positive")
        if self.effective_duration_s + 1e-12 < self.required_duration_s:
            raise ScenarioError(
                f"duration {self.effective_duration_s:.3f} s cannot hold "
                f"{self.movement_count} movements ({self.required_duration_s:.3f} s needed)"
            )
        if not 0.0 <= self.tag_angle_deg <= 180.0:
            raise ScenarioError("tag_angle_deg must be within [0, 180]")
        if self.traffic_rate_pkt_s is not None and self.traffic_rate_pkt_s <= 0:
            raise ScenarioError("traffic_rate_pkt_s must be positive")
        if self.noise_std_db < 0 or self.ripple_db < 0:
            raise ScenarioError("noise_std_db and ripple_db must be non-negative")
        low, high = self.delta_range_db
        if not MovementScript.MIN_DELTA_DB < low <= high:
            raise ScenarioError(f"delta_range_db must satisfy 4 < low <= high, got {self.delta_range_db}")

    # Flat key → how to apply it. Used by configuration files and presets.
    FLAT_KEYS = (
        "band", "tag_position", "attacker", "distance_m", "direction",
        "reaction_latency_s", "monitor_threshold_db", "power_step_noise_db",
        "dynamics", "walker_distance_m", "movement_count", "traffic_rate_pkt_s",
        "packet_duration_s", "tag_angle_deg", "duration_s", "seed",
        "sample_rate_hz", "bitrate_bps", "reflection_depth_db", "noise_std_db",
        "ripple_db", "drift_db_per_s", "lead_s", "ramp_s", "hold_s",
        "delta_range_db",
    )

    def with_flat(self, mapping: Mapping[str, Any]) -> "ScenarioSpec":
        """Return a copy with flat ``key: value`` overrides applied."""
        unknown = sorted(set(mapping) - set(self.FLAT_KEYS))
        if unknown:
            raise ScenarioError(f"Unknown scenario keys: {', '.join(unknown)}")

        top: Dict[str, Any] = {}
        attacker: Dict[str, Any] = {}
        backscatter: Dict[str, Any] = {}
        dynamics = self.dynamics
        walker_distance = mapping.get("walker_distance_m")
        try:
            for key, value in mapping.items():
                if value is None and key not in ("traffic_rate_pkt_s", "duration_s"):
                    continue
                if key == "band":
                    top["band"] = Band.parse(value)
                elif key == "tag_position":
                    top["tag_position"] = TagPosition(str(value).lower())
                elif key == "attacker":
                    attacker["kind"] = AttackerKind(str(value).lower())
                elif key in ("distance_m", "reaction_latency_s", "monitor_threshold_db",
                             "power_step_noise_db"):
                    attacker[key] = float(value)
                elif key == "direction":
                    attacker["direction"] = int(value)
                elif key == "dynamics":
                    dynamics = DynamicsProfile.parse(value, walker_distance)
                elif key == "walker_distance_m":
                    continue
                elif key == "bitrate_bps":
                    backscatter["bitrate_bps"] = int(value)
                elif key == "reflection_depth_db":
                    backscatter["reflection_depth_db"] = float(value)
                elif key in ("movement_count", "sample_rate_hz", "seed"):
                    top[key] = int(value)
                elif key == "delta_range_db":
                    low, high = value
                    top[key] = (float(low), float(high))
                elif key in ("traffic_rate_pkt_s", "duration_s"):
                    top[key] = None if value is None else float(value)
                else:
                    top[key] = float(value)
            if walker_distance is not None and "dynamics" not in mapping:
                dynamics = replace(dynamics, walker_distance_m=float(walker_distance))
            top["dynamics"] = dynamics
            if attacker:
                top["attacker"] = replace(self.attacker, **attacker)
            if backscatter:
                top["backscatter"] = replace(self.backscatter, **backscatter)
        except (TypeError, ValueError) as e:
            if isinstance(e, ScenarioError):
                raise
            raise ScenarioError(f"Invalid scenario value: {e}")
        return replace(self, **top)

    def describe(self) -> Dict[str, Any]:
        """Flat, human-readable view used in logs and report metadata."""
        return {
            "band": self.band.value,
            "tag_position": self.tag_position.value,
            "attacker": self.attacker.kind.value,
            "distance_m": self.attacker.distance_m,
            "direction": self.attacker.direction,
            "dynamics": self.dynamics.label(),
            "movement_count": self.movement_count,
            "traffic_rate_pkt_s": self.traffic_rate_pkt_s,
            "tag_angle_deg": self.tag_angle_deg,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class LabeledSeries:
    """A synthesized series with per-sample ground truth.

    ``main_db`` and ``reflect_db`` are the noise-free path levels before
    they were combined; ``bits`` are the transmitted reflection bits.
    """

    series: SampleSeries
    source_labels: np.ndarray
    movement_intervals: Tuple[Tuple[int, int], ...]
    scenario: ScenarioSpec
    bits: np.ndarray
    main_db: np.ndarray
    reflect_db: np.ndarray
    carrier_mask: np.ndarray

    def __post_init__(self):
        if len(self.source_labels) != len(self.series):
            raise ScenarioError("label sequence length must equal sample count")
        for start, end in self.movement_intervals:
            if not 0 <= start <= end <= len(self.series):
                raise ScenarioError(f"movement interval ({start}, {end}) out of bounds")

    def in_movement(self) -> np.ndarray:
        mask = np.zeros(len(self.series), dtype=bool)
        for start, end in self.movement_intervals:
            mask[start:end] = True
        return mask
