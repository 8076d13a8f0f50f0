#!/usr/bin/env python3
"""Main entry point for scatterguard."""

import os
import sys
import logging
import argparse
from dataclasses import dataclass, field, replace
from pathlib import Path
from logging.handlers import RotatingFileHandler
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

# Add parent directory to path for imports when running as script
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src import __version__
from src.config import Config, ConfigError
from src.formats import (
    SeriesFormatError,
    emit_verdict,
    labels_path,
    read_labels,
    read_series,
    render_report,
    verdict_exit_code,
    write_series,
)
from src.harness import HarnessError, ReportError, export_report, latency_study, read_report, sweep
from src.models import AttackerKind, ScenarioError, ScenarioSpec, SourceLabel
from src.pipeline import PipelineError, PipelineParams, authenticate
from src.synth import path_correlation, synthesize

# Try to import colorlog for colored output
try:
    import colorlog
    COLORLOG_AVAILABLE = True
except ImportError:
    COLORLOG_AVAILABLE = False

COMMANDS = ("synth", "auth", "sweep", "latency", "report")
EXIT_CONFIG_ERROR = 3
EXIT_RUNTIME_ERROR = 4
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'

_DEFAULT_PARAMS = PipelineParams()
_DEFAULT_SCENARIO = ScenarioSpec()

# flag, PipelineParams field, value type, help
PIPELINE_FLAGS = (
    ("--smooth-window", "smooth_window", "int", "moving-average window in samples"),
    ("--w", "w_coeff", "float", "slope weighting coefficient"),
    ("--slope-threshold", "slope_threshold_db", "float", "slope threshold for stable states (dB)"),
    ("--state-threshold", "state_diff_threshold_db", "float", "stable-state mean difference marking a movement (dB)"),
    ("--var-threshold", "variance_threshold_db", "float", "std threshold for fast-varying segments (dB)"),
    ("--auth-threshold", "auth_threshold_db", "float", "reflection power difference for on-body (dB)"),
    ("--min-stable", "min_stable_intervals", "int", "intervals a stable state must last"),
    ("--trace-window", "trace_window", "int", "main-path trace window in samples"),
    ("--context-bits", "context_bits", "int", "bits on each side of the demodulation context"),
    ("--separability", "separability_ratio", "float", "level gap to spread ratio for a separable context"),
    ("--min-depth", "min_depth_db", "float", "smallest reflection depth treated as backscatter (dB)"),
    ("--drift-threshold", "drift_threshold_db_per_s", "float", "drift slope screened from state detection (dB/s)"),
    ("--carrier-gap", "carrier_gap_db", "float", "depth below the carrier treated as a traffic gap (dB)"),
    ("--segment-limit", "segment_limit_s", "float", "seconds of each stable segment used (default: whole segment)"),
)


@dataclass
class RunConfig:
    """One parsed command line."""

    command: str
    scenario_overrides: Dict[str, Any] = field(default_factory=dict)
    pipeline_overrides: Dict[str, Any] = field(default_factory=dict)
    in_path: Optional[Path] = None
    out_path: Optional[Path] = None
    seed: Optional[int] = None
    trials: Optional[int] = None
    axis: Optional[str] = None
    values: List[Any] = field(default_factory=list)
    format: str = "human"
    binary: bool = False
    mix_attacker: Optional[str] = None
    bitrate_bps: Optional[int] = None
    max_workers: Optional[int] = None
    progress: bool = False
    config_path: Optional[str] = None
    preset: Optional[str] = None
    log_level: Optional[str] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"Unknown command: {self.command}")


def _positive(kind: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str) -> Any:
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}")
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return value
    parse.__name__ = f"positive {kind.__name__}"
    return parse


def _non_negative_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")


def _csv_list(text: str) -> List[str]:
    values = [item.strip() for item in text.split(",") if item.strip()]
    if not values:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return values


def _csv_floats(text: str) -> List[float]:
    values = []
    for item in _csv_list(text):
        try:
            values.append(float(item))
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {item!r}")
    return values


def _scenario_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("scenario")
    group.add_argument("--band", choices=["900", "2400"],
                       help=f"carrier band in MHz (default: {_DEFAULT_SCENARIO.band.value})")
    group.add_argument("--attacker", choices=[k.value for k in AttackerKind],
                       help=f"attacker kind (default: {_DEFAULT_SCENARIO.attacker.kind.value})")
    group.add_argument("--distance", type=_positive(float),
                       help=f"attacker distance in meters (default: {_DEFAULT_SCENARIO.attacker.distance_m})")
    group.add_argument("--direction", type=_int, choices=range(1, 6), metavar="{1..5}",
                       help=f"attacker placement (default: {_DEFAULT_SCENARIO.attacker.direction})")
    group.add_argument("--movements", type=_positive(int),
                       help=f"movements per series (default: {_DEFAULT_SCENARIO.movement_count})")
    group.add_argument("--pkt-rate", type=_positive(float),
                       help="carrier packets per second (default: continuous carrier)")
    group.add_argument("--tag-angle", type=_non_negative_float,
                       help=f"tag polarization angle in degrees (default: {_DEFAULT_SCENARIO.tag_angle_deg:g})")
    group.add_argument("--position", choices=["chest", "waist", "wrist", "neck"],
                       help=f"tag position on the body (default: {_DEFAULT_SCENARIO.tag_position.value})")
    group.add_argument("--dynamics", choices=["none", "static", "slight", "walkers"],
                       help=f"body and surroundings dynamics (default: {_DEFAULT_SCENARIO.dynamics.label()})")
    group.add_argument("--walker-distance", type=_positive(float),
                       help=f"walker distance in meters (default: {_DEFAULT_SCENARIO.dynamics.walker_distance_m:g})")
    group.add_argument("--latency-ms", type=_non_negative_float,
                       help="powerful attacker reaction latency in ms "
                            f"(default: {_DEFAULT_SCENARIO.attacker.reaction_latency_s * 1000:g})")
    group.add_argument("--bitrate", type=_positive(int),
                       help=f"tag bitrate in bps (default: {_DEFAULT_SCENARIO.backscatter.bitrate_bps})")
    group.add_argument("--sample-rate", type=_positive(int),
                       help=f"receiver sample rate in Hz (default: {_DEFAULT_SCENARIO.sample_rate_hz})")
    group.add_argument("--seed", type=_int, help="master seed (default: SCATTERGUARD_SEED or 0)")
    return parent


def _pipeline_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("pipeline")
    for flag, name, kind, text in PIPELINE_FLAGS:
        default = getattr(_DEFAULT_PARAMS, name)
        group.add_argument(
            flag,
            dest=name,
            type=_positive(int if kind == "int" else float),
            help=f"{text} (default: {default})" if default is not None else text,
        )
    return parent


def _harness_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("trials")
    group.add_argument("--trials", type=_positive(int), help="trials per point (default: 100)")
    group.add_argument("--out", type=Path, help="also write the report CSV here")
    group.add_argument("--format", choices=["human", "csv"], default="human", help="output format (default: human)")
    group.add_argument("--mix-attacker", choices=[k.value for k in AttackerKind if k is not AttackerKind.NONE],
                       help="alternate genuine trials with trials of this attacker kind")
    group.add_argument("--workers", type=_positive(int), help="trial threads (default: 4)")
    group.add_argument("--progress", action="store_true", help="show a progress bar")
    return parent


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for every command."""
    parser = argparse.ArgumentParser(
        prog="scatterguard",
        description="scatterguard - on-body backscatter tag authentication simulator",
    )
    parser.add_argument("-c", "--config", help="Path to configuration file (default: config/config.yaml)")
    parser.add_argument("--preset", help="Scenario preset name (desk, extended) or YAML path")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
                        type=str.upper, help="Logging level (default: INFO)")
    parser.add_argument("-v", "--version", action="version", version=f"scatterguard {__version__}")

    scenario, pipeline, harness = _scenario_parent(), _pipeline_parent(), _harness_parent()
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    synth = commands.add_parser("synth", parents=[scenario], help="synthesize a labeled series file")
    synth.add_argument("--out", type=Path, required=True, help="series file to write")
    synth.add_argument("--binary", action="store_true", help="write the binary series format")

    auth = commands.add_parser("auth", parents=[pipeline], help="authenticate a series file")
    auth.add_argument("--in", dest="in_path", type=Path, required=True, help="series file to read")
    auth.add_argument("--format", choices=["human", "csv"], default="human", help="output format (default: human)")
    auth.add_argument("--bitrate", type=_positive(int), help="tag bitrate when the file has no bitrate header")

    sweep_cmd = commands.add_parser("sweep", parents=[scenario, pipeline, harness], help="sweep one axis")
    sweep_cmd.add_argument("--axis", required=True, help="sweep axis, e.g. AttackerDistance or MovementCount")
    sweep_cmd.add_argument("--values", type=_csv_list, required=True, help="comma-separated axis values")

    latency = commands.add_parser("latency", parents=[scenario, pipeline, harness], help="segment length study")
    latency.add_argument("--values", type=_csv_floats, required=True, help="comma-separated segment lengths in ms")

    report = commands.add_parser("report", help="render a saved report CSV")
    report.add_argument("--in", dest="in_path", type=Path, required=True, help="report CSV to read")
    report.add_argument("--format", choices=["human", "csv"], default="human", help="output format (default: human)")
    return parser


def _scenario_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    mapping = {
        "band": "band",
        "attacker": "attacker",
        "distance": "distance_m",
        "direction": "direction",
        "movements": "movement_count",
        "pkt_rate": "traffic_rate_pkt_s",
        "tag_angle": "tag_angle_deg",
        "position": "tag_position",
        "dynamics": "dynamics",
        "walker_distance": "walker_distance_m",
        "bitrate": "bitrate_bps",
        "sample_rate": "sample_rate_hz",
        "seed": "seed",
    }
    overrides = {key: getattr(args, dest) for dest, key in mapping.items() if getattr(args, dest, None) is not None}
    if getattr(args, "latency_ms", None) is not None:
        overrides["reaction_latency_s"] = args.latency_ms / 1000.0
    return overrides


def parse_args(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """Parse command-line tokens into a :class:`RunConfig`.

    Raises:
        SystemExit: With status 2 and a usage message on unknown flags,
            missing paths or malformed values
    """
    args = build_parser().parse_args(argv)
    pipeline = {}
    if args.command in ("auth", "sweep", "latency"):
        pipeline = {name: getattr(args, name) for _, name, _, _ in PIPELINE_FLAGS if getattr(args, name) is not None}

    return RunConfig(
        command=args.command,
        scenario_overrides=_scenario_overrides(args) if args.command in ("synth", "sweep", "latency") else {},
        pipeline_overrides=pipeline,
        in_path=getattr(args, "in_path", None),
        out_path=getattr(args, "out", None),
        seed=getattr(args, "seed", None),
        trials=getattr(args, "trials", None),
        axis=getattr(args, "axis", None),
        values=list(getattr(args, "values", None) or []),
        format=getattr(args, "format", "human"),
        binary=getattr(args, "binary", False),
        mix_attacker=getattr(args, "mix_attacker", None),
        bitrate_bps=getattr(args, "bitrate", None) if args.command == "auth" else None,
        max_workers=getattr(args, "workers", None),
        progress=getattr(args, "progress", False),
        config_path=args.config,
        preset=args.preset,
        log_level=args.log_level,
    )


class ScatterGuardApp:
    """Runs one parsed command against the loaded configuration."""

    def __init__(self, run: RunConfig, config: Optional[Config] = None):
        """Initialize the application.

        Args:
            run: Parsed command line
            config: Loaded configuration; read from ``run.config_path`` when omitted

        Raises:
            ConfigError: If the configuration cannot be loaded
        """
        self.run = run
        self.config = config or Config(run.config_path, run.preset)
        self.logger = logging.getLogger(__name__)

    def setup_logging(self) -> None:
        """Set up logging configuration; stdout stays free for command output."""
        root = logging.getLogger()
        level = self.run.log_level or self.config.log_level
        root.setLevel(getattr(logging, level.upper()))

        # Remove existing handlers
        root.handlers.clear()

        console_handler = logging.StreamHandler(sys.stderr)
        if self.config.log_colored_output and COLORLOG_AVAILABLE:
            console_formatter: logging.Formatter = colorlog.ColoredFormatter(
                '%(log_color)s' + LOG_FORMAT,
                datefmt=LOG_DATEFMT,
                log_colors={
                    'DEBUG': 'cyan',
                    'INFO': 'green',
                    'WARNING': 'yellow',
                    'ERROR': 'red',
                    'CRITICAL': 'red,bg_white',
                }
            )
        else:
            console_formatter = logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT)
        console_handler.setFormatter(console_formatter)
        root.addHandler(console_handler)

        # File handler (if configured)
        if self.config.log_file:
            log_path = Path(self.config.log_file)
            log_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = RotatingFileHandler(
                log_path,
                maxBytes=self.config.log_max_size * 1024 * 1024,  # MB to bytes
                backupCount=self.config.log_backup_count
            )
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
            root.addHandler(file_handler)

    def execute(self) -> int:
        """Dispatch the command and return the process exit code."""
        handler = getattr(self, f"_cmd_{self.run.command}")
        return handler()

    def _params(self) -> PipelineParams:
        try:
            return self.config.pipeline_params(self.run.pipeline_overrides)
        except (PipelineError, TypeError) as e:
            raise ConfigError(f"Invalid pipeline parameters: {e}")

    def _scenario(self) -> ScenarioSpec:
        try:
            return self.config.scenario(self.run.scenario_overrides)
        except ScenarioError as e:
            raise ConfigError(f"Invalid scenario: {e}")

    def _templates(self):
        scenario = self._scenario()
        if not self.run.mix_attacker:
            return scenario, None
        genuine = replace(scenario, attacker=replace(scenario.attacker, kind=AttackerKind.NONE))
        attacker = replace(scenario, attacker=replace(scenario.attacker, kind=AttackerKind(self.run.mix_attacker)))
        return genuine, attacker

    def _seed(self) -> int:
        return self.run.seed if self.run.seed is not None else self.config.seed

    def _cmd_synth(self) -> int:
        scenario = self._scenario()
        self.logger.info(f"Synthesizing scenario {scenario.describe()}")
        labeled = synthesize(scenario)
        path = write_series(labeled.series, self.run.out_path, labels=labeled, binary=self.run.binary)

        sources, counts = np.unique(labeled.source_labels, return_counts=True)
        summary = ", ".join(f"{source}={count}" for source, count in zip(sources, counts))
        self.logger.info(f"Wrote {len(labeled.series)} samples to {path} ({summary})")
        self.logger.info(f"Movement intervals (samples): {list(labeled.movement_intervals)}")
        window = max(1, int(scenario.samples_per_bit) * 10)
        if len(labeled.series) >= 2 * window:
            self.logger.info(f"Reflected/main path correlation: {path_correlation(labeled, window):.3f}")
        return 0

    def _cmd_auth(self) -> int:
        params = self._params()
        series = read_series(self.run.in_path)
        self.logger.info(f"Authenticating {self.run.in_path} ({len(series)} samples at {series.sample_rate_hz} Hz)")
        verdict = authenticate(series, params, bitrate_bps=self.run.bitrate_bps)

        sibling = labels_path(self.run.in_path)
        if sibling.exists():
            try:
                sources, _ = read_labels(sibling, len(series))
            except SeriesFormatError as e:
                self.logger.warning(f"Ignoring labels: {e}")
            else:
                truth = "attacker" if SourceLabel.ATTACKER_REFLECT.value in set(sources) else "genuine"
                self.logger.info(f"Ground truth from {sibling.name}: {truth}")

        sys.stdout.write(emit_verdict(verdict, self.run.format))
        return verdict_exit_code(verdict)

    def _trials(self) -> int:
        return self.run.trials if self.run.trials is not None else self.config.trials

    def _workers(self) -> int:
        return self.run.max_workers if self.run.max_workers is not None else self.config.max_workers

    def _finish_reports(self, reports) -> int:
        if self.run.out_path is not None:
            export_report(reports, self.run.out_path)
        sys.stdout.write(render_report(reports, self.run.format))
        return 0

    def _cmd_sweep(self) -> int:
        template, attacker_template = self._templates()
        results = sweep(
            template,
            self.run.axis,
            self.run.values,
            self._trials(),
            self._seed(),
            self._params(),
            attacker_template=attacker_template,
            max_workers=self._workers(),
            progress=self.run.progress or self.config.progress,
        )
        return self._finish_reports([report for _, report in results])

    def _cmd_latency(self) -> int:
        template, attacker_template = self._templates()
        results = latency_study(
            template,
            self.run.values,
            self._trials(),
            self._seed(),
            self._params(),
            attacker_template=attacker_template,
            max_workers=self._workers(),
            progress=self.run.progress or self.config.progress,
        )
        return self._finish_reports([report for _, report in results])

    def _cmd_report(self) -> int:
        reports = read_report(self.run.in_path)
        sys.stdout.write(render_report(reports, self.run.format))
        return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point."""
    run = parse_args(argv)

    try:
        app = ScatterGuardApp(run)
        app.setup_logging()
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        return app.execute()
    except ConfigError as e:
        app.logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except (SeriesFormatError, ReportError, HarnessError, PipelineError, ScenarioError, OSError) as e:
        app.logger.error(f"{run.command} failed: {e}")
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
