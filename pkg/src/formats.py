"""On-disk and printed formats: series files, label files, verdicts and reports."""

import io
import logging
import math
import struct
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.harness import MetricsReport, report_frame
from src.models import LabeledSeries, SampleSeries, ScenarioError, SourceLabel
from src.pipeline import FinalVerdict, Verdict

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"SGRSS\x00\x01\x00"
BINARY_HEADER = struct.Struct("<8sQQq")
LABEL_COLUMNS = ["index", "source", "in_movement"]
VERDICT_COLUMNS = ["group_index", "group_verdict", "pre_mean_db", "post_mean_db", "pre_var", "post_var"]

VERDICT_EXIT_CODES: Dict[FinalVerdict, int] = {
    FinalVerdict.ON_BODY: 0,
    FinalVerdict.ATTACKER: 1,
    FinalVerdict.INCONCLUSIVE: 2,
}

PathLike = Union[str, Path]


class SeriesFormatError(Exception):
    """Malformed series or label file."""

    def __init__(self, path: PathLike, line_no: Optional[int], message: str):
        self.path = Path(path)
        self.line_no = line_no
        where = f"{self.path}:{line_no}" if line_no is not None else str(self.path)
        super().__init__(f"{where}: {message}")


def labels_path(path: PathLike) -> Path:
    """Sibling ``.labels`` file of a series file."""
    return Path(path).with_suffix(".labels")


def write_series(
    series: SampleSeries,
    path: PathLike,
    labels: Optional[LabeledSeries] = None,
    *,
    binary: bool = False,
) -> Path:
    """Write a series file and, when ``labels`` is given, its ``.labels`` sibling.

    Args:
        series: Series to write
        path: Destination file
        labels: Ground truth to write next to the series
        binary: Write the fixed-header little-endian float64 format

    Returns:
        The written series path
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if binary:
            header = BINARY_HEADER.pack(
                BINARY_MAGIC,
                series.sample_rate_hz,
                series.bitrate_bps or 0,
                -1 if series.seed is None else int(series.seed),
            )
            path.write_bytes(header + series.samples.astype("<f8").tobytes())
        else:
            lines = [f"# sample_rate_hz={series.sample_rate_hz}"]
            if series.bitrate_bps is not None:
                lines.append(f"# bitrate_bps={series.bitrate_bps}")
            if series.seed is not None:
                lines.append(f"# seed={series.seed}")
            if series.start_time_s:
                lines.append(f"# start_time_s={series.start_time_s!r}")
            lines.extend(repr(float(value)) for value in series.samples)
            path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise SeriesFormatError(path, None, f"cannot write series: {e}")

    if labels is not None:
        write_labels(labels, labels_path(path))
    logger.debug(f"Wrote {len(series)} samples to {path}")
    return path


def write_labels(labeled: LabeledSeries, path: PathLike) -> Path:
    path = Path(path)
    frame = pd.DataFrame(
        {
            "index": np.arange(len(labeled.series)),
            "source": labeled.source_labels,
            "in_movement": labeled.in_movement().astype(int),
        },
        columns=LABEL_COLUMNS,
    )
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise SeriesFormatError(path, None, f"cannot write labels: {e}")
    return path


def _read_binary(path: Path, data: bytes) -> SampleSeries:
    if len(data) < BINARY_HEADER.size:
        raise SeriesFormatError(path, None, "truncated binary header")
    magic, sample_rate, bitrate, seed = BINARY_HEADER.unpack_from(data)
    if magic != BINARY_MAGIC:
        raise SeriesFormatError(path, None, "bad binary magic")
    payload = data[BINARY_HEADER.size:]
    if len(payload) % 8:
        raise SeriesFormatError(path, None, "binary payload is not a whole number of float64 samples")
    samples = np.frombuffer(payload, dtype="<f8").astype(float)
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        raise SeriesFormatError(path, None, f"non-finite sample at index {int(bad[0])}")
    if samples.size == 0 or sample_rate == 0:
        raise SeriesFormatError(path, None, "empty series or zero sample rate")
    return SampleSeries(samples, sample_rate, 0.0, bitrate or None, None if seed < 0 else seed)


def read_series(path: PathLike) -> SampleSeries:
    """Read a text or binary series file.

    Raises:
        SeriesFormatError: With the offending line number for text files
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise SeriesFormatError(path, None, f"cannot read series: {e}")
    if data.startswith(BINARY_MAGIC):
        return _read_binary(path, data)

    header: Dict[str, str] = {}
    values = []
    first_value_line = None
    for line_no, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if values:
                raise SeriesFormatError(path, line_no, "header line after samples")
            key, sep, value = line[1:].strip().partition("=")
            if not sep or not key.strip():
                raise SeriesFormatError(path, line_no, f"malformed header line: {line}")
            header[key.strip()] = value.strip()
            continue
        if "sample_rate_hz" not in header:
            raise SeriesFormatError(path, 1, "missing sample_rate_hz header")
        try:
            value = float(line)
        except ValueError:
            raise SeriesFormatError(path, line_no, f"not a number: {line}")
        if not math.isfinite(value):
            raise SeriesFormatError(path, line_no, f"non-finite value: {line}")
        if first_value_line is None:
            first_value_line = line_no
        values.append(value)

    if "sample_rate_hz" not in header:
        raise SeriesFormatError(path, 1, "missing sample_rate_hz header")
    if not values:
        raise SeriesFormatError(path, None, "series has no samples")

    def integer(key: str) -> Optional[int]:
        if key not in header:
            return None
        try:
            return int(header[key])
        except ValueError:
            raise SeriesFormatError(path, 1, f"{key} must be an integer, got {header[key]}")

    try:
        return SampleSeries(
            np.array(values),
            integer("sample_rate_hz") or 0,
            float(header.get("start_time_s", 0.0)),
            integer("bitrate_bps"),
            integer("seed"),
        )
    except (ScenarioError, ValueError) as e:
        raise SeriesFormatError(path, 1, str(e))


def read_labels(path: PathLike, expected_length: int) -> Tuple[np.ndarray, np.ndarray]:
    """Read a ``.labels`` file; returns (source labels, in-movement flags)."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"source": str}, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SeriesFormatError(path, None, f"cannot read labels: {e}")
    if list(frame.columns) != LABEL_COLUMNS:
        raise SeriesFormatError(path, 1, f"expected header {','.join(LABEL_COLUMNS)}")

    known = {label.value for label in SourceLabel}
    for row_no, (index, source) in enumerate(zip(frame["index"], frame["source"])):
        if int(index) != row_no or source not in known:
            raise SeriesFormatError(path, row_no + 2, f"bad label row: {index},{source}")
    if len(frame) != expected_length:
        raise SeriesFormatError(
            path, len(frame) + 1, f"{len(frame)} labels for a series of {expected_length} samples"
        )
    return frame["source"].to_numpy(dtype=str), frame["in_movement"].to_numpy().astype(bool)


def verdict_exit_code(verdict: Verdict) -> int:
    return VERDICT_EXIT_CODES[verdict.final]


def emit_verdict(verdict: Verdict, fmt: str = "human") -> str:
    """Render a verdict as human-readable text or CSV."""
    if fmt == "csv":
        buffer = io.StringIO()
        rows = [
            [index, result.value, repr(group.pre_mean_db), repr(group.post_mean_db),
             repr(group.pre_var), repr(group.post_var)]
            for index, (result, group) in enumerate(zip(verdict.per_group, verdict.groups))
        ]
        rows.append(["FINAL", verdict.final.value, verdict.groups_used, "", "", ""])
        pd.DataFrame(rows, columns=VERDICT_COLUMNS).to_csv(buffer, index=False, lineterminator="\n")
        return buffer.getvalue()
    if fmt != "human":
        raise ValueError(f"Unknown verdict format: {fmt}")

    lines = [f"Verdict: {verdict.final.value} ({verdict.groups_used} groups)"]
    for index, (result, group) in enumerate(zip(verdict.per_group, verdict.groups)):
        lines.append(
            f"  group {index}: {result.value:<16} pre {group.pre_mean_db:7.2f} dB "
            f"post {group.post_mean_db:7.2f} dB  diff {group.mean_difference_db:5.2f} dB  "
            f"std {math.sqrt(group.pre_var):4.2f}/{math.sqrt(group.post_var):4.2f} dB"
        )
    lines.extend(f"  note: {message}" for message in verdict.diagnostics)
    return "\n".join(lines) + "\n"


def render_report(reports: Sequence[MetricsReport], fmt: str = "human") -> str:
    """Render metric reports as the report CSV or an aligned table."""
    frame = report_frame(reports)
    if fmt == "csv":
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, lineterminator="\n")
        return buffer.getvalue()
    if fmt != "human":
        raise ValueError(f"Unknown report format: {fmt}")
    if frame.empty:
        return "(no report rows)\n"
    return frame.to_string(index=False, na_rep="n/a", float_format=lambda v: f"{v:.3f}") + "\n"
