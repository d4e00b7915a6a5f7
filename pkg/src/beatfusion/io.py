"""Serialization of records, annotations, filter traces, and configs.

All formats are line-oriented plain text versioned by a ``format=1`` header
(annotation files are bare sample-index lines; the header is accepted but not
written there, so externally produced beat lists can be ingested unchanged).
Writers are atomic: content goes to a temporary file that is renamed into
place, so no failure leaves a partial file behind.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, fields, replace

import numpy as np

from .features import RawAnnotations
from .filtering import TRACE_VARS, FilterConfig, FilterTrace
from .model import ModelConfig
from .synth import SynthSpec

FORMAT_VERSION = 1
_FLOAT_FMT = "%.10g"


class ParseError(ValueError):
    """Malformed input file; carries the offending path and line number."""

    def __init__(self, path, line_no: int | None, message: str):
        location = f"{path}:{line_no}" if line_no is not None else str(path)
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(eq=False)
class Record:
    """Multichannel waveform record; requires at least ECG and ABP channels
    of equal length."""

    fs: float
    channels: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if self.fs <= 0.0:
            raise ValueError(f"fs must be > 0, got {self.fs}")
        self.channels = {name: np.asarray(sig, dtype=float)
                         for name, sig in self.channels.items()}
        for required in ("ECG", "ABP"):
            if required not in self.channels:
                raise ValueError(f"record is missing required channel {required!r}")
        lengths = {sig.size for sig in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channel lengths differ: {sorted(lengths)}")

    @property
    def length(self) -> int:
        return int(next(iter(self.channels.values())).size)


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def commit_files(files: dict) -> None:
    """Write several files with all texts rendered up front; each file is
    still installed atomically."""
    for path, text in files.items():
        _atomic_write(path, text)


def _strip_format_header(lines: list[str], path) -> int:
    """Return the index of the first content line, validating any version."""
    if lines and lines[0].strip().startswith("format="):
        value = lines[0].strip().split("=", 1)[1]
        if value != str(FORMAT_VERSION):
            raise ParseError(path, 1, f"unsupported format version {value!r}")
        return 1
    return 0


def render_record(record: Record) -> str:
    names = list(record.channels)
    columns = [record.channels[name] for name in names]
    rows = "\n".join(
        ",".join(_FLOAT_FMT % col[i] for col in columns)
        for i in range(record.length))
    body = f"format={FORMAT_VERSION}\nfs={_FLOAT_FMT % record.fs}\n" + ",".join(names)
    return body + ("\n" + rows + "\n" if rows else "\n")


def write_record(record: Record, path) -> None:
    _atomic_write(path, render_record(record))


def read_record(path) -> Record:
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = _strip_format_header(lines, path)
    if i >= len(lines) or not lines[i].startswith("fs="):
        raise ParseError(path, i + 1, "expected 'fs=<Hz>' line")
    try:
        fs = float(lines[i].split("=", 1)[1])
    except ValueError:
        raise ParseError(path, i + 1, f"unparseable sampling frequency {lines[i]!r}") from None
    if fs <= 0.0:
        raise ParseError(path, i + 1, f"fs must be > 0, got {fs}")
    if i + 1 >= len(lines):
        raise ParseError(path, i + 2, "expected channel-name line")
    names = [name.strip() for name in lines[i + 1].split(",")]
    if any(not name for name in names):
        raise ParseError(path, i + 2, "empty channel name")
    columns: list[list[float]] = [[] for _ in names]
    for line_no, line in enumerate(lines[i + 2:], start=i + 3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(names):
            raise ParseError(path, line_no,
                             f"expected {len(names)} values, got {len(parts)}")
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise ParseError(path, line_no, f"unparseable row {line!r}") from None
        for col, v in zip(columns, values):
            col.append(v)
    try:
        return Record(fs=fs, channels={n: np.asarray(c) for n, c in zip(names, columns)})
    except ValueError as exc:
        raise ParseError(path, None, str(exc)) from None


def render_annotations(ann: RawAnnotations) -> str:
    if len(ann) == 0:
        return ""
    return "\n".join(str(int(s)) for s in ann.sample_indices) + "\n"


def write_annotations(ann: RawAnnotations, path) -> None:
    _atomic_write(path, render_annotations(ann))


def read_annotations(path, fs: float) -> RawAnnotations:
    with open(path) as fh:
        lines = fh.read().splitlines()
    start = _strip_format_header(lines, path)
    indices: list[int] = []
    for line_no, line in enumerate(lines[start:], start=start + 1):
        text = line.strip()
        if not text:
            continue
        try:
            value = int(text)
        except ValueError:
            raise ParseError(path, line_no, f"non-integer sample index {text!r}") from None
        if indices and value <= indices[-1]:
            raise ParseError(path, line_no,
                             f"sample index {value} not greater than previous {indices[-1]}")
        if value < 0:
            raise ParseError(path, line_no, f"negative sample index {value}")
        indices.append(value)
    return RawAnnotations(np.asarray(indices, dtype=np.int64), fs)


def render_trace(trace: FilterTrace) -> str:
    header = "window," + ",".join(TRACE_VARS) + ",weight_sum,degenerate"
    lines = [
        f"format={FORMAT_VERSION}",
        f"fs={_FLOAT_FMT % trace.fs}",
        f"window_samples={trace.window_samples}",
        header,
    ]
    columns = [getattr(trace, name) for name in TRACE_VARS]
    for w in range(trace.n_windows):
        row = [str(w)]
        row += [_FLOAT_FMT % col[w] for col in columns]
        row.append(_FLOAT_FMT % trace.weight_sum[w])
        row.append(str(int(trace.degenerate[w])))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_trace(trace: FilterTrace, path) -> None:
    _atomic_write(path, render_trace(trace))


def read_trace(path) -> FilterTrace:
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = _strip_format_header(lines, path)
    meta = {}
    for key in ("fs", "window_samples"):
        if i >= len(lines) or not lines[i].startswith(f"{key}="):
            raise ParseError(path, i + 1, f"expected '{key}=' line")
        meta[key] = lines[i].split("=", 1)[1]
        i += 1
    expected_header = "window," + ",".join(TRACE_VARS) + ",weight_sum,degenerate"
    if i >= len(lines) or lines[i] != expected_header:
        raise ParseError(path, i + 1, "unexpected trace header")
    data_lines = [line for line in lines[i + 1:] if line.strip()]
    n = len(data_lines)
    arrays = {name: np.empty(n) for name in TRACE_VARS}
    weight_sum = np.empty(n)
    degenerate = np.zeros(n, dtype=bool)
    for w, line in enumerate(data_lines):
        parts = line.split(",")
        if len(parts) != len(TRACE_VARS) + 3:
            raise ParseError(path, i + 2 + w, f"expected {len(TRACE_VARS) + 3} columns")
        for name, text in zip(TRACE_VARS, parts[1:]):
            arrays[name][w] = float(text)
        weight_sum[w] = float(parts[-2])
        degenerate[w] = bool(int(parts[-1]))
    return FilterTrace(fs=float(meta["fs"]), window_samples=int(meta["window_samples"]),
                       weight_sum=weight_sum, degenerate=degenerate, **arrays)


_MODEL_FIELD_NAMES = tuple(f.name for f in fields(ModelConfig))
_FILTER_FIELD_TYPES = {
    "n_particles": int,
    "peak_fraction_threshold": float,
    "refractory_windows": int,
    "seed": int,
    "workers": int,
}


def render_config(cfg: FilterConfig) -> str:
    lines = [f"format={FORMAT_VERSION}"]
    for name in _FILTER_FIELD_TYPES:
        lines.append(f"{name}={getattr(cfg, name)}")
    for name in _MODEL_FIELD_NAMES:
        lines.append(f"{name}={_FLOAT_FMT % getattr(cfg.model, name)}")
    return "\n".join(lines) + "\n"


def write_config(cfg: FilterConfig, path) -> None:
    _atomic_write(path, render_config(cfg))


def read_config(path) -> FilterConfig:
    """Parse a flat key=value config; keys mirror the config field names.
    Unknown keys and missing values are errors."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    filter_kwargs: dict = {}
    model_kwargs: dict = {}
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ParseError(path, line_no, f"expected key=value, got {text!r}")
        key, value = (part.strip() for part in text.split("=", 1))
        if key == "format":
            if value != str(FORMAT_VERSION):
                raise ParseError(path, line_no, f"unsupported format version {value!r}")
            continue
        if not value:
            raise ParseError(path, line_no, f"missing value for key {key!r}")
        try:
            if key in _FILTER_FIELD_TYPES:
                filter_kwargs[key] = _FILTER_FIELD_TYPES[key](value)
            elif key in _MODEL_FIELD_NAMES:
                model_kwargs[key] = float(value)
            else:
                raise ParseError(path, line_no, f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(path, line_no,
                             f"unparseable value {value!r} for key {key!r}") from None
    try:
        cfg = FilterConfig(model=ModelConfig(**model_kwargs), **filter_kwargs)
    except (TypeError, ValueError) as exc:
        raise ParseError(path, None, str(exc)) from None
    return cfg


def config_with_window(cfg: FilterConfig, window_s: float) -> FilterConfig:
    """Config copy whose model uses the given actual window duration."""
    return replace(cfg, model=replace(cfg.model, window_s=window_s))


def _parse_hr_profile(value: str) -> tuple:
    points = []
    for part in value.split(","):
        t_text, bpm_text = part.split(":")
        points.append((float(t_text), float(bpm_text)))
    return tuple(points)


def _parse_intervals(value: str) -> tuple:
    spans = []
    for part in value.split(","):
        start_text, end_text = part.split("-")
        spans.append((float(start_text), float(end_text)))
    return tuple(spans)


def _parse_bursts(value: str) -> tuple:
    bursts = []
    for part in value.split(","):
        channel, start_text, end_text, amp_text = part.split(":")
        bursts.append((channel, float(start_text), float(end_text), float(amp_text)))
    return tuple(bursts)


_SYNTH_PARSERS = {
    "duration_s": float,
    "fs": float,
    "hr_profile": _parse_hr_profile,
    "latency_ms": float,
    "ecg_dropouts": _parse_intervals,
    "abp_dropouts": _parse_intervals,
    "artifact_bursts": _parse_bursts,
    "double_spike": lambda v: bool(int(v)),
    "noise_level": float,
    "seed": int,
}


def render_synth_spec(spec: SynthSpec) -> str:
    lines = [
        f"format={FORMAT_VERSION}",
        f"duration_s={_FLOAT_FMT % spec.duration_s}",
        f"fs={_FLOAT_FMT % spec.fs}",
        "hr_profile=" + ",".join(f"{t:g}:{bpm:g}" for t, bpm in spec.hr_profile),
        f"latency_ms={_FLOAT_FMT % spec.latency_ms}",
        f"double_spike={int(spec.double_spike)}",
        f"noise_level={_FLOAT_FMT % spec.noise_level}",
        f"seed={spec.seed}",
    ]
    if spec.ecg_dropouts:
        lines.append("ecg_dropouts=" + ",".join(f"{a:g}-{b:g}" for a, b in spec.ecg_dropouts))
    if spec.abp_dropouts:
        lines.append("abp_dropouts=" + ",".join(f"{a:g}-{b:g}" for a, b in spec.abp_dropouts))
    if spec.artifact_bursts:
        lines.append("artifact_bursts=" + ",".join(
            f"{ch}:{a:g}:{b:g}:{amp:g}" for ch, a, b, amp in spec.artifact_bursts))
    return "\n".join(lines) + "\n"


def write_synth_spec(spec: SynthSpec, path) -> None:
    _atomic_write(path, render_synth_spec(spec))


def read_synth_spec(path) -> SynthSpec:
    """Parse a flat key=value synthesis recipe; keys mirror SynthSpec fields."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    kwargs: dict = {}
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ParseError(path, line_no, f"expected key=value, got {text!r}")
        key, value = (part.strip() for part in text.split("=", 1))
        if key == "format":
            if value != str(FORMAT_VERSION):
                raise ParseError(path, line_no, f"unsupported format version {value!r}")
            continue
        if key not in _SYNTH_PARSERS:
            raise ParseError(path, line_no, f"unknown synth spec key {key!r}")
        if not value:
            raise ParseError(path, line_no, f"missing value for key {key!r}")
        try:
            kwargs[key] = _SYNTH_PARSERS[key](value)
        except ValueError:
            raise ParseError(path, line_no,
                             f"unparseable value {value!r} for key {key!r}") from None
    if "duration_s" not in kwargs:
        raise ParseError(path, None, "missing required key 'duration_s'")
    try:
        return SynthSpec(**kwargs)
    except ValueError as exc:
        raise ParseError(path, None, str(exc)) from None
