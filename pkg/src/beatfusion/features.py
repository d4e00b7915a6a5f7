"""Per-window observations from raw dual-channel recordings.

Stand-in beat detectors for the two channels, sliding-window heart-rate
estimation, the two signal-quality indices, and the windowization step that
turns sample-indexed annotations plus providers into one
:class:`~beatfusion.model.WindowObservation` per window.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.signal import find_peaks

from .model import WindowObservation

# Both detectors refuse to emit two annotations closer than this.
REFRACTORY_S = 0.25
# Detector thresholds are a fraction of the strongest energy within this
# two-sided neighbourhood; it bounds how long a loud transient can suppress
# detections after it ends.
THRESHOLD_WINDOW_S = 2.0
DEFAULT_HR_WINDOW_S = 10.0
DEFAULT_SQI_WINDOW_S = 3.0
SQI_MATCH_TOL_S = 0.15
# Second ECG detector used for the quality index: same pipeline, stricter
# threshold.
SQI_SECONDARY_THRESHOLD_SCALE = 1.5


@dataclass(frozen=True, eq=False)
class RawAnnotations:
    """Sample-indexed beat annotations for one channel.

    ``sample_indices`` must be strictly increasing and non-negative.
    """

    sample_indices: np.ndarray
    fs: float

    def __post_init__(self) -> None:
        idx = np.asarray(self.sample_indices, dtype=np.int64)
        object.__setattr__(self, "sample_indices", idx)
        if self.fs <= 0.0:
            raise ValueError(f"fs must be > 0, got {self.fs}")
        if idx.ndim != 1:
            raise ValueError("sample_indices must be one-dimensional")
        if idx.size and idx[0] < 0:
            raise ValueError("sample indices must be non-negative")
        if idx.size > 1 and not np.all(np.diff(idx) > 0):
            raise ValueError("sample indices must be strictly increasing")

    def __len__(self) -> int:
        return int(self.sample_indices.size)

    def times(self) -> np.ndarray:
        """Annotation times in seconds."""
        return self.sample_indices / self.fs


@dataclass(frozen=True, eq=False)
class SqiSeries:
    """Per-window quality values: real-valued ECG quality in [0, 1] and the
    binary ABP range check."""

    ecg: np.ndarray
    abp: np.ndarray

    def __post_init__(self) -> None:
        ecg = np.asarray(self.ecg, dtype=float)
        abp = np.asarray(self.abp, dtype=np.int8)
        object.__setattr__(self, "ecg", ecg)
        object.__setattr__(self, "abp", abp)
        if ecg.shape != abp.shape:
            raise ValueError("ecg and abp series must have equal length")
        if ecg.size and (ecg.min() < 0.0 or ecg.max() > 1.0):
            raise ValueError("ecg sqi values must lie in [0, 1]")
        if abp.size and not np.all((abp == 0) | (abp == 1)):
            raise ValueError("abp sqi values must be 0 or 1")


def _moving_average(x: np.ndarray, width: float) -> np.ndarray:
    # Edge-padded so record boundaries do not look like signal transients.
    w = max(int(round(width)), 1)
    if w == 1 or x.size == 0:
        return x.astype(float, copy=True)
    left = w // 2
    right = w - 1 - left
    padded = np.pad(x, (left, right), mode="edge")
    return np.convolve(padded, np.ones(w) / w, mode="valid")


def _check_signal(signal, fs: float) -> np.ndarray:
    if fs <= 0.0:
        raise ValueError(f"fs must be > 0, got {fs}")
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise ValueError("signal must be one-dimensional")
    if x.size and not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    return x


def _accept_candidates(feature: np.ndarray, candidates: np.ndarray, fs: float,
                       threshold_scale: float) -> np.ndarray:
    """Keep candidates exceeding a fraction of the local feature maximum."""
    half = int(THRESHOLD_WINDOW_S * fs)
    keep = []
    for c in candidates:
        local = feature[max(0, c - half):c + half + 1].max()
        if feature[c] > 0.0 and feature[c] >= threshold_scale * 0.3 * local:
            keep.append(int(c))
    return np.asarray(keep, dtype=np.int64)


def detect_qrs(signal, fs: float, threshold_scale: float = 1.0) -> RawAnnotations:
    """Derivative-energy QRS detector.

    Baseline removal by subtracting a 200 ms moving average, difference,
    squaring, 60 ms moving-window integration, then local maxima spaced by
    the refractory period and an adaptive threshold (a fraction of the
    strongest nearby energy, scaled by ``threshold_scale``). Deterministic.
    """
    x = _check_signal(signal, fs)
    if x.size == 0:
        return RawAnnotations(np.empty(0, dtype=np.int64), fs)
    band = x - _moving_average(x, 0.2 * fs)
    energy = np.diff(band, prepend=band[:1]) ** 2
    integ = _moving_average(energy, 0.06 * fs)
    dist = max(int(REFRACTORY_S * fs), 1)
    candidates, _ = find_peaks(integ, distance=dist)
    return RawAnnotations(_accept_candidates(integ, candidates, fs, threshold_scale), fs)


def detect_abp_pulses(signal, fs: float) -> RawAnnotations:
    """Slope-sum pulse-onset detector for arterial pressure.

    Positive-slope sum over a trailing 128 ms window, local maxima spaced by
    the refractory period, adaptive threshold as in :func:`detect_qrs`, then
    each accepted maximum is walked back to the start of its upstroke (first
    sample above 5 % of the peak slope sum). Annotates onsets, which lag the
    electrical beat by the pulse-transit delay.
    """
    x = _check_signal(signal, fs)
    if x.size == 0:
        return RawAnnotations(np.empty(0, dtype=np.int64), fs)
    smoothed = _moving_average(x, 0.04 * fs)
    d = np.clip(np.diff(smoothed, prepend=smoothed[:1]), 0.0, None)
    w = max(int(round(0.128 * fs)), 1)
    ssf = np.convolve(d, np.ones(w))[:x.size]
    dist = max(int(REFRACTORY_S * fs), 1)
    candidates, _ = find_peaks(ssf, distance=dist)
    accepted = _accept_candidates(ssf, candidates, fs, 1.0)

    back = int(0.3 * fs)
    onsets: list[int] = []
    for c in accepted:
        lo = max(0, c - back)
        seg = ssf[lo:c + 1]
        below = np.nonzero(seg <= 0.1 * ssf[c])[0]
        onset = lo + int(below[-1]) + 1 if below.size else lo
        if not onsets or onset - onsets[-1] >= dist:
            onsets.append(onset)
    return RawAnnotations(np.asarray(onsets, dtype=np.int64), fs)


def local_heart_rate(ann: RawAnnotations, t: float,
                     window_s: float = DEFAULT_HR_WINDOW_S) -> Optional[float]:
    """Local rate in bpm from the median inter-beat interval over the
    trailing window, or ``None`` with fewer than two annotations there."""
    times = ann.times()
    sel = times[(times > t - window_s) & (times <= t)]
    if sel.size < 2:
        return None
    return 60.0 / float(np.median(np.diff(sel)))


def _matched_count(a: np.ndarray, b: np.ndarray, tol: float) -> int:
    """Greedy chronological one-to-one matches between two sorted time lists."""
    i = j = matched = 0
    while i < a.size and j < b.size:
        if abs(a[i] - b[j]) <= tol:
            matched += 1
            i += 1
            j += 1
        elif b[j] < a[i]:
            j += 1
        else:
            i += 1
    return matched


def ecg_sqi(primary: RawAnnotations, secondary: RawAnnotations, t: float,
            window_s: float = DEFAULT_SQI_WINDOW_S,
            tol_s: float = SQI_MATCH_TOL_S) -> float:
    """Inter-detector agreement over the trailing window, in [0, 1].

    Fraction of beats matched one-to-one within ``tol_s`` between the two
    detectors, normalized by the larger beat count. Returns 0.0 when either
    detector saw nothing in the window.
    """
    ta = primary.times()
    tb = secondary.times()
    a = ta[(ta > t - window_s) & (ta <= t)]
    b = tb[(tb > t - window_s) & (tb <= t)]
    if a.size == 0 or b.size == 0:
        return 0.0
    return _matched_count(a, b, tol_s) / max(a.size, b.size)


def abp_sqi(signal, pulses: RawAnnotations, t: float,
            max_age_s: float = 4.0) -> int:
    """Binary physiological range check over the latest complete beat.

    1 iff, over the segment between the last two pulse onsets at or before
    ``t``: systolic in [40, 250] mmHg, mean pressure in [30, 200] mmHg,
    pulse pressure >= 10 mmHg, and the local pulse rate in [20, 240] bpm.
    0 when no sufficiently recent complete beat exists.
    """
    x = np.asarray(signal, dtype=float)
    idx = pulses.sample_indices
    k = int(np.searchsorted(idx, t * pulses.fs, side="right"))
    if k < 2:
        return 0
    p0, p1 = int(idx[k - 2]), int(idx[k - 1])
    if t - p1 / pulses.fs > max_age_s:
        return 0
    seg = x[p0:p1 + 1]
    if seg.size == 0:
        return 0
    systolic = float(seg.max())
    pulse_pressure = systolic - float(seg.min())
    mean_pressure = float(seg.mean())
    hr = local_heart_rate(pulses, t)
    ok = (40.0 <= systolic <= 250.0
          and 30.0 <= mean_pressure <= 200.0
          and pulse_pressure >= 10.0
          and hr is not None and 20.0 <= hr <= 240.0)
    return int(ok)


def _window_flags(ann: RawAnnotations, window_samples: int, n_windows: int) -> np.ndarray:
    flags = np.zeros(n_windows, dtype=bool)
    w = ann.sample_indices // window_samples
    flags[w[w < n_windows]] = True
    return flags


def windowize(ecg_ann: RawAnnotations, abp_ann: RawAnnotations,
              ecg_hr_at: Callable[[float], Optional[float]],
              abp_hr_at: Callable[[float], Optional[float]],
              ecg_sqi_at: Callable[[float], float],
              abp_sqi_at: Callable[[float], int],
              window_samples: int, n_windows: int) -> list[WindowObservation]:
    """Build one observation per window.

    A window's annotation flag is true iff at least one annotation falls in
    its sample span; the heart-rate and quality providers are sampled at the
    window's end time.
    """
    if window_samples < 1:
        raise ValueError("window_samples must be >= 1")
    if ecg_ann.fs != abp_ann.fs:
        raise ValueError(
            f"annotation sampling frequencies differ: {ecg_ann.fs} vs {abp_ann.fs}")
    ecg_flags = _window_flags(ecg_ann, window_samples, n_windows)
    abp_flags = _window_flags(abp_ann, window_samples, n_windows)
    fs = ecg_ann.fs
    out = []
    for w in range(n_windows):
        t_end = (w + 1) * window_samples / fs
        out.append(WindowObservation(
            ecg_ann=bool(ecg_flags[w]),
            abp_ann=bool(abp_flags[w]),
            ecg_hr=ecg_hr_at(t_end),
            abp_hr=abp_hr_at(t_end),
            ecg_sqi=ecg_sqi_at(t_end),
            abp_sqi=abp_sqi_at(t_end),
        ))
    return out


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Windowized observations plus the geometry and intermediates that
    produced them."""

    observations: list[WindowObservation]
    window_samples: int
    window_s: float
    sqi: SqiSeries
    ecg_ann: RawAnnotations
    abp_ann: RawAnnotations


def build_observations(ecg, abp, fs: float, *,
                       nominal_window_s: float = 0.025,
                       ecg_ann: RawAnnotations | None = None,
                       abp_ann: RawAnnotations | None = None,
                       hr_window_s: float = DEFAULT_HR_WINDOW_S,
                       sqi_window_s: float = DEFAULT_SQI_WINDOW_S) -> ObservationSet:
    """Full observation pipeline for a record.

    Runs the stand-in detectors unless externally produced annotations are
    supplied, computes per-window quality series, and windowizes. The window
    length is ``round(nominal_window_s * fs)`` samples; the returned
    ``window_s`` is the actual duration ``window_samples / fs`` and is what
    the model formulas should use.
    """
    ecg_sig = _check_signal(ecg, fs)
    abp_sig = _check_signal(abp, fs)
    if ecg_sig.size != abp_sig.size:
        raise ValueError("ECG and ABP signals must have equal length")
    window_samples = max(int(round(nominal_window_s * fs)), 1)
    n_windows = ecg_sig.size // window_samples

    if ecg_ann is None:
        ecg_ann = detect_qrs(ecg_sig, fs)
    if abp_ann is None:
        abp_ann = detect_abp_pulses(abp_sig, fs)
    ecg_secondary = detect_qrs(ecg_sig, fs, threshold_scale=SQI_SECONDARY_THRESHOLD_SCALE)

    t_ends = (np.arange(n_windows) + 1) * window_samples / fs
    sqi_ecg = np.empty(n_windows)
    sqi_abp = np.empty(n_windows, dtype=np.int8)
    beat_cache: dict[int, int] = {}
    pulse_idx = abp_ann.sample_indices
    for w, t_end in enumerate(t_ends):
        sqi_ecg[w] = ecg_sqi(ecg_ann, ecg_secondary, t_end, window_s=sqi_window_s)
        k = int(np.searchsorted(pulse_idx, t_end * fs, side="right"))
        if k in beat_cache and (k < 1 or t_end - pulse_idx[k - 1] / fs <= 4.0):
            sqi_abp[w] = beat_cache[k]
        else:
            sqi_abp[w] = abp_sqi(abp_sig, abp_ann, t_end)
            beat_cache[k] = sqi_abp[w]
    series = SqiSeries(ecg=sqi_ecg, abp=sqi_abp)

    def _sqi_index(t: float) -> int:
        return int(round(t * fs)) // window_samples - 1

    obs = windowize(
        ecg_ann, abp_ann,
        lambda t: local_heart_rate(ecg_ann, t, window_s=hr_window_s),
        lambda t: local_heart_rate(abp_ann, t, window_s=hr_window_s),
        lambda t: float(series.ecg[_sqi_index(t)]),
        lambda t: int(series.abp[_sqi_index(t)]),
        window_samples, n_windows,
    )
    return ObservationSet(
        observations=obs,
        window_samples=window_samples,
        window_s=window_samples / fs,
        sqi=series,
        ecg_ann=ecg_ann,
        abp_ann=abp_ann,
    )
