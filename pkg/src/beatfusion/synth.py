"""Synthetic dual-channel records with known ground-truth beats.

The generator integrates a piecewise-linear heart-rate profile into beat
times, renders an ECG as a triangular-spike train and an arterial pressure
trace whose upstrokes lag the beats by a configurable delay, then corrupts
the signals (never the truth) with dropouts and band-limited noise bursts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import RawAnnotations, _moving_average

ECG_AMPLITUDE = 1.0          # mV, triangular QRS spike
QRS_WIDTH_S = 0.04
DOUBLE_SPIKE_DELAY_S = 0.12
DOUBLE_SPIKE_SCALE = 0.8
ABP_DIASTOLIC = 80.0         # mmHg
ABP_SYSTOLIC = 120.0         # mmHg
ABP_RISE_S = 0.1             # raised-cosine upstroke duration
ABP_DECAY_TAU_S = 0.3
BURST_SMOOTH_S = 0.02        # moving-average width of burst noise


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one record.

    ``hr_profile`` is a sequence of (time_s, bpm) breakpoints interpolated
    linearly (held constant outside the span). Dropout intervals are
    (start_s, end_s); bursts are (channel, start_s, end_s, amplitude) with
    amplitude in the channel's units (mV for "ecg", mmHg for "abp").
    """

    duration_s: float
    fs: float = 250.0
    hr_profile: tuple = ((0.0, 60.0),)
    latency_ms: float = 200.0
    ecg_dropouts: tuple = ()
    abp_dropouts: tuple = ()
    artifact_bursts: tuple = ()
    double_spike: bool = False
    noise_level: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.duration_s <= 0.0:
            raise ValueError("duration_s must be > 0")
        if self.fs <= 0.0:
            raise ValueError("fs must be > 0")
        if self.latency_ms < 0.0:
            raise ValueError("latency_ms must be >= 0")
        if self.noise_level < 0.0:
            raise ValueError("noise_level must be >= 0")
        if not self.hr_profile:
            raise ValueError("hr_profile must have at least one breakpoint")
        ts = [t for t, _ in self.hr_profile]
        if any(b - a <= 0 for a, b in zip(ts, ts[1:])):
            raise ValueError("hr_profile times must be strictly increasing")
        for _, bpm in self.hr_profile:
            if not 20.0 <= bpm <= 240.0:
                raise ValueError(f"hr_profile bpm {bpm} outside [20, 240]")
        for name in ("ecg_dropouts", "abp_dropouts"):
            for start, end in getattr(self, name):
                self._check_interval(name, start, end)
        for burst in self.artifact_bursts:
            channel, start, end, amplitude = burst
            if channel not in ("ecg", "abp"):
                raise ValueError(f"burst channel must be 'ecg' or 'abp', got {channel!r}")
            self._check_interval("artifact_bursts", start, end)
            if amplitude < 0.0:
                raise ValueError("burst amplitude must be >= 0")

    def _check_interval(self, name: str, start: float, end: float) -> None:
        if not (0.0 <= start < end <= self.duration_s):
            raise ValueError(
                f"{name} interval ({start}, {end}) not inside [0, {self.duration_s}]")


def _beat_indices(spec: SynthSpec, n: int) -> np.ndarray:
    t = np.arange(n) / spec.fs
    ts = np.asarray([p[0] for p in spec.hr_profile], dtype=float)
    bpm = np.asarray([p[1] for p in spec.hr_profile], dtype=float)
    hr = np.interp(t, ts, bpm)
    beats_elapsed = np.cumsum(hr / 60.0) / spec.fs
    marks = np.arange(0.5, beats_elapsed[-1], 1.0) if n else np.empty(0)
    return np.searchsorted(beats_elapsed, marks).astype(np.int64)


def _add_kernel(x: np.ndarray, centers: np.ndarray, kernel: np.ndarray) -> None:
    half = kernel.size // 2
    n = x.size
    for c in centers:
        lo = int(c) - half
        hi = lo + kernel.size
        klo = max(0, -lo)
        khi = kernel.size - max(0, hi - n)
        if khi > klo:
            x[max(lo, 0):min(hi, n)] += kernel[klo:khi]


def _ecg_waveform(spec: SynthSpec, beat_idx: np.ndarray, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    half = max(int(round(QRS_WIDTH_S / 2 * spec.fs)), 1)
    kernel = ECG_AMPLITUDE * (1.0 - np.abs(np.arange(-half, half + 1)) / half)
    x = np.zeros(n)
    _add_kernel(x, beat_idx, kernel)
    if spec.double_spike:
        shift = int(round(DOUBLE_SPIKE_DELAY_S * spec.fs))
        _add_kernel(x, beat_idx + shift, DOUBLE_SPIKE_SCALE * kernel)
    if spec.noise_level > 0.0:
        x += spec.noise_level * ECG_AMPLITUDE * rng.standard_normal(n)
    return x


def _abp_waveform(spec: SynthSpec, beat_idx: np.ndarray, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    rise_n = max(int(round(ABP_RISE_S * spec.fs)), 1)
    tau_n = ABP_DECAY_TAU_S * spec.fs
    lat_n = int(round(spec.latency_ms / 1000.0 * spec.fs))
    onsets = beat_idx + lat_n
    onsets = onsets[onsets < n]
    x = np.full(n, ABP_DIASTOLIC)
    prev_val = ABP_DIASTOLIC
    for k, onset in enumerate(onsets):
        nxt = int(onsets[k + 1]) if k + 1 < onsets.size else n
        rise_end = min(onset + rise_n, nxt)
        m = rise_end - onset
        if m > 0:
            u = (np.arange(m) + 1.0) / rise_n
            x[onset:rise_end] = prev_val + (ABP_SYSTOLIC - prev_val) * 0.5 * (
                1.0 - np.cos(np.pi * np.minimum(u, 1.0)))
        if rise_end < nxt:
            peak = x[rise_end - 1] if rise_end > 0 else ABP_SYSTOLIC
            k_dec = np.arange(1, nxt - rise_end + 1)
            x[rise_end:nxt] = ABP_DIASTOLIC + (peak - ABP_DIASTOLIC) * np.exp(-k_dec / tau_n)
        prev_val = x[nxt - 1] if nxt > 0 else ABP_DIASTOLIC
    if spec.noise_level > 0.0:
        x += spec.noise_level * (ABP_SYSTOLIC - ABP_DIASTOLIC) * rng.standard_normal(n)
    return x


def generate(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, RawAnnotations]:
    """Render (ecg, abp, truth) for the spec; bit-identical for equal seeds.

    Faults corrupt only the signals: dropouts zero the channel, bursts add
    band-limited noise of the given amplitude, and the optional double spike
    adds a trailing echo after every ECG beat. Truth beats are untouched.
    """
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_s * spec.fs))
    beat_idx = _beat_indices(spec, n)
    truth = RawAnnotations(beat_idx, spec.fs)

    ecg = _ecg_waveform(spec, beat_idx, n, rng)
    abp = _abp_waveform(spec, beat_idx, n, rng)

    smooth_n = max(int(round(BURST_SMOOTH_S * spec.fs)), 1)
    for channel, start, end, amplitude in spec.artifact_bursts:
        lo, hi = int(round(start * spec.fs)), int(round(end * spec.fs))
        noise = _moving_average(rng.standard_normal(hi - lo), smooth_n)
        std = noise.std()
        if std > 0.0:
            noise /= std
        target = ecg if channel == "ecg" else abp
        target[lo:hi] += amplitude * noise
    for start, end in spec.ecg_dropouts:
        ecg[int(round(start * spec.fs)):int(round(end * spec.fs))] = 0.0
    for start, end in spec.abp_dropouts:
        abp[int(round(start * spec.fs)):int(round(end * spec.fs))] = 0.0
    return ecg, abp, truth
