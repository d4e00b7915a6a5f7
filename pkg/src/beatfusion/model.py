"""Generative model of beat timing across paired ECG and blood-pressure channels.

Each particle carries two static parameters (resting heart rate and the
ECG-to-ABP delay in windows) plus seven evolving variables: the instantaneous
heart rate, a per-channel peak flag, the window index of each channel's last
peak, and a per-channel artifact flag. This module holds the priors, the
one-window transition kernel, and the likelihood of per-window detector
observations, all as pure functions.

Every sampling function draws from an explicit ``numpy.random.Generator`` and
consumes a fixed number of variates in a fixed order (documented on the
function), so vectorized ensemble code can reproduce single-particle results
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

# Floor on any heart-rate value so windows-per-beat stays finite.
MIN_TRUE_HR = 20.0
# Floor applied to an observed heart rate before deriving the likelihood
# sigma (sigma = max(obs, MIN_HR_FOR_SIGMA) / 4), so a silent or degenerate
# detector cannot produce a zero-variance density.
MIN_HR_FOR_SIGMA = 20.0
# ECG quality below this (with the ABP check passing) hands weighting to ABP.
ECG_SQI_GATE = 0.8

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class StaticParams:
    """Per-particle constants: resting heart rate (bpm) and the ECG-to-ABP
    peak delay as an integer number of windows."""

    rest_hr: float
    latency: int


@dataclass
class DynamicState:
    """Per-particle evolving state.

    ``ecg_last_peak`` / ``abp_last_peak`` are window indices and may be
    negative right after initialization (a peak believed to have happened
    before the record started). ``abp_last_peak`` may also briefly point one
    latency ahead of the current window until the first pressure peak fires,
    since it is seeded as ``ecg_last_peak + latency``.
    """

    true_hr: float
    ecg_peak: bool
    ecg_last_peak: int
    abp_peak: bool
    abp_last_peak: int
    ecg_artifact: bool
    abp_artifact: bool


@dataclass
class ParticleState:
    static_params: StaticParams
    dynamic: DynamicState


@dataclass(frozen=True)
class WindowObservation:
    """Detector outputs for one window.

    ``ecg_hr`` / ``abp_hr`` are local heart-rate estimates in bpm and are
    ``None`` when the detector had too little data. ``ecg_sqi`` is a
    real-valued quality in [0, 1]; ``abp_sqi`` is the binary physiological
    range check.
    """

    ecg_ann: bool
    abp_ann: bool
    ecg_hr: float | None
    abp_hr: float | None
    ecg_sqi: float
    abp_sqi: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.ecg_sqi <= 1.0:
            raise ValueError(f"ecg_sqi must lie in [0, 1], got {self.ecg_sqi}")
        if self.abp_sqi not in (0, 1):
            raise ValueError(f"abp_sqi must be 0 or 1, got {self.abp_sqi}")


@dataclass(frozen=True)
class ModelConfig:
    """Prior parameters, transition constants, and window geometry.

    ``window_s`` is the actual window duration in seconds used in all
    rate-to-windows conversions; pipelines set it to
    ``round(nominal * fs) / fs`` so it matches an integer sample count.
    """

    avg_hr: float = 70.0                  # demographic resting-HR mean, bpm
    rest_hr_sigma: float = 10.0           # resting-HR prior spread, bpm
    true_hr_init_sigma: float = 5.0       # initial HR spread around resting, bpm
    true_hr_noise_sigma: float = 1.0      # per-window HR innovation, bpm
    latency_prior_mean_ms: float = 200.0  # ECG-to-ABP delay prior mean
    latency_prior_sigma_windows: float = 2.0
    peak_prior_prob: float = 0.01
    artifact_prior_prob: float = 0.01
    artifact_stay_prob: float = 0.99      # inertia: P(artifact flag keeps its value)
    window_s: float = 0.025
    peak_ann_prob: float = 0.99           # P(annotation | peak, no artifact)
    peak_artifact_ann_prob: float = 0.7   # P(annotation | peak, artifact)

    def __post_init__(self) -> None:
        for name in ("peak_prior_prob", "artifact_prior_prob", "artifact_stay_prob",
                     "peak_ann_prob", "peak_artifact_ann_prob"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {p}")
        for name in ("rest_hr_sigma", "true_hr_init_sigma", "true_hr_noise_sigma",
                     "latency_prior_sigma_windows"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.avg_hr <= 0.0:
            raise ValueError("avg_hr must be > 0")
        if self.latency_prior_mean_ms < 0.0:
            raise ValueError("latency_prior_mean_ms must be >= 0")
        if self.window_s <= 0.0:
            raise ValueError("window_s must be > 0")


def binomial_pmf_general(x, n, p):
    """Binomial pmf extended to real-valued count and trial arguments.

    Evaluated through log-gamma, so non-integer ``x`` and ``n`` need no
    rounding; at integer arguments it coincides with the exact pmf. Returns 0
    outside the support [0, n]. ``x`` and ``n`` may be scalars or arrays
    (broadcast elementwise); ``p`` must be a scalar in (0, 1).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr <= 0.0):
        raise ValueError("n must be > 0")
    x_arr = np.asarray(x, dtype=float)
    inside = (x_arr >= 0.0) & (x_arr <= n_arr)
    xs = np.where(inside, x_arr, 0.0)
    log_pmf = (gammaln(n_arr + 1.0) - gammaln(xs + 1.0) - gammaln(n_arr - xs + 1.0)
               + xs * math.log(p) + (n_arr - xs) * math.log1p(-p))
    out = np.where(inside, np.exp(log_pmf), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def beat_window(true_hr, window_s):
    """Expected number of windows between beats: 60 / (window_s * true_hr)."""
    hr_arr = np.asarray(true_hr, dtype=float)
    if np.any(hr_arr <= 0.0):
        raise ValueError("true_hr must be > 0")
    if window_s <= 0.0:
        raise ValueError("window_s must be > 0")
    out = 60.0 / (window_s * hr_arr)
    return float(out) if np.ndim(out) == 0 else out


def peak_probability(diff, bw):
    """Probability of a peak ``diff`` windows after the previous one.

    Built from the extended binomial pmf with mean ``bw`` and variance
    ``bw / 3`` (n = 1.5*bw, p = 2/3), evaluated one full period up
    (x = diff mod bw + bw) so the value is periodic in ``diff`` with period
    ``bw``. Clamped to [0, 1].
    """
    bw_arr = np.asarray(bw, dtype=float)
    if np.any(bw_arr <= 0.0):
        raise ValueError("bw must be > 0")
    x = np.mod(np.asarray(diff, dtype=float), bw_arr) + bw_arr
    out = np.clip(binomial_pmf_general(x, 1.5 * bw_arr, 2.0 / 3.0), 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def init_particle(cfg: ModelConfig, rng: np.random.Generator) -> ParticleState:
    """Draw one particle from the priors.

    Draw order (7 variates): normal for rest_hr, normal for true_hr, normal
    for latency, uniform for ecg_last_peak, uniform for ecg_peak, uniform for
    the ECG artifact, uniform for the ABP artifact. The pressure-side peak is
    deterministic: it fires at window 0 exactly when
    ``ecg_last_peak + latency == 0``, and ``abp_last_peak`` starts at
    ``ecg_last_peak + latency``.
    """
    z_rest = rng.standard_normal()
    z_true = rng.standard_normal()
    z_lat = rng.standard_normal()
    u_last = rng.random()
    u_peak = rng.random()
    u_ecg_art = rng.random()
    u_abp_art = rng.random()

    rest_hr = max(cfg.avg_hr + cfg.rest_hr_sigma * z_rest, MIN_TRUE_HR)
    true_hr = max(rest_hr + cfg.true_hr_init_sigma * z_true, MIN_TRUE_HR)
    lat_mean = cfg.latency_prior_mean_ms / 1000.0 / cfg.window_s
    latency = max(int(round(lat_mean + cfg.latency_prior_sigma_windows * z_lat)), 0)
    span = max(int(round(beat_window(true_hr, cfg.window_s))), 1)
    ecg_last_peak = -1 - int(u_last * span)
    ecg_peak = bool(u_peak < cfg.peak_prior_prob)
    abp_last_peak = ecg_last_peak + latency
    abp_peak = abp_last_peak == 0

    return ParticleState(
        static_params=StaticParams(rest_hr=rest_hr, latency=latency),
        dynamic=DynamicState(
            true_hr=true_hr,
            ecg_peak=ecg_peak,
            ecg_last_peak=ecg_last_peak,
            abp_peak=abp_peak,
            abp_last_peak=abp_last_peak,
            ecg_artifact=bool(u_ecg_art < cfg.artifact_prior_prob),
            abp_artifact=bool(u_abp_art < cfg.artifact_prior_prob),
        ),
    )


def propagate_particle(prev: ParticleState, t_next: int, mean_latency: float,
                       cfg: ModelConfig, rng: np.random.Generator) -> ParticleState:
    """Advance one particle to window ``t_next``.

    ``mean_latency`` must be the across-particle mean of the latency over the
    pre-propagation ensemble; the pressure peak is tied to the electrical one
    through its rounded value so particles do not scatter their pressure
    peaks. Statics never change.

    Draw order (4 variates): normal for the heart-rate innovation, uniform
    for the ECG peak, uniform for the ECG artifact flip, uniform for the ABP
    artifact flip.
    """
    z = rng.standard_normal()
    u_peak = rng.random()
    u_ecg_art = rng.random()
    u_abp_art = rng.random()

    st = prev.static_params
    d = prev.dynamic

    p_fire = peak_probability(t_next - d.ecg_last_peak,
                              beat_window(d.true_hr, cfg.window_s))
    true_hr = max(0.8 * d.true_hr + 0.2 * st.rest_hr + cfg.true_hr_noise_sigma * z,
                  MIN_TRUE_HR)
    ecg_peak = bool(u_peak < p_fire)
    ecg_last_peak = t_next if ecg_peak else d.ecg_last_peak
    abp_peak = t_next == ecg_last_peak + int(round(mean_latency))
    abp_last_peak = t_next if abp_peak else d.abp_last_peak
    stay = cfg.artifact_stay_prob
    ecg_artifact = d.ecg_artifact if u_ecg_art < stay else not d.ecg_artifact
    abp_artifact = d.abp_artifact if u_abp_art < stay else not d.abp_artifact

    return ParticleState(
        static_params=st,
        dynamic=DynamicState(
            true_hr=true_hr,
            ecg_peak=ecg_peak,
            ecg_last_peak=ecg_last_peak,
            abp_peak=abp_peak,
            abp_last_peak=abp_last_peak,
            ecg_artifact=ecg_artifact,
            abp_artifact=abp_artifact,
        ),
    )


def annotation_likelihood(peak, artifact, ann, beat_prob,
                          peak_ann_prob: float = 0.99,
                          peak_artifact_ann_prob: float = 0.7):
    """P(annotation flag | peak state, artifact state).

    With a peak present the table rows are fixed constants; without one the
    probability of an annotation is ``beat_prob`` (the rhythm-based chance a
    beat is due), blended halfway toward 0.5 when an artifact makes the
    channel less trustworthy. The two outcomes of each row are exact
    complements. ``peak``, ``artifact`` and ``beat_prob`` broadcast
    elementwise; ``ann`` is a single flag.
    """
    bp = np.asarray(beat_prob, dtype=float)
    norm_bp = 0.5 * (0.5 + bp)
    p_ann = np.where(peak,
                     np.where(artifact, peak_artifact_ann_prob, peak_ann_prob),
                     np.where(artifact, norm_bp, bp))
    out = p_ann if ann else 1.0 - p_ann
    return float(out) if np.ndim(out) == 0 else out


def hr_likelihood(true_hr, hr_obs: float):
    """Gaussian density of ``true_hr`` around the observed rate.

    Sigma is a quarter of the observed rate, floored at
    ``MIN_HR_FOR_SIGMA / 4`` bpm so a zero reading cannot collapse the
    density. ``true_hr`` may be an array.
    """
    sigma = max(float(hr_obs), MIN_HR_FOR_SIGMA) / 4.0
    z = (np.asarray(true_hr, dtype=float) - hr_obs) / sigma
    out = np.exp(-0.5 * z * z) / (sigma * _SQRT_2PI)
    return float(out) if np.ndim(out) == 0 else out


def gate(ecg_sqi: float, abp_sqi: int) -> str:
    """Pick the channel to weight on: ``"abp"`` only when ECG quality is
    below the gate while the ABP range check passes, otherwise ``"ecg"``."""
    return "abp" if (ecg_sqi < ECG_SQI_GATE and abp_sqi == 1) else "ecg"


def particle_weight(p: ParticleState, obs: WindowObservation, t: int,
                    cfg: ModelConfig) -> float:
    """Likelihood of the gated channel's observations under the particle.

    Only the gated channel contributes: the annotation factor always, the
    heart-rate factor only when that channel produced a rate estimate. Zero
    is a legal weight.
    """
    d = p.dynamic
    if gate(obs.ecg_sqi, obs.abp_sqi) == "ecg":
        peak, artifact, last_peak = d.ecg_peak, d.ecg_artifact, d.ecg_last_peak
        ann, hr_obs = obs.ecg_ann, obs.ecg_hr
    else:
        peak, artifact, last_peak = d.abp_peak, d.abp_artifact, d.abp_last_peak
        ann, hr_obs = obs.abp_ann, obs.abp_hr
    bp = peak_probability(t - last_peak, beat_window(d.true_hr, cfg.window_s))
    w = annotation_likelihood(peak, artifact, ann, bp,
                              cfg.peak_ann_prob, cfg.peak_artifact_ann_prob)
    if hr_obs is not None:
        w *= hr_likelihood(d.true_hr, hr_obs)
    return float(w)
