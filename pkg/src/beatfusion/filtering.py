"""Sequential importance-sampling-resampling engine over the beat model.

Initialize an ensemble from the priors, then per window: compute the
ensemble-mean latency, propagate every particle, weight it against the
window's observations, record weighted ensemble means in the trace, and
resample. Beats are extracted afterwards from the traced pressure-peak
fractions.

Randomness contract: the ensemble is split into a fixed number of blocks and
every block owns a generator spawned from the seed; all draws happen on the
caller's thread in block order before any parallel section, and the parallel
sections are pure elementwise math on disjoint slices. Results are therefore
bit-identical for any ``workers`` setting, including sequential runs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .features import RawAnnotations
from .model import (
    MIN_TRUE_HR,
    ModelConfig,
    WindowObservation,
    annotation_likelihood,
    beat_window,
    gate,
    hr_likelihood,
    peak_probability,
)

# Fixed ensemble partition; part of the reproducibility contract, so not a
# FilterConfig knob.
N_BLOCKS = 8

# Trace column order; also the serialization order used by the io module.
TRACE_VARS = ("rest_hr", "latency", "true_hr", "ecg_peak", "ecg_last_peak",
              "abp_peak", "abp_last_peak", "ecg_artifact", "abp_artifact")


@dataclass(frozen=True)
class FilterConfig:
    """Particle count, beat-extraction knobs, seed, and the model parameters.

    ``workers`` > 0 dispatches per-block propagation and weighting to a
    thread pool; output is identical either way.
    """

    n_particles: int = 2000
    peak_fraction_threshold: float = 0.12
    refractory_windows: int = 10
    seed: int = 0
    workers: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if not 0.0 < self.peak_fraction_threshold <= 1.0:
            raise ValueError("peak_fraction_threshold must lie in (0, 1]")
        if self.refractory_windows < 1:
            raise ValueError("refractory_windows must be >= 1")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")


@dataclass(eq=False)
class FilterTrace:
    """Per-window weighted ensemble means of all state variables (booleans as
    fractions), the unnormalized weight sum, and a degenerate-step flag.

    Means are taken before resampling with the window's normalized weights.
    ``fs`` and ``window_samples`` carry the record geometry so windows can be
    mapped back to sample indices.
    """

    fs: float
    window_samples: int
    rest_hr: np.ndarray
    latency: np.ndarray
    true_hr: np.ndarray
    ecg_peak: np.ndarray
    ecg_last_peak: np.ndarray
    abp_peak: np.ndarray
    abp_last_peak: np.ndarray
    ecg_artifact: np.ndarray
    abp_artifact: np.ndarray
    weight_sum: np.ndarray
    degenerate: np.ndarray

    @property
    def n_windows(self) -> int:
        return int(self.weight_sum.size)

    @property
    def degenerate_steps(self) -> int:
        return int(self.degenerate.sum())


@dataclass(eq=False)
class _Ensemble:
    """Struct-of-arrays particle ensemble."""

    rest_hr: np.ndarray
    latency: np.ndarray
    true_hr: np.ndarray
    ecg_peak: np.ndarray
    ecg_last_peak: np.ndarray
    abp_peak: np.ndarray
    abp_last_peak: np.ndarray
    ecg_artifact: np.ndarray
    abp_artifact: np.ndarray

    @property
    def n(self) -> int:
        return int(self.rest_hr.size)

    def take(self, idx: np.ndarray) -> None:
        """Reorder by parent indices; the latency column stays in place.

        No likelihood ever reads a particle's own latency (the pressure peak
        is tied to the ensemble mean), so copying latencies along with their
        parents would only inject resampling noise into an unidentified
        static and let its marginal degenerate; keeping the column fixed
        leaves that marginal equal to the prior sample.
        """
        self.rest_hr = self.rest_hr[idx]
        self.true_hr = self.true_hr[idx]
        self.ecg_peak = self.ecg_peak[idx]
        self.ecg_last_peak = self.ecg_last_peak[idx]
        self.abp_peak = self.abp_peak[idx]
        self.abp_last_peak = self.abp_last_peak[idx]
        self.ecg_artifact = self.ecg_artifact[idx]
        self.abp_artifact = self.abp_artifact[idx]


def block_bounds(n: int, n_blocks: int = N_BLOCKS) -> list[tuple[int, int]]:
    """Fixed (start, stop) slices partitioning ``n`` particles into blocks."""
    sizes = [len(chunk) for chunk in np.array_split(np.arange(n), n_blocks)]
    bounds = []
    start = 0
    for size in sizes:
        bounds.append((start, start + size))
        start += size
    return bounds


def spawn_rngs(seed: int, n_blocks: int = N_BLOCKS):
    """Per-block generators plus a separate resampling generator."""
    children = np.random.SeedSequence(seed).spawn(n_blocks + 1)
    block_rngs = [np.random.default_rng(c) for c in children[:n_blocks]]
    return block_rngs, np.random.default_rng(children[n_blocks])


def _init_block(nb: int, cfg: ModelConfig, rng: np.random.Generator) -> dict:
    # Same draw order as model.init_particle, one array per variate.
    z_rest = rng.standard_normal(nb)
    z_true = rng.standard_normal(nb)
    z_lat = rng.standard_normal(nb)
    u_last = rng.random(nb)
    u_peak = rng.random(nb)
    u_ecg_art = rng.random(nb)
    u_abp_art = rng.random(nb)

    rest_hr = np.maximum(cfg.avg_hr + cfg.rest_hr_sigma * z_rest, MIN_TRUE_HR)
    true_hr = np.maximum(rest_hr + cfg.true_hr_init_sigma * z_true, MIN_TRUE_HR)
    lat_mean = cfg.latency_prior_mean_ms / 1000.0 / cfg.window_s
    latency = np.maximum(
        np.round(lat_mean + cfg.latency_prior_sigma_windows * z_lat), 0.0
    ).astype(np.int64)
    span = np.maximum(np.round(beat_window(true_hr, cfg.window_s)), 1.0)
    ecg_last_peak = (-1 - (u_last * span).astype(np.int64)).astype(np.int64)
    abp_last_peak = ecg_last_peak + latency
    return dict(
        rest_hr=rest_hr,
        latency=latency,
        true_hr=true_hr,
        ecg_peak=u_peak < cfg.peak_prior_prob,
        ecg_last_peak=ecg_last_peak,
        abp_peak=abp_last_peak == 0,
        abp_last_peak=abp_last_peak,
        ecg_artifact=u_ecg_art < cfg.artifact_prior_prob,
        abp_artifact=u_abp_art < cfg.artifact_prior_prob,
    )


def init_ensemble(n: int, cfg: ModelConfig, block_rngs) -> _Ensemble:
    parts = [_init_block(stop - start, cfg, rng)
             for (start, stop), rng in zip(block_bounds(n), block_rngs)]
    return _Ensemble(**{
        name: np.concatenate([p[name] for p in parts])
        for name in parts[0]
    })


def _draw_propagation(block_rngs, bounds):
    # One pass per block, same per-particle order as model.propagate_particle.
    z, u_peak, u_ecg, u_abp = [], [], [], []
    for (start, stop), rng in zip(bounds, block_rngs):
        nb = stop - start
        z.append(rng.standard_normal(nb))
        u_peak.append(rng.random(nb))
        u_ecg.append(rng.random(nb))
        u_abp.append(rng.random(nb))
    return (np.concatenate(z), np.concatenate(u_peak),
            np.concatenate(u_ecg), np.concatenate(u_abp))


def _propagate_slice(ens: _Ensemble, start: int, stop: int, t: int,
                     lat_shift: int, cfg: ModelConfig,
                     z, u_peak, u_ecg_art, u_abp_art) -> None:
    s = slice(start, stop)
    true_hr = ens.true_hr[s]
    p_fire = peak_probability(t - ens.ecg_last_peak[s],
                              beat_window(true_hr, cfg.window_s))
    ens.true_hr[s] = np.maximum(
        0.8 * true_hr + 0.2 * ens.rest_hr[s] + cfg.true_hr_noise_sigma * z[s],
        MIN_TRUE_HR)
    fired = u_peak[s] < p_fire
    ens.ecg_peak[s] = fired
    ens.ecg_last_peak[s] = np.where(fired, t, ens.ecg_last_peak[s])
    abp_fired = ens.ecg_last_peak[s] + lat_shift == t
    ens.abp_peak[s] = abp_fired
    ens.abp_last_peak[s] = np.where(abp_fired, t, ens.abp_last_peak[s])
    stay = cfg.artifact_stay_prob
    ens.ecg_artifact[s] = np.where(u_ecg_art[s] < stay,
                                   ens.ecg_artifact[s], ~ens.ecg_artifact[s])
    ens.abp_artifact[s] = np.where(u_abp_art[s] < stay,
                                   ens.abp_artifact[s], ~ens.abp_artifact[s])


def _weight_slice(ens: _Ensemble, start: int, stop: int,
                  obs: WindowObservation, t: int, cfg: ModelConfig,
                  out: np.ndarray) -> None:
    s = slice(start, stop)
    if gate(obs.ecg_sqi, obs.abp_sqi) == "ecg":
        peak, artifact, last_peak = ens.ecg_peak[s], ens.ecg_artifact[s], ens.ecg_last_peak[s]
        ann, hr_obs = obs.ecg_ann, obs.ecg_hr
    else:
        peak, artifact, last_peak = ens.abp_peak[s], ens.abp_artifact[s], ens.abp_last_peak[s]
        ann, hr_obs = obs.abp_ann, obs.abp_hr
    bp = peak_probability(t - last_peak, beat_window(ens.true_hr[s], cfg.window_s))
    w = annotation_likelihood(peak, artifact, ann, bp,
                              cfg.peak_ann_prob, cfg.peak_artifact_ann_prob)
    if hr_obs is not None:
        w = w * hr_likelihood(ens.true_hr[s], hr_obs)
    out[s] = w


def systematic_resample(weights, rng: np.random.Generator,
                        n: int | None = None) -> np.ndarray:
    """Parent indices via a single uniform draw striding the weight CDF.

    Returns ``n`` indices (default: one per weight) with expected multiplicity
    ``n * w_i / sum(w)``. Equal weights reproduce every index exactly once.
    Raises ``ValueError`` on negative weights or an all-zero weight vector;
    callers are expected to treat the latter as a degenerate step.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D array")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0.0:
        raise ValueError("all weights are zero (degenerate step)")
    if n is None:
        n = w.size
    cdf = np.cumsum(w / total)
    cdf[-1] = 1.0
    positions = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(cdf, positions, side="right"), w.size - 1)


def _record_trace(trace: FilterTrace, t: int, ens: _Ensemble,
                  wn: np.ndarray, weight_sum: float, degenerate: bool) -> None:
    for name in TRACE_VARS:
        arr = getattr(ens, name)
        getattr(trace, name)[t] = (wn * arr).sum()
    trace.weight_sum[t] = weight_sum
    trace.degenerate[t] = degenerate


def run_filter(obs: list[WindowObservation], cfg: FilterConfig,
               fs: float | None = None) -> tuple[FilterTrace, RawAnnotations]:
    """Run the propagate-weight-resample loop over an observation sequence.

    Fully deterministic given ``cfg.seed``. ``fs`` is only used to stamp the
    trace with record geometry (defaults to one sample per window so beat
    sample indices equal window indices). Returns the trace and the extracted
    beats.
    """
    if len(obs) == 0:
        raise ValueError("observation sequence is empty")
    mcfg = cfg.model
    n = cfg.n_particles
    if fs is None:
        fs = 1.0 / mcfg.window_s
    window_samples = max(int(round(mcfg.window_s * fs)), 1)

    block_rngs, resample_rng = spawn_rngs(cfg.seed)
    bounds = block_bounds(n)
    ens = init_ensemble(n, mcfg, block_rngs)

    n_windows = len(obs)
    trace = FilterTrace(
        fs=fs, window_samples=window_samples,
        **{name: np.empty(n_windows) for name in TRACE_VARS},
        weight_sum=np.empty(n_windows),
        degenerate=np.zeros(n_windows, dtype=bool),
    )
    weights = np.empty(n)
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 0 else None
    try:
        for t in range(n_windows):
            mean_latency = float(ens.latency.mean())
            lat_shift = int(round(mean_latency))
            z, u_peak, u_ecg, u_abp = _draw_propagation(block_rngs, bounds)
            if pool is None:
                _propagate_slice(ens, 0, n, t, lat_shift, mcfg, z, u_peak, u_ecg, u_abp)
                _weight_slice(ens, 0, n, obs[t], t, mcfg, weights)
            else:
                list(pool.map(lambda b: _propagate_slice(
                    ens, b[0], b[1], t, lat_shift, mcfg, z, u_peak, u_ecg, u_abp), bounds))
                list(pool.map(lambda b: _weight_slice(
                    ens, b[0], b[1], obs[t], t, mcfg, weights), bounds))
            total = float(weights.sum())
            degenerate = not (np.isfinite(total) and total > 0.0)
            wn = np.full(n, 1.0 / n) if degenerate else weights / total
            _record_trace(trace, t, ens, wn, 0.0 if degenerate else total, degenerate)
            ens.take(systematic_resample(wn, resample_rng))
    finally:
        if pool is not None:
            pool.shutdown()
    return trace, extract_beats(trace, cfg)


def extract_beats(trace: FilterTrace, cfg: FilterConfig) -> RawAnnotations:
    """Turn traced pressure-peak fractions into beat annotations.

    Every window whose mean pressure-peak fraction reaches the threshold is
    shifted back by the rounded traced latency; emissions closer than the
    refractory distance are merged keeping the higher fraction; surviving
    windows are stamped at their center sample.
    """
    frac = trace.abp_peak
    lat = np.round(trace.latency).astype(np.int64)
    hits = np.nonzero(frac >= cfg.peak_fraction_threshold)[0]
    emissions = sorted(
        ((int(w - lat[w]), float(frac[w])) for w in hits if w - lat[w] >= 0),
    )
    merged: list[tuple[int, float]] = []
    for win, f in emissions:
        if merged and win - merged[-1][0] < cfg.refractory_windows:
            if f > merged[-1][1]:
                merged[-1] = (win, f)
        else:
            merged.append((win, f))
    ws = trace.window_samples
    samples = np.asarray([w * ws + ws // 2 for w, _ in merged], dtype=np.int64)
    return RawAnnotations(samples, trace.fs)
