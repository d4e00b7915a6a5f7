"""Heart-beat annotation for paired ECG / arterial-pressure records.

A particle filter tracks a small physiological state space (resting and
instantaneous heart rate, per-channel peak timing, channel artifacts, and the
ECG-to-pressure delay) against per-window detector observations, fusing the
two channels through quality-based gating.
"""

from .features import (
    ObservationSet,
    RawAnnotations,
    SqiSeries,
    abp_sqi,
    build_observations,
    detect_abp_pulses,
    detect_qrs,
    ecg_sqi,
    local_heart_rate,
    windowize,
)
from .filtering import (
    FilterConfig,
    FilterTrace,
    extract_beats,
    run_filter,
    systematic_resample,
)
from .model import (
    DynamicState,
    ModelConfig,
    ParticleState,
    StaticParams,
    WindowObservation,
    annotation_likelihood,
    beat_window,
    binomial_pmf_general,
    gate,
    hr_likelihood,
    init_particle,
    particle_weight,
    peak_probability,
    propagate_particle,
)
from .scoring import ScoreReport, aggregate, match_beats, score
from .synth import SynthSpec, generate

__version__ = "0.1.0"
