"""Single-photon detection statistics for weak coherent pulses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import poisson_from_uniform  # noqa: F401  (re-exported)
from .errors import ParameterError

#: Source used for the quantum channel.
DEFAULT_REP_RATE = 600e6
DEFAULT_PULSE_FWHM_PS = 150.0
DEFAULT_MEAN_PHOTONS = {"signal": 0.0052, "decoy": 0.0026}


@dataclass(frozen=True)
class SourceSpec:
    rep_rate: float = DEFAULT_REP_RATE
    pulse_fwhm_ps: float = DEFAULT_PULSE_FWHM_PS
    mean_photon_numbers: dict = field(default_factory=lambda: dict(DEFAULT_MEAN_PHOTONS))

    def __post_init__(self):
        if self.rep_rate <= 0:
            raise ParameterError("repetition rate must be positive")
        mpn = dict(self.mean_photon_numbers)
        if any(v < 0 for v in mpn.values()):
            raise ParameterError("mean photon numbers must be >= 0")
        if mpn.get("vacuum", 0.0) != 0.0:
            raise ParameterError("vacuum intensity must be 0")
        object.__setattr__(self, "mean_photon_numbers", mpn)

    def mu(self, label: str) -> float:
        try:
            return self.mean_photon_numbers[label]
        except KeyError:
            raise ParameterError(f"source has no intensity {label!r}") from None


@dataclass(frozen=True)
class DetectorSpec:
    """Free-running avalanche photodiode.

    ``dead_time_us`` is in microseconds, ``dark_rate`` in Hz.
    """

    efficiency: float = 0.2
    dead_time_us: float = 20.0
    dark_rate: float = 500.0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ParameterError(f"efficiency {self.efficiency} outside [0, 1]")
        if self.dead_time_us < 0 or self.dark_rate < 0:
            raise ParameterError("dead time and dark rate must be >= 0")

    @property
    def dead_time(self) -> float:
        """Dead time in seconds."""
        return self.dead_time_us * 1e-6


def quantum_detector() -> DetectorSpec:
    """D1-D4: 20 % efficiency, 20 us dead time, ~500 Hz darks."""
    return DetectorSpec(efficiency=0.2, dead_time_us=20.0, dark_rate=500.0)


def control_detector() -> DetectorSpec:
    """D5, monitored by the phase-locked loop.

    Its dark rate is not reported; the quantum detectors' value is reused.
    """
    return DetectorSpec(efficiency=0.1, dead_time_us=5.0, dark_rate=500.0)


def dark_probability(det: DetectorSpec, rep_rate: float) -> float:
    """Probability of a dark click in one pulse slot."""
    return det.dark_rate / rep_rate


def signal_click_probability(mu: float, path_transmittance: float, outcome_probability: float,
                             efficiency: float) -> float:
    """Probability that at least one photon of a Poissonian pulse is registered."""
    return -np.expm1(-mu * path_transmittance * outcome_probability * efficiency)


def click_probability(mu: float, path_transmittance: float, outcome_probability: float,
                      det: DetectorSpec, rep_rate: float = DEFAULT_REP_RATE) -> float:
    """Per-pulse click probability with darks, ``1 - (1 - p_signal)(1 - p_dark)``."""
    ps = signal_click_probability(mu, path_transmittance, outcome_probability, det.efficiency)
    pd = dark_probability(det, rep_rate)
    return 1.0 - (1.0 - ps) * (1.0 - pd)


def apply_dead_time(true_rate, dead_time: float):
    """Observed rate of a non-paralyzable detector, ``R / (1 + R tau)``.

    ``dead_time`` is in seconds. Works elementwise on arrays.
    """
    r = np.asarray(true_rate, dtype=float)
    if np.any(r < 0):
        raise ParameterError("negative count rate")
    out = r / (1.0 + r * dead_time)
    return float(out) if out.ndim == 0 else out


def invert_dead_time(observed_rate, dead_time: float):
    """True rate recovered from an observed non-paralyzable rate."""
    r = np.asarray(observed_rate, dtype=float)
    denom = 1.0 - r * dead_time
    if np.any(denom <= 0):
        raise ParameterError("observed rate at or above the dead-time ceiling")
    out = r / denom
    return float(out) if out.ndim == 0 else out


def sample_counts(rate: float, window: float, rng: np.random.Generator):
    """Poisson count in a window of ``window`` seconds at mean ``rate`` (Hz)."""
    if window <= 0:
        raise ParameterError("integration window must be positive")
    if np.any(np.asarray(rate) < 0):
        raise ParameterError("negative count rate")
    return rng.poisson(np.asarray(rate) * window)


# --- pulse-level Monte Carlo -------------------------------------------------

def simulate_pulses_photon_level(mu: float, path_transmittance: float, outcome_probability: float,
                                 det: DetectorSpec, n_pulses: int, rng: np.random.Generator,
                                 rep_rate: float = DEFAULT_REP_RATE) -> np.ndarray:
    """Boolean click record built photon by photon, without dead time.

    Each pulse gets a Poisson photon number; each photon survives the channel,
    the outcome port and the detector independently; darks are Bernoulli per
    slot. This is the brute-force counterpart of :func:`click_probability`.
    """
    photons = rng.poisson(mu, n_pulses)
    survive = path_transmittance * outcome_probability * det.efficiency
    detected = rng.binomial(photons, survive) > 0
    dark = rng.random(n_pulses) < dark_probability(det, rep_rate)
    return detected | dark


def pulse_level_clicks(p_click: float, n_pulses: int, dead_pulses: int,
                       rng: np.random.Generator) -> int:
    """Number of registered clicks in ``n_pulses`` slots with per-click blanking.

    Clicks arrive as a Bernoulli process with probability ``p_click`` per slot;
    after each registered click the next ``dead_pulses`` slots are blind. Gaps
    between candidate clicks are drawn geometrically, which is exact for a
    memoryless Bernoulli stream.
    """
    if p_click <= 0 or n_pulses <= 0:
        return 0
    count = 0
    pos = -1
    while True:
        pos += int(rng.geometric(p_click))
        if pos >= n_pulses:
            return count
        count += 1
        pos += dead_pulses


def pulse_level_counts(p_click: np.ndarray, pulses_per_step: int, dead_pulses: int,
                       rng: np.random.Generator) -> int:
    """Clicks over consecutive steps with a piecewise-constant click probability.

    The blanking interval carries over step boundaries.
    """
    count = 0
    blind_until = 0
    start = 0
    for p in np.asarray(p_click, dtype=float):
        end = start + pulses_per_step
        pos = max(start, blind_until) - 1
        if p > 0:
            while True:
                pos += int(rng.geometric(p))
                if pos >= end:
                    break
                count += 1
                pos += dead_pulses
                blind_until = pos + 1
        start = end
    return count
