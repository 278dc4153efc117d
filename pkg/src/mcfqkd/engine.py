"""End-to-end experiments on the simulated link.

Time advances in controller ticks (1/loop_rate). Within a tick the drift
phase and the actuator are frozen. Detection is then either resolved
analytically (rate level: expected counts per tick, Poisson-sampled per bin)
or pulse by pulse with per-click dead-time blanking (pulse level, short
horizons only).

Fidelity and QBER are reported twice. ``raw`` values are plain detector
counts. ``corrected`` values first undo dead-time saturation per detector and
then subtract the calibrated dark rate, which is how detector data are
usually analysed.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (DriftProcess, FiberSpec, crosstalk_probability, equalize_losses, mcf_drift,
                      default_fiber_profile, pulse_overlap_factor, sample_path, smf_drift, db_to_linear)
from .detection import (DetectorSpec, SourceSpec, apply_dead_time, click_probability,
                        control_detector, invert_dead_time, pulse_level_counts, quantum_detector)
from .errors import ParameterError, ProgressStallError
from .keyrate import BASES, INTENSITIES, DecoyProtocolParams, ObservedStatistics
from .pll import ClosedLoop, FringePlant, PllConfig, default_control_peak_rate, run_lock
from .states import (MeasurementBasis, PathState, detection_probabilities, standard_bases,
                     state_label)

MODES = ("rate_level", "pulse_level")
EXPERIMENTS = ("stability_comparison", "state_distribution", "long_qber", "qkd_emulation")


@dataclass(frozen=True)
class VisibilityModel:
    """Interference visibility of the quantum fringe over time.

    ``linear`` drifts deterministically by ``slope_per_hour``. ``ou`` adds an
    Ornstein-Uhlenbeck wander of standard deviation ``ou_sigma`` and
    correlation time ``ou_time`` (s) on top of the linear trend.
    """

    initial: float = 0.95
    slope_per_hour: float = -0.02 / 7
    kind: str = "linear"
    ou_sigma: float = 0.0
    ou_time: float = 3600.0

    def __post_init__(self):
        if not 0 <= self.initial <= 1:
            raise ParameterError("initial visibility must lie in [0, 1]")
        if self.kind not in ("linear", "ou"):
            raise ParameterError(f"unknown visibility model {self.kind!r}")

    def sample(self, times: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        v = self.initial + self.slope_per_hour * t / 3600.0
        if self.kind == "ou" and self.ou_sigma > 0 and t.size:
            rng = rng or np.random.default_rng(0)
            dt = np.diff(t, prepend=t[0])
            decay = np.exp(-dt / self.ou_time)
            x = np.empty_like(t)
            x[0] = rng.normal(0, self.ou_sigma)
            for i in range(1, t.size):
                x[i] = decay[i] * x[i - 1] + self.ou_sigma * math.sqrt(1 - decay[i] ** 2) * rng.normal()
            v = v + x
        return np.clip(v, 0.0, 1.0)


@dataclass(frozen=True)
class ControlSpec:
    """Counter-propagating reference beam seen by the control detector."""

    power_dbm: float = -81.0
    path_loss_db: float = 7.0
    visibility: float = 0.95
    reference: str = "first_lock"


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: str = "this_work"
    fiber: FiberSpec = field(default_factory=default_fiber_profile)
    mcf_drift: DriftProcess = field(default_factory=lambda: mcf_drift(1))
    smf_drift: DriftProcess = field(default_factory=lambda: smf_drift(2))
    source: SourceSpec = field(default_factory=SourceSpec)
    quantum_detector: DetectorSpec = field(default_factory=quantum_detector)
    control_detector: DetectorSpec = field(default_factory=control_detector)
    pll: PllConfig = field(default_factory=PllConfig)
    control: ControlSpec = field(default_factory=ControlSpec)
    visibility: VisibilityModel = field(default_factory=VisibilityModel)
    duration: float = 10.0
    bin: float = 1.0
    mode: str = "rate_level"
    rng_seed: int = 0
    pulse_level_cap: float = 1.0
    channel_loss_db: float = 7.0
    intensity: str = "decoy"
    faults: tuple = ()
    leakage_rate: float = 0.0
    cw_rate: float = 2.0e4

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown detection mode {self.mode!r}")
        if self.duration <= 0 or self.bin <= 0:
            raise ParameterError("duration and bin must be positive")
        if self.bin > self.duration:
            raise ParameterError(f"bin {self.bin} s longer than duration {self.duration} s")
        if self.mode == "pulse_level" and self.duration > self.pulse_level_cap:
            raise ParameterError(
                f"pulse-level runs are capped at {self.pulse_level_cap} s, asked for {self.duration} s")
        if self.leakage_rate < 0:
            raise ParameterError("leakage rate must be >= 0")


@dataclass
class TimeSeries:
    """Binned detector record.

    ``qber`` is NaN where no counts were registered; ``qber_defined`` flags
    the valid bins.
    """

    timestamps: np.ndarray
    counts: np.ndarray
    detectors: tuple
    qber: np.ndarray | None = None
    qber_corrected: np.ndarray | None = None
    locked_fraction: np.ndarray | None = None
    lock_losses: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def qber_defined(self) -> np.ndarray:
        return np.isfinite(self.qber) if self.qber is not None else np.zeros(len(self.timestamps), bool)

    def columns(self) -> dict:
        cols = {"time_s": self.timestamps}
        for j, name in enumerate(self.detectors):
            cols[f"counts_{name}"] = self.counts[:, j]
        for name in ("qber", "qber_corrected", "locked_fraction", "lock_losses"):
            val = getattr(self, name)
            if val is not None:
                cols[name] = val
        if self.qber is not None:
            cols["qber_defined"] = self.qber_defined.astype(int)
        return cols


def stream_seed(base: int, *keys) -> int:
    """Independent, reproducible seed for one named random stream."""
    words = [int(base) & 0xFFFFFFFF]
    for k in keys:
        words.append(int.from_bytes(hashlib.sha256(str(k).encode()).digest()[:4], "little"))
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0] >> 1)


def seeded_drift(cfg: "ExperimentConfig", drift: DriftProcess, key) -> DriftProcess:
    """Drift process whose noise stream depends on the run seed, the drift seed and ``key``."""
    return replace(drift, rng_seed=stream_seed(cfg.rng_seed, "drift", key, drift.rng_seed))


# --- shared link model ------------------------------------------------------------

def quantum_path_transmittance(cfg: ExperimentConfig) -> float:
    """Transmission of every equalized path (all paths sit at the common loss)."""
    added = equalize_losses(cfg.fiber, cfg.fiber.selected_cores, cfg.channel_loss_db)
    total = {c: cfg.fiber.loss_db(c) + a for c, a in added.items()}
    return db_to_linear(max(total.values()))


def crosstalk_background(cfg: ExperimentConfig, sent: PathState) -> float:
    """Per-outcome probability of light leaking from the sent cores into the other cores."""
    sup = sent.support()
    others = [c for c in sent.core_labels if c not in sup]
    if not others or not all(isinstance(c, int) for c in sent.core_labels):
        return 0.0
    leak = sum(abs(sent.amplitude(s)) ** 2 * crosstalk_probability(cfg.fiber, s, o)
               for s in sup for o in others)
    return leak / len(others)


@dataclass(frozen=True)
class OutcomeModel:
    """Outcome probabilities of one sent state as a function of residual phase.

    The Born-rule distribution is affine in ``cos(e)`` and ``sin(e)`` for a
    phase error ``e`` on the second core of the state, and affine in the
    visibility, so four evaluations of the state algebra fix it exactly.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    incoherent: np.ndarray
    background: float

    @classmethod
    def build(cls, sent: PathState, basis: MeasurementBasis, background: float = 0.0):
        core = sent.support()[-1]
        p0 = detection_probabilities(sent, basis, 1.0)
        ppi = detection_probabilities(sent.with_phase(core, math.pi), basis, 1.0)
        phalf = detection_probabilities(sent.with_phase(core, math.pi / 2), basis, 1.0)
        inc = detection_probabilities(sent, basis, 0.0)
        a = (p0 + ppi) / 2
        return cls(a, (p0 - ppi) / 2, phalf - a, inc, background)

    def probabilities(self, phase_error, visibility) -> np.ndarray:
        """Array ``[..., d]`` of outcome probabilities."""
        e = np.asarray(phase_error, dtype=float)[..., None]
        v = np.asarray(visibility, dtype=float)
        v = v[..., None] if v.ndim else v
        coh = self.a + self.b * np.cos(e) + self.c * np.sin(e)
        p = v * coh + (1 - v) * self.incoherent + self.background
        return p / (1 + self.a.size * self.background)


def control_plant(cfg: ExperimentConfig, drift: DriftProcess | None = None,
                  faults: tuple | None = None) -> FringePlant:
    det = cfg.control_detector
    return FringePlant(
        drift=drift or cfg.mcf_drift,
        peak_rate=default_control_peak_rate(det, cfg.control.power_dbm, cfg.control.path_loss_db),
        visibility=cfg.control.visibility,
        detector=det,
        faults=tuple(cfg.faults if faults is None else faults),
        reference=cfg.control.reference,
    )


def detector_rates(cfg: ExperimentConfig, mu: float, probs: np.ndarray) -> np.ndarray:
    """True click rates (Hz) per outcome detector, before dead time."""
    det = cfg.quantum_detector
    T = quantum_path_transmittance(cfg)
    rep = cfg.source.rep_rate
    return click_probability(mu, T, probs, det, rep) * rep + cfg.leakage_rate


def correct_counts(counts: np.ndarray, window: float, det: DetectorSpec) -> np.ndarray:
    """Dead-time corrected, dark-subtracted rates (Hz) from counts in ``window`` seconds."""
    obs = np.asarray(counts, dtype=float) / window
    ceiling = 1.0 / det.dead_time if det.dead_time > 0 else np.inf
    obs = np.minimum(obs, 0.999999 * ceiling)
    true = invert_dead_time(obs, det.dead_time) if det.dead_time > 0 else obs
    return np.clip(true - det.dark_rate, 0.0, None)


def _qber(counts: np.ndarray, correct: int) -> np.ndarray:
    total = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = (total - counts[..., correct]) / total
    return np.where(total > 0, q, np.nan)


# --- drift comparison ---------------------------------------------------------

def run_stability_comparison(cfg: ExperimentConfig, substeps: int = 50) -> tuple[TimeSeries, TimeSeries]:
    """Open-loop two-output interferometer, MCF core pair versus two independent SMFs.

    A CW-equivalent total rate ``cfg.cw_rate`` is split between the two
    outputs by the drifting phase. The detectors are treated as linear
    (no dead time) so that the output sum is constant up to shot noise.
    """
    out = []
    n_bins = int(round(cfg.duration / cfg.bin))
    dt = cfg.bin / substeps
    det = cfg.quantum_detector
    rng = np.random.default_rng(stream_seed(cfg.rng_seed, "stability"))
    for name, proc in (("mcf", cfg.mcf_drift), ("smf", cfg.smf_drift)):
        phase = sample_path(seeded_drift(cfg, proc, name), dt, n_bins * substeps)
        v = cfg.control.visibility
        plus = 0.5 * cfg.cw_rate * (1 + v * np.cos(phase)) + det.dark_rate
        minus = 0.5 * cfg.cw_rate * (1 - v * np.cos(phase)) + det.dark_rate
        mean = np.stack([plus, minus], axis=1).reshape(n_bins, substeps, 2).sum(axis=1) * dt
        counts = rng.poisson(mean)
        ts = TimeSeries((np.arange(n_bins) + 0.5) * cfg.bin, counts, ("out_plus", "out_minus"),
                        metadata={"fiber": name, "diffusion": proc.diffusion, "seed": cfg.rng_seed})
        out.append(ts)
    return out[0], out[1]


def contrast_decorrelation_time(ts: TimeSeries) -> float:
    """1/e decay time of the autocorrelation of the output contrast.

    Returns the bin width when the contrast already decorrelates within one
    bin (the timescale is then unresolved).
    """
    c = ts.counts.astype(float)
    s = c.sum(axis=1)
    x = np.where(s > 0, (c[:, 0] - c[:, 1]) / np.maximum(s, 1), 0.0)
    x = x - x.mean()
    n = x.size
    var = float(x @ x) / n
    if var == 0:
        return float("inf")
    width = ts.timestamps[1] - ts.timestamps[0]
    prev = 1.0
    for lag in range(1, n // 2):
        r = float(x[:-lag] @ x[lag:]) / (n - lag) / var
        if r <= math.exp(-1):
            frac = (prev - math.exp(-1)) / (prev - r) if prev != r else 0.0
            return float((lag - 1 + frac) * width)
        prev = r
    return float("inf")


# --- state distribution -------------------------------------------------------

@dataclass
class StateDistribution:
    """Same-basis outcome statistics for every sent state.

    Rows follow ``labels``; columns are the four outcomes of the sent
    state's own basis, so the diagonal entry of each 4x4 block is the
    fidelity.
    """

    labels: list
    basis_names: list
    counts: np.ndarray
    raw: np.ndarray
    corrected: np.ndarray
    window: float
    metadata: dict = field(default_factory=dict)

    def fidelities(self, corrected: bool = True) -> np.ndarray:
        mat = self.corrected if corrected else self.raw
        d = mat.shape[1]
        return np.array([mat[i, i % d] for i in range(mat.shape[0])])

    def basis_mean_fidelity(self, corrected: bool = True) -> dict:
        f = self.fidelities(corrected)
        d = self.raw.shape[1]
        return {name: float(f[i * d:(i + 1) * d].mean()) for i, name in enumerate(self.basis_names)}


def _closed_loop_errors(cfg: ExperimentConfig, n_ticks: int, seed_key) -> np.ndarray:
    drift = seeded_drift(cfg, cfg.mcf_drift, seed_key)
    loop = ClosedLoop(cfg.pll, control_plant(cfg, drift), stream_seed(cfg.rng_seed, "loop", seed_key))
    return np.concatenate([c.phase_error for c in loop.run(n_ticks)])


def run_state_distribution(cfg: ExperimentConfig, sent_states=None) -> StateDistribution:
    """Probability matrix of every sent state measured in its own basis, PLL active.

    ``sent_states`` is a list of ``(basis_index, state_index)``; default is
    all of them.
    """
    bases = standard_bases(cfg.scheme)
    d = bases[0].dim
    if sent_states is None:
        sent_states = [(b, s) for b in range(len(bases)) for s in range(d)]
    mu = cfg.source.mu(cfg.intensity)
    dt = cfg.pll.dt
    n_ticks = int(round(cfg.duration * cfg.pll.loop_rate))
    det = cfg.quantum_detector
    vis = cfg.visibility.initial * pulse_overlap_factor(cfg.fiber.residual_delay_ps,
                                                        cfg.source.pulse_fwhm_ps)
    counts = np.zeros((len(sent_states), d))
    labels = []
    rng = np.random.default_rng(stream_seed(cfg.rng_seed, "distribution"))
    for row, (bi, si) in enumerate(sent_states):
        basis = bases[bi]
        sent = basis[si]
        labels.append(state_label(bi, si))
        model = OutcomeModel.build(sent, basis, crosstalk_background(cfg, sent))
        err = _closed_loop_errors(cfg, n_ticks, ("distribution", bi, si))
        rates = detector_rates(cfg, mu, model.probabilities(err, vis))
        if cfg.mode == "rate_level":
            mean = apply_dead_time(rates, det.dead_time).sum(axis=0) * dt
            counts[row] = rng.poisson(mean)
        else:
            pulses = int(round(cfg.source.rep_rate * dt))
            dead = int(round(det.dead_time * cfg.source.rep_rate))
            p_click = rates / cfg.source.rep_rate
            counts[row] = [pulse_level_counts(p_click[:, j], pulses, dead, rng) for j in range(d)]
    window = n_ticks * dt
    with np.errstate(invalid="ignore", divide="ignore"):
        raw = counts / counts.sum(axis=1, keepdims=True)
        corr = correct_counts(counts, window, det)
        corrected = corr / corr.sum(axis=1, keepdims=True)
    return StateDistribution(labels, [b.name for b in bases], counts, np.nan_to_num(raw),
                             np.nan_to_num(corrected), window,
                             {"seed": cfg.rng_seed, "mode": cfg.mode, "intensity": cfg.intensity})


# --- long QBER trace -----------------------------------------------------------

def run_long_qber(cfg: ExperimentConfig, basis_index: int = 1, state_index: int = 1,
                  intensity: str = "signal") -> TimeSeries:
    """Closed-loop QBER record of one state over ``cfg.duration`` in ``cfg.bin`` bins.

    Expected counts are accumulated tick by tick and Poisson-sampled once per
    bin, which has the same distribution as sampling every tick.
    """
    if cfg.mode != "rate_level":
        raise ParameterError("long runs are rate-level only")
    bases = standard_bases(cfg.scheme)
    basis = bases[basis_index]
    sent = basis[state_index]
    d = basis.dim
    mu = cfg.source.mu(intensity)
    det = cfg.quantum_detector
    loop_rate = cfg.pll.loop_rate
    dt = cfg.pll.dt
    n_ticks = int(round(cfg.duration * loop_rate))
    n_bins = int(math.ceil(n_ticks * dt / cfg.bin - 1e-9))
    model = OutcomeModel.build(sent, basis, crosstalk_background(cfg, sent))
    overlap = pulse_overlap_factor(cfg.fiber.residual_delay_ps, cfg.source.pulse_fwhm_ps)
    vrng = np.random.default_rng(stream_seed(cfg.rng_seed, "visibility"))
    bin_vis = cfg.visibility.sample((np.arange(n_bins) + 0.5) * cfg.bin, vrng) * overlap
    T = quantum_path_transmittance(cfg)
    rep = cfg.source.rep_rate

    drift = seeded_drift(cfg, cfg.mcf_drift, "long")
    loop = ClosedLoop(cfg.pll, control_plant(cfg, drift), stream_seed(cfg.rng_seed, "loop", "long"))
    mean = np.zeros((n_bins, d))
    locked = np.zeros(n_bins)
    losses = np.zeros(n_bins)
    ticks = np.zeros(n_bins)
    for chunk in loop.run(n_ticks):
        idx = np.arange(chunk.start_tick, chunk.start_tick + chunk.phase_error.size)
        b = np.minimum((idx * dt / cfg.bin).astype(np.int64), n_bins - 1)
        if cfg.visibility.kind == "linear":
            v = cfg.visibility.sample(idx * dt) * overlap
        else:
            v = bin_vis[b]
        probs = model.probabilities(chunk.phase_error, v)
        rates = click_probability(mu, T, probs, det, rep) * rep + cfg.leakage_rate
        obs = rates / (1 + rates * det.dead_time) * dt
        for j in range(d):
            mean[:, j] += np.bincount(b, weights=obs[:, j], minlength=n_bins)
        locked += np.bincount(b, weights=(chunk.mode == 1), minlength=n_bins)
        losses += np.bincount(b, weights=(chunk.mode == 2), minlength=n_bins)
        ticks += np.bincount(b, minlength=n_bins)
    rng = np.random.default_rng(stream_seed(cfg.rng_seed, "long_counts"))
    counts = rng.poisson(mean)
    widths = ticks * dt
    corr = correct_counts(counts, np.maximum(widths, dt)[:, None], det)
    return TimeSeries(
        (np.arange(n_bins) + 0.5) * cfg.bin,
        counts,
        tuple(f"D{j + 1}" for j in range(d)),
        qber=_qber(counts, state_index),
        qber_corrected=_qber(corr, state_index),
        locked_fraction=locked / np.maximum(ticks, 1),
        lock_losses=losses.astype(int),
        metadata={"seed": cfg.rng_seed, "state": state_label(basis_index, state_index),
                  "intensity": intensity, "total_lock_losses": loop.lock_losses},
    )


# --- QKD statistics ----------------------------------------------------------------

def run_qkd_emulation(cfg: ExperimentConfig, protocol: DecoyProtocolParams,
                      step_seconds: float = 10.0, max_steps: int = 10 ** 6,
                      pll_window: float | None = None) -> ObservedStatistics:
    """Accumulate sifted detections per basis and intensity until ``n_Z`` key-basis detections.

    A closed-loop run of ``pll_window`` seconds (default ``cfg.duration``)
    sets the mean residual phase error, which lowers the effective
    visibility. Alice and Bob pick Z with probability ``p_Z`` each. All
    clicks, sifted or not, share one dead-time live fraction. Counts are
    Poisson-sampled in steps of ``step_seconds`` of pulses.
    """
    rep = protocol.rep_rate
    det = cfg.quantum_detector
    window = cfg.duration if pll_window is None else pll_window
    err = run_lock(cfg.pll, control_plant(
        cfg, seeded_drift(cfg, cfg.mcf_drift, "qkd")),
        window, seed=stream_seed(cfg.rng_seed, "loop", "qkd")).phase_error
    overlap = pulse_overlap_factor(cfg.fiber.residual_delay_ps, cfg.source.pulse_fwhm_ps)
    v_eff = cfg.visibility.initial * overlap * float(np.mean(np.cos(err)))
    bases = standard_bases(cfg.scheme)[:2]
    link = replace(cfg, source=replace(cfg.source, rep_rate=rep))
    mus = {"mu1": protocol.mu1, "mu2": protocol.mu2}
    probs = {"mu1": protocol.p_mu1, "mu2": protocol.p_mu2}
    pz = protocol.p_Z
    sift = {"Z": pz * pz, "X": (1 - pz) * (1 - pz)}
    correct = np.zeros((2, 2))
    wrong = np.zeros((2, 2))
    total_click = 0.0
    for i, _ in enumerate(BASES):
        sent = bases[i][0]
        own = detection_probabilities(sent, bases[i], v_eff, crosstalk_background(cfg, sent))
        other = detection_probabilities(sent, bases[1 - i], v_eff, crosstalk_background(cfg, sent))
        a_prob = pz if i == 0 else 1 - pz
        for j, k in enumerate(INTENSITIES):
            r_own = detector_rates(link, mus[k], own) / rep
            r_other = detector_rates(link, mus[k], other) / rep
            correct[i, j] = sift[BASES[i]] * probs[k] * r_own[0]
            wrong[i, j] = sift[BASES[i]] * probs[k] * r_own[1:].sum()
            b_same = pz if i == 0 else 1 - pz
            total_click += probs[k] * a_prob * (b_same * r_own.sum() + (1 - b_same) * r_other.sum())
    live = 1 / (1 + rep * total_click * det.dead_time)
    correct *= live
    wrong *= live
    z_per_pulse = correct[0].sum() + wrong[0].sum()
    if not z_per_pulse > 0:
        raise ProgressStallError(
            f"key-basis detection probability is {z_per_pulse:g} per pulse; "
            f"transmittance {quantum_path_transmittance(cfg):g}, efficiency {det.efficiency}")
    step_pulses = step_seconds * rep
    rng = np.random.default_rng(stream_seed(cfg.rng_seed, "qkd_counts"))
    n = np.zeros((2, 2))
    m = np.zeros((2, 2))
    pulses = 0.0
    for _ in range(max_steps):
        remaining = protocol.n_Z - n[0].sum()
        if remaining <= 0:
            break
        p = min(step_pulses, remaining / z_per_pulse)
        if p * z_per_pulse < 1:
            p = 1 / z_per_pulse
        c = rng.poisson(correct * p)
        w = rng.poisson(wrong * p)
        n += c + w
        m += w
        pulses += p
    else:
        raise ProgressStallError(
            f"block not filled after {max_steps} steps: {n[0].sum():g} of {protocol.n_Z:g} detections")
    return ObservedStatistics(n, m, pulses)


# --- detection-level cross-check ---------------------------------------------

def compare_detection_levels(cfg: ExperimentConfig, window: float = 0.1,
                             basis_index: int = 0, state_index: int = 0) -> dict:
    """Per-detector totals of one state from both detection levels.

    Both levels see the same closed-loop phase-error trace. Returns the
    rate-level expectation, one rate-level sample and one pulse-level sample.
    """
    bases = standard_bases(cfg.scheme)
    basis = bases[basis_index]
    sent = basis[state_index]
    det = cfg.quantum_detector
    rep = cfg.source.rep_rate
    dt = cfg.pll.dt
    n_ticks = int(round(window * cfg.pll.loop_rate))
    pulses = int(round(rep * dt))
    dead = int(round(det.dead_time * rep))
    err = _closed_loop_errors(cfg, n_ticks, "levels")
    model = OutcomeModel.build(sent, basis, crosstalk_background(cfg, sent))
    vis = cfg.visibility.initial * pulse_overlap_factor(cfg.fiber.residual_delay_ps,
                                                        cfg.source.pulse_fwhm_ps)
    rates = detector_rates(cfg, cfg.source.mu(cfg.intensity), model.probabilities(err, vis))
    p_click = rates / rep
    # expected registered clicks of a blanked Bernoulli stream, per tick
    expected = (p_click / (1 + p_click * dead) * pulses).sum(axis=0)
    rng_r = np.random.default_rng(stream_seed(cfg.rng_seed, "levels", "rate"))
    rng_p = np.random.default_rng(stream_seed(cfg.rng_seed, "levels", "pulse"))
    rate_sample = rng_r.poisson(expected)
    pulse_sample = np.array([pulse_level_counts(p_click[:, j], pulses, dead, rng_p)
                             for j in range(basis.dim)])
    return {"expected": expected, "rate_level": rate_sample, "pulse_level": pulse_sample}
