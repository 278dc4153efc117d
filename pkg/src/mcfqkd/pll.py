"""Count-based phase-locked loop for one interfering core pair.

The controller alternates between two regimes. While *scanning* it ramps the
phase actuator through one full period, recording the control-detector counts
to find the fringe extrema. It then *locks*: a set point is derived from the
extrema and a digital PID holds the counts there. If the normalized error
stays out of bounds for too long the lock is declared *lost* and a new scan
starts.

Two engines run the closed loop. :func:`run_lock` with ``engine="reference"``
steps the pure-Python operations below; the default ``engine="kernel"`` uses
a compiled copy of the same state machine for multi-hour runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import _kernels as K
from .channel import DriftProcess, db_to_linear, mcf_drift
from .detection import DetectorSpec, apply_dead_time, control_detector
from .errors import ExtremaOrderError, ParameterError

MODES = {K.MODE_SCANNING: "scanning", K.MODE_LOCKED: "locked", K.MODE_LOST: "lost"}
PLANCK = 6.62607015e-34
LIGHT_SPEED = 299792458.0


@dataclass(frozen=True)
class PllConfig:
    """Controller settings.

    Gains act on the error normalized by the fringe span (M - m): ``kp`` in
    rad, ``ki`` in rad/s, ``kd`` in rad*s. ``actuator_range`` is the half-width
    of the phase-shifter excursion. ``actuation_delay`` adds one tick of
    latency between a command and its effect. With ``saturation_is_loss`` a
    tick on which the actuator is pinned at its range limit counts towards
    lock loss like an out-of-bounds error, since the loop has no authority
    left there. Fringe extrema are taken from the scan record after a
    circular moving average of half-width ``scan_smoothing`` samples, which
    keeps shot noise from biasing M upwards and m downwards.
    """

    loop_rate: float = 3500.0
    scan_steps: int = 64
    kp: float = 0.0
    ki: float = 800.0
    kd: float = 0.0
    target_phase: float = math.pi / 2
    lock_loss_threshold: float = 0.35
    lock_loss_patience: int = 20
    actuator_range: float = 6 * math.pi
    min_fringe_visibility: float = 0.2
    actuation_delay: bool = False
    calibration_offset: float = 0.0
    saturation_is_loss: bool = True
    scan_smoothing: int = 1

    def __post_init__(self):
        if self.loop_rate <= 0:
            raise ParameterError("loop rate must be positive")
        if self.scan_steps < 8:
            raise ParameterError("scan needs at least 8 steps")
        if self.lock_loss_threshold <= 0 or self.lock_loss_patience <= 0:
            raise ParameterError("lock-loss threshold and patience must be positive")
        if not 0 <= self.scan_smoothing < self.scan_steps // 2:
            raise ParameterError("scan smoothing must be >= 0 and below half the scan length")
        if self.actuator_range < math.pi:
            raise ParameterError("actuator range must cover the +-pi scan ramp")

    @property
    def dt(self) -> float:
        return 1.0 / self.loop_rate

    @property
    def pid_gains(self) -> tuple[float, float, float]:
        return (self.kp, self.ki, self.kd)


@dataclass(frozen=True)
class PllState:
    mode: str = "scanning"
    fringe_max: float = 0.0
    fringe_min: float = 0.0
    set_point: float = 0.0
    integrator: float = 0.0
    previous_error: float | None = None
    actuator_phase: float = -math.pi
    lock_base: float = 0.0
    feedback_sign: float = 1.0
    scan_index: int = 0
    scan_record: tuple = ()
    out_of_bounds: int = 0
    degenerate_scans: int = 0


def set_point(M: float, m: float, phi_tilde: float) -> float:
    """Counts corresponding to fringe phase ``phi_tilde`` given extrema M >= m."""
    if M < m:
        raise ExtremaOrderError(f"fringe maximum {M} below minimum {m}")
    return (M + m) / 2 + (M - m) / 2 * math.cos(phi_tilde)


def scan_actuator(k: int, n: int) -> float:
    return -math.pi + 2 * math.pi * k / n


def start_scan(state: PllState, cfg: PllConfig) -> PllState:
    return replace(state, mode="scanning", scan_index=0, scan_record=(),
                   actuator_phase=scan_actuator(0, cfg.scan_steps), out_of_bounds=0)


def branch_sign(phi_tilde: float) -> float:
    """+1 to lock on the falling side of a fringe maximum, -1 for the rising side."""
    return 1.0 if math.sin(phi_tilde) >= 0 else -1.0


def scan_step(state: PllState, cfg: PllConfig, measured_counts: float) -> PllState:
    """Record one ramp sample; on the last sample freeze M, m and lock.

    M and m are the extremes of the smoothed record (see :class:`PllConfig`).
    The lock starts at the first ramp position past the maximum (in the
    direction of the requested branch) whose counts fall to the set point, and
    the feedback sign follows from that branch.
    """
    if state.mode != "scanning":
        raise ParameterError(f"scan_step called in mode {state.mode!r}")
    n = cfg.scan_steps
    rec = state.scan_record + (float(measured_counts),)
    k = state.scan_index + 1
    if k < n:
        return replace(state, scan_record=rec, scan_index=k, actuator_phase=scan_actuator(k, n))
    arr = K.smooth_scan(np.array(rec), cfg.scan_smoothing)
    M, m = float(arr.max()), float(arr.min())
    imax = int(arr.argmax())
    if M - m <= 0 or (M - m) <= cfg.min_fringe_visibility * (M + m):
        return replace(state, scan_record=(), scan_index=0, actuator_phase=scan_actuator(0, n),
                       degenerate_scans=state.degenerate_scans + 1)
    sp = set_point(M, m, cfg.target_phase)
    sign = branch_sign(cfg.target_phase)
    jsel = imax
    for step in range(n):
        j = (imax + int(sign) * step) % n
        if arr[j] <= sp:
            jsel = j
            break
    base = scan_actuator(jsel, n)
    return replace(state, mode="locked", fringe_max=M, fringe_min=m, set_point=sp,
                   feedback_sign=sign, lock_base=base, actuator_phase=base, integrator=0.0,
                   previous_error=None, out_of_bounds=0, scan_index=k, scan_record=rec)


def normalized_error(state: PllState, measured_counts: float) -> float:
    return (measured_counts - state.set_point) / max(state.fringe_max - state.fringe_min, 1.0)


def pid_step(state: PllState, cfg: PllConfig, measured_counts: float,
             dt: float | None = None) -> tuple[PllState, float]:
    """One PID update; returns the new state and the actuator correction (rad).

    The correction is applied around the lock base and clamped to the
    actuator range; while clamped the integrator is frozen.
    """
    if state.mode != "locked":
        raise ParameterError(f"pid_step called in mode {state.mode!r}")
    dt = cfg.dt if dt is None else dt
    e = normalized_error(state, measured_counts)
    integ = state.integrator + e * dt
    deriv = 0.0 if state.previous_error is None else (e - state.previous_error) / dt
    corr = state.feedback_sign * (cfg.kp * e + cfg.ki * integ + cfg.kd * deriv)
    cmd = state.lock_base + corr
    clamped = abs(cmd) > cfg.actuator_range
    if clamped:
        cmd = math.copysign(cfg.actuator_range, cmd)
    bad = abs(e) > cfg.lock_loss_threshold or (clamped and cfg.saturation_is_loss)
    oob = state.out_of_bounds + 1 if bad else 0
    new = replace(state, integrator=state.integrator if clamped else integ, previous_error=e,
                  actuator_phase=cmd, out_of_bounds=oob)
    return new, cmd - state.lock_base


def detect_lock_loss(state: PllState, cfg: PllConfig) -> bool:
    """True once the error has been out of bounds for ``lock_loss_patience`` ticks."""
    return state.mode == "locked" and state.out_of_bounds >= cfg.lock_loss_patience


def switch_target(state: PllState, cfg: PllConfig, new_target: float) -> tuple[PllState, PllConfig]:
    """Move the lock to another fringe phase without rescanning.

    Used to toggle between the 0 and pi states of one core pair by shifting
    the target by pi.
    """
    cfg2 = replace(cfg, target_phase=new_target)
    if state.mode != "locked":
        return state, cfg2
    sp = set_point(state.fringe_max, state.fringe_min, new_target)
    return replace(state, set_point=sp, feedback_sign=branch_sign(new_target),
                   lock_base=state.actuator_phase, integrator=0.0, previous_error=None,
                   out_of_bounds=0), cfg2


# --- plant ---------------------------------------------------------------

def photon_flux(power_dbm: float, wavelength: float = 1550e-9) -> float:
    """Photons per second carried by an optical power given in dBm."""
    watts = 10 ** (power_dbm / 10) * 1e-3
    return watts * wavelength / (PLANCK * LIGHT_SPEED)


@dataclass(frozen=True)
class FringePlant:
    """Drifting interferometer as seen by the control detector.

    ``peak_rate`` is the true click rate at constructive interference.
    ``faults`` lists ``(time_s, phase_jump_rad)`` disturbances.
    ``reference`` selects the phase the error is measured against:
    ``"first_lock"`` uses the point the loop settles on after its first scan
    (the quantum phase is calibrated there), ``"ideal"`` uses the noiseless
    lock point of the true fringe.
    """

    drift: DriftProcess = field(default_factory=mcf_drift)
    peak_rate: float = 0.0
    visibility: float = 0.95
    detector: DetectorSpec = field(default_factory=control_detector)
    faults: tuple = ()
    reference: str = "first_lock"

    def __post_init__(self):
        if self.peak_rate <= 0:
            object.__setattr__(self, "peak_rate", default_control_peak_rate(self.detector))
        if self.reference not in ("first_lock", "ideal"):
            raise ParameterError(f"unknown reference mode {self.reference!r}")

    def expected_counts(self, phase, dt: float):
        r = self.peak_rate * 0.5 * (1 + self.visibility * np.cos(phase)) + self.detector.dark_rate
        return apply_dead_time(r, self.detector.dead_time) * dt

    def ideal_lock_phase(self, cfg: PllConfig) -> float:
        M = float(self.expected_counts(0.0, cfg.dt))
        m = float(self.expected_counts(math.pi, cfg.dt))
        sp = set_point(M, m, cfg.target_phase)
        return lock_phase_for_set_point(self, cfg, sp, branch_sign(cfg.target_phase))


def lock_phase_for_set_point(plant: FringePlant, cfg: PllConfig, sp: float, sign: float) -> float:
    return K.fringe_phase_for_counts(sp, sign, plant.peak_rate, plant.visibility,
                                     plant.detector.dark_rate, plant.detector.dead_time, cfg.dt)


def default_control_peak_rate(detector: DetectorSpec, power_dbm: float = -81.0,
                              path_loss_db: float = 7.0) -> float:
    """Control-detector click rate for the counter-propagating reference beam."""
    return photon_flux(power_dbm) * db_to_linear(path_loss_db) * detector.efficiency


# --- closed loop -------------------------------------------------------------

@dataclass
class LockTrace:
    time: np.ndarray
    phase_error: np.ndarray
    mode: np.ndarray
    counts: np.ndarray
    lock_losses: int = 0
    degenerate_scans: int = 0

    def locked_fraction(self) -> float:
        return float(np.mean(self.mode == K.MODE_LOCKED))

    def rms_error(self, locked_only: bool = True) -> float:
        e = self.phase_error[self.mode == K.MODE_LOCKED] if locked_only else self.phase_error
        return float(np.sqrt(np.mean(e ** 2))) if e.size else float("nan")

    def mode_names(self) -> list[str]:
        return [MODES[int(x)] for x in self.mode]


CHUNK_TICKS = 1 << 18


def _random_chunks(drift: DriftProcess, seed: int, n_ticks: int, chunk: int):
    """Drift normals and count uniforms, drawn in fixed-size chunks."""
    drng = np.random.default_rng(drift.rng_seed)
    crng = np.random.default_rng(seed)
    done = 0
    while done < n_ticks:
        n = min(chunk, n_ticks - done)
        yield drng.standard_normal(n), crng.random(n)
        done += n


def _fault_schedule(plant: FringePlant, dt: float) -> tuple[np.ndarray, np.ndarray]:
    faults = sorted(plant.faults)
    ticks = np.array([int(round(t / dt)) for t, _ in faults], dtype=np.int64)
    jumps = np.array([j for _, j in faults], dtype=float)
    return ticks, jumps


def _params(cfg: PllConfig, plant: FringePlant) -> np.ndarray:
    decay, std = plant.drift.step_coefficients(cfg.dt)
    p = np.zeros(K.N_PARAMS)
    p[K.P_DT] = cfg.dt
    p[K.P_DECAY] = decay
    p[K.P_STD] = std
    p[K.P_PEAK] = plant.peak_rate
    p[K.P_VIS] = plant.visibility
    p[K.P_DARK] = plant.detector.dark_rate
    p[K.P_DEAD] = plant.detector.dead_time
    p[K.P_KP], p[K.P_KI], p[K.P_KD] = cfg.kp, cfg.ki, cfg.kd
    p[K.P_PHI] = cfg.target_phase
    p[K.P_THR] = cfg.lock_loss_threshold
    p[K.P_PATIENCE] = cfg.lock_loss_patience
    p[K.P_RANGE] = cfg.actuator_range
    p[K.P_STEPS] = cfg.scan_steps
    p[K.P_MINVIS] = cfg.min_fringe_visibility
    p[K.P_DELAY] = 1.0 if cfg.actuation_delay else 0.0
    p[K.P_CAL] = cfg.calibration_offset
    p[K.P_REFMODE] = 1.0 if plant.reference == "first_lock" else 0.0
    p[K.P_SATLOSS] = 1.0 if cfg.saturation_is_loss else 0.0
    p[K.P_SMOOTH] = cfg.scan_smoothing
    return p


@dataclass
class LoopChunk:
    start_tick: int
    phase_error: np.ndarray
    mode: np.ndarray
    counts: np.ndarray


class ClosedLoop:
    """Resumable compiled closed loop, advanced chunk by chunk."""

    def __init__(self, cfg: PllConfig, plant: FringePlant, seed: int = 0):
        self.cfg, self.plant, self.seed = cfg, plant, seed
        self.prm = _params(cfg, plant)
        self.fs = np.zeros(K.N_FSTATE)
        self.ist = np.zeros(K.N_ISTATE, dtype=np.int64)
        self.rec = np.zeros(cfg.scan_steps)
        self.fs[K.F_DRIFT] = plant.drift.initial_phase
        self.fs[K.F_APPLIED] = scan_actuator(0, cfg.scan_steps)
        self.fs[K.F_PENDING] = self.fs[K.F_APPLIED]
        self.fs[K.F_REF] = plant.ideal_lock_phase(cfg)
        self.ist[K.I_MODE] = K.MODE_SCANNING
        self.fault_ticks, self.fault_jumps = _fault_schedule(plant, cfg.dt)

    def run(self, n_ticks: int, chunk: int = CHUNK_TICKS) -> Iterator[LoopChunk]:
        for z, u in _random_chunks(self.plant.drift, self.seed, n_ticks, chunk):
            n = z.size
            err = np.empty(n)
            mode = np.empty(n, dtype=np.int8)
            counts = np.empty(n, dtype=np.int32)
            start = int(self.ist[K.I_TICK])
            K.closed_loop_chunk(self.fs, self.ist, self.rec, z, u, self.fault_ticks,
                                self.fault_jumps, self.prm, err, mode, counts)
            yield LoopChunk(start, err, mode, counts)

    @property
    def lock_losses(self) -> int:
        return int(self.ist[K.I_LOSSES])

    @property
    def degenerate_scans(self) -> int:
        return int(self.ist[K.I_DEGEN])


def _run_reference(cfg: PllConfig, plant: FringePlant, n_ticks: int, seed: int) -> LockTrace:
    dt = cfg.dt
    decay, std = plant.drift.step_coefficients(dt)
    fault_ticks, fault_jumps = _fault_schedule(plant, dt)
    err = np.empty(n_ticks)
    modes = np.empty(n_ticks, dtype=np.int8)
    counts = np.empty(n_ticks, dtype=np.int32)
    state = PllState(actuator_phase=scan_actuator(0, cfg.scan_steps))
    drift = plant.drift.initial_phase
    jump = 0.0
    applied = pending = state.actuator_phase
    ref = plant.ideal_lock_phase(cfg)
    ref_set = False
    losses = 0
    fp = 0
    t = 0
    for z, u in _random_chunks(plant.drift, seed, n_ticks, CHUNK_TICKS):
        for zi, ui in zip(z.tolist(), u.tolist()):
            drift = decay * drift + std * zi
            while fp < fault_ticks.size and fault_ticks[fp] <= t:
                jump += fault_jumps[fp]
                fp += 1
            phase = drift + jump + applied
            mean = K.fringe_expected_counts(phase, plant.peak_rate, plant.visibility,
                                            plant.detector.dark_rate, plant.detector.dead_time, dt)
            c = K.poisson_from_uniform(mean, ui)
            counts[t] = c
            err[t] = K.wrap_phase(phase - ref - cfg.calibration_offset)
            rec_mode = K.MODE_SCANNING if state.mode == "scanning" else K.MODE_LOCKED
            if state.mode == "scanning":
                state = scan_step(state, cfg, c)
                if state.mode == "locked" and plant.reference == "first_lock" and not ref_set:
                    ref = lock_phase_for_set_point(plant, cfg, state.set_point, state.feedback_sign)
                    ref_set = True
            else:
                state, _ = pid_step(state, cfg, c, dt)
                if detect_lock_loss(state, cfg):
                    rec_mode = K.MODE_LOST
                    losses += 1
                    state = start_scan(state, cfg)
            modes[t] = rec_mode
            if cfg.actuation_delay:
                applied, pending = pending, state.actuator_phase
            else:
                applied = state.actuator_phase
            t += 1
    return LockTrace(np.arange(n_ticks) * dt, err, modes, counts, losses, state.degenerate_scans)


def run_lock(cfg: PllConfig, plant: FringePlant, duration: float, seed: int = 0,
             engine: str = "kernel") -> LockTrace:
    """Closed-loop trace at one sample per controller tick."""
    if duration <= 0:
        raise ParameterError("duration must be positive")
    n_ticks = int(round(duration * cfg.loop_rate))
    if engine == "reference":
        return _run_reference(cfg, plant, n_ticks, seed)
    if engine != "kernel":
        raise ParameterError(f"unknown engine {engine!r}")
    loop = ClosedLoop(cfg, plant, seed)
    parts = list(loop.run(n_ticks))
    return LockTrace(
        np.arange(n_ticks) * cfg.dt,
        np.concatenate([p.phase_error for p in parts]),
        np.concatenate([p.mode for p in parts]),
        np.concatenate([p.counts for p in parts]),
        loop.lock_losses,
        loop.degenerate_scans,
    )


# --- gain tuning ---------------------------------------------------------------

def tune_gains(plant: FringePlant, base: PllConfig | None = None,
               kp_grid=(0.0, 0.05, 0.1, 0.2, 0.4),
               ki_grid=(100.0, 200.0, 350.0, 500.0, 800.0, 1200.0),
               duration: float = 20.0, seeds=(1, 2, 3)) -> tuple[PllConfig, dict]:
    """Grid-search PI gains that minimize the locked RMS phase error.

    Each candidate runs the closed loop on the given plant for a few seeds.
    Returns the best configuration and the score table ``{(kp, ki): rms}``.
    """
    base = base or PllConfig()
    scores = {}
    for kp in kp_grid:
        for ki in ki_grid:
            cfg = replace(base, kp=kp, ki=ki)
            rms = [run_lock(cfg, plant, duration, seed=s).rms_error() for s in seeds]
            scores[(kp, ki)] = float(np.mean(rms))
    best = min(scores, key=scores.get)
    return replace(base, kp=best[0], ki=best[1]), scores
