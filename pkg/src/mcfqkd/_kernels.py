"""Compiled inner loops.

The closed-loop kernel mirrors the pure-Python state machine in
``mcfqkd.pll`` operation for operation; ``tests/test_pll.py`` checks that the
two produce the same trace from the same random inputs.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

MODE_SCANNING = 0
MODE_LOCKED = 1
MODE_LOST = 2

# float state slots
F_DRIFT, F_JUMP, F_APPLIED, F_PENDING, F_M, F_MIN, F_SP, F_INTEG, F_PREV, F_BASE, F_SIGN, F_REF = range(12)
N_FSTATE = 12
# int state slots
I_MODE, I_SCAN, I_HASPREV, I_BAD, I_REFSET, I_TICK, I_FAULT, I_DEGEN, I_LOSSES = range(9)
N_ISTATE = 9
# parameter slots
(P_DT, P_DECAY, P_STD, P_PEAK, P_VIS, P_DARK, P_DEAD, P_KP, P_KI, P_KD, P_PHI, P_THR, P_PATIENCE,
 P_RANGE, P_STEPS, P_MINVIS, P_DELAY, P_CAL, P_REFMODE, P_SATLOSS, P_SMOOTH) = range(21)
N_PARAMS = 21


@njit(cache=True)
def poisson_from_uniform(lam, u):
    """Poisson variate with mean ``lam`` by CDF inversion of the uniform ``u``.

    Starts at the mode so the cost grows like sqrt(lam).
    """
    if lam <= 0.0:
        return 0
    k0 = int(math.floor(lam))
    logp0 = k0 * math.log(lam) - lam - math.lgamma(k0 + 1.0)
    p0 = math.exp(logp0)
    # F(k0) by summing the left tail down from the mode
    cdf = p0
    p = p0
    k = k0
    while k > 0:
        p = p * k / lam
        k -= 1
        cdf += p
        if p < 1e-18 * cdf:
            break
    if u <= cdf:
        # walk down while the CDF below k still exceeds u
        k = k0
        p = p0
        while k > 0:
            below = cdf - p
            if below < u:
                return k
            cdf = below
            p = p * k / lam
            k -= 1
        return 0
    k = k0
    p = p0
    while cdf < u:
        k += 1
        p = p * lam / k
        cdf += p
        if p < 1e-300:
            break
    return k


@njit(cache=True)
def fringe_true_rate(phase, peak, vis, dark):
    return peak * 0.5 * (1.0 + vis * math.cos(phase)) + dark


@njit(cache=True)
def fringe_expected_counts(phase, peak, vis, dark, dead, dt):
    r = fringe_true_rate(phase, peak, vis, dark)
    return r / (1.0 + r * dead) * dt


@njit(cache=True)
def fringe_phase_for_counts(counts, sign, peak, vis, dark, dead, dt):
    """Phase on the branch ``sign`` (+1: (0, pi), -1: (-pi, 0)) giving ``counts``."""
    obs = counts / dt
    denom = 1.0 - obs * dead
    if denom <= 0.0:
        r = 1e300
    else:
        r = obs / denom
    if peak <= 0.0 or vis <= 0.0:
        return 0.0
    c = (2.0 * (r - dark) / peak - 1.0) / vis
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    return sign * math.acos(c)


@njit(cache=True)
def wrap_phase(x):
    """Map to (-pi, pi]."""
    return x - TWO_PI * math.ceil((x - math.pi) / TWO_PI)


@njit(cache=True)
def set_point_value(M, m, phi):
    return 0.5 * (M + m) + 0.5 * (M - m) * math.cos(phi)


@njit(cache=True)
def scan_actuator(k, n):
    return -math.pi + TWO_PI * k / n


@njit(cache=True)
def smooth_scan(rec, half):
    """Circular moving average of half-width ``half`` over one scan period."""
    n = rec.shape[0]
    out = np.empty(n)
    for j in range(n):
        acc = 0.0
        for k in range(-half, half + 1):
            acc += rec[(j + k) % n]
        out[j] = acc / (2 * half + 1)
    return out


@njit(cache=True)
def _finish_scan(fs, ist, raw, prm):
    n = int(prm[P_STEPS])
    rec = smooth_scan(raw, int(prm[P_SMOOTH]))
    M = rec[0]
    m = rec[0]
    imax = 0
    for j in range(1, n):
        if rec[j] > M:
            M = rec[j]
            imax = j
        if rec[j] < m:
            m = rec[j]
    if M - m <= 0.0 or (M - m) <= prm[P_MINVIS] * (M + m):
        ist[I_DEGEN] += 1
        ist[I_SCAN] = 0
        return scan_actuator(0, n)
    phi = prm[P_PHI]
    sp = set_point_value(M, m, phi)
    sign = 1.0 if math.sin(phi) >= 0.0 else -1.0
    jsel = imax
    for step in range(n):
        j = (imax + int(sign) * step) % n
        if rec[j] <= sp:
            jsel = j
            break
    base = scan_actuator(jsel, n)
    fs[F_M] = M
    fs[F_MIN] = m
    fs[F_SP] = sp
    fs[F_SIGN] = sign
    fs[F_BASE] = base
    fs[F_INTEG] = 0.0
    fs[F_PREV] = 0.0
    ist[I_HASPREV] = 0
    ist[I_BAD] = 0
    ist[I_MODE] = MODE_LOCKED
    if prm[P_REFMODE] > 0.5 and ist[I_REFSET] == 0:
        fs[F_REF] = fringe_phase_for_counts(sp, sign, prm[P_PEAK], prm[P_VIS], prm[P_DARK],
                                            prm[P_DEAD], prm[P_DT])
        ist[I_REFSET] = 1
    return base


@njit(cache=True)
def closed_loop_chunk(fs, ist, rec, z, u, fault_ticks, fault_jumps, prm,
                      out_err, out_mode, out_counts):
    """Advance the drifting interferometer and its controller by ``len(z)`` ticks."""
    n = z.shape[0]
    dt = prm[P_DT]
    steps = int(prm[P_STEPS])
    patience = int(prm[P_PATIENCE])
    rng_ = prm[P_RANGE]
    nf = fault_ticks.shape[0]
    for i in range(n):
        t = ist[I_TICK]
        fs[F_DRIFT] = prm[P_DECAY] * fs[F_DRIFT] + prm[P_STD] * z[i]
        while ist[I_FAULT] < nf and fault_ticks[ist[I_FAULT]] <= t:
            fs[F_JUMP] += fault_jumps[ist[I_FAULT]]
            ist[I_FAULT] += 1
        phase = fs[F_DRIFT] + fs[F_JUMP] + fs[F_APPLIED]
        mean = fringe_expected_counts(phase, prm[P_PEAK], prm[P_VIS], prm[P_DARK], prm[P_DEAD], dt)
        c = poisson_from_uniform(mean, u[i])
        out_counts[i] = c
        out_err[i] = wrap_phase(phase - fs[F_REF] - prm[P_CAL])
        mode = ist[I_MODE]
        rec_mode = mode
        if mode == MODE_SCANNING:
            k = ist[I_SCAN]
            rec[k] = c
            k += 1
            ist[I_SCAN] = k
            if k < steps:
                cmd = scan_actuator(k, steps)
            else:
                cmd = _finish_scan(fs, ist, rec, prm)
        else:
            span = fs[F_M] - fs[F_MIN]
            if span < 1.0:
                span = 1.0
            e = (c - fs[F_SP]) / span
            integ = fs[F_INTEG] + e * dt
            deriv = 0.0
            if ist[I_HASPREV] == 1:
                deriv = (e - fs[F_PREV]) / dt
            corr = fs[F_SIGN] * (prm[P_KP] * e + prm[P_KI] * integ + prm[P_KD] * deriv)
            cmd = fs[F_BASE] + corr
            clamped = False
            if cmd > rng_:
                cmd = rng_
                clamped = True
            elif cmd < -rng_:
                cmd = -rng_
                clamped = True
            if not clamped:
                fs[F_INTEG] = integ
            fs[F_PREV] = e
            ist[I_HASPREV] = 1
            if abs(e) > prm[P_THR] or (clamped and prm[P_SATLOSS] > 0.5):
                ist[I_BAD] += 1
            else:
                ist[I_BAD] = 0
            if ist[I_BAD] >= patience:
                rec_mode = MODE_LOST
                ist[I_LOSSES] += 1
                ist[I_MODE] = MODE_SCANNING
                ist[I_SCAN] = 0
                ist[I_BAD] = 0
                cmd = scan_actuator(0, steps)
        out_mode[i] = rec_mode
        if prm[P_DELAY] > 0.5:
            fs[F_APPLIED] = fs[F_PENDING]
            fs[F_PENDING] = cmd
        else:
            fs[F_APPLIED] = cmd
        ist[I_TICK] = t + 1
