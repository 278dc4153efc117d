"""Finite-key secret key length for the d-dimensional one-decoy protocol.

The key length is

    l = 2 s0 + s1 (2 - h_HD(phi)) - lambda_EC - 6 log2(19/eps_sec) - log2(2/eps_cor)

where s0 and s1 lower-bound the vacuum and single-photon detections in the
key basis Z, phi upper-bounds the single-photon phase error and lambda_EC is
the error-correction leakage. The decoy bounds follow the one-decoy analysis
of Rusca et al., Appl. Phys. Lett. 112, 171104 (2018), which builds on the
finite-key treatment of Lim et al., Phys. Rev. A 89, 022307 (2014). The only
change for d > 2 is the vacuum *upper* bound: a vacuum event lands on a wrong
outcome with probability (d-1)/d, so the factor 2 of the binary case becomes
d/(d-1). See README.md for the full list of formulas.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .detection import DetectorSpec, quantum_detector
from .errors import ParameterError, UndefinedPhaseErrorError

BASES = ("Z", "X")
INTENSITIES = ("mu1", "mu2")
#: Number of error terms the security parameter is split over.
EPS_SPLIT = 19
EC_EFFICIENCY = 1.16


@dataclass(frozen=True)
class DecoyProtocolParams:
    d: int = 4
    mu1: float = 0.0052
    mu2: float = 0.0026
    p_mu1: float = 0.85
    p_Z: float = 0.91
    n_Z: float = 1e9
    eps_sec: float = 1e-15
    eps_cor: float = 1e-15
    rep_rate: float = 600e6

    def __post_init__(self):
        if self.d < 2:
            raise ParameterError("dimension must be >= 2")
        if not self.mu1 > self.mu2 >= 0:
            raise ParameterError(f"need mu1 > mu2 >= 0, got {self.mu1}, {self.mu2}")
        if not 0 < self.p_mu1 < 1:
            raise ParameterError("p_mu1 must lie in (0, 1)")
        if not 0 < self.p_Z < 1:
            raise ParameterError("p_Z must lie in (0, 1)")
        if not (0 < self.eps_sec < 1 and 0 < self.eps_cor < 1):
            raise ParameterError("security parameters must lie in (0, 1)")
        if self.n_Z < 1:
            raise ParameterError("block size must be >= 1")
        if self.rep_rate <= 0:
            raise ParameterError("repetition rate must be positive")

    @property
    def p_mu2(self) -> float:
        return 1.0 - self.p_mu1

    def intensity(self, k: str) -> tuple[float, float]:
        """(mean photon number, sending probability) of ``mu1`` or ``mu2``."""
        if k == "mu1":
            return self.mu1, self.p_mu1
        if k == "mu2":
            return self.mu2, self.p_mu2
        raise ParameterError(f"unknown intensity {k!r}")


@dataclass
class ObservedStatistics:
    """Detections ``n`` and errors ``m`` per basis and intensity.

    Both are 2x2 arrays indexed ``[basis, intensity]`` in the order of
    :data:`BASES` and :data:`INTENSITIES`. ``n_pulses`` is the number of
    pulses sent for the block. Counts may be expectation values (floats).
    """

    n: np.ndarray
    m: np.ndarray
    n_pulses: float

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float).reshape(2, 2)
        self.m = np.asarray(self.m, dtype=float).reshape(2, 2)
        bad = self.problems()
        if bad:
            raise ParameterError("inconsistent statistics: " + "; ".join(bad))

    def problems(self) -> list[str]:
        out = []
        for (i, b), (j, k) in itertools.product(enumerate(BASES), enumerate(INTENSITIES)):
            n, m = self.n[i, j], self.m[i, j]
            if not (np.isfinite(n) and np.isfinite(m)):
                out.append(f"{b}/{k}: non-finite count")
            elif n < 0 or m < 0:
                out.append(f"{b}/{k}: negative count")
            elif m > n:
                out.append(f"{b}/{k}: errors {m:g} exceed detections {n:g}")
        if self.n_pulses < self.n.sum():
            out.append(f"pulses sent {self.n_pulses:g} below total detections {self.n.sum():g}")
        return out

    def cell(self, basis: str, k: str) -> tuple[float, float]:
        i, j = BASES.index(basis), INTENSITIES.index(k)
        return float(self.n[i, j]), float(self.m[i, j])

    def basis_total(self, basis: str) -> tuple[float, float]:
        i = BASES.index(basis)
        return float(self.n[i].sum()), float(self.m[i].sum())

    def qber(self, basis: str = "Z") -> float:
        n, m = self.basis_total(basis)
        return m / n if n > 0 else float("nan")

    def to_rows(self) -> list[dict]:
        return [
            {"basis": b, "intensity": k, "detections": self.n[i, j], "errors": self.m[i, j]}
            for (i, b), (j, k) in itertools.product(enumerate(BASES), enumerate(INTENSITIES))
        ]

    @classmethod
    def from_rows(cls, rows, n_pulses: float) -> "ObservedStatistics":
        n = np.full((2, 2), np.nan)
        m = np.full((2, 2), np.nan)
        for r in rows:
            try:
                i, j = BASES.index(r["basis"]), INTENSITIES.index(r["intensity"])
            except ValueError:
                raise ParameterError(f"unknown cell {r['basis']}/{r['intensity']}") from None
            n[i, j], m[i, j] = float(r["detections"]), float(r["errors"])
        return cls(n, m, n_pulses)


# --- entropy and leakage --------------------------------------------------------

def hd_entropy(x: float, d: int = 4) -> float:
    """d-dimensional entropy ``-x log2(x/(d-1)) - (1-x) log2(1-x)``."""
    if not 0.0 <= x <= 1.0:
        raise ParameterError(f"entropy argument {x} outside [0, 1]")
    if d < 2:
        raise ParameterError("dimension must be >= 2")
    out = 0.0
    if x > 0:
        out += x * (math.log2(d - 1) - math.log2(x))
    if x < 1:
        out -= (1 - x) * math.log2(1 - x)
    return out


def lambda_ec(n_Z: float, qber_Z: float, d: int = 4, f: float = EC_EFFICIENCY) -> float:
    """Bits disclosed by error correction."""
    return f * n_Z * hd_entropy(qber_Z, d)


# --- decoy bounds -----------------------------------------------------------

def tau_n(n: int, params: DecoyProtocolParams) -> float:
    """Probability that a pulse carries ``n`` photons, averaged over intensities."""
    if n < 0:
        raise ParameterError("photon number must be >= 0")
    total = 0.0
    for k in INTENSITIES:
        mu, p = params.intensity(k)
        total += p * math.exp(-mu) * (mu ** n if n else 1.0) / math.factorial(n)
    return total


def hoeffding_delta(n: float, eps: float) -> float:
    """Finite-size deviation ``sqrt(n/2 ln(1/eps))``."""
    return math.sqrt(max(n, 0.0) / 2 * math.log(1 / eps))


@dataclass(frozen=True)
class BasisBounds:
    """Decoy-state estimates for one basis."""

    n_total: float
    m_total: float
    s0_lower: float
    s0_upper: float
    s1_lower: float
    v1_upper: float


def basis_bounds(stats: ObservedStatistics, params: DecoyProtocolParams, basis: str,
                 finite: bool = True) -> BasisBounds:
    """One-decoy bounds on vacuum and single-photon events in ``basis``.

    With ``finite=False`` the Hoeffding corrections are dropped.
    """
    mu1, mu2 = params.mu1, params.mu2
    p1, p2 = params.p_mu1, params.p_mu2
    d = params.d
    eps1 = params.eps_sec / EPS_SPLIT
    nB, mB = stats.basis_total(basis)
    n1, m1 = stats.cell(basis, "mu1")
    n2, m2 = stats.cell(basis, "mu2")
    dn = hoeffding_delta(nB, eps1) if finite else 0.0
    dm = hoeffding_delta(mB, eps1) if finite else 0.0
    n1p = math.exp(mu1) / p1 * (n1 + dn)
    n2m = math.exp(mu2) / p2 * (n2 - dn)
    m1p = math.exp(mu1) / p1 * (m1 + dm)
    m2m = math.exp(mu2) / p2 * (m2 - dm)
    m2p = math.exp(mu2) / p2 * (m2 + dm)
    t0, t1 = tau_n(0, params), tau_n(1, params)
    s0l = t0 / (mu1 - mu2) * (mu1 * n2m - mu2 * n1p)
    s0u = d / (d - 1) * (t0 * m2p + dn)
    s1l = t1 * mu1 / (mu2 * (mu1 - mu2)) * (
        n2m - (mu2 / mu1) ** 2 * n1p - (mu1 ** 2 - mu2 ** 2) / mu1 ** 2 * s0u / t0)
    v1u = t1 / (mu1 - mu2) * (m1p - m2m)
    return BasisBounds(nB, mB, min(max(s0l, 0.0), nB), max(s0u, 0.0),
                       min(max(s1l, 0.0), nB), max(v1u, 0.0))


def vacuum_events_lower(stats: ObservedStatistics, params: DecoyProtocolParams,
                        finite: bool = True) -> float:
    return basis_bounds(stats, params, "Z", finite).s0_lower


def vacuum_events_upper(stats: ObservedStatistics, params: DecoyProtocolParams,
                        basis: str = "Z", finite: bool = True) -> float:
    return basis_bounds(stats, params, basis, finite).s0_upper


def single_photon_events_lower(stats: ObservedStatistics, params: DecoyProtocolParams,
                               basis: str = "Z", finite: bool = True) -> float:
    return basis_bounds(stats, params, basis, finite).s1_lower


def gamma_correction(eps: float, b: float, c: float, dd: float) -> float:
    """Random-sampling correction between the phase error of ``c`` events and ``dd`` test events."""
    if not (0 < b < 1) or c <= 0 or dd <= 0:
        return float("inf")
    arg = (c + dd) / (c * dd * (1 - b) * b) * EPS_SPLIT ** 2 / eps ** 2
    if arg <= 1:
        return 0.0
    return math.sqrt((c + dd) * (1 - b) * b / (c * dd * math.log(2)) * math.log2(arg))


def phase_error_upper(stats: ObservedStatistics, params: DecoyProtocolParams, s_Z1: float,
                      finite: bool = True) -> float:
    """Upper bound on the single-photon phase error rate of the key basis."""
    if s_Z1 <= 0:
        raise UndefinedPhaseErrorError("no single-photon events in the key basis")
    cap = (params.d - 1) / params.d
    xb = basis_bounds(stats, params, "X", finite)
    if xb.s1_lower <= 0:
        return cap
    b = min(xb.v1_upper / xb.s1_lower, cap)
    if not finite or b == 0:
        return b
    g = gamma_correction(params.eps_sec, b, s_Z1, xb.s1_lower)
    return min(b + g, cap)


@dataclass(frozen=True)
class KeyRateReport:
    length: float
    rate: float
    rate_hz: float
    no_key: bool
    s_Z0_lower: float
    s_Z1_lower: float
    s_X1_lower: float
    v_X1_upper: float
    phase_error_upper: float
    lambda_ec: float
    qber_Z: float
    n_Z: float
    n_pulses: float
    raw_length: float

    def as_dict(self) -> dict:
        return asdict(self)


def epsilon_penalty(params: DecoyProtocolParams) -> float:
    return 6 * math.log2(EPS_SPLIT / params.eps_sec) + math.log2(2 / params.eps_cor)


def secret_key_length(params: DecoyProtocolParams, stats: ObservedStatistics,
                      finite: bool = True) -> KeyRateReport:
    """Secret key length of the block, clamped at zero with a ``no_key`` flag."""
    zb = basis_bounds(stats, params, "Z", finite)
    xb = basis_bounds(stats, params, "X", finite)
    qz = zb.m_total / zb.n_total if zb.n_total > 0 else 0.0
    qz = min(qz, 1.0)
    leak = lambda_ec(zb.n_total, qz, params.d)
    if zb.s1_lower > 0:
        phi = phase_error_upper(stats, params, zb.s1_lower, finite)
    else:
        phi = (params.d - 1) / params.d
    penalty = epsilon_penalty(params) if finite else 0.0
    raw = 2 * zb.s0_lower + zb.s1_lower * (2 - hd_entropy(phi, params.d)) - leak - penalty
    ell = max(raw, 0.0)
    rate = ell / stats.n_pulses if stats.n_pulses > 0 else 0.0
    rate = float(rate)
    return KeyRateReport(float(ell), rate, rate * params.rep_rate, ell <= 0, zb.s0_lower, zb.s1_lower,
                         xb.s1_lower, xb.v1_upper, phi, leak, qz, zb.n_total, stats.n_pulses, raw)


# --- expectation model and optimization ------------------------------------------

@dataclass(frozen=True)
class ChannelModel:
    """Link seen by the key-rate analysis.

    ``intrinsic_error`` is the optical error probability of a signal click
    ((1 - V)/2 for visibility V). Darks land uniformly on the d detectors.
    With ``dead_time`` on, all detections are scaled by one aggregate live
    fraction ``1/(1 + R tau)`` where R is the total click rate.
    """

    loss_db: float = 7.0
    detector: DetectorSpec = field(default_factory=quantum_detector)
    intrinsic_error: float = 0.025
    dead_time: bool = True


def expected_statistics(params: DecoyProtocolParams, channel_loss_db: float = 7.0,
                        detector: DetectorSpec | None = None, intrinsic_error: float = 0.025,
                        dead_time: bool = True) -> ObservedStatistics:
    """Expected detection and error counts for a block of ``n_Z`` key-basis detections.

    Bob chooses his basis with the same bias ``p_Z`` as Alice; only matching
    bases are counted.
    """
    det = detector or quantum_detector()
    if not 0 <= intrinsic_error <= 1:
        raise ParameterError("intrinsic error must be a probability")
    d = params.d
    T = 10 ** (-channel_loss_db / 10)
    pd = det.dark_rate / params.rep_rate
    click = np.empty(2)
    err = np.empty(2)
    weight = np.empty(2)
    for j, k in enumerate(INTENSITIES):
        mu, p = params.intensity(k)
        ps = -math.expm1(-mu * T * det.efficiency)
        click[j] = 1 - (1 - ps) * (1 - pd) ** d
        err[j] = ps * intrinsic_error + (d - 1) * pd
        weight[j] = p
    per_pulse = float(weight @ click)
    live = 1 / (1 + params.rep_rate * per_pulse * det.dead_time) if dead_time else 1.0
    sift = np.array([params.p_Z ** 2, (1 - params.p_Z) ** 2])
    z_yield = sift[0] * per_pulse * live
    if z_yield <= 0:
        raise ParameterError("zero key-basis detection probability")
    n_pulses = params.n_Z / z_yield
    n = n_pulses * live * np.outer(sift, weight * click)
    m = n_pulses * live * np.outer(sift, weight * err)
    return ObservedStatistics(n, np.minimum(m, n), n_pulses)


def model_rate(params: DecoyProtocolParams, model: ChannelModel) -> KeyRateReport:
    stats = expected_statistics(params, model.loss_db, model.detector, model.intrinsic_error,
                                model.dead_time)
    return secret_key_length(params, stats)


OPTIMIZABLE = ("mu1", "mu2", "p_mu1", "p_Z")


def optimize_params(params: DecoyProtocolParams, model: ChannelModel, bounds: dict,
                    points: int = 11, rounds: int = 5, shrink: float = 0.3
                    ) -> tuple[DecoyProtocolParams, float]:
    """Coarse-to-fine grid search for the key rate (bit/pulse).

    ``bounds`` maps each free parameter to ``(low, high)``. Every round
    evaluates a full grid over the current box, then recentres a smaller box
    on the best point. The starting ``params`` is also probed, so the result
    is never worse than it. Ties break towards the first point in grid order.
    """
    if not bounds:
        raise ParameterError("no free parameters")
    for name, (lo, hi) in bounds.items():
        if name not in OPTIMIZABLE:
            raise ParameterError(f"cannot optimize {name!r}")
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ParameterError(f"bad bounds for {name}: {lo}, {hi}")
    names = sorted(bounds)

    def evaluate(values):
        try:
            cand = replace(params, **dict(zip(names, values)))
            return cand, model_rate(cand, model).rate
        except (ParameterError, ValueError, ZeroDivisionError, OverflowError):
            return None, -1.0

    best_p, best_r = None, -1.0
    if all(bounds[n][0] <= getattr(params, n) <= bounds[n][1] for n in names):
        best_p, best_r = evaluate([getattr(params, n) for n in names])
    box = {n: tuple(map(float, bounds[n])) for n in names}
    for _ in range(rounds):
        axes = [np.linspace(*box[n], points) if box[n][1] > box[n][0] else [box[n][0]]
                for n in names]
        for values in itertools.product(*axes):
            cand, r = evaluate(values)
            if cand is not None and r > best_r:
                best_p, best_r = cand, r
        if best_p is None:
            break
        for n in names:
            lo, hi = bounds[n]
            half = (box[n][1] - box[n][0]) * shrink / 2
            c = getattr(best_p, n)
            box[n] = (max(lo, c - half), min(hi, c + half))
    if best_p is None:
        raise ParameterError("no feasible point inside the bounds")
    return best_p, best_r
