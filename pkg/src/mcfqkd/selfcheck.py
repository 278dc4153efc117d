"""Release-gate checks run by ``mcfqkd selfcheck``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channel import fit_decorrelation_time, mcf_drift, monte_carlo_autocorrelation, smf_drift
from .keyrate import hd_entropy
from .pll import set_point
from .states import SCHEMES, mub_deviation, scheme_mub_pairs, standard_bases


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_mub(bases_for: Callable = standard_bases) -> list[CheckResult]:
    out = []
    for scheme in SCHEMES:
        bases = bases_for(scheme)
        worst_ortho = max(b.orthonormality_deviation() for b in bases)
        worst_mub = max(mub_deviation(bases[i], bases[j]) for i, j in scheme_mub_pairs(scheme))
        ok = worst_ortho < 1e-10 and worst_mub < 1e-10
        out.append(CheckResult(f"mub:{scheme}", ok,
                               f"orthonormality {worst_ortho:.1e}, unbiasedness {worst_mub:.1e}"))
    return out


def check_entropy() -> list[CheckResult]:
    spots = [(0.0, 4, 0.0), (0.75, 4, 2.0), (0.025, 4, 0.20828)]
    out = []
    for x, d, want in spots:
        got = hd_entropy(x, d)
        out.append(CheckResult(f"entropy:h({x},{d})", abs(got - want) < 1e-5, f"{got:.6f} vs {want}"))
    return out


def check_set_point(n: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        a, b = rng.uniform(0, 1e4, 2)
        M, m = max(a, b), min(a, b)
        phi = rng.uniform(-2 * math.pi, 2 * math.pi)
        want = (M + m) / 2 + (M - m) / 2 * math.cos(phi)
        got = set_point(M, m, phi)
        worst = max(worst, abs(got - want) / max(abs(want), 1e-300))
    return CheckResult("set_point:oracle", worst < 1e-12, f"max relative deviation {worst:.1e} over {n}")


def check_drift_calibration(n_paths: int = 2000, seed: int = 0) -> list[CheckResult]:
    out = []
    for name, proc, lo, hi in (("mcf", mcf_drift(seed), 0.5, 2.0), ("smf", smf_drift(seed), 0.5e-3, 10e-3)):
        tau0 = 2 / proc.diffusion
        lags, corr, _ = monte_carlo_autocorrelation(proc, tau0 / 20, 60, n_paths, seed=seed)
        fit = fit_decorrelation_time(lags, corr)
        out.append(CheckResult(f"drift:{name}", lo <= fit <= hi,
                               f"decorrelation {fit:.4g} s, window [{lo:g}, {hi:g}] s"))
    return out


def run_selfcheck(bases_for: Callable = standard_bases) -> list[CheckResult]:
    """All checks; ``bases_for`` lets tests inject a corrupted basis set."""
    return check_mub(bases_for) + check_entropy() + [check_set_point()] + check_drift_calibration()


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  result  detail"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL'}    {r.detail}")
    return "\n".join(lines)
