"""Path-encoded qudit algebra.

A photon travelling in a superposition of fiber cores is represented by a
complex amplitude vector indexed by core label. This module builds the basis
sets used by the two-core scheme of this simulator and by two earlier
four-core schemes, and turns a sent state plus a measurement basis into
outcome probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .errors import DimensionError, InvalidStateError, ParameterError, UnknownCoreError

NORM_TOL = 1e-12
ORTHO_TOL = 1e-10

#: Cores of the 7-core fiber that carry the qudit.
DEFAULT_CORES = (1, 2, 5, 7)
#: Abstract labels used by the four-core schemes.
ABSTRACT_CORES = ("A", "B", "C", "D")

SCHEMES = ("this_work", "ding_3basis", "canas_4core")


@dataclass(frozen=True)
class PathState:
    amplitudes: np.ndarray
    core_labels: tuple

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        labels = tuple(self.core_labels)
        if amps.ndim != 1 or amps.size != len(labels):
            raise DimensionError(
                f"{amps.size} amplitudes for {len(labels)} core labels"
            )
        if len(set(labels)) != len(labels):
            raise InvalidStateError(f"duplicate core labels in {labels}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise InvalidStateError(f"state norm {norm!r} differs from 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "core_labels", labels)

    @property
    def dim(self) -> int:
        return len(self.core_labels)

    def amplitude(self, core: Hashable) -> complex:
        return complex(self.amplitudes[self.core_labels.index(core)])

    def support(self) -> tuple:
        """Core labels carrying non-zero amplitude."""
        return tuple(c for c, a in zip(self.core_labels, self.amplitudes) if abs(a) > NORM_TOL)

    def with_phase(self, core: Hashable, phase: float) -> "PathState":
        """Copy of the state with an extra phase ``e^{i phase}`` on one core."""
        amps = self.amplitudes.copy()
        amps[self.core_labels.index(core)] *= np.exp(1j * phase)
        return PathState(amps, self.core_labels)


@dataclass(frozen=True)
class MeasurementBasis:
    states: tuple
    name: str = ""

    def __post_init__(self):
        states = tuple(self.states)
        if not states:
            raise DimensionError("empty basis")
        labels = states[0].core_labels
        if any(s.core_labels != labels for s in states):
            raise DimensionError("basis states defined over different core sets")
        if len(states) != len(labels):
            raise DimensionError(f"{len(states)} states in a {len(labels)}-dimensional space")
        gram = self._gram(states)
        dev = np.max(np.abs(gram - np.eye(len(states))))
        if dev > ORTHO_TOL:
            raise InvalidStateError(f"basis {self.name!r} not orthonormal (deviation {dev:.3g})")
        object.__setattr__(self, "states", states)

    @staticmethod
    def _gram(states) -> np.ndarray:
        mat = np.array([s.amplitudes for s in states])
        return mat.conj() @ mat.T

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def core_labels(self) -> tuple:
        return self.states[0].core_labels

    def matrix(self) -> np.ndarray:
        """Rows are the basis vectors."""
        return np.array([s.amplitudes for s in self.states])

    def orthonormality_deviation(self) -> float:
        return float(np.max(np.abs(self._gram(self.states) - np.eye(self.dim))))

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]


def state_from_coefficients(coeffs: dict, core_labels: Sequence) -> PathState:
    """Build a normalized state from unnormalized ``{core: coefficient}``."""
    labels = tuple(core_labels)
    amps = np.zeros(len(labels), dtype=complex)
    for core, c in coeffs.items():
        if core not in labels:
            raise UnknownCoreError(core)
        amps[labels.index(core)] = c
    norm = np.sqrt(np.vdot(amps, amps).real)
    if norm == 0:
        raise InvalidStateError("all-zero coefficients")
    return PathState(amps / norm, labels)


def make_two_core_state(core_a, core_b, relative_phase: float,
                        cores: Sequence = DEFAULT_CORES) -> PathState:
    """Equal superposition ``(|a> + e^{i theta}|b>)/sqrt(2)``."""
    labels = tuple(cores)
    for c in (core_a, core_b):
        if c not in labels:
            raise UnknownCoreError(c)
    if core_a == core_b:
        raise InvalidStateError(f"two-core state needs distinct cores, got {core_a} twice")
    amps = np.zeros(len(labels), dtype=complex)
    amps[labels.index(core_a)] = 1 / np.sqrt(2)
    amps[labels.index(core_b)] = np.exp(1j * relative_phase) / np.sqrt(2)
    return PathState(amps, labels)


def _pair_basis(pairs, cores, name) -> MeasurementBasis:
    states = []
    for a, b in pairs:
        states.append(make_two_core_state(a, b, 0.0, cores))
        states.append(make_two_core_state(a, b, np.pi, cores))
    return MeasurementBasis(tuple(states), name)


def standard_bases(scheme: str = "this_work") -> list[MeasurementBasis]:
    """Basis sets of the supported encoding schemes.

    ``this_work``
        Two bases of two-core superpositions over cores 1, 2, 5 and 7.
    ``ding_3basis``
        Three bases of two-core superpositions over abstract cores A-D.
    ``canas_4core``
        Two bases of four-core superpositions with +-1 signs.
    """
    if scheme == "this_work":
        c = DEFAULT_CORES
        return [
            _pair_basis([(1, 5), (2, 7)], c, "M0"),
            _pair_basis([(1, 7), (2, 5)], c, "M1"),
        ]
    if scheme == "ding_3basis":
        c = ABSTRACT_CORES
        return [
            _pair_basis([("A", "B"), ("C", "D")], c, "D0"),
            _pair_basis([("A", "C"), ("B", "D")], c, "D1"),
            _pair_basis([("A", "D"), ("B", "C")], c, "D2"),
        ]
    if scheme == "canas_4core":
        c = ABSTRACT_CORES
        signs0 = [(1, 1, 1, 1), (1, -1, 1, -1), (1, 1, -1, -1), (1, -1, -1, 1)]
        signs1 = [(1, 1, 1, -1), (1, 1, -1, 1), (1, -1, 1, 1), (-1, 1, 1, 1)]
        return [
            MeasurementBasis(tuple(state_from_coefficients(dict(zip(c, s)), c) for s in signs0), "C0"),
            MeasurementBasis(tuple(state_from_coefficients(dict(zip(c, s)), c) for s in signs1), "C1"),
        ]
    raise ParameterError(f"unknown basis scheme {scheme!r}; choose from {SCHEMES}")


def inner_product(a: PathState, b: PathState) -> complex:
    """Hermitian inner product <a|b>."""
    if a.core_labels != b.core_labels:
        raise DimensionError(f"core sets differ: {a.core_labels} vs {b.core_labels}")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def mub_deviation(b1: MeasurementBasis, b2: MeasurementBasis) -> float:
    """Largest departure of any cross overlap |<e_i|f_j>|^2 from 1/d."""
    if b1.dim != b2.dim or b1.core_labels != b2.core_labels:
        raise DimensionError(f"bases of dimension {b1.dim} and {b2.dim}")
    overlaps = np.abs(b1.matrix().conj() @ b2.matrix().T) ** 2
    return float(np.max(np.abs(overlaps - 1.0 / b1.dim)))


def detection_probabilities(sent: PathState, basis: MeasurementBasis,
                            visibility: float = 1.0, background: float = 0.0) -> np.ndarray:
    """Outcome distribution for one sent state measured in ``basis``.

    Partial coherence is modeled by mixing the pure state with its fully
    dephased copy, ``rho = V |psi><psi| + (1 - V) diag(|psi|^2)``, and the
    outcome probabilities follow the Born rule on ``rho``. For a two-core state
    measured on its own core pair this gives ``(1 +- V cos(dphi))/2``. A flat
    per-outcome ``background`` is then added and the vector renormalized.
    """
    if not 0.0 <= visibility <= 1.0:
        raise ParameterError(f"visibility {visibility} outside [0, 1]")
    if background < 0:
        raise ParameterError(f"negative background {background}")
    if sent.core_labels != basis.core_labels:
        raise DimensionError("sent state and basis live on different cores")
    psi = sent.amplitudes
    proj = basis.matrix().conj()
    coherent = np.abs(proj @ psi) ** 2
    incoherent = np.abs(proj) ** 2 @ np.abs(psi) ** 2
    p = visibility * coherent + (1.0 - visibility) * incoherent + background
    p = np.clip(p.real, 0.0, None)
    return p / p.sum()


def scheme_mub_pairs(scheme: str) -> list[tuple[int, int]]:
    """Index pairs of bases advertised as mutually unbiased."""
    n = len(standard_bases(scheme))
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def state_label(basis_index: int, state_index: int) -> str:
    """``psi1..psi4`` for the first basis, ``phi1..phi4`` for the second."""
    prefix = "psi" if basis_index == 0 else "phi"
    return f"{prefix}{state_index + 1}"
