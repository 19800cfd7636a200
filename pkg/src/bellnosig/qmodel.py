"""Ideal quantum predictions for two-qubit Bell tests.

Correlations follow the singlet rule E = -v (a . b) for Bloch directions
``a`` and ``b``.  Photon polarization angles enter the Bloch sphere doubled
(:func:`bloch_from_polarization`); interferometric phases enter as is
(:func:`bloch_from_phase`).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_NORM_TOL = 1e-12


@dataclass(frozen=True)
class Direction:
    x: float
    y: float
    z: float

    def __post_init__(self):
        norm = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        if abs(norm - 1.0) > _NORM_TOL:
            raise ValueError(f"direction must be a unit vector, |n| = {norm!r}")

    @classmethod
    def normalized(cls, vector: Sequence[float]) -> "Direction":
        v = np.asarray(vector, dtype=float)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(*(v / norm))

    def __array__(self, dtype=None, copy=None):
        return np.array([self.x, self.y, self.z], dtype=dtype or float)

    def dot(self, other: "Direction") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def __neg__(self) -> "Direction":
        return Direction(-self.x, -self.y, -self.z)


def bloch_from_polarization(angle_deg: float) -> Direction:
    """Bloch direction (cos 2phi, sin 2phi, 0) of a linear polarization at ``angle_deg`` degrees."""
    if not math.isfinite(angle_deg):
        raise ValueError("angle must be finite")
    return bloch_from_phase(math.radians(2.0 * angle_deg))


def bloch_from_phase(phi: float) -> Direction:
    """Equatorial Bloch direction (cos phi, sin phi, 0) for a phase ``phi`` in radians."""
    if not math.isfinite(phi):
        raise ValueError("phase must be finite")
    c, s = math.cos(phi), math.sin(phi)
    # renormalize so rounding never trips the unit-norm check
    norm = math.hypot(c, s)
    return Direction(c / norm, s / norm, 0.0)


def _check_visibility(v: float) -> None:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"visibility must lie in [0, 1], got {v}")


def correlation(a: Direction, b: Direction, v: float = 1.0) -> float:
    """Singlet correlation <A B> = -v a.b."""
    _check_visibility(v)
    return max(-1.0, min(1.0, -v * a.dot(b)))


def joint_probability(a: Direction, b: Direction, v: float, outcomes: tuple[int, int]) -> float:
    """p(A, B) for outcomes A, B in {+1, -1}: (1 + A B E) / 4."""
    A, B = outcomes
    if A not in (1, -1) or B not in (1, -1):
        raise ValueError(f"outcomes must be +1 or -1, got {outcomes}")
    return (1.0 + A * B * correlation(a, b, v)) / 4.0


def chsh_value(E, negate: tuple[int, int] = (1, 1)) -> float:
    """CHSH combination of a 2 x 2 correlation table, with the ``negate`` entry subtracted.

    The default gives E00 + E01 + E10 - E11.
    """
    E = np.asarray(E, dtype=float)
    if E.shape != (2, 2):
        raise ValueError(f"need a 2 x 2 correlation table, got shape {E.shape}")
    if np.any(np.abs(E) > 1.0 + 1e-12):
        raise ValueError("correlations must lie in [-1, 1]")
    signs = np.ones((2, 2))
    signs[negate] = -1.0
    return float((signs * E).sum())


def chsh_max(E) -> float:
    """Largest |S| over the four choices of which term is negated."""
    return max(abs(chsh_value(E, neg)) for neg in itertools.product((0, 1), repeat=2))


@dataclass(frozen=True)
class CorrelationModel:
    """Singlet correlations with visibility ``v`` between per-setting directions.

    ``alice_directions[x]`` is the Bloch direction measured for Alice's
    setting ``x`` (outcome +1 along it, -1 opposite); likewise for Bob.
    """

    visibility: float
    alice_directions: tuple[Direction, ...]
    bob_directions: tuple[Direction, ...]
    state: str = "singlet"

    def __post_init__(self):
        _check_visibility(self.visibility)
        if self.state != "singlet":
            raise ValueError(f"only the singlet state is built in, got {self.state!r}")
        object.__setattr__(self, "alice_directions", tuple(self.alice_directions))
        object.__setattr__(self, "bob_directions", tuple(self.bob_directions))
        if not self.alice_directions or not self.bob_directions:
            raise ValueError("need at least one direction per party")

    @classmethod
    def from_polarizations(cls, alice_deg: Sequence[float], bob_deg: Sequence[float], v: float = 1.0):
        return cls(v, tuple(map(bloch_from_polarization, alice_deg)), tuple(map(bloch_from_polarization, bob_deg)))

    @classmethod
    def from_phases(cls, alice_phi: Sequence[float], bob_phi: Sequence[float], v: float = 1.0):
        return cls(v, tuple(map(bloch_from_phase, alice_phi)), tuple(map(bloch_from_phase, bob_phi)))

    def correlations(self) -> np.ndarray:
        return np.array([[correlation(a, b, self.visibility) for b in self.bob_directions] for a in self.alice_directions])

    def probabilities(self) -> np.ndarray:
        """Array p[x, y, A, B] with outcome index 0 for +1 and 1 for -1."""
        E = self.correlations()
        sign = np.array([[1.0, -1.0], [-1.0, 1.0]])
        return (1.0 + sign[None, None, :, :] * E[:, :, None, None]) / 4.0


#: Polarization angles (degrees) of outcome 0 for each setting in experiment 4.
EXP4_ALICE_DEG = (0.0, 45.0)
EXP4_BOB_DEG = (-22.5, -67.5)
#: Phases of experiment 12: (phi_a, phi'_a) and (phi_b, phi'_b).
EXP12_ALICE_PHI = (math.pi / 4, -math.pi / 4)
EXP12_BOB_PHI = (0.0, math.pi / 2)


@dataclass(frozen=True)
class DetectorEfficiencies:
    """Efficiencies eta_1..eta_4 of Alice's four detectors."""

    eta: tuple[float, float, float, float]

    def __post_init__(self):
        eta = tuple(float(e) for e in self.eta)
        if len(eta) != 4:
            raise ValueError("need exactly four detector efficiencies")
        if not all(0.0 < e <= 1.0 for e in eta):
            raise ValueError(f"efficiencies must lie in (0, 1], got {eta}")
        object.__setattr__(self, "eta", eta)


S_PLUS = (1.0 + 1.0 / math.sqrt(2.0)) / 4.0
S_MINUS = (1.0 - 1.0 / math.sqrt(2.0)) / 4.0


def detector_marginals(eff: DetectorEfficiencies | Sequence[float]) -> np.ndarray:
    """Bob's outcome weights w[X, B] under unequal detector efficiencies on Alice's side.

    Detectors 2 and 4 serve Alice's setting 0, detectors 1 and 3 setting 1.
    The weights do not depend on Bob's setting, which is what makes B
    independent of Y at fixed X under this model.  Efficiencies may be any
    nonnegative weights here, so that a detector can be switched off.
    """
    eta = eff.eta if isinstance(eff, DetectorEfficiencies) else tuple(float(e) for e in eff)
    if len(eta) != 4 or any(e < 0 for e in eta):
        raise ValueError("need four nonnegative efficiencies")
    e1, e2, e3, e4 = eta
    return np.array(
        [
            [e2 * S_PLUS + e4 * S_MINUS, e2 * S_MINUS + e4 * S_PLUS],
            [e1 * S_PLUS + e3 * S_MINUS, e1 * S_MINUS + e3 * S_PLUS],
        ]
    )


def dodecahedron_candidates() -> list[Direction]:
    """Unit vectors to the 20 vertices and 12 face centres of a dodecahedron with a vertex at +z.

    Selecting the 16 measured directions is left to the caller.
    """
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [np.array(v, float) for v in itertools.product((-1, 1), repeat=3)]
    for a, b in itertools.product((-1, 1), repeat=2):
        verts += [np.array([0, a / phi, b * phi]), np.array([a / phi, b * phi, 0]), np.array([a * phi, 0, b / phi])]
    # face centres of a dodecahedron point at icosahedron vertices
    faces = []
    for a, b in itertools.product((-1, 1), repeat=2):
        faces += [np.array([0, a, b * phi]), np.array([a, b * phi, 0]), np.array([a * phi, 0, b])]
    pts = [v / np.linalg.norm(v) for v in verts + faces]
    rot = _rotation_to_z(pts[0])
    return [Direction.normalized(rot @ p) for p in pts]


def _rotation_to_z(u: np.ndarray) -> np.ndarray:
    """Rotation matrix taking unit vector ``u`` to (0, 0, 1) (Rodrigues)."""
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(u, z)
    s = np.linalg.norm(axis)
    c = float(u @ z)
    if s < 1e-15:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    k = axis / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * K @ K
