import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bellnosig.qmodel import (
    EXP4_ALICE_DEG,
    EXP4_BOB_DEG,
    EXP12_ALICE_PHI,
    EXP12_BOB_PHI,
    S_MINUS,
    S_PLUS,
    CorrelationModel,
    DetectorEfficiencies,
    Direction,
    bloch_from_phase,
    bloch_from_polarization,
    chsh_max,
    chsh_value,
    correlation,
    detector_marginals,
    dodecahedron_candidates,
    joint_probability,
)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]])
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SINGLET = np.array([0, 1, -1, 0], dtype=complex) / math.sqrt(2)


def _projector(d: Direction, sign: int) -> np.ndarray:
    return (np.eye(2) + sign * (d.x * SX + d.y * SY + d.z * SZ)) / 2


def _born(a: Direction, b: Direction, A: int, B: int) -> float:
    op = np.kron(_projector(a, A), _projector(b, B))
    return float(np.real(SINGLET.conj() @ op @ SINGLET))


angles = st.floats(-180, 180, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(angles, angles)
def test_joint_probability_matches_born_rule(t1, t2):
    a, b = bloch_from_polarization(t1), bloch_from_polarization(t2)
    for A, B in itertools.product((1, -1), repeat=2):
        assert joint_probability(a, b, 1.0, (A, B)) == pytest.approx(_born(a, b, A, B), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(angles, angles, st.floats(0, 1))
def test_singlet_marginals_are_half(t1, t2, v):
    m = CorrelationModel.from_polarizations([t1], [t2], v)
    p = m.probabilities()
    np.testing.assert_allclose(p.sum(axis=3), 0.5, atol=1e-12)
    np.testing.assert_allclose(p.sum(axis=2), 0.5, atol=1e-12)


def test_polarization_angles_are_doubled():
    d = bloch_from_polarization(45.0)
    assert (d.x, d.y) == pytest.approx((0.0, 1.0), abs=1e-15)
    p = bloch_from_phase(math.pi / 2)
    assert (p.x, p.y) == pytest.approx((0.0, 1.0), abs=1e-15)


def test_direction_must_be_unit():
    with pytest.raises(ValueError):
        Direction(1.0, 1.0, 0.0)
    assert Direction.normalized([3, 0, 4]).z == pytest.approx(0.8)
    with pytest.raises(ValueError):
        Direction.normalized([0, 0, 0])
    with pytest.raises(ValueError):
        bloch_from_phase(math.nan)


def test_correlation_is_minus_v_dot():
    a, b = bloch_from_phase(0.3), bloch_from_phase(1.1)
    assert correlation(a, b, 0.8) == pytest.approx(-0.8 * math.cos(0.8))
    with pytest.raises(ValueError):
        correlation(a, b, 1.5)
    with pytest.raises(ValueError):
        joint_probability(a, b, 1.0, (1, 0))


def test_exp4_angles_reach_tsirelson():
    E = CorrelationModel.from_polarizations(EXP4_ALICE_DEG, EXP4_BOB_DEG).correlations()
    assert chsh_max(E) == pytest.approx(2 * math.sqrt(2), rel=1e-12)
    # the default sign placement does not suit these angles
    assert abs(chsh_value(E)) < 2 * math.sqrt(2) - 1e-6
    assert abs(chsh_value(E, (0, 0))) == pytest.approx(2 * math.sqrt(2))


def test_exp12_phases_reach_tsirelson():
    E = CorrelationModel.from_phases(EXP12_ALICE_PHI, EXP12_BOB_PHI).correlations()
    assert chsh_max(E) == pytest.approx(2 * math.sqrt(2), rel=1e-12)


def test_visibility_scales_chsh():
    E = CorrelationModel.from_polarizations(EXP4_ALICE_DEG, EXP4_BOB_DEG, 0.9).correlations()
    assert chsh_max(E) == pytest.approx(0.9 * 2 * math.sqrt(2))


def test_chsh_rejects_bad_input():
    with pytest.raises(ValueError):
        chsh_value(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        chsh_value([[1.5, 0], [0, 0]])


def test_deterministic_strategies_obey_chsh_bound():
    # 4 x 4 deterministic response pairs, each under all 16 sign patterns;
    # only odd-parity patterns are CHSH expressions
    responses = list(itertools.product((1, -1), repeat=2))
    count = 0
    for a, b, signs in itertools.product(responses, responses, itertools.product((1, -1), repeat=4)):
        count += 1
        E = np.array([[a[x] * b[y] for y in range(2)] for x in range(2)])
        s = np.array(signs).reshape(2, 2)
        value = float((s * E).sum())
        if np.prod(signs) == -1:
            assert abs(value) <= 2
        else:
            assert abs(value) <= 4
    assert count == 256


def test_detector_marginals_formula():
    w = detector_marginals(DetectorEfficiencies((0.9, 0.8, 0.7, 0.6)))
    assert w[0, 0] == pytest.approx(0.8 * S_PLUS + 0.6 * S_MINUS)
    assert w[1, 1] == pytest.approx(0.9 * S_MINUS + 0.7 * S_PLUS)
    # equal efficiencies give a uniform B at either X
    np.testing.assert_allclose(detector_marginals([1, 1, 1, 1]), np.full((2, 2), 0.5), atol=1e-15)


def test_detector_marginals_allow_dead_detector():
    w = detector_marginals([1.0, 0.0, 1.0, 1.0])
    assert w[0, 0] == pytest.approx(S_MINUS)
    with pytest.raises(ValueError):
        DetectorEfficiencies((1.0, 0.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        detector_marginals([1, 1, 1])


def test_dodecahedron_candidates():
    pts = dodecahedron_candidates()
    assert len(pts) == 32
    assert (pts[0].x, pts[0].y, pts[0].z) == pytest.approx((0, 0, 1), abs=1e-12)
    arr = np.array([np.asarray(p) for p in pts])
    # vertices and face centres each come in antipodal pairs
    for p in arr:
        assert np.min(np.linalg.norm(arr + p, axis=1)) < 1e-12


def test_model_rejects_bad_state():
    with pytest.raises(ValueError):
        CorrelationModel(1.0, (bloch_from_phase(0),), (bloch_from_phase(0),), state="phi+")
    with pytest.raises(ValueError):
        CorrelationModel(1.0, (), (bloch_from_phase(0),))
