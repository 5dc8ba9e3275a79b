import numpy as np
import pytest
import scipy.linalg as sla

from conftest import space
from qsl.exceptions import (
    DimensionMismatchError,
    InsufficientSamplesError,
    InvalidStateError,
    UndefinedOverlapError,
)
from qsl.phase_space import atoms_state, cap_bump, constant, linear
from qsl.qstate import (
    DensityOperator,
    fidelity,
    gamma_cl,
    gamma_q,
    microsupport_probe,
    op_norm,
    random_state,
    schatten,
)
from qsl.quantizer import quantize_classical_state


def sqrtm_fidelity(a, b):
    return float(np.sum(sla.svdvals(sla.sqrtm(a) @ sla.sqrtm(b))))


def test_fidelity_of_commuting_states():
    p = np.array([0.5, 0.3, 0.2, 0.0])
    q = np.array([0.1, 0.1, 0.4, 0.4])
    got = fidelity(DensityOperator(np.diag(p)), DensityOperator(np.diag(q)))
    assert got == pytest.approx(np.sum(np.sqrt(p * q)), abs=1e-12)


def test_fidelity_of_pure_states_is_overlap(rng):
    u = rng.normal(size=6) + 1j * rng.normal(size=6)
    v = rng.normal(size=6) + 1j * rng.normal(size=6)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    assert fidelity(DensityOperator.pure(u), DensityOperator.pure(v)) == pytest.approx(abs(np.vdot(u, v)), abs=1e-12)


def test_fidelity_matches_matrix_square_root_oracle(rng):
    for _ in range(5):
        a = random_state(rng, 7)
        b = random_state(rng, 7)
        assert fidelity(a, b) == pytest.approx(sqrtm_fidelity(a.matrix, b.matrix), abs=1e-9)
        plain = DensityOperator(a.matrix)
        assert fidelity(plain, b) == pytest.approx(fidelity(a, b), abs=1e-9)


def test_fidelity_unitary_invariance_and_self(rng):
    a = random_state(rng, 5, rank=2)
    b = random_state(rng, 5)
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5)))
    assert fidelity(a.conjugate(q), b.conjugate(q)) == pytest.approx(fidelity(a, b), abs=1e-12)
    assert fidelity(a, a) == pytest.approx(1.0, abs=1e-10)


def test_fidelity_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        fidelity(DensityOperator.maximally_mixed(2), DensityOperator.maximally_mixed(3))


def test_invalid_states_are_rejected():
    with pytest.raises(InvalidStateError):
        DensityOperator(np.diag([0.7, 0.7]))
    with pytest.raises(InvalidStateError):
        DensityOperator(np.diag([1.5, -0.5]))
    with pytest.raises(InvalidStateError):
        DensityOperator(np.array([[0.5, 1.0], [0.0, 0.5]]))
    with pytest.raises(ValueError):
        random_state(np.random.default_rng(0), 3, rank=4)


def test_schatten_norms_of_diagonal():
    n = schatten(np.diag([3.0, -4.0, 0.0]))
    assert (n.op_norm, n.trace_norm, n.hilbert_schmidt) == pytest.approx((4.0, 7.0, 5.0))
    assert op_norm(np.array([[0.0, 2.0], [0.0, 0.0]])) == pytest.approx(2.0)


def test_gamma_q_extremes():
    e0 = DensityOperator(np.diag([1.0, 0.0]))
    e1 = DensityOperator(np.diag([0.0, 1.0]))
    assert gamma_q(e0, e1) == 0.0
    assert gamma_q(e0, e0) == pytest.approx(1.0)
    mixed = DensityOperator.maximally_mixed(4)
    assert gamma_q(mixed, mixed) == pytest.approx(1.0)
    with pytest.raises(UndefinedOverlapError):
        gamma_q(np.zeros((2, 2)), e0.matrix)


def test_gamma_cl_extremes():
    g = cap_bump((1, 0, 0), 0.5)
    h = cap_bump((-1, 0, 0), 0.5)
    assert gamma_cl(g, h) == 0.0
    assert gamma_cl(g, g) == pytest.approx(1.0)
    assert gamma_cl(linear((0, 0, 1)), constant(1.0)) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(UndefinedOverlapError):
        gamma_cl(constant(0.0), g)


def test_microsupport_probe_coherent_state_outside_region():
    # point at geodesic distance 0.3 from the support, so the masses stay above the noise floor
    x = np.array([[np.cos(0.8), np.sin(0.8), 0.0]])
    region = cap_bump((1, 0, 0), 0.5)
    ks = (16, 32, 64, 128, 256)
    fam = [(1 / k, quantize_classical_state(space(k), atoms_state(x, [1.0]))) for k in ks]
    probe = microsupport_probe(fam, region, spaces={k: space(k) for k in ks})
    assert probe.rapid_decay
    assert len(probe.csv_rows()) == 5


def test_microsupport_probe_coherent_state_inside_region():
    x = np.array([[0.0, 0.0, -1.0]])
    region = cap_bump((0, 0, -1), 1.0)
    ks = (16, 32, 64, 128, 256)
    fam = [(1 / k, quantize_classical_state(space(k), atoms_state(x, [1.0]))) for k in ks]
    probe = microsupport_probe(fam, region, spaces={k: space(k) for k in ks})
    assert not probe.rapid_decay
    assert abs(probe.fit.slope) < 0.5


def test_microsupport_probe_sample_requirements():
    theta = DensityOperator.maximally_mixed(17)
    with pytest.raises(InsufficientSamplesError):
        microsupport_probe([(1 / 16, theta)] * 3, constant(1.0))
    fam = [(1 / k, DensityOperator.maximally_mixed(k + 1)) for k in (16, 20, 24, 28)]
    with pytest.raises(InsufficientSamplesError):
        microsupport_probe(fam, constant(1.0))


def test_density_container_roundtrip(tmp_path, rng):
    a = random_state(rng, 9)
    a.save(tmp_path / "rho.qsl", 8)
    b, k = DensityOperator.load(tmp_path / "rho.qsl")
    assert k == 8
    assert np.array_equal(a.matrix, b.matrix)
