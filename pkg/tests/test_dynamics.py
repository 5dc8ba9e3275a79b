import math

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from conftest import space
from qsl.exceptions import HypothesisViolatedError, InvalidStateError
from qsl.phase_space import cap_bump, constant, fibonacci_grid, height, linear, monomial, rotation_generator, time_profile
from qsl.qstate import DensityOperator, random_state
from qsl.dynamics import (
    QuantumHamiltonianPath,
    egorov_residual,
    gamma_comparison,
    propagate,
    quantum_energy,
    run_dislocation,
    semiclassical_constants,
    speed_limit_slack,
    uhlmann_bound,
)
from qsl.quantizer import quantize_density, toeplitz


def random_hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2


def test_autonomous_propagator_matches_expm(rng):
    h = random_hermitian(rng, 6)
    path = QuantumHamiltonianPath.constant(h, 0.25)
    u = propagate(path, 0.0, 1.0, 3).unitary
    assert np.allclose(u, sla.expm(-4j * h), atol=1e-10)


def test_commuting_path_uses_integrated_profile(rng):
    h = random_hermitian(rng, 5)
    path = QuantumHamiltonianPath(lambda t: 3 * t * t * h, 0.5, commuting=(h, lambda t: 3 * t * t))
    u = propagate(path, 0.0, 1.0, 400).unitary
    # integral of 3t^2 over [0, 1] is 1; midpoint rule error ~ 1/(4 n^2)
    assert np.allclose(u, sla.expm(-2j * h), atol=1e-5)


def test_time_dependent_path_against_ode_solver(rng):
    a, b = random_hermitian(rng, 4), random_hermitian(rng, 4)
    gen = lambda t: a * math.cos(3 * t) + t * b  # noqa: E731
    hbar = 0.7
    sol = solve_ivp(lambda t, y: (-1j / hbar * gen(t) @ y.reshape(4, 4)).ravel(), (0, 1), np.eye(4, dtype=complex).ravel(), rtol=1e-11, atol=1e-12)
    ref = sol.y[:, -1].reshape(4, 4)
    path = QuantumHamiltonianPath(gen, hbar)
    errs = [np.max(np.abs(propagate(path, 0, 1, n).unitary - ref)) for n in (32, 64, 128)]
    assert errs[2] < 1e-3
    assert 3.0 < errs[0] / errs[1] < 5.0  # second order


def test_snapshots_start_at_identity(rng):
    path = QuantumHamiltonianPath(lambda t: t * random_hermitian(np.random.default_rng(1), 3), 1.0)
    p = propagate(path, 0.0, 1.0, 8, snapshots=True)
    assert len(p.snapshots) == 9
    assert np.allclose(p.snapshots[0], np.eye(3))
    assert np.allclose(p.snapshots[-1], p.unitary)


def test_non_hermitian_generator_is_rejected():
    path = QuantumHamiltonianPath.constant(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)
    with pytest.raises(InvalidStateError):
        propagate(path)
    with pytest.raises(ValueError):
        propagate(QuantumHamiltonianPath.constant(np.eye(2), 1.0), steps=0)


def test_quantum_energy_constant_and_ramp():
    s = space(16)
    f = height()
    assert quantum_energy(QuantumHamiltonianPath.from_observable(s, f)) == pytest.approx(16 / 18)
    ramp = QuantumHamiltonianPath.from_observable(s, time_profile(f, lambda t: 1 - t))
    assert ramp.commuting is not None
    assert quantum_energy(ramp) == pytest.approx(0.5 * 16 / 18, rel=1e-12)
    general = QuantumHamiltonianPath(lambda t: (1 - t) * toeplitz(s, f), 1 / 16)
    assert quantum_energy(general) == pytest.approx(0.5 * 16 / 18, rel=1e-10)


def test_speed_limit_slack_formula():
    assert speed_limit_slack(1.0, 1.0, 0.1) == pytest.approx(1.0)
    assert speed_limit_slack(0.2, 0.0, 0.1) == pytest.approx(0.2 - math.pi / 2 * 0.1)
    assert speed_limit_slack(0.0, 1.5, 0.1) == 0.0


def test_uhlmann_equality_case():
    hbar = 0.1
    f = (math.pi / 2) * hbar * np.array([[0.0, -1j], [1j, 0.0]])
    u = uhlmann_bound(QuantumHamiltonianPath.constant(f, hbar), DensityOperator.pure([1.0, 0.0]))
    assert u.fidelity_a < 1e-12
    assert u.integral_I == pytest.approx(math.pi / 2 * hbar, abs=1e-12)
    assert u.ell_q == pytest.approx(math.pi / 2 * hbar, abs=1e-12)
    assert u.holds and u.below_energy


def test_uhlmann_chain_on_random_runs(rng):
    for i in range(20):
        dim = int(rng.integers(2, 9))
        hbar = 0.3
        a, b = random_hermitian(rng, dim) * 0.2, random_hermitian(rng, dim) * 0.2
        path = QuantumHamiltonianPath(lambda t, a=a, b=b: a + t * b, hbar)
        u = uhlmann_bound(path, random_state(rng, dim, 1 + i % dim), 64)
        assert u.holds and u.below_energy
        assert u.ell_q - u.arccos_term >= -1e-9


def test_run_dislocation_zero_hamiltonian():
    s = space(16)
    theta = quantize_density(s, cap_bump((1, 0, 0), 1.0, 4))
    rep = run_dislocation(s, theta, constant(0.0), steps=4)
    assert rep.fidelity_a == pytest.approx(1.0, abs=1e-9)
    assert rep.ell_q == 0.0 and rep.gamma_q == pytest.approx(1.0)
    assert rep.slacks["qsl"] == pytest.approx(0.0, abs=1e-9)
    row = rep.csv_row("x", 3)
    assert row["k"] == 16 and row["seed"] == 3 and row["gamma_cl"] == ""


def test_run_dislocation_half_turn_moves_cap():
    fids = []
    for k in (16, 64):
        s = space(k)
        theta = quantize_density(s, cap_bump((1, 0, 0), 0.8, 4))
        rep = run_dislocation(s, theta, rotation_generator(math.pi), g=cap_bump((1, 0, 0), 0.8, 4))
        assert rep.slacks["qsl"] >= 0
        assert rep.gamma_cl == pytest.approx(0.0, abs=1e-12)
        fids.append(rep.fidelity_a)
    assert fids[1] < fids[0] < 0.5
    with pytest.raises(InvalidStateError):
        run_dislocation(space(16), DensityOperator.maximally_mixed(3), height())


def test_egorov_residual_is_first_order():
    f, g = rotation_generator(0.7, (0.0, 1.0, 0.0)), monomial((0, 0, 2))
    res = [egorov_residual(space(k), f, g).residual for k in (32, 64, 128)]
    assert res[0] > res[1] > res[2]
    assert 1.6 < res[0] / res[1] < 2.5 and 1.6 < res[1] / res[2] < 2.5


def test_semiclassical_constants_terms():
    g = cap_bump((1, 0, 0), 1.0, 4)
    consts = semiclassical_constants(g, constant(0.0), 1.0, 1.0, 1.0, fibonacci_grid(600), time_steps=2, flow_steps=8)
    assert consts.b == max(consts.terms)
    assert consts.c == 0.0
    assert consts.terms[3] == 0.0  # no bracket term without a Hamiltonian
    assert consts.terms[0] == pytest.approx(consts.terms[1])


def test_gamma_comparison_hypotheses():
    s = space(16)
    grid = fibonacci_grid(600)
    with pytest.raises(HypothesisViolatedError):
        gamma_comparison(s, linear((1, 0, 0), 2.0), height(), 1.0, 1.0, 1.0, grid=grid)
    with pytest.raises(HypothesisViolatedError):
        gamma_comparison(s, cap_bump((1, 0, 0), 1.0, 4), height(), 1e3, 1e3, 1e3, flow_steps=8, grid=grid)
