import math

import numpy as np
import pytest
from scipy.special import comb

from conftest import space
from qsl.harness.fitting import fit_decay_order
from qsl.phase_space import (
    Observable,
    atoms_state,
    bracket_observable,
    cap_bump,
    constant,
    fibonacci_grid,
    geodesic_distance,
    height,
    linear,
    monomial,
    poisson_bracket,
    superlevel_samples,
)
from qsl.quantizer import (
    BerezinToeplitzQuantizer,
    berezin_transform,
    build_space,
    coherent_vector,
    commutator_residual,
    husimi_density,
    husimi_pairing,
    kernel_overlap,
    product_rule,
    quantize_classical_state,
    quantize_density,
    read_operator,
    scaled_trace,
    toeplitz,
    write_operator,
    write_operator_csv,
)
from qsl.exceptions import CapacityError


def basis_modulus_oracle(k, x):
    """|b_m(x)|^2 from the binomial closed form."""
    half = np.arccos(np.clip(x[:, 2], -1, 1)) / 2.0
    m = np.arange(k + 1)
    return (k + 1) / (2 * math.pi) * comb(k, m)[None, :] * np.cos(half)[:, None] ** (2 * (k - m)) * np.sin(half)[:, None] ** (2 * m)


def test_dimension_and_hbar():
    s = space(16)
    assert s.dim == 17 and s.hbar == pytest.approx(1 / 16)
    assert 2 * math.pi * s.hbar * s.rawnsley == pytest.approx(1 + s.hbar, abs=1e-14)


def test_capacity_limit():
    with pytest.raises(CapacityError):
        build_space(2048)


def test_basis_moduli_match_binomial_oracle(rng):
    x = rng.normal(size=(50, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    vals = np.abs(space(16).basis_eval(x, "auto")) ** 2
    assert np.allclose(vals, basis_modulus_oracle(16, x), atol=1e-12)


def test_gram_matrix_on_double_resolution_rule():
    k = 64
    rule = product_rule(2 * (k + 2), 4 * (k + 2))
    b = space(k).basis_eval(rule.nodes, "auto")
    gram = (b.conj().T * rule.weights) @ b
    assert np.max(np.abs(gram - np.eye(k + 1))) <= 1e-10


def test_rawnsley_constant_at_random_points(rng):
    x = rng.normal(size=(100, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    s = space(16)
    r = np.sum(np.abs(s.kernel_vectors(x)) ** 2, axis=1)
    assert np.max(np.abs(r - 17 / (2 * math.pi))) <= 1e-9


def test_coherent_vector_reproduces_sections():
    s = space(12)
    x = np.array([0.3, -0.5, 0.81])
    x /= np.linalg.norm(x)
    data = coherent_vector(s, x)
    # <b_m, e_x> = b_m(x)
    assert np.allclose(np.conj(data.kernel_vector), s.basis_eval(x)[0], atol=1e-13)
    assert data.rawnsley == pytest.approx(s.rawnsley)
    assert np.trace(data.projector).real == pytest.approx(1.0)


def test_kernel_overlap_closed_form(rng):
    k = 40
    s = space(k)
    x = rng.normal(size=(30, 3))
    y = rng.normal(size=(30, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    ov = kernel_overlap(s, x, y)
    expected = s.rawnsley * np.cos(geodesic_distance(x, y) / 2.0) ** k
    assert np.allclose(ov, expected, atol=1e-12)
    assert np.allclose(ov, kernel_overlap(s, y, x))
    assert np.allclose(kernel_overlap(s, x, x), s.rawnsley)
    assert np.max(kernel_overlap(s, x, -x)) < 1e-12


def test_kernel_overlap_gaussian_envelope():
    k = 256
    s = space(k)
    d = np.linspace(0.01, 0.25, 12)
    x = np.tile([[1.0, 0.0, 0.0]], (len(d), 1))
    y = np.stack([np.cos(d), np.sin(d), np.zeros_like(d)], axis=1)
    logs = np.log(kernel_overlap(s, x, y) / s.rawnsley)
    slope, _ = np.polyfit(d**2, logs, 1)
    assert slope == pytest.approx(-k / 8, rel=0.01)  # log cos(d/2)^k ~ -k d^2 / 8


def test_disjoint_cap_overlap_decays_fast():
    ks = (32, 64, 128, 256, 512)
    xs = superlevel_samples(cap_bump((1, 0, 0), 0.5), 0.0, fibonacci_grid(4000))
    ys = superlevel_samples(cap_bump((0, 1, 0), 0.5), 0.0, fibonacci_grid(4000))
    worst = []
    for k in ks:
        s = space(k)
        worst.append(max(np.max(kernel_overlap(s, np.repeat(xs, len(ys), 0), np.tile(ys, (len(xs), 1))) / s.rawnsley), 0.0))
    fit = fit_decay_order([(1 / k, w) for k, w in zip(ks, worst)], 4.0)
    assert fit.slope >= 4


def test_toeplitz_identity_and_height_diagonal():
    k = 20
    s = space(k)
    assert np.max(np.abs(toeplitz(s, constant(1.0)) - np.eye(k + 1))) <= 1e-12
    t = toeplitz(s, height())
    m = np.arange(k + 1)
    assert np.allclose(t, np.diag((k - 2 * m) / (k + 2)), atol=1e-13)


def test_toeplitz_positive_and_hermitian():
    s = space(48)
    t = toeplitz(s, cap_bump((0.2, 0.5, 0.8), 0.9, 3))
    assert np.allclose(t, t.conj().T)
    assert np.linalg.eigvalsh(t).min() >= -1e-10


def test_quantized_atom_and_uniform_states():
    s = space(24)
    x = np.array([[0.0, 0.6, 0.8]])
    rho = quantize_classical_state(s, atoms_state(x, [1.0]))
    proj = coherent_vector(s, x[0], "auto").projector
    assert np.allclose(rho.matrix, proj, atol=1e-12)
    uniform = quantize_density(s, constant(1.0))
    assert np.max(np.abs(uniform.matrix - np.eye(25) / 25)) <= 1e-9


def test_random_mixture_has_unit_trace(rng):
    s = space(16)
    pts = rng.normal(size=(10, 3))
    p = rng.random(10)
    rho = quantize_classical_state(s, atoms_state(pts, p / p.sum()))
    assert np.trace(rho.matrix).real == pytest.approx(1.0, abs=1e-12)


def test_berezin_constant_and_duality(rng):
    s = space(32)
    x = fibonacci_grid(40)
    assert np.allclose(berezin_transform(s, constant(2.5), x), 2.5, atol=1e-12)
    f = monomial((1, 0, 2)) + linear((0.1, 0.2, 0.3))
    pts = rng.normal(size=(5, 3))
    w = rng.random(5)
    w /= w.sum()
    tau = atoms_state(pts, w)
    lhs = husimi_pairing(s, quantize_classical_state(s, tau), f)
    rhs = float(np.dot(w, berezin_transform(s, f, tau.points)))
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_berezin_slope_for_height_squared():
    ks = (32, 64, 128, 256, 512)
    f = monomial((0, 0, 2))
    grid = fibonacci_grid(2000)
    res = [np.max(np.abs(berezin_transform(space(k), f, grid) - f(grid))) for k in ks]
    fit = fit_decay_order([(1 / k, r) for k, r in zip(ks, res)], 0.8)
    assert 0.8 <= fit.slope <= 1.2 and fit.r2 >= 0.98


def test_husimi_pairing_identities():
    s = space(20)
    x = np.array([0.6, 0.0, 0.8])
    rho = quantize_classical_state(s, atoms_state([x], [1.0]))
    assert husimi_pairing(s, rho, constant(1.0)) == pytest.approx(1.0, abs=1e-12)
    f = monomial((1, 1, 0)) + height()
    assert husimi_pairing(s, rho, f) == pytest.approx(berezin_transform(s, f, [x])[0], abs=1e-12)
    dens = husimi_density(s, rho, np.array([x]))
    assert dens[0] == pytest.approx(1.0, abs=1e-12)


def test_husimi_pairing_of_quantized_density_converges():
    u = cap_bump((0, 0, 1), 1.2, 4)
    f = monomial((1, 0, 1)) + height()
    rule = product_rule(200, 400)
    nu = np.real(u(rule.nodes))
    target = float(np.dot(rule.weights, f(rule.nodes) * nu) / np.dot(rule.weights, nu))
    ks = (32, 64, 128, 256)
    err = [abs(husimi_pairing(space(k), quantize_density(space(k), u), f) - target) for k in ks]
    fit = fit_decay_order([(1 / k, e) for k, e in zip(ks, err)], 0.8)
    assert 0.8 <= fit.slope <= 1.3


def test_commutator_sign_canary():
    # fixes the orientation of the Poisson bracket: with the opposite sign the
    # defect would approach 2 ||T{f,g}|| instead of vanishing
    f, g = linear((1, 0, 0)), monomial((0, 1, 1))
    res = [commutator_residual(space(k), f, g) for k in (64, 128, 256)]
    assert res[0] > res[1] > res[2]
    assert res[2] / res[0] < 0.3
    s = space(128)
    a, b = toeplitz(s, f), toeplitz(s, g)
    flipped = (1j / s.hbar) * (a @ b - b @ a) - toeplitz(s, bracket_observable(f, g))
    assert np.linalg.norm(flipped, 2) > 1.0


def test_bracket_observable_matches_pointwise_bracket():
    f, g = monomial((1, 1, 0)), height()
    x = fibonacci_grid(200)
    assert np.allclose(bracket_observable(f, g)(x), poisson_bracket(f, g, x))


def test_scaled_trace_identity_for_polynomials():
    s = space(30)
    f = monomial((2, 0, 0)) + monomial((0, 1, 1))
    rule = product_rule(60, 120)
    integral = float(np.dot(rule.weights, f(rule.nodes)))
    assert scaled_trace(s, f) == pytest.approx((1 + s.hbar) * integral, abs=1e-12)


def test_container_roundtrip(tmp_path, rng):
    m = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    path = tmp_path / "op.qsl"
    write_operator(path, m, 4, "toeplitz")
    back, k, kind = read_operator(path)
    assert k == 4 and kind == "toeplitz"
    assert np.array_equal(back, m)
    raw = path.read_bytes()
    (tmp_path / "bad.qsl").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_operator(tmp_path / "bad.qsl")
    (tmp_path / "short.qsl").write_bytes(raw[:-16])
    with pytest.raises(ValueError):
        read_operator(tmp_path / "short.qsl")
    write_operator_csv(tmp_path / "op.csv", m)
    table = np.loadtxt(tmp_path / "op.csv", delimiter=",", skiprows=1)
    assert table.shape == (25, 4)
    assert table[7, 2] == pytest.approx(m[1, 2].real)


def test_estimator_front_end():
    est = BerezinToeplitzQuantizer(k=10).fit()
    ops = est.transform([height(), constant(1.0)])
    assert ops.shape == (2, 11, 11)
    assert np.allclose(ops[1], np.eye(11))
    b = est.berezin(ops[0], fibonacci_grid(10))
    assert b.shape == (1, 10)
    assert est.get_params() == {"k": 10, "oversample": 1.5}


def test_observable_with_nonfinite_values_is_rejected():
    bad = Observable(lambda x: np.full(x.shape[0], np.nan), name="nan")
    with pytest.raises(ValueError):
        toeplitz(space(8), bad)
