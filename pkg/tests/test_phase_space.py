import math

import numpy as np
import pytest

from qsl.exceptions import ChartOverflowError, InvalidRegionError, InvalidStateError
from qsl.phase_space import (
    EquatorialChart,
    Observable,
    atoms_state,
    cap_bump,
    chart_bump,
    chart_translation,
    ck_norms,
    constant,
    density_state,
    displacement_check,
    evolve_point,
    fibonacci_grid,
    geodesic_distance,
    hamiltonian_vector_field,
    height,
    hofer_length,
    inverse_flow,
    linear,
    monomial,
    pair_norm,
    pair_norm_13,
    poisson_bracket,
    rescale,
    rotation_generator,
    spherical_polygon_area,
    sup_norm,
    superlevel_samples,
    time_one_map,
    time_profile,
)
from qsl.quantizer import product_rule

PROBE = fibonacci_grid(500)


def rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def test_fibonacci_grid_is_on_sphere():
    g = fibonacci_grid(1000)
    assert g.shape == (1000, 3)
    assert np.allclose(np.linalg.norm(g, axis=1), 1.0)


def test_constant_has_zero_field():
    assert np.allclose(hamiltonian_vector_field(constant(3.0), PROBE), 0.0)


def test_height_field_on_equator_is_tangent_to_latitude():
    phi = np.linspace(0, 2 * math.pi, 17, endpoint=False)
    x = np.stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)], axis=1)
    v = hamiltonian_vector_field(height(), x)
    # x cross e3 = (x2, -x1, 0): clockwise seen from the north pole, speed 2
    expected = 2.0 * np.stack([x[:, 1], -x[:, 0], np.zeros_like(phi)], axis=1)
    assert np.allclose(v, expected, atol=1e-12)
    assert np.allclose(np.linalg.norm(v, axis=1), 2.0)


def test_field_is_tangent_and_linear():
    f = monomial((1, 2, 0)) + linear((0.2, -0.4, 0.9))
    v = hamiltonian_vector_field(f, PROBE)
    assert np.max(np.abs(np.sum(v * PROBE, axis=1))) < 1e-12
    assert np.allclose(hamiltonian_vector_field(-f, PROBE), -v, atol=1e-12)


def test_finite_difference_gradient_matches_analytic():
    f = monomial((1, 1, 1))
    fd = Observable(lambda x: f(x), name="fd")
    assert np.allclose(fd.grad(PROBE), f.grad(PROBE), atol=1e-7)


def test_bracket_x1_x2_symbolic():
    # {x1, x2} = -2 x . (e1 x e2) = -2 x3
    vals = poisson_bracket(linear((1, 0, 0)), linear((0, 1, 0)), PROBE)
    assert np.allclose(vals, -2.0 * PROBE[:, 2], atol=1e-12)


def test_bracket_antisymmetry_and_functions_of_height():
    f = monomial((0, 1, 2))
    assert np.allclose(poisson_bracket(f, f, PROBE), 0.0, atol=1e-12)
    g = monomial((0, 0, 3)) + height()
    assert np.allclose(poisson_bracket(height(), g, PROBE), 0.0, atol=1e-12)


def test_zero_flow_is_identity():
    res = evolve_point(constant(0.0), PROBE[:20], 0.0, 1.0, 16)
    assert np.allclose(res.endpoints, PROBE[:20])


@pytest.mark.parametrize("c", [0.3, -1.1, 2.0])
def test_height_flow_is_rotation(c):
    x = PROBE[:50]
    end = evolve_point(height(c), x, 0.0, 1.0, 256).endpoints
    expected = x @ rot_z(-2.0 * c).T
    assert np.allclose(end, expected, atol=1e-9)


def test_forward_backward_returns():
    f = time_profile(monomial((1, 0, 1)) + height(0.4), lambda t: 1.0 + t)
    x = PROBE[:40]
    y = time_one_map(f, x, 256)
    back = inverse_flow(f, y, 1.0, 256)
    assert np.max(geodesic_distance(back, x)) < 1e-8


def test_rotation_generator_half_turn():
    x = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    y = time_one_map(rotation_generator(math.pi), x)
    assert np.allclose(y, -x, atol=1e-9)


def test_hofer_constant_and_ramp():
    assert hofer_length(constant(-2.5)) == pytest.approx(2.5)
    g = monomial((1, 1, 0))
    ramp = time_profile(g, lambda t: 1.0 - t)
    assert hofer_length(ramp) == pytest.approx(sup_norm(g) / 2.0, rel=1e-9)


def test_sup_norm_refines_to_max():
    assert sup_norm(monomial((1, 1, 0))) == pytest.approx(0.5, abs=1e-9)


def test_ck_norms_constant_and_height():
    n = ck_norms(constant(-0.7), 3)
    assert n[0] == pytest.approx(0.7)
    assert max(n[1], n[2], n[3]) < 1e-8
    grid = fibonacci_grid(4000)
    h = ck_norms(height(), 1, grid)
    # analytic: |x3| and |grad x3| = sqrt(1 - x3^2), maximised over the same grid
    assert h[0] == pytest.approx(np.max(np.abs(grid[:, 2])), abs=1e-4)
    assert h[1] == pytest.approx(np.max(np.sqrt(1 - grid[:, 2] ** 2)), abs=1e-4)


def test_pair_norm_symmetric_formula():
    n = ck_norms(monomial((1, 0, 1)), 3)
    assert pair_norm_13(n, n) == pytest.approx(2 * n[1] * n[3] + n[2] ** 2)
    assert pair_norm(n, n, 2) > 0


def test_displacement_oracles():
    cap = superlevel_samples(cap_bump((1, 0, 0), 0.6), 0.0)
    assert displacement_check(rotation_generator(math.pi), cap).displaced
    stay = displacement_check(constant(0.0), cap)
    assert not stay.displaced and stay.min_separation == 0.0
    polar = superlevel_samples(cap_bump((0, 0, 1), 0.4), 0.0)
    assert not displacement_check(rotation_generator(math.pi), polar).displaced
    with pytest.raises(InvalidRegionError):
        displacement_check(height(), np.zeros((0, 3)))


def test_chart_is_equal_area_and_invertible():
    chart = EquatorialChart()
    c = np.array([[0.1, -0.3], [0.5, 0.2], [0.0, 0.0]])
    assert np.allclose(chart.from_sphere(chart.to_sphere(c)), c, atol=1e-12)
    assert chart.disk_area_defect(0.3, (0.1, 0.2)) < 1e-4
    with pytest.raises(ChartOverflowError):
        EquatorialChart(radius=1.0)


def test_spherical_polygon_area_octant():
    tri = np.eye(3)
    assert spherical_polygon_area(tri) == pytest.approx(math.pi / 2)


def test_chart_translation_moves_plateau_points():
    chart = EquatorialChart()
    f = chart_translation(chart, (0.2, 0.0), inner=0.6, outer=0.9)
    c = np.array([[0.0, 0.0], [-0.1, 0.1]])
    moved = chart.from_sphere(time_one_map(f, chart.to_sphere(c)))
    assert np.allclose(moved, c + [0.2, 0.0], atol=1e-8)


def test_rescale_identity_and_scaling():
    chart = EquatorialChart()
    f = chart_bump(chart, (0.1, 0.0), 0.3, order=4)
    assert rescale(f, chart, 1.0) is f
    s = 0.4
    assert hofer_length(rescale(f, chart, s)) == pytest.approx(s * s * hofer_length(f), rel=1e-6)
    rule = product_rule(60, 120)
    tau = density_state(f, rule.nodes, rule.weights)
    small = rescale(tau, chart, s)
    assert float(np.sum(small.masses)) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ChartOverflowError):
        rescale(height(), chart, 0.5)


def test_classical_state_validation():
    with pytest.raises(InvalidStateError):
        atoms_state([[1, 0, 0], [0, 1, 0]], [0.7, 0.7])
    with pytest.raises(InvalidStateError):
        atoms_state([[1, 0, 0]], [-1.0])
    a = atoms_state([[2, 0, 0]], [1.0])
    assert np.allclose(a.points, [[1, 0, 0]])
