import csv
import io
import math

import numpy as np
from hypothesis import assume, given, strategies as st

from conftest import space
from qsl.harness.config import parse_config
from qsl.harness.fitting import fit_decay_order
from qsl.harness.suite import csv_text
from qsl.phase_space import fibonacci_grid, geodesic_distance, linear, monomial, poisson_bracket, rotation_generator, time_one_map
from qsl.qstate import DensityOperator, fidelity, gamma_q, random_state
from qsl.quantizer import berezin_transform, toeplitz
from qsl.smallscale import lattice_sum

PROBE = fibonacci_grid(200)
coef = st.floats(-2.0, 2.0, allow_nan=False)
vec3 = st.tuples(coef, coef, coef)
seeds = st.integers(0, 2**32 - 1)


def unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    assume(n > 1e-3)
    return v / n


def lin(v):
    """v . x for an unnormalized v (zero allowed)."""
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    return linear(v, n) if n > 0 else linear((0.0, 0.0, 1.0), 0.0)


@given(vec3, vec3, vec3)
def test_bracket_is_antisymmetric_and_leibniz(a, b, c):
    f, g, h = lin(a), lin(b), monomial((1, 0, 1)) + lin(c)
    fg = poisson_bracket(f, g, PROBE)
    assert np.allclose(fg, -poisson_bracket(g, f, PROBE), atol=1e-12)
    # {f, g h} = {f, g} h + g {f, h}
    lhs = poisson_bracket(f, g * h, PROBE)
    rhs = fg * h(PROBE) + g(PROBE) * poisson_bracket(f, h, PROBE)
    assert np.allclose(lhs, rhs, atol=1e-10)


@given(vec3, vec3, st.floats(-3, 3))
def test_toeplitz_is_real_linear_and_hermitian(a, b, t):
    s = space(12)
    f, g = lin(a), monomial((0, 1, 1)) + lin(b)
    tf, tg = toeplitz(s, f), toeplitz(s, g)
    assert np.allclose(toeplitz(s, f + t * g), tf + t * tg, atol=1e-12)
    assert np.allclose(tf, tf.conj().T, atol=1e-13)


@given(vec3, coef)
def test_toeplitz_of_square_is_positive(a, c):
    s = space(16)
    f = lin(a) + c
    sq = f * f
    w = np.linalg.eigvalsh(toeplitz(s, sq))
    assert w.min() >= -1e-10
    # Berezin transform is a contraction in the sup norm
    assert np.max(np.abs(berezin_transform(s, sq, PROBE))) <= np.max(np.abs(sq(fibonacci_grid(4000)))) + 1e-9


@given(seeds, st.integers(2, 10), st.integers(1, 10), st.integers(1, 10))
def test_fidelity_and_overlap_ranges(seed, dim, ra, rb):
    rng = np.random.default_rng(seed)
    a = random_state(rng, dim, min(ra, dim))
    b = random_state(rng, dim, min(rb, dim))
    fab = fidelity(a, b)
    assert 0.0 <= fab <= 1.0 + 1e-12
    assert math.isclose(fab, fidelity(b, a), abs_tol=1e-10)
    g = gamma_q(a, b)
    assert 0.0 <= g <= 1.0
    assert math.isclose(g, gamma_q(b, a), abs_tol=1e-10)
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    assert math.isclose(fidelity(a.conjugate(q), b.conjugate(q)), fab, abs_tol=1e-9)


@given(seeds, st.integers(2, 8))
def test_fidelity_factor_path_matches_plain(seed, dim):
    rng = np.random.default_rng(seed)
    a = random_state(rng, dim, 1)
    b = random_state(rng, dim)
    assert math.isclose(fidelity(a, b), fidelity(DensityOperator(a.matrix), DensityOperator(b.matrix)), abs_tol=1e-7)


@given(vec3, st.floats(-math.pi, math.pi))
def test_rotation_flow_is_an_isometry(axis, angle):
    n = unit(axis)
    x = PROBE[:12]
    y = time_one_map(rotation_generator(angle, tuple(n)), x, 64)
    assert np.allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)
    d0 = geodesic_distance(x[:-1], x[1:])
    d1 = geodesic_distance(y[:-1], y[1:])
    assert np.allclose(d0, d1, atol=1e-8)
    # the axis is fixed
    assert np.allclose(time_one_map(rotation_generator(angle, tuple(n)), n[None, :], 16), n, atol=1e-12)


@given(st.floats(0.2, 4.0), st.floats(-5.0, 5.0))
def test_fit_recovers_random_power_laws(order, logc):
    h = np.array([1 / 32, 1 / 64, 1 / 128, 1 / 256])
    fit = fit_decay_order(zip(h, math.exp(logc) * h**order), order)
    assert math.isclose(fit.slope, order, abs_tol=1e-9)
    assert math.isclose(fit.intercept, logc, abs_tol=1e-7)


@given(st.floats(0.1, 2.0), st.floats(0.1, 10.0), st.floats(1.01, 3.0))
def test_lattice_sum_decreases_in_lambda(s, lam, factor):
    assert lattice_sum(s, lam * factor) <= lattice_sum(s, lam)
    assert lattice_sum(s, lam) >= 0


@given(st.lists(st.integers(2, 4096), min_size=1, max_size=8, unique=True), seeds)
def test_config_k_lists_roundtrip(ks, seed):
    ks = sorted(ks)
    text = f"[suite]\nschema = 1\nexperiments = speed-limit\nseed = {seed}\nk = {', '.join(map(str, ks))}\n"
    cfg = parse_config(text)
    assert cfg.experiments[0].k == tuple(ks)
    assert cfg.experiments[0].seed == seed


@given(st.lists(st.tuples(st.text(st.characters(blacklist_categories=("Cs", "Cc")), max_size=8), st.floats(allow_nan=False), st.integers()), max_size=6))
def test_csv_text_roundtrips_floats(rows):
    text = csv_text(("name", "value", "n"), rows)
    back = list(csv.reader(io.StringIO(text, newline="")))
    assert back[0] == ["name", "value", "n"]
    for (name, value, n), row in zip(rows, back[1:]):
        assert float(row[1]) == value and int(row[2]) == n
