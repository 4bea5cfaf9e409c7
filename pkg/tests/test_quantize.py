import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from phasecalc import examples as ex
from phasecalc.experiments import random_bandlimited
from phasecalc.quantize import (C_GRID, GridError, GridSpec, MatrixOperator, SymbolGrid, hs_isometry_check,
                                weyl_quantize, weyl_symbol, wigner_transform)


def plateau_1d(z, period, frac=0.7, width=0.06):
    z0, d = frac * period / 2, width * period / 2
    return (erf((z0 - z) / d) + erf((z0 + z) / d)) / 2


def test_even_N_rejected():
    with pytest.raises(GridError, match="odd"):
        GridSpec(L=10.0, N=64, hbar=0.1)


def test_square_box():
    g = GridSpec.square(0.1, side=7.0)
    assert g.period_x == pytest.approx(g.period_xi)
    assert g.period_x >= 7.0 and g.N % 2 == 1
    assert g.area == pytest.approx(np.pi * g.hbar / g.N)


def test_one_quantizes_to_identity_and_back():
    g = GridSpec.square(0.1, N=257)
    M = weyl_quantize(SymbolGrid.constant(g))
    assert np.max(np.abs(M.entries - np.eye(g.N))) <= 1e-14
    s = weyl_symbol(MatrixOperator(g, np.eye(g.N)))
    assert np.max(np.abs(s.values - 1)) <= 1e-13


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([31, 65, 129]))
def test_roundtrip_symbol(seed, N):
    g = GridSpec.square(0.1, N=N)
    a = random_bandlimited(g, np.random.default_rng(seed), modes=5)
    assert np.max(np.abs(weyl_symbol(weyl_quantize(a)).values - a.values)) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_roundtrip_hermitian_matrix(seed):
    rng = np.random.default_rng(seed)
    g = GridSpec.square(0.2, N=65)
    A = rng.standard_normal((g.N, g.N)) + 1j * rng.standard_normal((g.N, g.N))
    H = MatrixOperator(g, A + A.conj().T)
    s = weyl_symbol(H)
    assert np.max(np.abs(s.values.imag)) <= 1e-12
    assert np.max(np.abs(weyl_quantize(s).entries - H.entries)) <= 1e-12


def test_grid_mismatch():
    a = SymbolGrid.constant(GridSpec.square(0.1, N=31))
    b = SymbolGrid.constant(GridSpec.square(0.1, N=33))
    with pytest.raises(GridError):
        hs_isometry_check(a, b)


def test_multiplication_by_x():
    g = GridSpec.square(0.1, N=129)
    X, _ = g.mesh()
    A = weyl_quantize(SymbolGrid(g, X * plateau_1d(X, g.period_x))).entries
    xn = g.x_nodes
    inner = np.abs(xn) < g.period_x / 6
    assert np.max(np.abs(np.diag(A)[inner] - xn[inner])) <= 1e-10
    assert np.max(np.abs(A - np.diag(np.diag(A)))) <= 1e-10


def test_xi_is_the_momentum_operator():
    g = GridSpec.square(0.1, N=129)
    _, XI = g.mesh()
    B = weyl_quantize(SymbolGrid(g, XI * plateau_1d(XI, g.period_xi))).entries
    D = ex.spectral_derivative_matrix(g)
    rng = np.random.default_rng(0)
    ks = np.arange(-15, 16)
    v = np.exp(2j * np.pi * np.outer(g.x_nodes, ks) / g.L) @ (rng.standard_normal(31) + 1j * rng.standard_normal(31))
    assert np.max(np.abs(B @ v + 1j * g.hbar * (D @ v))) <= 1e-8


def _gauss_state(g, x0=0.0):
    x = g.x_nodes
    dx = x[1] - x[0]
    return np.pi**-0.25 * np.exp(-((x - x0) ** 2) / (2 * g.hbar)) * np.sqrt(dx) * g.hbar**-0.25


def test_wigner_of_gaussian():
    g = GridSpec.square(1.0, N=129)
    W = wigner_transform(g, _gauss_state(g))
    X, XI = g.mesh()
    inner = g.interior()
    ratio = W.values[inner] / np.exp(-X[inner] ** 2 - XI[inner] ** 2)
    # continuum value: 2 exp(-x^2 - xi^2)
    assert np.max(np.abs(ratio - 2.0)) / 2.0 <= 1e-6


def test_wigner_trace_identity():
    g = GridSpec.square(0.1, N=101)
    rng = np.random.default_rng(3)
    u = rng.standard_normal(g.N) + 1j * rng.standard_normal(g.N)
    W = wigner_transform(g, u)
    total = np.sum(W.values) * g.area / (2 * np.pi * g.hbar)
    assert total == pytest.approx(np.vdot(u, u).real, rel=1e-10)


def test_wigner_of_two_deltas_sits_at_midpoint():
    g = GridSpec.square(1.0, N=65)
    u, v = np.zeros(g.N), np.zeros(g.N)
    i, j = 20, 30
    u[i], v[j] = 1.0, 1.0
    W = wigner_transform(g, u, v)
    rows = np.nonzero(np.abs(W.values).sum(axis=1) > 1e-12)[0]
    assert len(rows) == 1
    mid = (g.x_nodes[i] + g.x_nodes[j]) / 2
    assert g.xs[rows[0]] == pytest.approx(mid) or abs(abs(g.xs[rows[0]] - mid) - g.period_x) < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_wigner_pairing(seed):
    rng = np.random.default_rng(seed)
    g = GridSpec.square(0.2, N=41)
    a = random_bandlimited(g, rng, 4)
    u = rng.standard_normal(g.N) + 1j * rng.standard_normal(g.N)
    v = rng.standard_normal(g.N) + 1j * rng.standard_normal(g.N)
    lhs = np.vdot(v, weyl_quantize(a).apply(u))
    rhs = np.sum(a.values * wigner_transform(g, u, v).values) / (2 * g.N)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_isometry_constant_and_random_pairs():
    g = GridSpec.square(0.1, N=65)
    one = SymbolGrid.constant(g)
    assert one.inner(one) == pytest.approx(C_GRID * g.N)
    assert hs_isometry_check(one, one) <= 1e-10
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert hs_isometry_check(random_bandlimited(g, rng), random_bandlimited(g, rng)) <= 1e-10


def test_isometry_on_state_overlaps():
    g = GridSpec.square(1.0, N=65)
    u, v = _gauss_state(g, 0.0), _gauss_state(g, 0.7)
    Wu, Wv = wigner_transform(g, u), wigner_transform(g, v)
    # <W_u, W_v> is proportional to |<u, v>|^2 with the grid constant
    ratio = Wu.inner(Wv) / abs(np.vdot(u, v)) ** 2
    ratio0 = Wu.inner(Wu) / abs(np.vdot(u, u)) ** 2
    assert ratio == pytest.approx(ratio0, rel=1e-10)


def test_symbol_serialization(tmp_path):
    g = GridSpec.square(0.1, N=31)
    a = random_bandlimited(g, np.random.default_rng(1))
    a.save(tmp_path / "a.bin")
    b = SymbolGrid.load(tmp_path / "a.bin")
    assert np.array_equal(a.values, b.values) and b.grid.same_as(g)
