import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from phasecalc import examples as ex
from phasecalc import metrics as mt
from phasecalc.quantize import GridSpec, MatrixOperator, weyl_symbol

S = np.random.default_rng(0).uniform(-3, 3, (60, 2))


def test_bundle_gains_match_closed_forms():
    for b in (ex.make_schrodinger("x**2/2", 0, 0.1), ex.make_halfwave("1", 0.5),
              ex.make_halfwave("1 + 0.5*sin(x)**2", 0.3), ex.make_vector_field("1 + 0.3*sin(x)", 0.25, 0.75)):
        assert b.gain_defect(S) <= 1e-10


def test_halfwave_gain_values():
    rho = np.array([[0.0, np.sqrt(3.0)]])  # <xi> = 2
    assert mt.gain(ex.make_halfwave("1", 1.0).metric_field(rho))[0] == pytest.approx(0.5)
    assert mt.gain(ex.make_halfwave("1", 0.0).metric_field(rho))[0] == pytest.approx(1.0)


def test_halfwave_gain_decreases_with_momentum():
    fld = ex.make_halfwave("1", 0.5).metric_field
    xi = np.linspace(0, 20, 41)
    h = mt.gain(fld(np.stack([np.zeros_like(xi), xi], axis=1)))
    assert np.all(np.diff(h) < 0)


def test_vector_field_symplectic_case():
    b = ex.make_vector_field("1 + 0.3*sin(x)", 0.5, 0.5)
    np.testing.assert_allclose(mt.gain(b.metric_field(S)), 1.0, rtol=1e-12)


@pytest.mark.parametrize("a1,a2", [(-0.1, 0.5), (0.6, 0.5), (0.5, 1.2), (0.2, 0.3), (1.0, 1.0)])
def test_vector_field_parameter_guard(a1, a2):
    with pytest.raises(ex.AssumptionError):
        ex.check_vector_field_parameters(a1, a2)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 0.99), st.floats(0, 1))
def test_vector_field_parameter_region(a1, t):
    a2 = max(a1, 1 - a1) + t * (1 - max(a1, 1 - a1))
    ex.check_vector_field_parameters(a1, a2)


def test_assumption_errors():
    with pytest.raises(ex.AssumptionError, match="affine"):
        ex.make_schrodinger("x**2/2", "x**2")
    with pytest.raises(ex.AssumptionError, match="x only"):
        ex.make_schrodinger("x**2/2", "xi")
    with pytest.raises(ex.AssumptionError, match="alpha"):
        ex.make_halfwave("1", 1.5)
    with pytest.raises(ex.AssumptionError, match="positive"):
        ex.make_halfwave("-1 - x**2", 0.5)
    ex.make_schrodinger("x**2/2", "0.5 + 2*x")


@pytest.mark.parametrize("build", [
    lambda: ex.make_schrodinger("x**2/2 + 0.1*x**4", "0.5*x", 0.1).model,
    lambda: ex.make_halfwave("1 + 0.5*sin(x)**2", 0.5).model,
    lambda: ex.make_vector_field("1 + 0.3*sin(x)", 0.5, 0.5).model,
])
def test_quantized_models_are_hermitian(build):
    m = build()
    assert ex.quantize_model(m, GridSpec.square(m.hbar, N=65)).hermiticity_defect() <= 1e-10


def test_vector_field_operator_is_hermitian_and_matches_symbol_form():
    g = GridSpec.square(0.1, N=65)
    m = ex.transport_model(f"1 + 0.3*sin(2*pi*x/{float(g.L)!r})", 0.1)
    P = ex.vector_field_operator(m.meta["X_fn"], m.meta["dX_fn"], g)
    assert P.hermiticity_defect() <= 1e-12
    # (hbar/i)(X D + X'/2) is the same operator
    D = ex.spectral_derivative_matrix(g)
    x = g.x_nodes
    alt = (g.hbar / 1j) * (m.meta["X_fn"](x)[:, None] * D + np.diag(m.meta["dX_fn"](x)) / 2)
    v = np.exp(2j * np.pi * np.outer(x, np.arange(-8, 9)) / g.L) @ np.random.default_rng(0).standard_normal(17)
    assert np.max(np.abs(P.entries @ v - alt @ v)) <= 1e-10


def test_upsilon_vanishes_for_constant_coefficients():
    for b in (ex.make_schrodinger("x**2/2", 0, 0.1), ex.make_halfwave("1", 0.5)):
        assert ex.assumption_audit(b, S)["Upsilon_hat"] <= 1e-8
    rep = ex.assumption_audit(ex.make_halfwave("1 + 0.5*sin(x)**2", 0.5), S)
    assert 0 < rep["Upsilon_hat"] < 1


def test_third_derivative_audit():
    harm = ex.assumption_audit(ex.make_schrodinger("x**2/2", 0, 0.1), S)
    assert harm["third_derivative_C"] == 0 and harm["Lambda_hat"] == 0
    quart = ex.make_schrodinger("x**2/2 + 0.1*x**4", 0, 0.1)
    assert quart.expected["third_derivative"](np.array([1.5])) == pytest.approx(2.4 * 1.5)
    assert quart.expected["V_derivative_sups"][4] == pytest.approx(2.4)
    assert ex.assumption_audit(quart, S)["third_derivative_C"] > 0


def test_halfwave_lyapunov_is_bounded_by_half():
    rep = ex.assumption_audit(ex.make_halfwave("1", 0.5), S)
    assert rep["Lambda_hat"] <= 0.5 + 1e-12


def test_laplacian_remainder_vanishes_for_constant_gamma():
    assert ex.halfwave_laplacian_symbol("2", 0.1)[1] == 0


@pytest.mark.parametrize("N", [129, 257])
def test_laplacian_symbol_matches_matrix(N):
    h = 0.1
    g = GridSpec.square(h, N=N)
    gamma = f"1 + 0.3*cos(2*pi*x/{float(g.period_x)!r})"
    sym, _ = ex.halfwave_laplacian_symbol(gamma, h)
    f = sp.lambdify(sp.symbols("x xi"), sym, "numpy")
    s = weyl_symbol(MatrixOperator(g, ex.halfwave_laplacian_matrix(gamma, g)))
    X, XI = g.mesh()
    band = np.abs(XI) < g.period_xi / 4
    assert np.max(np.abs(s.values - f(X, XI))[band]) <= 1e-10


def test_boxed_model_is_hbar_independent_for_fixed_side():
    g1, g2 = GridSpec.square(0.1, side=7.0), GridSpec.square(0.05, side=7.0)
    m1, m2 = ex.boxed_model("quartic", g1), ex.boxed_model("quartic", g2)
    pts = np.random.default_rng(1).uniform(-2, 2, (20, 2))
    # boxes differ only by the odd-N rounding of the side
    np.testing.assert_allclose(m1.p(pts), m2.p(pts), rtol=1e-4)
    with pytest.raises(KeyError):
        ex.boxed_model("sextic", g1)
