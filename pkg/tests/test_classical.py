import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from phasecalc import classical as cl
from phasecalc import examples as ex
from phasecalc import metrics as mt
from phasecalc.quantize import GridSpec, SymbolGrid

I = mt.constant_field(np.eye(2))


def test_vector_field_examples():
    np.testing.assert_allclose(cl.hamiltonian_vector_field(ex.harmonic(), np.array([1.0, 0.0])), [0.0, -1.0])
    tr = ex.transport_model("1")
    np.testing.assert_allclose(cl.hamiltonian_vector_field(tr, np.array([0.3, -2.0])), [1.0, 0.0])
    hw = ex.make_halfwave("1", 0.5).model
    xi0 = 1.7
    np.testing.assert_allclose(cl.hamiltonian_vector_field(hw, np.array([0.0, xi0])),
                               [xi0 / np.sqrt(1 + xi0**2), 0.0], atol=1e-14)


def test_harmonic_flow_is_rotation():
    fr = cl.flow(ex.harmonic(), [1.0, 0.0], np.pi / 2)
    np.testing.assert_allclose(fr.endpoint, [0.0, -1.0], atol=1e-10)
    np.testing.assert_allclose(fr.jacobian, [[0.0, 1.0], [-1.0, 0.0]], atol=1e-10)


def test_inverted_oscillator_flow():
    fr = cl.flow(ex.inverted_oscillator(), [1.0, 1.0], 1.0)
    M = expm(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(fr.jacobian, M, rtol=1e-10)
    np.testing.assert_allclose(fr.endpoint, [np.e, np.e], rtol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3))
def test_quartic_flow_is_symplectic(x, xi, t):
    fr = cl.flow(ex.quartic(), [x, xi], t)
    assert fr.symplectic_defect <= 1e-8
    assert fr.energy_drift <= 1e-8 * max(1.0, ex.quartic().p(np.array([x, xi])))


def test_transport_flow_matches_characteristics():
    tr = ex.transport_model("1 + 0.3*sin(x)")
    fr = cl.flow(tr, [0.4, 1.0], 0.9)
    sol = solve_ivp(lambda t, y: 1 + 0.3 * np.sin(y), (0, 0.9), [0.4], method="DOP853", rtol=1e-13, atol=1e-13)
    assert fr.endpoint[0] == pytest.approx(sol.y[0, -1], abs=1e-10)


def test_pullback_identity_and_harmonic_rotation():
    g = GridSpec.square(0.1, N=257)
    a = SymbolGrid.from_function(g, lambda X, XI: np.exp(-((X - 0.5) ** 2 + XI**2) / 0.5))
    assert np.array_equal(cl.pullback_symbol(ex.harmonic(0.1), a, 0.0).values, a.values)
    t = 0.8
    b = cl.pullback_symbol(ex.harmonic(0.1), a, t)
    # a o phi^t: phi^t rotates (x, xi) clockwise by t
    X, XI = g.mesh()
    xs, ks = X * np.cos(t) + XI * np.sin(t), -X * np.sin(t) + XI * np.cos(t)
    exact = np.exp(-((xs - 0.5) ** 2 + ks**2) / 0.5)
    assert np.max(np.abs(b.values - exact)) <= 1e-8
    assert b.l2() == pytest.approx(a.l2(), rel=1e-8)


def test_quartic_pullback_against_nodewise_ode():
    # the energy band of the numerical support must stay inside the box
    g = GridSpec.square(0.1, N=257)
    m = ex.quartic(0.1)
    a = SymbolGrid.from_function(g, lambda X, XI: np.exp(-(X**2 + XI**2) / 0.1))
    b = cl.pullback_symbol(m, a, 0.7)
    X, XI = g.mesh()
    rng = np.random.default_rng(1)
    idx = rng.choice(X.size, 40, replace=False)
    for k in idx:
        fr = cl.flow(m, [X.flat[k], XI.flat[k]], 0.7)
        exact = np.exp(-(fr.endpoint[0] ** 2 + fr.endpoint[1] ** 2) / 0.1)
        assert abs(b.values.flat[k] - exact) <= 1e-6


def test_pullback_records_aliasing_warning():
    g = GridSpec.square(0.1, N=51)
    a = SymbolGrid.from_function(g, lambda X, XI: np.exp(-(X**2 + XI**2)))
    b = cl.pullback_symbol(ex.inverted_oscillator(), a, 2.0, mask=np.ones((g.N, g.N), bool))
    assert "aliasing_warning" in b.meta


def test_lyapunov_examples():
    S = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    assert cl.lyapunov_bound(ex.inverted_oscillator(), I, S)[0] == pytest.approx(1.0, rel=1e-12)
    assert cl.lyapunov_bound(ex.harmonic(), I, S)[0] == pytest.approx(0.0, abs=1e-12)
    vf = ex.make_vector_field("1 + 0.3*sin(x)", 0.5, 0.5)
    lam, upper = cl.lyapunov_bound(vf.model, vf.metric_field, S)
    assert np.isfinite(lam) and lam <= upper + 1e-12


def test_degenerate_metric_raises():
    bad = mt.MetricField("bad", lambda rho: np.zeros(rho.shape[:-1] + (2, 2)))
    with pytest.raises(mt.MetricError):
        cl.lyapunov_bound(ex.harmonic(), bad, np.zeros((1, 2)))


def test_expansion_audit():
    S = np.random.default_rng(3).uniform(-1, 1, (4, 2))
    au = cl.flow_expansion_audit(ex.harmonic(), I, S, [1.0])
    assert au["passed"] and max(r["measured"] for r in au["rows"]) == pytest.approx(1.0, abs=1e-9)
    au = cl.flow_expansion_audit(ex.inverted_oscillator(), I, S, [2.0])
    # tight: |d phi^2| = e^2
    assert au["passed"]
    assert max(r["measured"] for r in au["rows"]) == pytest.approx(np.exp(2), rel=1e-8)
    au = cl.flow_expansion_audit(ex.quartic(), I, S, [0.5, 1.5, 3.0])
    assert au["passed"]


def test_expansion_audit_rows_name_point_and_time():
    au = cl.flow_expansion_audit(ex.quartic(), I, [[0.5, 0.2]], [1.0, 3.0])
    assert {"rho_x", "rho_xi", "t", "measured", "bound", "margin"} <= set(au["rows"][0])
    assert [r["t"] for r in au["rows"]] == [1.0, 3.0]


def test_derivative_growth():
    r = cl.derivative_growth_audit(ex.harmonic(), I, [0.5, 0.2], 1.0, 2)
    assert r["measured"] <= 1e-5 and r["bound"] > 0
    assert cl.derivative_growth_audit(ex.quartic(), I, [0.5, 0.2], 1.0, 2)["status"] == "pass"
    tr = ex.transport_model("1 + 0.3*sin(x)")
    assert cl.derivative_growth_audit(tr, I, [0.5, 0.2], 1.0, 2)["status"] in ("pass", "inconclusive")


def test_lipschitz_audit():
    r = cl.flow_lipschitz_audit(ex.harmonic(), I, [0.3, 0.1], 0.1, 1.0, 0.0, 1.0, 0.0, 1.0)
    assert r["max_ratio"] == pytest.approx(1.0, rel=1e-8)
    r = cl.flow_lipschitz_audit(ex.inverted_oscillator(), I, [0.3, 0.1], 0.1, 1.0, 1.0, 1.0, 0.0, 1.0)
    assert r["passed"] and r["max_ratio"] <= np.e
    q = ex.quartic()
    S = np.random.default_rng(0).uniform(-1.5, 1.5, (200, 2))
    lam, _ = cl.lyapunov_bound(q, I, S)
    Cp = cl.cp_constant(q, I, S)
    r = cl.flow_lipschitz_audit(q, I, [0.3, 0.1], 0.05, 0.5, lam, 1.0, Cp, 1.0, r_g=1.0)
    assert r["passed"]
    with pytest.raises(ValueError, match="time window"):
        cl.flow_lipschitz_audit(q, I, [0.3, 0.1], 0.9, 3.0, lam, 1.0, Cp, 1.0, r_g=1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=7, max_size=7), st.floats(0.05, 1.0))
def test_field_seminorm_identities(v, s):
    A = np.array([[v[0], v[1]], [0.0, v[2]]])
    G = A @ A.T + 0.1 * np.eye(2)
    G = G * (s / float(mt.gain(G)))
    grad = np.array(v[3:5])
    hess = np.array([[v[5], v[6]], [v[6], v[4]]])
    q = cl.hamiltonian_field_seminorms(grad, hess, G)
    assert q["H_a_g"] == pytest.approx(q["da_gsigma"], rel=1e-8, abs=1e-12)
    assert q["H_a_g"] <= q["h_da_g"] * (1 + 1e-8) + 1e-12
    assert q["dH_a_g"] <= q["h_d2a_g"] * (1 + 1e-8) + 1e-12


def test_norm_duality():
    fr = cl.flow(ex.quartic(), [0.4, -0.3], 1.2)
    G = np.diag([2.0, 0.5])
    assert cl.norm_duality_defect(fr.jacobian, G, G) <= 1e-9
