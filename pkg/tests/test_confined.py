import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasecalc import confined as cf
from phasecalc import examples as ex
from phasecalc import metrics as mt
from phasecalc.config import ExperimentConfig
from phasecalc.experiments import Gaussian, _partition_setup
from phasecalc.quantize import GridSpec, SymbolGrid


def test_bump_support():
    s = np.array([-1.5, -1.0, 0.0, 0.5, 0.9, 1.0])
    b = cf.bump(s)
    assert b[0] == b[1] == b[-1] == 0
    assert b[2] == pytest.approx(np.exp(-cf.BUMP_BETA))
    assert np.all(b[2:5] > 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 3), st.floats(-0.5, 0.5), st.floats(0.2, 3), st.floats(0.2, 1.5), st.integers(0, 2**31 - 1))
def test_distance_to_ball_against_boundary_search(a, b, c, r, seed):
    G0 = np.array([[a, b * np.sqrt(a * c)], [b * np.sqrt(a * c), c]])
    Gs = mt.sigma_dual(G0, 0.1)
    center = np.array([0.2, -0.1])
    pts = np.random.default_rng(seed).uniform(-3, 3, (6, 2))
    d = cf.distance_to_ball(pts, center, r, G0, Gs)
    th = np.linspace(0, 2 * np.pi, 40001)
    bd = center[:, None] + r * np.linalg.solve(np.linalg.cholesky(G0).T, np.stack([np.cos(th), np.sin(th)]))
    for p, dd in zip(pts, d):
        if (p - center) @ G0 @ (p - center) <= r * r:
            assert dd == 0
        else:
            D = bd - p[:, None]
            brute = np.sqrt(np.einsum("in,ij,jn->n", D, Gs, D)).min()
            assert dd == pytest.approx(brute, rel=1e-4)


@pytest.fixture(scope="module")
def family():
    h = 0.1
    g = GridSpec.square(h, side=6.36)
    return cf.build_partition(ex.semiclassical_sc_field(h), 0.75, g)


def test_partition_sums_to_one(family):
    assert family.sum_defect() <= 1e-12
    for v in family.values:
        assert v.values.min() >= 0 and v.values.max() <= 1 + 1e-14


def test_translation_invariance_for_constant_metric(family):
    # neighbouring centres of a constant-metric lattice carry translates of one function
    f0, f1 = family.function(4), family.function(5)
    shift = family.centers[5] - family.centers[4]
    u = np.linspace(-0.2, 0.2, 11)
    U, V = np.meshgrid(u, u, indexing="ij")
    np.testing.assert_allclose(f1(U + shift[0], V + shift[1]), f0(U, V), atol=1e-14)


def test_lattice_that_does_not_fit_is_rejected():
    g = GridSpec.square(0.1, N=21)
    with pytest.raises(cf.LatticeError):
        cf.build_partition(ex.semiclassical_sc_field(0.1), 0.75, g)


@pytest.mark.parametrize("G", [np.eye(2), np.diag([4.0, 0.25])])
def test_partition_scaling_exponents(G):
    sc = cf.partition_scaling(mt.constant_field(G))
    for l, f in sc["fits"].items():
        assert f.slope == pytest.approx(-l - 2, abs=0.05)


def test_seminorm_weight_grows_off_the_ball():
    h = 0.1
    g = GridSpec.square(h, side=6.36)
    G0 = ex.semiclassical_sc_field(h)(np.zeros((1, 2)))[0]
    gauss = SymbolGrid.from_function(g, Gaussian(0, 0, 0.5))
    vals = [cf.confinement_seminorm(gauss, [0, 0], 0.3, G0, 1, l) for l in (0, 2, 4)]
    assert vals[0] < vals[1] < vals[2]


def test_seminorm_of_confined_function_ignores_weight(family):
    G0 = family.metric_field(family.centers[4:5])[0]
    psi = family.values[4]
    vals = [cf.confinement_seminorm(psi, family.centers[4], family.radius, G0, 1, l) for l in (0, 2, 4)]
    assert vals[0] == pytest.approx(vals[1]) == pytest.approx(vals[2])


def test_seminorm_rejects_high_order(family):
    with pytest.raises(ValueError):
        cf.confinement_seminorm(family.values[0], [0, 0], 0.75, np.eye(2), 5, 0)


def test_quadratic_transport_is_exact(family):
    # rotations preserve the identity metric: the evolved seminorm equals the initial one
    law = cf.ConfinementRadiusLaw(family.radius, 0.0)
    au = cf.evolve_confined_audit(ex.harmonic(0.1), family, 0.5, law, offset=0, l_max=1, k_max=1)
    assert all(abs(r.C_local - 1) <= 0.02 for r in au.rows)


def test_window_guards(family):
    law = cf.ConfinementRadiusLaw(0.75, 1.0, r_g=1.0)
    with pytest.raises(cf.WindowError, match="r_g"):
        law.check(1.0)
    law = cf.ConfinementRadiusLaw(0.75, 0.0)
    with pytest.raises(cf.WindowError, match="Ehrenfest"):
        cf.evolve_confined_audit(ex.harmonic(0.1), family, 1.0, law, T_E=1.0)


def test_radius_law():
    law = cf.ConfinementRadiusLaw(0.5, 0.3, 0.1, 2.0, 1.5, 0.01)
    assert law.rate == pytest.approx(2 * 0.4 + 8 * 1.5 * 0.01)
    assert law.r_of_t(-1.0) == pytest.approx(0.5 * np.exp(law.rate))


def test_family_law_frozen_values():
    _, _, fam, tau, law, T_E = _partition_setup(ExperimentConfig("partition-audit", "audit", hbar=0.05))
    assert fam.sum_defect() == 0.0 and len(fam.centers) == 9
    # frozen from the sampled cloud of the default audit
    assert law.Lambda == pytest.approx(0.8419, abs=1e-4)
    assert law.Cp == pytest.approx(2.843, abs=1e-3)
    assert T_E == pytest.approx(1.7792, abs=1e-4)
    assert tau <= T_E / 2
