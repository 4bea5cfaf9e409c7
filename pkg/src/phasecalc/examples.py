"""Model Hamiltonians and the three application families as ready-made bundles.

All models live in one space dimension and in semiclassical coordinates
``(x, xi)`` with ``xi`` the semiclassical momentum. Partial derivatives up to
order four are generated symbolically, so brackets, flows and the defect
operator use exact derivatives of ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from . import classical as cl
from . import metrics as mt
from .quantize import GridSpec, MatrixOperator, SymbolGrid, weyl_quantize, position_operator_diag

X_SYM, XI_SYM = sp.symbols("x xi", real=True)
MAX_ORDER = 4
_MODULES = [{"erf": __import__("scipy.special", fromlist=["erf"]).erf}, "numpy"]


class AssumptionError(ValueError):
    """A bundle's structural assumption fails on the sampled box."""


def _lam(expr, args):
    f = sp.lambdify(args, expr, modules=_MODULES)
    const = not (expr.free_symbols & set(args))
    if const:
        c = float(expr)
        return lambda *a: np.full(np.broadcast(*a).shape, c)
    return f


def _parse(e):
    if isinstance(e, sp.Expr):
        return e
    if isinstance(e, (int, float)):
        return sp.Float(e)
    return sp.sympify(e, locals={"x": X_SYM, "xi": XI_SYM})


def sympy_model(expr, name: str, hbar: float = 1.0, kinetic=None, potential=None, **meta) -> cl.HamiltonianModel:
    """Model with all partials ``d_x^i d_xi^j p`` (``i + j <= 4``) lambdified."""
    expr = _parse(expr)
    table = {}
    for n in range(MAX_ORDER + 1):
        for j in range(n + 1):
            i = n - j
            table[(i, j)] = _lam(sp.diff(expr, X_SYM, i, XI_SYM, j), (X_SYM, XI_SYM))

    def partial(nx, nxi, x, xi):
        if (nx, nxi) not in table:
            raise ValueError(f"derivative order {nx + nxi} exceeds {MAX_ORDER}")
        return table[(nx, nxi)](x, xi)

    kin = _lam(_parse(kinetic), (XI_SYM,)) if kinetic is not None else None
    pot = _lam(_parse(potential), (X_SYM,)) if potential is not None else None
    return cl.HamiltonianModel(name=name, partial=partial, hbar=hbar, kinetic=kin, potential=pot,
                               meta={"expr": str(expr), **meta})


# -- plateau window ----------------------------------------------------------------

@dataclass(frozen=True)
class Window:
    """Smooth plateau ``W(z) = (erf((z0 - z)/delta) + erf((z0 + z)/delta)) / 2``.

    A function of ``z`` (``x`` or ``xi``) is windowed as ``c - W (c - f)``: it
    equals ``f`` for ``|z| < z0 - 6 delta`` and the constant ``c`` near the seam
    of the symbol box, so its periodic extension is smooth.
    """

    x0: float
    delta: float
    c: float
    var: str = "x"

    @classmethod
    def for_grid(cls, grid: GridSpec, f, frac: float = 0.8, width: float = 0.03, var: str = "x") -> "Window":
        half = (grid.period_x if var == "x" else grid.period_xi) / 2
        x0, delta = frac * half, width * half
        sym = X_SYM if var == "x" else XI_SYM
        zs = np.linspace(-x0 - 3 * delta, x0 + 3 * delta, 2001)
        c = float(np.max(_lam(_parse(f), (sym,))(zs)))
        return cls(x0, delta, c, var)

    @property
    def exact_radius(self) -> float:
        return self.x0 - 6 * self.delta

    def apply(self, f):
        z = X_SYM if self.var == "x" else XI_SYM
        W = (sp.erf((self.x0 - z) / self.delta) + sp.erf((self.x0 + z) / self.delta)) / 2
        return self.c - W * (self.c - _parse(f))

    def to_json(self) -> dict:
        return {"x0": self.x0, "delta": self.delta, "c": self.c, "var": self.var}


# -- basic models ------------------------------------------------------------------

def schrodinger_model(V, hbar: float = 1.0, beta=None, window: Window | None = None,
                      name: str = "schrodinger", kinetic_window: Window | None = None) -> cl.HamiltonianModel:
    """``p = (xi - beta(x))^2 / 2 + V(x)`` with optional windowed ``V`` and kinetic term."""
    V = _parse(V)
    Vw = window.apply(V) if window is not None else V
    if beta is None or _parse(beta) == 0:
        kin = XI_SYM**2 / 2
        if kinetic_window is not None:
            kin = kinetic_window.apply(kin)
        m = sympy_model(kin + Vw, name, hbar, kinetic=kin, potential=Vw, V=str(V))
    else:
        if kinetic_window is not None:
            raise AssumptionError("a kinetic window is only supported without vector potential")
        b = _parse(beta)
        m = sympy_model((XI_SYM - b) ** 2 / 2 + Vw, name, hbar, V=str(V), beta=str(b))
    if window is not None:
        m.meta["window"] = window.to_json()
    if kinetic_window is not None:
        m.meta["kinetic_window"] = kinetic_window.to_json()
    return m


POTENTIALS = {
    "harmonic": "x**2/2",
    "quartic": "x**2/2 + {eps}*x**4",
    "double_well": "-x**2/2 + {eps}*x**4",
}


def boxed_model(name: str, grid: GridSpec, eps: float = 0.1, frac: float = 0.75,
                width: float = 0.08) -> cl.HamiltonianModel:
    """Schrodinger model with both ``V`` and ``xi^2/2`` windowed to the symbol box.

    The windows scale with the box, so for a fixed box side the model is the
    same function of ``(x, xi)`` for every ``hbar``.
    """
    if name not in POTENTIALS:
        raise KeyError(f"unknown potential {name!r}; choose from {sorted(POTENTIALS)}")
    V = POTENTIALS[name].format(eps=eps)
    wx = Window.for_grid(grid, V, frac, width, "x")
    wk = Window.for_grid(grid, "xi**2/2", frac, width, "xi")
    m = schrodinger_model(V, grid.hbar, window=wx, name=name, kinetic_window=wk)
    m.meta["eps"] = eps
    return m


def harmonic(hbar: float = 1.0, window: Window | None = None) -> cl.HamiltonianModel:
    return schrodinger_model(X_SYM**2 / 2, hbar, window=window, name="harmonic")


def quartic(hbar: float = 1.0, eps: float = 0.1, window: Window | None = None) -> cl.HamiltonianModel:
    """``V = x^2/2 + eps x^4``."""
    return schrodinger_model(X_SYM**2 / 2 + eps * X_SYM**4, hbar, window=window, name="quartic")


def inverted_oscillator() -> cl.HamiltonianModel:
    return sympy_model((XI_SYM**2 - X_SYM**2) / 2, "inverted", kinetic=XI_SYM**2 / 2, potential=-X_SYM**2 / 2)


def double_well(hbar: float = 1.0, eps: float = 0.05, window: Window | None = None) -> cl.HamiltonianModel:
    """Inverted oscillator with quartic confinement, ``V = -x^2/2 + eps x^4``."""
    return schrodinger_model(-X_SYM**2 / 2 + eps * X_SYM**4, hbar, window=window, name="double_well")


def transport_model(X, hbar: float = 1.0) -> cl.HamiltonianModel:
    """``p = xi X(x)``."""
    Xe = _parse(X)
    m = sympy_model(XI_SYM * Xe, "transport", hbar, X=str(Xe))
    m.meta["X_fn"] = _lam(Xe, (X_SYM,))
    m.meta["dX_fn"] = _lam(sp.diff(Xe, X_SYM), (X_SYM,))
    return m


# -- quantization of models --------------------------------------------------------

def quantize_model(model: cl.HamiltonianModel, grid: GridSpec) -> MatrixOperator:
    """Weyl quantization of ``p`` on the grid.

    Separable models are assembled as ``F^-1 diag(K(xi_k)) F + diag(V)``, which is
    exactly the quantization of the grid symbol ``K(xi) + V(x)``.
    """
    if model.separable:
        N = grid.N
        k = grid.index
        F = np.exp(-2j * np.pi * np.outer(k, k) / N) / np.sqrt(N)
        K = F.conj().T @ (model.kinetic(grid.xis)[:, None] * F)
        return MatrixOperator(grid, K + np.diag(position_operator_diag(model.potential, grid)))
    return weyl_quantize(SymbolGrid.from_function(grid, lambda x, xi: model.partial(0, 0, x, xi)))


def vector_field_operator(X: Callable, dX: Callable, grid: GridSpec) -> MatrixOperator:
    """``P = (hbar / 2i) (X D + D X)`` with the spectral derivative ``D``.

    In the continuum this equals ``(hbar/i)(X d_x + X'/2)``; the symmetric
    form is exactly Hermitian on the grid. ``dX`` is kept for the
    non-symmetric cross-check.
    """
    D = spectral_derivative_matrix(grid)
    Xd = X(grid.x_nodes)[:, None] * D
    P = (grid.hbar / 2j) * (Xd + D * X(grid.x_nodes)[None, :])
    return MatrixOperator(grid, P)


def spectral_derivative_matrix(grid: GridSpec) -> np.ndarray:
    N = grid.N
    k = grid.index
    F = np.exp(-2j * np.pi * np.outer(k, k) / N) / np.sqrt(N)
    return F.conj().T @ ((1j * k * 2 * np.pi / grid.L)[:, None] * F)


# -- bundles -----------------------------------------------------------------------

@dataclass
class ExampleBundle:
    model: cl.HamiltonianModel
    metric_field: mt.MetricField
    expected: dict = field(default_factory=dict)
    provenance: str = ""

    def gain_defect(self, samples) -> float:
        """Largest relative deviation of the computed gain from the closed form."""
        S = np.atleast_2d(samples)
        h = mt.gain(self.metric_field(S), self.metric_field.hbar)
        ref = self.expected["gain"](S)
        return float(np.max(np.abs(h - ref) / np.abs(ref)))


def semiclassical_sc_field(hbar: float) -> mt.MetricField:
    """``g_hbar`` written in semiclassical coordinates: the identity, with ``sigma / hbar``."""
    f = mt.constant_field(np.eye(2), hbar=hbar)
    f.kind = "semiclassical"
    f.params = {"hbar": hbar, "coordinates": "semiclassical"}
    return f


def make_schrodinger(V, beta=0, hbar: float = 0.1, window: Window | None = None,
                     box: float = 3.0, n_check: int = 201) -> ExampleBundle:
    """Schrodinger bundle ``p = (xi - beta)^2/2 + V`` with ``g = g_hbar``.

    ``beta`` must be affine; derivative bounds of ``V`` are sampled on ``|x| <= box``.
    """
    b = _parse(beta)
    if b.free_symbols - {X_SYM}:
        raise AssumptionError("the vector potential beta may depend on x only")
    d2b = _lam(sp.diff(b, X_SYM, 2), (X_SYM,))
    xs = np.linspace(-box, box, n_check)
    if np.max(np.abs(d2b(xs))) > 1e-10:
        raise AssumptionError("the vector potential beta must be an affine vector field")
    Vp = _parse(V)
    derivs = {k: np.max(np.abs(_lam(sp.diff(Vp, X_SYM, k), (X_SYM,))(xs))) for k in range(2, MAX_ORDER + 1)}
    model = schrodinger_model(Vp, hbar, beta=b, window=window)
    fieldm = semiclassical_sc_field(hbar)
    expected = {"gain": lambda S: np.full(np.shape(S)[0], hbar), "Upsilon": 0.0,
                "V_derivative_sups": derivs, "third_derivative": _lam(sp.diff(Vp, X_SYM, 3), (X_SYM,))}
    return ExampleBundle(model, fieldm, expected, "schrodinger")


def make_halfwave(gamma="1", alpha: float = 0.5, box: float = 5.0, n_check: int = 201) -> ExampleBundle:
    """Half-wave bundle ``p = <xi>_{gamma^-1}`` with the metric family indexed by ``alpha``."""
    if not 0 <= alpha <= 1:
        raise AssumptionError("alpha must lie in [0, 1]")
    gam = _parse(gamma)
    gfn = _lam(gam, (X_SYM,))
    xs = np.linspace(-box, box, n_check)
    gv = gfn(xs)
    if np.any(gv <= 0):
        raise AssumptionError("gamma must be positive")
    C_gamma = float(np.sqrt(gv.max() / gv.min()))
    p = sp.sqrt(1 + XI_SYM**2 / gam)
    model = sympy_model(p, "halfwave", 1.0, gamma=str(gam), alpha=alpha)
    fieldm = mt.halfwave_field(alpha, gfn)
    pfn = _lam(p, (X_SYM, XI_SYM))
    expected = {"gain": lambda S: pfn(S[:, 0], S[:, 1]) ** (-alpha),
                "theta": lambda S: pfn(S[:, 0], S[:, 1]) ** ((1 + alpha) / 2) * np.sqrt(gfn(S[:, 0])),
                "C_gamma": C_gamma,
                "derivative_exponents": {k: 1 - (1 - alpha) / 2 * k for k in range(1, MAX_ORDER + 1)}}
    return ExampleBundle(model, fieldm, expected, "halfwave")


def check_vector_field_parameters(alpha1: float, alpha2: float) -> None:
    bad = []
    if not 0 <= alpha1:
        bad.append("0 <= alpha1")
    if not alpha1 <= alpha2:
        bad.append("alpha1 <= alpha2")
    if not alpha2 <= 1:
        bad.append("alpha2 <= 1")
    if not alpha1 + alpha2 >= 1:
        bad.append("alpha1 + alpha2 >= 1")
    if not alpha1 < 1:
        bad.append("alpha1 < 1")
    if bad:
        raise AssumptionError("vector-field metric parameters violate: " + ", ".join(bad))


def make_vector_field(X="1 + 0.3*sin(x)", alpha1: float = 0.5, alpha2: float = 0.5, hbar: float = 1.0,
                      box: float = 5.0, n_check: int = 201) -> ExampleBundle:
    """Transport bundle ``p = xi X(x)`` with ``g = <xi>^{2 a1} dx^2 + <xi>^{-2 a2} dxi^2``."""
    check_vector_field_parameters(alpha1, alpha2)
    Xe = _parse(X)
    xs = np.linspace(-box, box, n_check)
    sups = {k: float(np.max(np.abs(_lam(sp.diff(Xe, X_SYM, k), (X_SYM,))(xs)))) for k in range(0, MAX_ORDER + 1)}
    model = transport_model(Xe, hbar)
    fieldm = mt.vectorfield_field(alpha1, alpha2)
    expected = {"gain": lambda S: mt.japanese(S[:, 1]) ** (-(alpha2 - alpha1)),
                "theta": lambda S: mt.japanese(S[:, 1]) ** alpha2,
                "X_derivative_sups": sups}
    return ExampleBundle(model, fieldm, expected, "vectorfield")


def halfwave_laplacian_symbol(gamma, hbar: float = 1.0):
    """Weyl symbol of ``-hbar^2 |gamma|^{1/4} Delta_gamma |gamma|^{-1/4}`` in one dimension.

    ``xi^2 / gamma + hbar^2 R_gamma`` with
    ``R = (1/4)(1/gamma)'' + (1/4) w^2 / gamma + (1/2)(w / gamma)'`` and ``w = (log sqrt(gamma))'``.
    """
    gam = _parse(gamma)
    ginv = 1 / gam
    w = sp.diff(sp.log(sp.sqrt(gam)), X_SYM)
    R = sp.diff(ginv, X_SYM, 2) / 4 + ginv * w**2 / 4 + sp.diff(w * ginv, X_SYM) / 2
    return sp.simplify(XI_SYM**2 * ginv + hbar**2 * R), sp.simplify(R)


def halfwave_laplacian_matrix(gamma, grid: GridSpec) -> np.ndarray:
    """``-hbar^2 gamma^{-1/4} d_x gamma^{-1/2} d_x gamma^{-1/4}`` with spectral derivatives."""
    g = _lam(_parse(gamma), (X_SYM,))(grid.x_nodes)
    D = spectral_derivative_matrix(grid)
    A = np.diag(g**-0.25)
    B = np.diag(g**-0.5)
    return -grid.hbar**2 * A @ D @ B @ D @ A


# -- assumption audit --------------------------------------------------------------

def flowed_metric_rates(model: cl.HamiltonianModel, fieldm: mt.MetricField, samples, times) -> tuple[float, float]:
    """Fit ``g_{phi^t(rho)} <= C^2 exp(2 Upsilon |t|) g_rho`` over samples and times."""
    S = np.atleast_2d(samples)
    maps = cl.flow_points(model, S, times)
    G0 = fieldm(S)
    ts, lr = [], []
    for t in times:
        G1 = fieldm(maps[float(t)])
        ev = mt._gen_eigvals(G1, G0)[:, -1]
        ts.append(abs(t))
        lr.append(0.5 * np.log(np.max(ev)))
    ts, lr = np.array(ts), np.array(lr)
    if np.ptp(ts) == 0:
        return 0.0, float(np.exp(max(lr.max(), 0)))
    slope = max(float(np.polyfit(ts, lr, 1)[0]), 0.0)
    C = float(np.exp(max(np.max(lr - slope * ts), 0.0)))
    return slope, C


def assumption_audit(bundle: ExampleBundle, samples, times=(0.25, 0.5, 1.0, 2.0)) -> dict:
    """Sampled evidence for the flow-expansion, sub-quadraticity and metric-control assumptions."""
    S = np.atleast_2d(np.asarray(samples, dtype=float))
    model, fm = bundle.model, bundle.metric_field
    G = fm(S)
    lam, upper = cl.lyapunov_bound(model, fm, S)
    h = mt.gain(G, fm.hbar)
    hb = float(np.max(h))
    hess_n = cl._bilinear_norm(model.hess(S), G)
    third_n = np.array([cl._tensor_norm(model.third(s), g) for s, g in zip(S, G)])
    theta = mt.temperance_weight(G, np.eye(2) / fm.hbar, fm.hbar)
    sub_quadratic = float(np.max(hess_n * h / hb))
    strong_1 = float(np.max(third_n * h / hb))
    y = np.log(np.maximum(third_n * (h / hb) ** 3, 1e-300))
    xlog = np.log(theta * np.sqrt(hb))
    ok = third_n > 0
    if ok.sum() >= 2 and np.ptp(xlog[ok]) > 1e-12:
        eps_fit = -float(np.polyfit(xlog[ok], y[ok], 1)[0])
    else:
        eps_fit = 0.0
    ups, cups = flowed_metric_rates(model, fm, S, list(times))
    return {"bundle": bundle.provenance, "Lambda_hat": lam, "Lambda_upper": upper,
            "sub_quadratic_C": sub_quadratic, "third_derivative_C": strong_1,
            "strong_subquadratic_eps": eps_fit, "Upsilon_hat": ups, "C_Upsilon": cups,
            "h_bar_g": hb, "samples": int(S.shape[0])}


BUNDLES = {"schrodinger": make_schrodinger, "halfwave": make_halfwave, "vectorfield": make_vector_field}
