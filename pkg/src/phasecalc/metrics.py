"""Metric algebra on phase space.

Coordinates are ordered ``(x, xi)``. The symplectic form is ``sigma = d xi ^ d x``,
so ``sigma(X, Y) = X^T J^T Y`` with ``J = [[0, I], [-I, 0]]`` and the Hamiltonian
vector field is ``H_p = J grad p = (d_xi p, -d_x p)``.

Every function accepts a ``hbar`` keyword. It rescales the symplectic form to
``sigma / hbar``, which is the form seen in semiclassical coordinates
``(x, hbar * xi)``. With ``hbar = 1`` all formulas are the unscaled ones.
Matrix arguments may be stacked with shape ``(..., 2d, 2d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

SPD_TOL = 0.0


class MetricError(ValueError):
    """Domain error in metric algebra (non-SPD input, uncertainty violation)."""


@dataclass(frozen=True)
class SymplecticForm:
    """``sigma = d xi ^ d x`` in ``(x, xi)`` order, optionally scaled by ``1/hbar``."""

    d: int = 1
    hbar: float = 1.0
    order: str = "x-first"

    @property
    def J(self) -> np.ndarray:
        return symplectic_matrix(self.d)

    @property
    def omega(self) -> np.ndarray:
        """Matrix of ``sigma``: ``sigma(X, Y) = X @ omega @ Y``."""
        return self.J.T / self.hbar

    def __call__(self, X, Y) -> float:
        return float(np.asarray(X) @ self.omega @ np.asarray(Y))


def symplectic_matrix(d: int = 1) -> np.ndarray:
    I = np.eye(d)
    Z = np.zeros((d, d))
    return np.block([[Z, I], [-I, Z]])


def _dim(G: np.ndarray) -> int:
    n = G.shape[-1]
    if G.shape[-2] != n or n % 2:
        raise MetricError(f"metric must be 2d x 2d, got shape {G.shape}")
    return n // 2


def check_spd(G: np.ndarray, name: str = "G") -> np.ndarray:
    G = np.asarray(G, dtype=float)
    _dim(G)
    asym = np.max(np.abs(G - np.swapaxes(G, -1, -2)))
    scale = np.max(np.abs(G))
    if asym > 1e-12 * max(scale, 1e-300):
        raise MetricError(f"{name} is not symmetric (defect {asym:.3e})")
    ev = np.linalg.eigvalsh(G)
    if np.any(~np.isfinite(ev)) or np.min(ev) <= SPD_TOL:
        raise MetricError(f"{name} is not positive definite: eigenvalue {np.min(ev):.6e}")
    return G


def sigma_dual(G, hbar: float = 1.0) -> np.ndarray:
    """``G^sigma = J^T G^{-1} J / hbar^2``."""
    G = check_spd(G)
    J = symplectic_matrix(_dim(G))
    return J.T @ np.linalg.inv(G) @ J / hbar**2


def _gen_eigvals(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``B^{-1} A`` for SPD ``A, B`` (stackable), ascending."""
    L = np.linalg.cholesky(B)
    Li = np.linalg.inv(L)
    S = Li @ A @ np.swapaxes(Li, -1, -2)
    return np.linalg.eigvalsh((S + np.swapaxes(S, -1, -2)) / 2)


def gain(G, hbar: float = 1.0) -> np.ndarray:
    """``h_g = sqrt(lambda_max((G^sigma)^{-1} G))``."""
    G = check_spd(G)
    return np.sqrt(_gen_eigvals(G, sigma_dual(G, hbar))[..., -1])


def duality_map(G, hbar: float = 1.0) -> np.ndarray:
    """``J_g`` with ``g(X, Y) = sigma(X, J_g Y)``, that is ``J_g = hbar J G``."""
    G = check_spd(G)
    return hbar * symplectic_matrix(_dim(G)) @ G


def operator_norm(A, G_src, G_dst=None) -> np.ndarray:
    """Norm of ``A : (R^n, G_src) -> (R^n, G_dst)``."""
    G_dst = G_src if G_dst is None else G_dst
    M = np.swapaxes(A, -1, -2) @ G_dst @ A
    return np.sqrt(np.maximum(_gen_eigvals((M + np.swapaxes(M, -1, -2)) / 2, G_src)[..., -1], 0.0))


def gain_and_duality(G, hbar: float = 1.0) -> tuple[np.ndarray, float]:
    """Duality map and gain; the gain is cross-checked as ``|J_g|_g``."""
    G = check_spd(G)
    Jg = duality_map(G, hbar)
    h1 = gain(G, hbar)
    h2 = operator_norm(Jg, G)
    if not np.allclose(h1, h2, rtol=1e-10, atol=0):
        raise MetricError(f"gain computations disagree: {h1} vs {h2}")
    return Jg, float(h1) if np.ndim(h1) == 0 else h1


def _sqrtm_spd(A: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(A)
    return (V * np.sqrt(np.maximum(w, 0))[..., None, :]) @ np.swapaxes(V, -1, -2)


def geometric_mean(A, B) -> np.ndarray:
    """``A^{1/2} (A^{-1/2} B A^{-1/2})^{1/2} A^{1/2}`` for SPD ``A, B``."""
    Ah = _sqrtm_spd(A)
    Aih = np.linalg.inv(Ah)
    C = Aih @ B @ Aih
    M = Ah @ _sqrtm_spd((C + np.swapaxes(C, -1, -2)) / 2) @ Ah
    return (M + np.swapaxes(M, -1, -2)) / 2


def symplectic_intermediate(G, hbar: float = 1.0) -> np.ndarray:
    """``g^natural``: geometric mean of ``g`` and ``g^sigma``; self-dual."""
    G = check_spd(G)
    h = gain(G, hbar)
    if np.any(h > 1 + 1e-12):
        raise MetricError(f"uncertainty principle violated: gain {np.max(h):.6e} > 1")
    return geometric_mean(G, sigma_dual(G, hbar))


def psd_slack(A, B) -> float:
    """Smallest eigenvalue of ``I - B^{-1/2} A B^{-1/2}``; ``>= 0`` iff ``A <= B``."""
    return float(np.min(1.0 - _gen_eigvals(A, B)[..., -1]))


def chain_inequality(G, hbar: float = 1.0) -> dict[str, float]:
    """Slacks of ``g <= h g^nat <= g^nat = (g^nat)^sigma <= g^nat / h <= g^sigma``."""
    G = check_spd(G)
    h = gain(G, hbar)
    h = np.asarray(h)[..., None, None]
    N = symplectic_intermediate(G, hbar)
    Ns = sigma_dual(N, hbar)
    Gs = sigma_dual(G, hbar)
    return {
        "g<=h*nat": psd_slack(G, h * N),
        "h*nat<=nat": psd_slack(h * N, N),
        "nat<=nat_sigma": min(psd_slack(N, Ns), psd_slack(Ns, N)),
        "nat<=nat/h": psd_slack(N, N / h),
        "nat/h<=g_sigma": psd_slack(N / h, Gs),
    }


def is_symplectic_metric(G, hbar: float = 1.0, tol: float = 1e-10) -> bool:
    G = check_spd(G)
    return bool(np.max(np.abs(sigma_dual(G, hbar) - G)) <= tol * np.max(np.abs(G)))


def default_flat(G, hbar: float = 1.0) -> np.ndarray:
    """Symplectic background metric used for the temperance weight.

    A diagonal ``d = 1`` metric is rescaled to the unique symplectic metric
    conformal to it; anything else uses the identity (times ``1/hbar``).
    """
    G = check_spd(G)
    d = _dim(G)
    if d == 1 and abs(G[0, 1]) == 0:
        return G / (np.sqrt(G[0, 0] * G[1, 1]) * hbar)
    return np.eye(2 * d) / hbar


def temperance_weight(G, G_flat=None, hbar: float = 1.0) -> float:
    """``theta_g = sup |z|_{g^sigma} / |z|_flat = sqrt(lambda_max(G_flat^{-1} G^sigma))``."""
    G = check_spd(G)
    G_flat = default_flat(G, hbar) if G_flat is None else check_spd(G_flat, "G_flat")
    if not is_symplectic_metric(G_flat, hbar):
        raise MetricError("background metric must satisfy G_flat^sigma = G_flat")
    return np.sqrt(_gen_eigvals(sigma_dual(G, hbar), G_flat)[..., -1])


@dataclass(frozen=True)
class TimeScaling:
    """Rates controlling the growth of ``g(t) = exp(2 (Lambda + 2 Upsilon) |t|) g``."""

    Lambda: float
    Upsilon: float
    h_bar_g: float

    @property
    def rate(self) -> float:
        return 2.0 * (self.Lambda + 2.0 * self.Upsilon)

    @property
    def T_E(self) -> float:
        return ehrenfest_time(self.Lambda, self.Upsilon, self.h_bar_g)


def time_scaled_metric(G, scaling: TimeScaling, t: float) -> np.ndarray:
    return np.exp(scaling.rate * abs(t)) * np.asarray(G, dtype=float)


def ehrenfest_time(Lambda: float, Upsilon: float, h_bar_g: float) -> float:
    """``T_E = log(1 / h_bar_g) / (2 (Lambda + 2 Upsilon))``."""
    if h_bar_g > 1:
        raise MetricError(f"uncertainty principle violated: h_bar_g = {h_bar_g} > 1")
    if not h_bar_g > 0:
        raise MetricError(f"h_bar_g must be positive, got {h_bar_g}")
    if h_bar_g == 1:
        return 0.0
    s = Lambda + 2.0 * Upsilon
    if s <= 0:
        raise MetricError("Lambda + 2 Upsilon must be positive for a finite time scale")
    return 0.5 / s * np.log(1.0 / h_bar_g)


# -- metric fields -----------------------------------------------------------------

@dataclass
class MetricField:
    """A metric depending on the phase point; ``field(rho)`` accepts ``(..., 2d)``."""

    kind: str
    fn: Callable[[np.ndarray], np.ndarray]
    d: int = 1
    hbar: float = 1.0
    params: dict = field(default_factory=dict)

    def __call__(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        return self.fn(rho)

    def directional_derivative(self, rho, v, step: float = 1e-5) -> np.ndarray:
        """Central difference of ``G`` at ``rho`` along ``v`` (fourth order)."""
        rho = np.asarray(rho, dtype=float)
        v = np.asarray(v, dtype=float)
        f = self.fn
        return (8 * (f(rho + step * v) - f(rho - step * v))
                - (f(rho + 2 * step * v) - f(rho - 2 * step * v))) / (12 * step)


def _diag_field(gx, gxi) -> Callable:
    def fn(rho):
        x, xi = rho[..., 0], rho[..., 1]
        out = np.zeros(rho.shape[:-1] + (2, 2))
        out[..., 0, 0] = gx(x, xi)
        out[..., 1, 1] = gxi(x, xi)
        return out
    return fn


def japanese(xi, scale=1.0):
    return np.sqrt(1.0 + scale * np.asarray(xi) ** 2)


def constant_field(G, hbar: float = 1.0) -> MetricField:
    G = check_spd(G)
    d = _dim(G)
    return MetricField("constant", lambda rho: np.broadcast_to(G, rho.shape[:-1] + G.shape).copy(),
                       d=d, hbar=hbar, params={"G": G.tolist()})


def beals_fefferman_field(Phi, Psi) -> MetricField:
    """``dx^2 / Phi^2 + dxi^2 / Psi^2``; ``Phi, Psi`` constants or functions of ``(x, xi)``."""
    f = Phi if callable(Phi) else (lambda x, xi, c=float(Phi): np.full(np.shape(x), c))
    s = Psi if callable(Psi) else (lambda x, xi, c=float(Psi): np.full(np.shape(x), c))
    return MetricField("beals_fefferman", _diag_field(lambda x, xi: 1 / f(x, xi) ** 2,
                                                      lambda x, xi: 1 / s(x, xi) ** 2),
                       params={"Phi": Phi if not callable(Phi) else "fn",
                               "Psi": Psi if not callable(Psi) else "fn"})


def semiclassical_field(hbar: float, gamma: Callable | None = None) -> MetricField:
    """``g_hbar = gamma dx^2 + hbar^2 gamma^{-1} dxi^2`` in unscaled coordinates."""
    gam = gamma or (lambda x: np.ones_like(x))
    return MetricField("semiclassical", _diag_field(lambda x, xi: gam(x), lambda x, xi: hbar**2 / gam(x)),
                       params={"hbar": hbar})


def halfwave_field(alpha: float, gamma: Callable | None = None) -> MetricField:
    """``p^{-alpha} (p gamma dx^2 + p^{-1} gamma^{-1} dxi^2)`` with ``p = <xi>_{gamma^{-1}}``."""
    gam = gamma or (lambda x: np.ones_like(x))

    def p(x, xi):
        return np.sqrt(1.0 + xi**2 / gam(x))

    return MetricField("halfwave", _diag_field(lambda x, xi: p(x, xi) ** (1 - alpha) * gam(x),
                                               lambda x, xi: p(x, xi) ** (-1 - alpha) / gam(x)),
                       params={"alpha": alpha})


def vectorfield_field(alpha1: float, alpha2: float) -> MetricField:
    """``<xi>^{2 alpha1} dx^2 + <xi>^{-2 alpha2} dxi^2``."""
    return MetricField("vectorfield", _diag_field(lambda x, xi: japanese(xi) ** (2 * alpha1),
                                                  lambda x, xi: japanese(xi) ** (-2 * alpha2)),
                       params={"alpha1": alpha1, "alpha2": alpha2})


def expression_field(gxx: str, gxixi: str, gxxi: str = "0") -> MetricField:
    """Metric with entries given as expressions in ``x`` and ``xi``."""
    import sympy as sp

    x, xi = sp.symbols("x xi", real=True)
    fs = [sp.lambdify((x, xi), sp.sympify(e), "numpy") for e in (gxx, gxixi, gxxi)]

    def fn(rho):
        X, XI = rho[..., 0], rho[..., 1]
        out = np.zeros(rho.shape[:-1] + (2, 2))
        out[..., 0, 0] = fs[0](X, XI)
        out[..., 1, 1] = fs[1](X, XI)
        out[..., 0, 1] = out[..., 1, 0] = fs[2](X, XI)
        return out

    return MetricField("expression", fn, params={"gxx": gxx, "gxixi": gxixi, "gxxi": gxxi})


def field_from_spec(spec: dict) -> MetricField:
    """Build a metric field from a flat parameter record with a ``kind`` key."""
    kind = spec.get("kind")
    if kind == "constant":
        return constant_field(np.array(spec["G"], dtype=float), float(spec.get("hbar", 1.0)))
    if kind == "beals_fefferman":
        return beals_fefferman_field(float(spec["Phi"]), float(spec["Psi"]))
    if kind == "semiclassical":
        return semiclassical_field(float(spec["hbar"]))
    if kind == "halfwave":
        return halfwave_field(float(spec["alpha"]))
    if kind == "vectorfield":
        return vectorfield_field(float(spec["alpha1"]), float(spec["alpha2"]))
    if kind == "expression":
        return expression_field(spec["gxx"], spec["gxixi"], spec.get("gxxi", "0"))
    raise MetricError(f"unknown metric kind {kind!r}")


# -- sampled admissibility ---------------------------------------------------------

N_GRID = np.arange(0.0, 8.01, 0.5)


@dataclass
class AdmissibilityReport:
    slow_variation_C: float
    temperance_C: float
    temperance_N: float
    sup_gain: float
    worst_pairs: list
    sample_count: int
    temperance_residual: float = 0.0
    temperance_flagged: bool = False

    def to_json(self) -> dict:
        return {
            "slow_variation_C": self.slow_variation_C,
            "temperance_C": self.temperance_C,
            "temperance_N": self.temperance_N,
            "sup_gain": self.sup_gain,
            "worst_pairs": self.worst_pairs,
            "samples": self.sample_count,
            "temperance_residual": self.temperance_residual,
            "temperance_flagged": self.temperance_flagged,
        }


def admissibility_report(field: MetricField, samples, r: float, hbar: float | None = None,
                         c_cap: float = 10.0, residual_threshold: float = 2.0) -> AdmissibilityReport:
    """Pairwise sampled structure constants of a metric field.

    Slow variation: the tightest ``C`` with ``C^-2 g0 <= g <= C^2 g0`` over pairs
    with ``|rho - rho0|_{g0} <= r``. Temperance: for each ``N`` on a half-integer
    grid, ``C_N^2 = max g/g0 / <rho - rho0>_{g^sigma}^{2N}``; the reported ``N`` is the
    smallest with ``C_N <= c_cap``. The RMS log-gap of that envelope is
    returned as ``temperance_residual`` and large gaps are flagged.
    """
    hbar = field.hbar if hbar is None else hbar
    S = np.atleast_2d(np.asarray(samples, dtype=float))
    if S.shape[0] < 2:
        raise ValueError("need at least two sample points")
    if r <= 0:
        raise ValueError("radius must be positive")
    G = check_spd(field(S), "metric field")
    Gs = sigma_dual(G, hbar)
    h = gain(G, hbar)
    M = S.shape[0]
    i0, i1 = np.triu_indices(M, k=1)
    i0, i1 = np.concatenate([i0, i1]), np.concatenate([i1, i0])
    diff = S[i1] - S[i0]
    dist0 = np.sqrt(np.einsum("pi,pij,pj->p", diff, G[i0], diff))
    ev = _gen_eigvals(G[i1], G[i0])
    up, lo = ev[:, -1], ev[:, 0]
    local = dist0 <= r
    Cpair = np.sqrt(np.maximum(up, 1 / lo))
    if np.any(local):
        k = np.argmax(np.where(local, Cpair, -np.inf))
        C_sv = float(max(Cpair[k], 1.0))
        worst = [{"kind": "slow_variation", "rho0": S[i0[k]].tolist(), "rho": S[i1[k]].tolist(),
                  "C": float(Cpair[k])}]
    else:
        C_sv, worst = 1.0, []
    dsig = np.sqrt(np.einsum("pi,pij,pj->p", diff, Gs[i1], diff))
    logR = np.log(np.maximum(up, 1e-300))
    logJ = np.log1p(dsig**2)
    C_N = np.array([np.exp(0.5 * np.max(logR - n * logJ)) for n in N_GRID])
    ok = np.nonzero(C_N <= c_cap)[0]
    flagged = ok.size == 0
    j = int(ok[0]) if ok.size else len(N_GRID) - 1
    N_t = float(N_GRID[j])
    C_t = float(max(C_N[j], 1.0))
    env = 2 * np.log(C_t) + N_t * logJ
    resid = float(np.sqrt(np.mean((env - logR) ** 2)))
    flagged = flagged or resid > residual_threshold
    kt = int(np.argmax(logR - N_t * logJ))
    worst.append({"kind": "temperance", "rho0": S[i0[kt]].tolist(), "rho": S[i1[kt]].tolist(),
                  "ratio": float(np.exp(logR[kt]))})
    return AdmissibilityReport(C_sv, C_t, N_t, float(np.max(h)), worst, M, resid, bool(flagged))
