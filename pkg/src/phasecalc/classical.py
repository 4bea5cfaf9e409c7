"""Hamiltonian dynamics on phase space and audits of the classical flow estimates.

Flows are integrated in the module's time variable with ``H_p = J grad p`` and
the unscaled symplectic form. For semiclassical models this time is the
semiclassical time ``tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from . import metrics as mt
from .quantize import SymbolGrid
from .spectral import Interpolant

ArrayFn = Callable[..., np.ndarray]


class FlowDivergence(RuntimeError):
    """Raised when integration fails; carries the last valid state."""

    def __init__(self, msg, last_state=None, last_time=None):
        super().__init__(msg)
        self.last_state = last_state
        self.last_time = last_time


@dataclass
class HamiltonianModel:
    """A classical Hamiltonian with analytic derivatives.

    For ``d = 1`` the model is given by ``partial(nx, nxi, x, xi)`` returning
    ``d_x^nx d_xi^nxi p`` for ``nx + nxi <= 4``. Separable models also expose
    ``kinetic(xi)`` and ``potential(x)`` so the quantum operator can be built in
    structured form. Models in higher dimension supply ``grad_fn`` and ``hess_fn``
    acting on ``(..., 2d)`` arrays.
    """

    name: str
    partial: ArrayFn | None = None
    hbar: float = 1.0
    d: int = 1
    kinetic: ArrayFn | None = None
    potential: ArrayFn | None = None
    grad_fn: ArrayFn | None = None
    hess_fn: ArrayFn | None = None
    value_fn: ArrayFn | None = None
    meta: dict = field(default_factory=dict)

    @property
    def separable(self) -> bool:
        return self.kinetic is not None and self.potential is not None

    def _xy(self, rho):
        rho = np.asarray(rho, dtype=float)
        return rho[..., 0], rho[..., 1]

    def p(self, rho) -> np.ndarray:
        if self.partial is None:
            return self.value_fn(np.asarray(rho, dtype=float))
        x, xi = self._xy(rho)
        return self.partial(0, 0, x, xi)

    def grad(self, rho) -> np.ndarray:
        if self.partial is None:
            return self.grad_fn(np.asarray(rho, dtype=float))
        x, xi = self._xy(rho)
        return np.stack(np.broadcast_arrays(self.partial(1, 0, x, xi), self.partial(0, 1, x, xi)), axis=-1)

    def tensor(self, rho, k: int) -> np.ndarray:
        """Symmetric ``k``-th derivative tensor, shape ``(..., 2, ..., 2)`` (``d = 1``)."""
        if self.partial is None:
            if k == 1:
                return self.grad(rho)
            if k == 2 and self.hess_fn is not None:
                return self.hess_fn(np.asarray(rho, dtype=float))
            raise NotImplementedError("higher tensors need a d = 1 partial-derivative model")
        x, xi = self._xy(rho)
        shape = np.broadcast(x, xi).shape
        out = np.empty(shape + (2,) * k)
        for idx in product((0, 1), repeat=k):
            nxi = sum(idx)
            out[(...,) + idx] = self.partial(k - nxi, nxi, x, xi)
        return out

    def hess(self, rho) -> np.ndarray:
        return self.tensor(rho, 2)

    def third(self, rho) -> np.ndarray:
        return self.tensor(rho, 3)

    def vector_field(self, rho) -> np.ndarray:
        g = self.grad(rho)
        dd = g.shape[-1] // 2
        return np.concatenate([g[..., dd:], -g[..., :dd]], axis=-1)

    def dH(self, rho) -> np.ndarray:
        """Differential of ``H_p``: ``J hess p``."""
        H = self.hess(rho)
        dd = H.shape[-1] // 2
        return np.concatenate([H[..., dd:, :], -H[..., :dd, :]], axis=-2)


def hamiltonian_vector_field(model: HamiltonianModel, rho) -> np.ndarray:
    """``H_p(rho) = (d_xi p, -d_x p)``."""
    return model.vector_field(rho)


@dataclass
class FlowResult:
    endpoint: np.ndarray
    jacobian: np.ndarray
    steps: int
    energy_drift: float

    @property
    def symplectic_defect(self) -> float:
        J = mt.symplectic_matrix(self.jacobian.shape[0] // 2)
        return float(np.max(np.abs(self.jacobian.T @ J @ self.jacobian - J)))


def flow(model: HamiltonianModel, rho0, t: float, tol: float = 1e-12, max_steps: int = 10**6) -> FlowResult:
    """Integrate the flow and its variational equation with adaptive DOP853."""
    rho0 = np.asarray(rho0, dtype=float)
    n = rho0.size
    if t == 0:
        return FlowResult(rho0.copy(), np.eye(n), 0, 0.0)

    def rhs(_, y):
        r = y[:n]
        D = y[n:].reshape(n, n)
        return np.concatenate([model.vector_field(r), (model.dH(r) @ D).ravel()])

    y0 = np.concatenate([rho0, np.eye(n).ravel()])
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=tol, atol=tol)
    if not sol.success or sol.t.size > max_steps:
        raise FlowDivergence(f"flow integration failed: {sol.message}", sol.y[:n, -1], sol.t[-1])
    yT = sol.y[:, -1]
    drift = float(abs(model.p(yT[:n]) - model.p(rho0)))
    return FlowResult(yT[:n], yT[n:].reshape(n, n), int(sol.t.size - 1), drift)


def flow_points(model: HamiltonianModel, pts, times, tol: float = 1e-12, batches: int = 8) -> dict[float, np.ndarray]:
    """Flow many points at once and record them at each requested time.

    ``pts`` has shape ``(M, 2d)``; returns ``{t: (M, 2d)}``. Negative and
    positive times are integrated separately from ``t = 0``. Points are sorted
    by energy and integrated in ``batches`` groups, since one adaptive step
    size serves a whole group and slow low-energy points would otherwise pay
    for the fastest ones.
    """
    pts = np.asarray(pts, dtype=float)
    M, n = pts.shape
    out: dict[float, np.ndarray] = {}
    times = sorted(set(float(t) for t in times))
    if M == 0:
        return {t: pts.copy() for t in times}
    groups = [np.arange(M)]
    if batches > 1 and M >= 64 * batches and (model.partial is not None or model.value_fn is not None):
        order = np.argsort(np.asarray(model.p(pts)).ravel(), kind="stable")
        groups = np.array_split(order, batches)
    for t in times:
        out[t] = pts.copy()
    for idx in groups:
        sub = pts[idx]
        m = len(sub)

        def rhs(_, y, m=m):
            return model.vector_field(y.reshape(m, n)).ravel()

        for sign in (1.0, -1.0):
            ts = sorted([t for t in times if t * sign > 0], key=abs)
            if not ts:
                continue
            sol = solve_ivp(rhs, (0.0, ts[-1]), sub.ravel(), method="DOP853", t_eval=ts, rtol=tol, atol=tol)
            if not sol.success:
                raise FlowDivergence(f"flow integration failed: {sol.message}", sol.y[:, -1] if sol.y.size else None)
            for k, t in enumerate(ts):
                out[t][idx] = sol.y[:, k].reshape(m, n)
    return out


# -- pullback ----------------------------------------------------------------------

def energy_mask(model: HamiltonianModel, a: SymbolGrid, rel: float = 1e-14, pad: float = 1e-3) -> np.ndarray:
    """Nodes whose energy lies in the energy range of the numerical support of ``a``."""
    X, XI = a.grid.mesh()
    P = model.partial(0, 0, X, XI) * np.ones_like(X)
    v = np.abs(a.values)
    if v.max() == 0:
        return np.zeros(X.shape, dtype=bool)
    supp = v > rel * v.max()
    lo, hi = P[supp].min(), P[supp].max()
    d = pad * max(hi - lo, 1.0)
    return (P >= lo - d) & (P <= hi + d)


class FlowCache:
    """Flowed grid nodes for a fixed set of times, reused across pullbacks."""

    def __init__(self, model: HamiltonianModel, grid, times, mask=None, tol: float = 1e-12, guard: float = 0.1):
        self.model, self.grid = model, grid
        X, XI = grid.mesh()
        self.mask = np.ones(X.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        nodes = np.stack([X[self.mask], XI[self.mask]], axis=-1)
        self.maps = flow_points(model, nodes, list(times) + [0.0], tol=tol)
        hx, hxi = grid.period_x / 2, grid.period_xi / 2
        self.warnings = []
        for t, pts in self.maps.items():
            inside = (np.abs(pts[:, 0]) <= hx * (1 + guard)) & (np.abs(pts[:, 1]) <= hxi * (1 + guard))
            if not np.all(inside):
                self.warnings.append({"t": t, "exited": int(np.sum(~inside))})

    def pullback(self, a: SymbolGrid, t: float) -> SymbolGrid:
        t = float(t)
        if t == 0:
            return a.like(a.values.copy())
        pts = self.maps[t]
        vals = np.zeros_like(a.values)
        vals[self.mask] = Interpolant(a)(pts[:, 0], pts[:, 1])
        meta = {"pullback_t": t}
        w = [w for w in self.warnings if w["t"] == t]
        if w:
            meta["aliasing_warning"] = w[0]
        return a.like(vals, **meta)


def pullback_symbol(model: HamiltonianModel, a: SymbolGrid, t: float, tol: float = 1e-12,
                    mask=None) -> SymbolGrid:
    """``a o phi^t`` on the grid by trigonometric interpolation at flowed nodes.

    Only nodes in the energy band of the numerical support of ``a`` are flowed
    (the flow preserves ``p``); the others are set to zero unless ``mask`` is given.
    """
    if t == 0:
        return a.like(a.values.copy())
    if mask is None:
        mask = energy_mask(model, a) if model.partial is not None else None
    return FlowCache(model, a.grid, [t], mask=mask, tol=tol).pullback(a, t)


# -- metric-based audits -----------------------------------------------------------

def _bilinear_norm(B, G) -> np.ndarray:
    """``|B|_g`` for symmetric bilinear forms: ``max |eig(G^{-1} B)|``."""
    L = np.linalg.cholesky(G)
    Li = np.linalg.inv(L)
    S = Li @ B @ np.swapaxes(Li, -1, -2)
    return np.max(np.abs(np.linalg.eigvalsh((S + np.swapaxes(S, -1, -2)) / 2)), axis=-1)


def lie_derivative_matrix(model: HamiltonianModel, field: mt.MetricField, rho) -> tuple[np.ndarray, np.ndarray]:
    """Matrix of ``L_{H_p} g`` and of ``nabla_{H_p} g`` at ``rho``."""
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    G = field(rho)
    A = model.dH(rho)
    DG = field.directional_derivative(rho, model.vector_field(rho)) if field.kind != "constant" else np.zeros_like(G)
    S = G @ A + np.swapaxes(A, -1, -2) @ G + DG
    return (S + np.swapaxes(S, -1, -2)) / 2, DG


def lyapunov_bound(model: HamiltonianModel, field: mt.MetricField, samples) -> tuple[float, float]:
    """``Lambda_hat = 1/2 max |L_{H_p} g|_g`` and the upper bound
    ``max(h_g |hess p|_g + 1/2 |nabla_{H_p} g|_g)`` over the samples."""
    rho = np.atleast_2d(np.asarray(samples, dtype=float))
    G = mt.check_spd(field(rho), "metric field")
    S, DG = lie_derivative_matrix(model, field, rho)
    lam = 0.5 * np.max(_bilinear_norm(S, G))
    h = mt.gain(G)
    upper = np.max(h * _bilinear_norm(model.hess(rho), G) + 0.5 * _bilinear_norm(DG, G))
    return float(lam), float(upper)


def flow_expansion_audit(model: HamiltonianModel, field: mt.MetricField, samples, times,
                         tol: float = 1e-12, eps_audit: float = 1e-6, trajectory_points: int = 64):
    """Check ``|d phi^t|_g <= exp(Lambda_hat |t|) (1 + eps)`` at each sample and time.

    ``Lambda_hat`` is estimated over the samples and over points along each
    sampled trajectory up to the largest time, since the Gronwall argument
    integrates the Lie derivative along the flow.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    tmax = max(abs(t) for t in times)
    ts = np.linspace(-tmax, tmax, 2 * trajectory_points + 1)
    traj = flow_points(model, samples, ts, tol=tol)
    cloud = np.concatenate([samples] + [traj[float(t)] for t in ts])
    lam, _ = lyapunov_bound(model, field, cloud)
    eps = eps_audit + tol
    rows, failures = [], []
    for rho in samples:
        G0 = field(rho[None])[0]
        for t in times:
            fr = flow(model, rho, t, tol=tol)
            G1 = field(fr.endpoint[None])[0]
            meas = float(mt.operator_norm(fr.jacobian, G0, G1))
            bound = float(np.exp(lam * abs(t)) * (1 + eps))
            rows.append({"rho_x": float(rho[0]), "rho_xi": float(rho[1]), "t": float(t),
                         "measured": meas, "bound": bound, "margin": bound - meas,
                         "symplectic_defect": fr.symplectic_defect})
            if meas > bound:
                failures.append({"rho": rho.tolist(), "t": float(t), "measured": meas, "bound": bound})
    return {"Lambda_hat": lam, "rows": rows, "failures": failures, "passed": not failures}


def _tensor_norm(T, G_in, G_out=None, n_angles: int = 721) -> float:
    """Norm of a symmetric ``k``-linear map on ``(R^2, G_in)``.

    Scalar-valued when ``G_out`` is None, else vector-valued in ``(R^2, G_out)``.
    For symmetric maps the norm equals the sup over the diagonal.
    """
    L = np.linalg.cholesky(G_in)
    th = np.linspace(0, np.pi, n_angles)
    W = np.linalg.solve(L.T, np.stack([np.cos(th), np.sin(th)]))  # g-unit vectors
    acc = T if G_out is None else np.moveaxis(T, 0, -1)
    acc = np.tensordot(acc, W, axes=([0], [0]))
    while acc.ndim > (1 if G_out is None else 2):
        acc = np.einsum("i...a,ia->...a", acc, W)
    if G_out is None:
        return float(np.max(np.abs(acc)))
    q = np.einsum("ia,ij,ja->a", acc, G_out, acc)
    return float(np.sqrt(np.max(q)))


def flow_derivative_fd(model: HamiltonianModel, rho, t: float, k: int, v, tol: float = 1e-12) -> np.ndarray:
    """``d^k/ds^k phi^t(rho + s v)`` at ``s = 0`` by central differences, step ``tol^{1/(k+1)}``."""
    rho = np.asarray(rho, dtype=float)
    v = np.asarray(v, dtype=float)
    h = tol ** (1.0 / (k + 1))
    if k == 1:
        st, w = [-1, 1], [-0.5, 0.5]
    elif k == 2:
        st, w = [-2, -1, 0, 1, 2], [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]
    elif k == 3:
        st, w = [-3, -2, -1, 1, 2, 3], [1 / 8, -1, 13 / 8, -13 / 8, 1, -1 / 8]
    else:
        raise ValueError("k must be 1, 2 or 3")
    pts = np.array([rho + s * h * v for s in st])
    ends = flow_points(model, pts, [t], tol=min(tol, 1e-13))[float(t)]
    return np.tensordot(w, ends, axes=(0, 0)) / h**k


def bnorm(tensors: dict[int, float], n: int, k: int) -> float:
    """``max over n-tuples |n_vec| = k of prod |nabla^{n_j} f| / n_j!`` from a table of norms."""
    best = 0.0
    for combo in product(range(k + 1), repeat=n):
        if sum(combo) != k:
            continue
        val = 1.0
        for nj in combo:
            val *= tensors[nj] / math.factorial(nj)
        best = max(best, val)
    return best


def derivative_growth_audit(model: HamiltonianModel, field: mt.MetricField, rho, t: float, k: int,
                            samples=None, Lambda: float | None = None, C: float = 1.0,
                            tol: float = 1e-12, eps_audit: float = 1e-6, n_dirs: int = 24) -> dict:
    """Compare ``(1/k!) |nabla^k phi^t|_g`` with the exponential-growth bound.

    Derivative sups of ``nabla^2 H_p`` are taken over ``samples`` (default: the
    point and its trajectory). Returns status ``pass``, ``fail`` or
    ``inconclusive`` when finite-difference noise exceeds the signal.
    """
    if k not in (2, 3):
        raise ValueError("k must be 2 or 3")
    rho = np.asarray(rho, dtype=float)
    G0 = field(rho[None])[0]
    fr = flow(model, rho, t, tol=tol)
    G1 = field(fr.endpoint[None])[0]
    L = np.linalg.cholesky(G0)
    meas, noise = 0.0, 0.0
    for th in np.linspace(0, np.pi, n_dirs, endpoint=False):
        v = np.linalg.solve(L.T, np.array([np.cos(th), np.sin(th)]))
        dk = flow_derivative_fd(model, rho, t, k, v, tol=tol)
        meas = max(meas, float(np.sqrt(dk @ G1 @ dk)))
        noise = max(noise, np.sqrt(v @ G0 @ v) * 1e3 * tol ** (1.0 / (k + 1)))
    meas /= math.factorial(k)
    if samples is None:
        traj = flow_points(model, rho[None], np.linspace(-abs(t), abs(t), 41), tol=tol)
        samples = np.concatenate(list(traj.values()))
    samples = np.atleast_2d(samples)
    if Lambda is None:
        Lambda, _ = lyapunov_bound(model, field, samples)
    norms = {}
    for j in range(0, k - 1):
        vals = []
        for s in samples:
            Gs = field(s[None])[0]
            T = model.tensor(s, j + 3)  # nabla^j (nabla^2 H_p) = J nabla^{j+3} p
            THp = np.tensordot(mt.symplectic_matrix(1), T, axes=([1], [0]))
            vals.append(_tensor_norm(THp, Gs, Gs))
        norms[j] = max(vals)
    if Lambda <= 0:
        bound = np.inf
    else:
        growth = (C * np.exp(Lambda * abs(t))) ** k
        terms = [(C / (2 * Lambda)) ** n * bnorm(norms, n, k - 1 - n) for n in range(1, k)]
        bound = k ** (k - 1) * growth * max(terms)
    status = "pass" if meas <= bound * (1 + eps_audit) else "fail"
    if status == "fail" and meas < noise:
        status = "inconclusive"
    return {"measured": meas, "bound": float(bound), "status": status, "Lambda": float(Lambda)}


def flow_lipschitz_audit(model: HamiltonianModel, field: mt.MetricField, rho0, r: float, t: float,
                         Lambda: float, C_g: float, C_p: float, h_bar_g: float, r_g: float = 1.0,
                         n_points: int = 16, tol: float = 1e-12) -> dict:
    """Check the displacement inequality on the ``g_{rho0}``-sphere of radius ``r``."""
    rate = Lambda + C_g**3 * C_p * h_bar_g
    if r > r_g * np.exp(-rate * abs(t)) * (1 + 1e-12):
        raise ValueError(f"time window violated: need r <= r_g exp(-(Lambda + C_g^3 C_p h_bar_g)|t|) "
                         f"= {r_g * np.exp(-rate * abs(t)):.6g}, got r = {r}")
    rho0 = np.asarray(rho0, dtype=float)
    G0 = field(rho0[None])[0]
    L = np.linalg.cholesky(G0)
    th = np.linspace(0, 2 * np.pi, n_points, endpoint=False)
    dirs = np.linalg.solve(L.T, np.stack([np.cos(th), np.sin(th)])).T
    pts = np.concatenate([rho0[None], rho0 + r * dirs])
    ends = flow_points(model, pts, [t], tol=tol)[float(t)]
    G1 = field(ends[:1])[0]
    dz = ends[1:] - ends[0]
    ratios = np.sqrt(np.einsum("pi,ij,pj->p", dz, G1, dz)) / r
    bound = float(np.exp(rate * abs(t)))
    return {"max_ratio": float(ratios.max()), "bound": bound, "margin": bound - float(ratios.max()),
            "passed": bool(ratios.max() <= bound * (1 + 1e-9))}


def cp_constant(model: HamiltonianModel, field: mt.MetricField, samples) -> float:
    """Sampled ``sup (h_g / h_bar_g) |nabla^3 p|_g``."""
    samples = np.atleast_2d(samples)
    G = field(samples)
    h = mt.gain(G)
    hb = float(np.max(h))
    vals = [(hi / hb) * _tensor_norm(model.third(s), Gi) for s, Gi, hi in zip(samples, G, h)]
    return float(max(vals))


# -- identities --------------------------------------------------------------------

def hamiltonian_field_seminorms(grad_a, hess_a, G) -> dict[str, float]:
    """Quantities of the seminorm identities for the Hamiltonian field of ``a``.

    Returns ``|H_a|_g``, ``|da|_{g^sigma}``, ``|nabla H_a|_g`` and the gains
    times ``|nabla a|_g``, ``|nabla^2 a|_g``.
    """
    G = mt.check_spd(G)
    J = mt.symplectic_matrix(G.shape[-1] // 2)
    Gs = mt.sigma_dual(G)
    h = float(mt.gain(G))
    Ha = J @ grad_a
    dH = J @ hess_a
    return {
        "H_a_g": float(np.sqrt(Ha @ G @ Ha)),
        "da_gsigma": float(np.sqrt(grad_a @ np.linalg.solve(Gs, grad_a))),
        "h_da_g": h * float(np.sqrt(grad_a @ np.linalg.solve(G, grad_a))),
        "dH_a_g": float(mt.operator_norm(dH, G)),
        "h_d2a_g": h * float(_bilinear_norm(hess_a, G)),
    }


def norm_duality_defect(jac, G_rho, G_phi) -> float:
    """``| |dphi|_{g_rho} - |dphi^{-1}|_{g^sigma_{phi(rho)}} |`` (relative)."""
    a = float(mt.operator_norm(jac, G_rho, G_phi))
    b = float(mt.operator_norm(np.linalg.inv(jac), mt.sigma_dual(G_phi), mt.sigma_dual(G_rho)))
    return abs(a - b) / max(a, b)
