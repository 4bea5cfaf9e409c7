"""Quantum propagation and the Egorov expansion on the discrete model.

Time is semiclassical: ``U(tau) = exp(-i tau P / hbar)`` and the conjugated
symbol is the Weyl symbol of ``U(tau)^* Op(a) U(tau)``. Its generator is
``H a = i (p # a - a # p) / hbar``, whose classical part is the transport
``{p, a}`` and whose defect ``H3 = H - {p, .}`` is ``O(hbar^2)``.

The corrections ``b_j`` solve the hierarchy

    d/dtau b_0 = {p, b_0},   d/dtau b_j = {p, b_j} + H3 b_{j-1},

with ``b_0(0) = a`` and ``b_j(0) = 0``. In the interaction picture
``c_j(s) = b_j(s) o phi^{-s}`` this reads ``c_j' = (H3 (c_{j-1} o phi^s)) o phi^{-s}``,
an ordinary integral at each level, which ``method="collocation"`` evaluates
at Chebyshev nodes with a spectral integration matrix. ``method="splitting"``
runs Strang splitting between transport and source instead.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as C

from . import classical as cl
from . import metrics as mt
from .fitting import fit_loglog, fit_semilog
from .moyal import moyal_term, poisson_bracket
from .quantize import GridSpec, MatrixOperator, SymbolGrid, weyl_quantize, weyl_symbol


class PropagatorError(ValueError):
    pass


def model_operator(model: cl.HamiltonianModel, grid: GridSpec) -> MatrixOperator:
    """Quantize a model on a grid; transport models use the symmetric vector-field form."""
    from . import examples as ex

    if "X_fn" in model.meta:
        return ex.vector_field_operator(model.meta["X_fn"], model.meta["dX_fn"], grid)
    return ex.quantize_model(model, grid)


class Propagator:
    """Spectral calculus for a Hermitian grid operator."""

    def __init__(self, P: MatrixOperator, herm_tol: float = 1e-10):
        d = P.hermiticity_defect()
        if d > herm_tol:
            raise PropagatorError(f"operator is not Hermitian: defect {d:.3e} > {herm_tol:.1e}")
        self.P, self.grid = P, P.grid
        E = P.entries
        self.w, self.V = np.linalg.eigh((E + E.conj().T) / 2)

    def _phase(self, tau: float) -> np.ndarray:
        return np.exp(-1j * tau * self.w / self.grid.hbar)

    def U(self, tau: float) -> MatrixOperator:
        return MatrixOperator(self.grid, (self.V * self._phase(tau)) @ self.V.conj().T)

    def apply(self, u: np.ndarray, tau: float) -> np.ndarray:
        return self.V @ (self._phase(tau) * (self.V.conj().T @ u))

    def conjugate(self, A: MatrixOperator, tau: float) -> MatrixOperator:
        """``U(tau)^* A U(tau)``, computed in the eigenbasis."""
        At = self.V.conj().T @ A.entries @ self.V
        ph = self._phase(tau)
        At = (ph.conj()[:, None] * At) * ph[None, :]
        return MatrixOperator(self.grid, self.V @ At @ self.V.conj().T)

    def conjugated_symbol(self, a: SymbolGrid, tau: float) -> SymbolGrid:
        out = weyl_symbol(self.conjugate(weyl_quantize(a), tau))
        out.meta = {**a.meta, "conjugated_tau": float(tau)}
        return out


def schrodinger_propagator(P: MatrixOperator, tau: float, herm_tol: float = 1e-10) -> MatrixOperator:
    """``exp(-i tau P / hbar)`` by eigendecomposition."""
    return Propagator(P, herm_tol).U(tau)


def conjugated_symbol(model, a: SymbolGrid, tau: float) -> SymbolGrid:
    """Symbol of ``exp(i tau P/hbar) Op(a) exp(-i tau P/hbar)``.

    ``model`` may be a ``HamiltonianModel``, a ``MatrixOperator`` or a ``Propagator``.
    """
    prop = _as_propagator(model, a.grid)
    return prop.conjugated_symbol(a, tau)


def _as_propagator(model, grid: GridSpec) -> Propagator:
    if isinstance(model, Propagator):
        return model
    if isinstance(model, MatrixOperator):
        return Propagator(model)
    return Propagator(model_operator(model, grid))


# -- the defect operator -----------------------------------------------------------

def hp3_apply(model: cl.HamiltonianModel, a: SymbolGrid, P: MatrixOperator | None = None) -> SymbolGrid:
    """``H3 a = i (p # a - a # p) / hbar - {p, a}`` with the exact matrix product."""
    g = a.grid
    if P is None:
        P = model_operator(model, g)
    A = weyl_quantize(a)
    comm = weyl_symbol(MatrixOperator(g, P.entries @ A.entries - A.entries @ P.entries))
    vals = (1j / g.hbar) * comm.values - poisson_bracket(model, a).values
    return SymbolGrid(g, vals, {"kind": "hp3", **{k: v for k, v in model.meta.items() if k == "window"}})


def hp3_leading(model: cl.HamiltonianModel, a: SymbolGrid) -> SymbolGrid:
    """Leading term ``2 i P_3(p, a) / hbar`` of ``H3 a``.

    For ``p = xi^2/2 + V(x)`` this is ``(hbar^2 / 24) V''' d_xi^3 a``.
    """
    t = moyal_term(3, model, a)
    return SymbolGrid(a.grid, (2j / a.grid.hbar) * t.values, {"kind": "hp3_leading"})


# -- Dyson hierarchy ---------------------------------------------------------------

@dataclass
class DysonState:
    levels: list
    tau: float
    j0: int
    method: str = "collocation"
    meta: dict = field(default_factory=dict)

    def partial_sum(self, j: int | None = None) -> SymbolGrid:
        j = self.j0 if j is None else j
        out = self.levels[0]
        for b in self.levels[1:j + 1]:
            out = out + b
        return out


def chebyshev_nodes(tau: float, n: int) -> np.ndarray:
    """Chebyshev-Lobatto nodes on ``[0, tau]``, increasing, with both ends."""
    k = np.arange(n)
    return tau * (1 - np.cos(np.pi * k / (n - 1))) / 2


def integration_matrix(tau: float, n: int) -> np.ndarray:
    """``Q`` with ``(Q f)(s_q) = int_0^{s_q} f`` for the interpolant through the nodes."""
    s = chebyshev_nodes(tau, n)
    z = 2 * s / tau - 1
    Vm = C.chebvander(z, n - 1)
    Vinv = np.linalg.inv(Vm)
    Q = np.empty((n, n))
    for j in range(n):
        coef = Vinv[:, j]
        ic = C.chebint(coef, lbnd=-1) * (tau / 2)
        Q[:, j] = C.chebval(z, ic)
    return Q


class _Engine:
    """Shared pieces for one model on one grid: operator, flow cache and H3."""

    def __init__(self, model, a: SymbolGrid, times, P=None, hp3: str = "matrix", tol=1e-12, mask=None,
                 mask_rel: float = 1e-10):
        self.model, self.grid = model, a.grid
        self.P = model_operator(model, a.grid) if P is None else P
        if mask is None and model.partial is not None:
            mask = cl.energy_mask(model, a, rel=mask_rel)
        self.cache = cl.FlowCache(model, a.grid, times, mask=mask, tol=tol)
        self.hp3 = hp3
        self.n_hp3 = 0

    def H3(self, b: SymbolGrid) -> SymbolGrid:
        self.n_hp3 += 1
        if self.hp3 == "leading":
            return hp3_leading(self.model, b)
        return hp3_apply(self.model, b, self.P)

    def pull(self, b: SymbolGrid, t: float) -> SymbolGrid:
        return self.cache.pullback(b, t)


def dyson_hierarchy(model: cl.HamiltonianModel, a: SymbolGrid, tau: float, j0: int,
                    method: str = "collocation", nodes: int = 25, steps: int = 64,
                    P: MatrixOperator | None = None, hp3: str = "matrix", tol: float = 1e-12,
                    mask=None, mask_rel: float = 1e-10) -> DysonState:
    """Levels ``b_0, ..., b_j0`` of the hierarchy at time ``tau``.

    Parameters
    ----------
    method : {"collocation", "splitting"}
        Chebyshev collocation in the interaction picture (spectrally accurate
        in ``tau``) or Strang splitting with ``steps`` steps (second order).
    nodes : int
        Number of Chebyshev-Lobatto nodes for collocation.
    hp3 : {"matrix", "leading"}
        Exact defect operator or its leading ``P_3`` term.
    mask_rel : float
        Only nodes in the energy band where ``|a|`` exceeds ``mask_rel`` times
        its maximum are flowed; the levels are set to zero elsewhere.
    """
    if not 0 <= j0 <= 3:
        raise ValueError(f"j0 must lie in [0, 3], got {j0}")
    tau = float(tau)
    if tau == 0:
        z = a.like(np.zeros_like(a.values))
        return DysonState([a] + [z] * j0, 0.0, j0, method)
    if method == "collocation":
        return _collocation(model, a, tau, j0, nodes, P, hp3, tol, mask, mask_rel)
    if method == "splitting":
        return _splitting(model, a, tau, j0, steps, P, hp3, tol, mask, mask_rel)
    raise ValueError(f"unknown method {method!r}")


def _collocation(model, a, tau, j0, n, P, hp3, tol, mask, mask_rel) -> DysonState:
    s = chebyshev_nodes(tau, n)
    times = sorted(set(s[1:]) | set(-s[1:]))
    eng = _Engine(model, a, times, P, hp3, tol, mask, mask_rel)
    Q = integration_matrix(tau, n)
    levels = [eng.pull(a, tau)]
    c_prev = [a] * n
    for _ in range(1, j0 + 1):
        f = []
        for q, sq in enumerate(s):
            f.append(eng.pull(eng.H3(eng.pull(c_prev[q], sq)), -sq).values)
        F = np.stack(f)
        Cj = np.tensordot(Q, F, axes=(1, 0))
        c_prev = [a.like(Cj[q]) for q in range(n)]
        levels.append(eng.pull(c_prev[-1], tau))
    meta = {"nodes": n, "hp3_calls": eng.n_hp3, "flow_warnings": eng.cache.warnings}
    return DysonState(levels, tau, j0, "collocation", meta)


def _splitting(model, a, tau, j0, steps, P, hp3, tol, mask, mask_rel) -> DysonState:
    dt = tau / steps
    eng = _Engine(model, a, [dt / 2, dt], P, hp3, tol, mask, mask_rel)
    zero = a.like(np.zeros_like(a.values))
    b = [a] + [zero] * j0
    b = [eng.pull(x, dt / 2) for x in b]
    for n in range(steps):
        # nilpotent source: exp(dt S) shifts level j-k into j with weight dt^k/k!
        Hb = [b]
        for k in range(1, j0 + 1):
            Hb.append([zero] * k + [eng.H3(x) for x in Hb[-1][:j0 + 1 - k]])
        new = []
        fact = 1.0
        for j in range(j0 + 1):
            acc = b[j]
            fact = 1.0
            for k in range(1, j + 1):
                fact *= k
                acc = acc + Hb[k][j] * (dt**k / fact)
            new.append(acc)
        step = dt if n < steps - 1 else dt / 2
        b = [eng.pull(x, step) for x in new]
    meta = {"steps": steps, "hp3_calls": eng.n_hp3, "flow_warnings": eng.cache.warnings}
    return DysonState(b, tau, j0, "splitting", meta)


def simplex_quadrature_b1(model, a: SymbolGrid, tau: float, intervals: int = 16,
                          P: MatrixOperator | None = None, tol: float = 1e-12) -> SymbolGrid:
    """``b_1(tau) = int_0^tau ((H3 (a o phi^s)) o phi^(tau - s)) ds`` by composite Simpson."""
    if intervals % 2:
        raise ValueError("Simpson needs an even number of intervals")
    s = np.linspace(0, tau, intervals + 1)
    times = sorted(set(s[1:]) | set(tau - s[:-1]))
    eng = _Engine(model, a, times, P, "matrix", tol)
    w = np.ones(intervals + 1)
    w[1:-1:2], w[2:-1:2] = 4, 2
    w *= (tau / intervals) / 3
    acc = np.zeros_like(a.values)
    for sq, wq in zip(s, w):
        acc += wq * eng.pull(eng.H3(eng.pull(a, sq)), tau - sq).values
    return a.like(acc, kind="b1_simpson")


# -- scans -------------------------------------------------------------------------

@dataclass
class ResidualRow:
    hbar: float
    tau: float
    j0: int
    residual_l2: float
    residual_wsup: float
    envelope: float
    N: int


@dataclass
class ResidualTable:
    rows: list
    fits: dict
    manifest: dict

    def records(self) -> list[dict]:
        out = []
        for r in self.rows:
            f = self.fits.get(r.j0)
            out.append({"hbar": r.hbar, "tau": r.tau, "j0": r.j0, "residual_l2": r.residual_l2,
                        "residual_wsup": r.residual_wsup, "envelope": r.envelope,
                        "slope_fit": f.slope if f else float("nan"), "slope_ci": f.ci if f else float("nan")})
        return out


def sampled_lyapunov(model, a: SymbolGrid, level: float = 1e-3, max_samples: int = 400,
                     times=(0.0,)) -> float:
    """``Lambda_hat`` for the identity metric over the core of ``a`` and its flow images."""
    X, XI = a.grid.mesh()
    v = np.abs(a.values)
    pts = np.stack([X[v > level * v.max()], XI[v > level * v.max()]], axis=-1)
    if len(pts) > max_samples:
        pts = pts[np.linspace(0, len(pts) - 1, max_samples).astype(int)]
    flowed = cl.flow_points(model, pts, list(times) + [0.0])
    allpts = np.concatenate(list(flowed.values()))
    lam, _ = cl.lyapunov_bound(model, mt.constant_field(np.eye(2)), allpts)
    return lam


def egorov_residual(model_factory, a_fn, tau: float, j0s, hbars, N: int | None = None,
                    side: float | None = 7.0, method: str = "collocation", nodes: int = 25,
                    Lambda: float | None = None, interior: float | None = None) -> ResidualTable:
    """Residual ``conjugated - sum_{j <= j0} b_j`` over an ``hbar`` sweep.

    ``model_factory(hbar, grid)`` builds the model, ``a_fn(x, xi)`` the fixed
    symbol. Grids have either ``N`` nodes or a square box of side ``side``.
    The envelope is ``(hbar exp(2 Lambda tau))^(2 (j0 + 1))``.
    """
    t0 = _time.perf_counter()
    rows = []
    for h in hbars:
        g = GridSpec.square(h, N=N) if N is not None else GridSpec.square(h, side=side)
        model = model_factory(h, g)
        a = SymbolGrid.from_function(g, a_fn)
        prop = _as_propagator(model, g)
        conj = prop.conjugated_symbol(a, tau)
        st = dyson_hierarchy(model, a, tau, max(j0s), method=method, nodes=nodes, P=prop.P)
        lam = sampled_lyapunov(model, a) if Lambda is None else Lambda
        mask = None if interior is None else g.interior(interior)
        for j0 in j0s:
            r = conj - st.partial_sum(j0)
            env = (h * np.exp(2 * lam * tau)) ** (2 * (j0 + 1))
            rows.append(ResidualRow(h, tau, j0, r.l2(mask),
                                    float(np.max(np.abs(r.values if mask is None else r.values[mask]))),
                                    env, g.N))
    fits = {j0: fit_loglog([r.hbar for r in rows if r.j0 == j0],
                           [r.residual_l2 for r in rows if r.j0 == j0]) for j0 in j0s}
    manifest = {"tau": tau, "j0s": list(j0s), "hbars": list(hbars), "N": N, "side": side,
                "method": method, "nodes": nodes, "wall_time": _time.perf_counter() - t0}
    return ResidualTable(rows, fits, manifest)


@dataclass
class EhrenfestRow:
    hbar: float
    tau: float
    residual_l2: float
    envelope: float


@dataclass
class EhrenfestTable:
    rows: list
    Lambda_hat: float
    C_env: float
    rates: dict
    rate_fit: object
    violations: list
    manifest: dict


def ehrenfest_scan(model_factory, a_fn, hbars, c_frac: float = 1.0, n_tau: int = 9,
                   N: int | None = None, side: float | None = 8.0, Lambda: float | None = None,
                   fit_from: float = 0.5) -> EhrenfestTable:
    """Leading residual ``r_0(tau) = |conjugated - a o phi^tau|`` up to a fraction of the Ehrenfest scale.

    For each ``hbar`` the horizon is ``c_frac log(1/hbar) / (2 Lambda_hat)``.
    The growth rate is the slope of ``log r_0`` against ``tau`` over the part
    of the run after ``fit_from`` times the horizon; ``C_env`` is the smallest
    constant with ``r_0 <= C_env exp(2 Lambda_hat tau) hbar^2`` over the scan.
    """
    if not 0 < c_frac <= 1:
        raise ValueError("c_frac must lie in (0, 1]")
    t0 = _time.perf_counter()
    rows, rates = [], {}
    lam_used = None
    for h in hbars:
        g = GridSpec.square(h, N=N) if N is not None else GridSpec.square(h, side=side)
        model = model_factory(h, g)
        a = SymbolGrid.from_function(g, a_fn)
        lam = sampled_lyapunov(model, a) if Lambda is None else Lambda
        lam_used = lam
        T = c_frac * np.log(1 / h) / (2 * lam) if lam > 0 else 1.0
        taus = np.linspace(0, T, n_tau)[1:]
        prop = _as_propagator(model, g)
        cache = cl.FlowCache(model, g, list(taus), mask=cl.energy_mask(model, a))
        sub = []
        for t in taus:
            r = (prop.conjugated_symbol(a, t) - cache.pullback(a, t)).l2()
            row = EhrenfestRow(h, float(t), r, float(np.exp(2 * lam * t) * h**2))
            rows.append(row)
            sub.append(row)
        late = [r for r in sub if r.tau >= fit_from * T]
        rates[h] = fit_semilog([r.tau for r in late], [r.residual_l2 for r in late])
    C_env = max(r.residual_l2 / r.envelope for r in rows)
    slope = np.mean([f.slope for f in rates.values()])
    violations = [r for r in rows if r.residual_l2 > C_env * r.envelope * (1 + 1e-12)]
    manifest = {"hbars": list(hbars), "c_frac": c_frac, "n_tau": n_tau, "N": N, "side": side,
                "wall_time": _time.perf_counter() - t0}
    return EhrenfestTable(rows, lam_used, C_env, rates, float(slope), violations, manifest)


# -- closed forms ------------------------------------------------------------------

def coherent_state(x: np.ndarray, tau: float, x0: float = 1.0, xi0: float = 0.0, hbar: float = 1.0) -> np.ndarray:
    """Harmonic-oscillator coherent state at semiclassical time ``tau``.

    ``exp(-i tau/2) (pi hbar)^(-1/4) exp(-(x - x_t)^2 / (2 hbar)) exp(i (xi_t x - xi_t x_t / 2) / hbar)``
    with ``(x_t, xi_t)`` the classical rotation of ``(x0, xi0)``.
    """
    xt = x0 * np.cos(tau) + xi0 * np.sin(tau)
    kt = -x0 * np.sin(tau) + xi0 * np.cos(tau)
    return (np.exp(-0.5j * tau) * (np.pi * hbar) ** (-0.25) * np.exp(-((x - xt) ** 2) / (2 * hbar))
            * np.exp(1j * (kt * x - kt * xt / 2) / hbar))
