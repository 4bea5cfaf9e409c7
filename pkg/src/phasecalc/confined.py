"""Metric-adapted partitions of unity and confinement seminorms.

A family is built on a lattice of centres. Each function is a compact profile
``chi(|rho - rho0|_{g_rho0} / r)`` divided by the sum of all bumps, so the
functions add up to one wherever the lattice covers. Seminorms weigh
``g``-norms of derivatives by the ``g^sigma``-distance to the ``g``-ball
``B_r(rho0)``; that distance is computed exactly for a constant quadratic form.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import classical as cl
from . import metrics as mt
from .fitting import fit_loglog
from .quantize import GridSpec, SymbolGrid


class LatticeError(ValueError):
    pass


class WindowError(ValueError):
    pass


BUMP_BETA = 4.0


def bump(s, beta: float = BUMP_BETA):
    """``exp(-beta / (1 - s^2))`` on ``|s| < 1``, zero outside.

    The Fourier transform decays like ``exp(-sqrt(2 beta k))``. With the
    textbook ``beta = 1`` that tail is slow enough for the third derivative
    of a quartic potential to disperse it across the whole box by ``tau = 0.5``.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1
    out[m] = np.exp(-beta / (1.0 - s[m] ** 2))
    return out


# -- distance to an ellipsoid -----------------------------------------------------

def distance_to_ball(points, center, r: float, G0, Gs, tol: float = 1e-12) -> np.ndarray:
    """``Gs``-distance from each point to ``{z : |z - center|_{G0} <= r}``.

    Both forms are constant. After whitening ``G0`` and diagonalizing ``Gs``
    the projection is ``y_i = l_i d_i / (l_i + mu)`` with the multiplier ``mu``
    fixed by ``|y| = r``; ``mu`` is found by safeguarded Newton iteration on a
    bracket, vectorized over points.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(center, dtype=float)
    L = np.linalg.cholesky(G0)
    Li = np.linalg.inv(L)
    M = Li @ Gs @ Li.T
    lam, Q = np.linalg.eigh((M + M.T) / 2)
    d = (P @ L) @ Q  # whitened displacement in the eigenbasis
    inside = np.sum(d**2, axis=1) <= r**2
    out = np.zeros(len(P))
    if np.all(inside):
        return out
    dd = d[~inside]

    def phi(mu):
        y = lam * dd / (lam + mu[:, None])
        return np.sum(y**2, axis=1) - r**2

    lo = np.zeros(len(dd))
    hi = np.full(len(dd), lam.max())
    while True:
        bad = phi(hi) > 0
        if not bad.any():
            break
        hi[bad] *= 2
    mu = (lo + hi) / 2
    for _ in range(200):
        f = phi(mu)
        done = np.abs(f) < tol * r**2
        if done.all():
            break
        lo = np.where(f > 0, mu, lo)
        hi = np.where(f <= 0, mu, hi)
        y = lam * dd / (lam + mu[:, None])
        df = -2 * np.sum(y**2 / (lam + mu[:, None]), axis=1)
        step = mu - f / df
        ok = (step >= lo) & (step <= hi)
        # converged points stay put while the others iterate
        mu = np.where(done, mu, np.where(ok, step, (lo + hi) / 2))
    y = lam * dd / (lam + mu[:, None])
    out[~inside] = np.sqrt(np.sum(lam * (dd - y) ** 2, axis=1))
    return out


# -- partitions -------------------------------------------------------------------

@dataclass
class ConfinedFamily:
    """Partition functions on a grid.

    ``centers`` are the audited centres; ``all_centers`` also contains the ring
    of extra lattice points used only in the normalizing sum. ``cell`` is the
    coordinate area of one lattice cell, so ``values[i] / cell`` is the density
    normalization whose lattice sum approximates an integral over centres.
    """

    centers: np.ndarray
    radius: float
    bump: object
    metric_field: mt.MetricField
    values: list
    all_centers: np.ndarray
    cell: float
    interior: np.ndarray
    total: SymbolGrid | None = None

    def sum_defect(self) -> float:
        """Largest ``|sum_i phi_i - 1|`` on the covered interior."""
        return float(np.max(np.abs(self.total.values[self.interior] - 1))) if self.interior.any() else 0.0

    def function(self, i: int):
        """Callable ``phi_i(x, xi)`` for derivative measurements off the grid."""
        return _partition_callable(self, self.centers[i])


def _lattice(field: mt.MetricField, r: float, box, spacing=None):
    """Regular lattice with ``g``-spacing at most ``r/2`` on each axis."""
    (x0, x1), (k0, k1) = box
    if spacing is None:
        probe = np.array([[x, k] for x in np.linspace(x0, x1, 7) for k in np.linspace(k0, k1, 7)])
        G = field(probe)
        sx = r / 2 / np.sqrt(np.max(G[:, 0, 0]))
        sk = r / 2 / np.sqrt(np.max(G[:, 1, 1]))
    else:
        sx, sk = spacing
    if sx <= 0 or sk <= 0:
        raise LatticeError("lattice spacing must be positive")
    nx = int(np.floor((x1 - x0) / (2 * sx) + 1e-9))
    nk = int(np.floor((k1 - k0) / (2 * sk) + 1e-9))
    cx, ck = (x0 + x1) / 2, (k0 + k1) / 2
    xs = cx + sx * np.arange(-nx, nx + 1)
    ks = ck + sk * np.arange(-nk, nk + 1)
    return xs, ks, sx, sk


def _raw(field, centers, r, X, XI, profile=bump):
    G = field(centers)
    out = []
    for c, Gc in zip(centers, G):
        dx, dk = X - c[0], XI - c[1]
        q = Gc[0, 0] * dx * dx + 2 * Gc[0, 1] * dx * dk + Gc[1, 1] * dk * dk
        out.append(profile(np.sqrt(q) / r))
    return out


def build_partition(field: mt.MetricField, r: float, grid: GridSpec, box=None, spacing=None,
                    n_audit: int | None = 9, ring: int = 3, profile=bump) -> ConfinedFamily:
    """Normalized-sum partition on ``grid``.

    Parameters
    ----------
    profile : callable
        Radial profile ``chi`` supported in ``|s| < 1``.
    box : ((x0, x1), (xi0, xi1)), optional
        Region whose lattice centres are audited. Default: the central
        ``3 x 3`` block.
    n_audit : int or None
        Keep only the ``n_audit`` centres closest to the box centre.
    ring : int
        Extra lattice layers added around the audited block for the
        normalizing sum.
    """
    if box is None:
        s = r / 2
        box = ((-s, s), (-s, s))
    xs, ks, sx, sk = _lattice(field, r, box, spacing)
    ex_x = xs[0] + sx * np.arange(-ring, len(xs) + ring)
    ex_k = ks[0] + sk * np.arange(-ring, len(ks) + ring)
    allc = np.array([[x, k] for x in ex_x for k in ex_k])
    aud = np.array([[x, k] for x in xs for k in ks])
    mid = np.array([np.mean(box[0]), np.mean(box[1])])
    if n_audit is not None and len(aud) > n_audit:
        order = np.argsort(np.linalg.norm(aud - mid, axis=1), kind="stable")
        aud = aud[np.sort(order[:n_audit])]
    if len(aud) == 0:
        raise LatticeError("box contains no lattice centres")
    X, XI = grid.mesh()
    hx, hk = grid.period_x / 2, grid.period_xi / 2
    if np.any(np.abs(allc[:, 0]) + r / np.sqrt(np.min(field(allc)[:, 0, 0])) > hx) or \
       np.any(np.abs(allc[:, 1]) + r / np.sqrt(np.min(field(allc)[:, 1, 1])) > hk):
        raise LatticeError("extended lattice does not fit in the symbol box")
    chi = profile
    raws = _raw(field, allc, r, X, XI, chi)
    denom = np.sum(raws, axis=0)
    # covered where every lattice neighbour's bump is accounted for
    inner = (np.abs(X - mid[0]) <= (len(xs) // 2 + ring - 2) * sx) & (np.abs(XI - mid[1]) <= (len(ks) // 2 + ring - 2) * sk)
    interior = inner & (denom > 0)
    safe = np.where(denom > 0, denom, 1.0)
    idx = [int(np.argmin(np.linalg.norm(allc - c, axis=1))) for c in aud]
    vals = [SymbolGrid(grid, np.where(denom > 0, raws[i] / safe, 0.0), {"center": allc[i].tolist()}) for i in idx]
    total = SymbolGrid(grid, np.where(denom > 0, np.sum(raws, axis=0) / safe, 0.0))
    return ConfinedFamily(aud, r, chi, field, vals, allc, sx * sk, interior, total)


def _partition_callable(fam: ConfinedFamily, center):
    field, r, allc = fam.metric_field, fam.radius, fam.all_centers

    def f(X, XI):
        raws = _raw(field, allc, r, X, XI, fam.bump)
        den = np.sum(raws, axis=0)
        i = int(np.argmin(np.linalg.norm(allc - np.asarray(center), axis=1)))
        return np.where(den > 0, raws[i] / np.where(den > 0, den, 1), 0.0)
    return f


def partition_scaling(field: mt.MetricField, radii=(0.5, 0.25, 0.125), ells=(0, 1, 2),
                      samples: int = 241, profile=bump) -> dict:
    """Fitted exponents of ``sup |nabla^l (phi / cell)|`` against ``r``.

    Derivatives are taken by repeated second-order differences on a local
    sampling of the central function, ``samples`` points per axis across its
    support; the density normalization divides by the lattice cell area.
    """
    sups = {l: [] for l in ells}
    for r in radii:
        g = GridSpec.square(1.0, N=3)  # placeholder grid, only the lattice is used
        xs, ks, sx, sk = _lattice(field, r, ((-r / 2, r / 2), (-r / 2, r / 2)))
        fam = ConfinedFamily(np.zeros((1, 2)), r, profile, field, [],
                             np.array([[x, k] for x in sx * np.arange(-4, 5) for k in sk * np.arange(-4, 5)]),
                             sx * sk, np.zeros((1, 1), dtype=bool))
        f = _partition_callable(fam, (0.0, 0.0))
        G0 = field(np.zeros((1, 2)))[0]
        ext = 1.05 * r / np.sqrt(np.diag(G0))
        u = np.linspace(-ext[0], ext[0], samples)
        v = np.linspace(-ext[1], ext[1], samples)
        U, Vv = np.meshgrid(u, v, indexing="ij")
        F = f(U, Vv) / fam.cell
        du, dv = u[1] - u[0], v[1] - v[0]
        for l in ells:
            sups[l].append(_deriv_sup(F, du, dv, l, G0))
    fits = {l: fit_loglog(radii, sups[l]) for l in ells}
    return {"radii": list(radii), "sups": sups, "fits": fits,
            "expected": {l: -l - 2 for l in ells}}


def _deriv_sup(F, du, dv, l, G0, n_angles: int = 90) -> float:
    if l == 0:
        return float(np.max(np.abs(F)))
    parts = {(0, 0): F}
    for n in range(1, l + 1):
        for i in range(n + 1):
            base = parts[(n - 1 - i, i)] if i < n else parts[(0, n - 1)]
            axis = 0 if i < n else 1
            step = du if axis == 0 else dv
            parts[(n - i, i)] = np.gradient(base, step, axis=axis)
    return _sym_norm({k: v for k, v in parts.items() if sum(k) == l}, l, G0, n_angles)


def _sym_norm(d: dict, k: int, G0, n_angles: int = 180) -> float:
    """``sup_{|v|_G0 = 1} max_rho |sum_i C(k,i) v_x^(k-i) v_xi^i d^{(k-i,i)}(rho)|``."""
    if k == 0:
        return float(np.max(np.abs(d[(0, 0)])))
    L = np.linalg.cholesky(G0)
    Lit = np.linalg.inv(L).T
    best = 0.0
    for th in np.linspace(0, np.pi, n_angles, endpoint=False):
        v = Lit @ np.array([np.cos(th), np.sin(th)])
        acc = 0
        for i in range(k + 1):
            acc = acc + comb(k, i) * v[0] ** (k - i) * v[1] ** i * d[(k - i, i)]
        best = max(best, float(np.max(np.abs(acc))))
    return best


# -- seminorms --------------------------------------------------------------------

_D1 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def _fd(v: np.ndarray, axis: int, step: float) -> np.ndarray:
    out = np.zeros_like(v)
    for j, c in enumerate(_D1):
        if c:
            out += c * np.roll(v, 4 - j, axis=axis)
    return out / step


def local_derivatives(a: SymbolGrid, order: int) -> dict[tuple[int, int], np.ndarray]:
    """Mixed partials up to ``order`` by an eighth-order periodic central stencil.

    Unlike spectral derivatives these stay local: a compactly supported
    symbol has exactly zero derivatives away from its support, so weighted
    seminorms are not polluted by far-field ringing.
    """
    g = a.grid
    out = {(0, 0): a.values}
    for n in range(1, order + 1):
        for i in range(n + 1):
            if i < n:
                out[(n - i, i)] = _fd(out[(n - 1 - i, i)], 0, g.hx)
            else:
                out[(0, n)] = _fd(out[(0, n - 1)], 1, g.dxi)
    return out


def confinement_seminorm(psi: SymbolGrid, rho0, r: float, G0, k: int, l: float, hbar: float | None = None,
                         derivs: dict | None = None, n_angles: int = 180) -> float:
    """``max |nabla^k psi|_{G0} <dist_{G0^sigma}(rho, B_r(rho0))>^l`` over the grid.

    The ``k``-th derivative is measured as a symmetric form through its
    values on the diagonal ``v, ..., v``, with local finite differences. ``hbar`` is the symplectic scaling
    for ``G0^sigma`` (default: the grid's).
    """
    if k > 4:
        raise ValueError("derivative order k must be at most 4")
    G0 = np.asarray(G0, dtype=float)
    h = psi.grid.hbar if hbar is None else hbar
    Gs = mt.sigma_dual(G0, h)
    if derivs is None:
        derivs = local_derivatives(psi, k)
    X, XI = psi.grid.mesh()
    pts = np.stack([X.ravel(), XI.ravel()], axis=1)
    dist = distance_to_ball(pts, rho0, r, G0, Gs).reshape(X.shape)
    w = (1 + dist**2) ** (l / 2)
    dk = {key: v * w for key, v in derivs.items() if sum(key) == k}
    return _sym_norm(dk, k, G0, n_angles)


def seminorm_index(psi: SymbolGrid, rho0, r, G0, k_max: int, l: float, hbar=None, derivs=None) -> float:
    """``max_{k <= k_max}`` of the confinement seminorms at weight ``l``."""
    if derivs is None:
        derivs = local_derivatives(psi, k_max)
    return max(confinement_seminorm(psi, rho0, r, G0, k, l, hbar, derivs) for k in range(k_max + 1))


# -- radius law and evolution audit ----------------------------------------------

@dataclass
class ConfinementRadiusLaw:
    r0: float
    Lambda: float
    Upsilon: float = 0.0
    Cg: float = 1.0
    Cp: float = 0.0
    h_bar_g: float = 1.0
    r_g: float = np.inf

    @property
    def rate(self) -> float:
        return 2 * (self.Lambda + self.Upsilon) + self.Cg**3 * self.Cp * self.h_bar_g

    def r_of_t(self, tau: float) -> float:
        return self.r0 * float(np.exp(self.rate * abs(tau)))

    def check(self, T: float) -> None:
        if self.r_of_t(T) > self.r_g:
            raise WindowError(f"r(T) = {self.r_of_t(T):.6g} exceeds the slow-variation radius r_g = {self.r_g:.6g}; "
                              "the confinement radius must satisfy r(t) <= r_g")


@dataclass
class AuditRow:
    center_x: float
    center_xi: float
    tau: float
    l: float
    seminorm_initial: float
    seminorm_evolved: float
    C_local: float


@dataclass
class ConfinedAudit:
    rows: list
    C_audit: float
    spread: dict
    sum_defect: float
    manifest: dict = field(default_factory=dict)


def family_law(model: cl.HamiltonianModel, family: ConfinedFamily, tau: float, max_points: int = 400,
               n_times: int = 6) -> tuple[ConfinementRadiusLaw, float]:
    """Radius law and ``T_E`` with ``Lambda_hat`` and ``C_p`` sampled over the audited supports.

    The cloud is the union of the supports of the audited functions and their
    images along the backward flow up to ``tau``, which is where the evolved
    symbols live.
    """
    grid = family.values[0].grid
    X, XI = grid.mesh()
    sup = np.zeros(X.shape, dtype=bool)
    for v in family.values:
        sup |= np.abs(v.values) > 0
    pts = np.stack([X[sup], XI[sup]], axis=1)
    pts = pts[:: max(1, len(pts) // max_points)]
    traj = cl.flow_points(model, pts, list(np.linspace(-abs(tau), 0.0, n_times)))
    cloud = np.concatenate(list(traj.values()))
    fld = family.metric_field
    lam, _ = cl.lyapunov_bound(model, fld, cloud)
    Cp = cl.cp_constant(model, fld, cloud)
    hb = float(np.max(mt.gain(fld(cloud), fld.hbar)))
    law = ConfinementRadiusLaw(family.radius, lam, 0.0, 1.0, Cp, hb)
    return law, mt.ehrenfest_time(lam, 0.0, hb)


def evolve_confined_audit(model: cl.HamiltonianModel, family: ConfinedFamily, tau: float,
                          law: ConfinementRadiusLaw, l_max: int = 2, k_max: int = 2, offset: int = 4,
                          propagator=None, T_E: float | None = None) -> ConfinedAudit:
    """Evolve each audited partition function and compare confinement seminorms.

    The evolved symbol is measured for ``g(tau) = exp(2 (Lambda + 2 Upsilon) tau) g``
    around ``phi^{-tau}(rho0)`` with radius ``r(tau)``, the initial one for ``g``
    around ``rho0`` with radius ``r0`` at weight ``l + offset``.
    """
    from . import egorov as eg

    law.check(tau)
    if T_E is not None and abs(tau) > T_E / 2 + 1e-15:
        raise WindowError(f"tau = {tau} exceeds half the Ehrenfest time T_E/2 = {T_E / 2}")
    t0 = _time.perf_counter()
    grid = family.values[0].grid
    prop = propagator or eg.Propagator(eg.model_operator(model, grid))
    G = family.metric_field(family.centers)
    s = mt.TimeScaling(law.Lambda, law.Upsilon, law.h_bar_g)
    back = cl.flow_points(model, family.centers, [-tau])[-float(tau)] if tau else family.centers
    rows = []
    for i, (c, psi) in enumerate(zip(family.centers, family.values)):
        G0 = G[i]
        Gt = mt.time_scaled_metric(G0, s, tau)
        psit = prop.conjugated_symbol(psi, tau)
        d0 = local_derivatives(psi, k_max)
        dt = local_derivatives(psit, k_max)
        for l in range(l_max + 1):
            ini = seminorm_index(psi, c, law.r0, G0, k_max, l + offset, derivs=d0)
            evo = seminorm_index(psit, back[i], law.r_of_t(tau), Gt, k_max, l, derivs=dt)
            rows.append(AuditRow(float(c[0]), float(c[1]), float(tau), l, ini, evo, evo / ini))
    C = max(r.C_local for r in rows)
    spread = {}
    for l in range(l_max + 1):
        v = [r.C_local for r in rows if r.l == l]
        spread[l] = max(v) / min(v)
    return ConfinedAudit(rows, C, spread, family.sum_defect(),
                         {"tau": tau, "l_max": l_max, "k_max": k_max, "offset": offset,
                          "wall_time": _time.perf_counter() - t0})


def leading_defect_scan(model_factory, field_factory, hbars, tau: float, r: float = 0.75,
                        N: int | None = None, side: float | None = 6.36,
                        center_index: int | None = None) -> dict:
    """``|psi^tau - psi o phi^tau|_{L^2}`` for the central partition function over ``hbar``.

    Grids have ``N`` nodes when given, else a square box of side ``side``.
    """
    from . import egorov as eg

    rows = []
    for h in hbars:
        g = GridSpec.square(h, N=N) if N is not None else GridSpec.square(h, side=side)
        model = model_factory(h, g)
        fam = build_partition(field_factory(h), r, g)
        i = len(fam.centers) // 2 if center_index is None else center_index
        psi = fam.values[i]
        conj = eg.conjugated_symbol(model, psi, tau)
        pb = cl.pullback_symbol(model, psi, tau)
        rows.append({"hbar": h, "defect": (conj - pb).l2(), "N": g.N})
    fit = fit_loglog([r["hbar"] for r in rows], [r["defect"] for r in rows])
    return {"rows": rows, "fit": fit}
