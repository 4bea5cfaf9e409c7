"""Moyal products, their asymptotic expansion terms and remainders.

The exact product is read off the matrix model: ``a # b = symbol(Op(a) Op(b))``.
The expansion terms use the one-dimensional binomial form of the bidifferential
operator with spectral derivatives,

    P_j(a, b) = (hbar / 2i)^j / j! * sum_k (-1)^k C(j, k)
                (d_xi^{j-k} d_x^k a) (d_x^{j-k} d_xi^k b),

so that ``P_1 = (hbar / 2i) {a, b}`` with ``{a, b} = d_xi a d_x b - d_x a d_xi b``
and ``x # xi - xi # x = i hbar``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import spectral
from .classical import HamiltonianModel
from .quantize import GridSpec, SymbolGrid, weyl_quantize, weyl_symbol, _check_same

MAX_ORDER = 6
# spectral energy beyond 80% of the band above which derivatives are flagged
TAIL_WARN = 1e-12


class UnsupportedOrder(ValueError):
    pass


class _Derivs:
    """Mixed partials of a grid symbol or of an analytic model on a grid."""

    def __init__(self, a, grid: GridSpec):
        self.a, self.grid = a, grid
        self._cache: dict = {}
        if isinstance(a, SymbolGrid):
            _check_same(a.grid, grid)
            self._coef = spectral.coefficients(a.values)
            self._kx = 2j * np.pi * grid.index / grid.period_x
            self._kxi = 2j * np.pi * grid.index / grid.period_xi
        else:
            self._X, self._XI = grid.mesh()

    def __call__(self, nx: int, nxi: int) -> np.ndarray:
        key = (nx, nxi)
        if key not in self._cache:
            if isinstance(self.a, SymbolGrid):
                c = self._coef * (self._kx[:, None] ** nx) * (self._kxi[None, :] ** nxi)
                self._cache[key] = spectral.from_coefficients(c)
            else:
                self._cache[key] = np.broadcast_to(self.a.partial(nx, nxi, self._X, self._XI),
                                                   self._X.shape)
        return self._cache[key]


def _grid_of(a, b) -> GridSpec:
    ga = a.grid if isinstance(a, SymbolGrid) else None
    gb = b.grid if isinstance(b, SymbolGrid) else None
    if ga is None and gb is None:
        raise ValueError("at least one argument must be a SymbolGrid")
    if ga is not None and gb is not None:
        _check_same(ga, gb)
    return ga or gb


def moyal_product(a: SymbolGrid, b: SymbolGrid) -> SymbolGrid:
    """Exact product in the matrix model."""
    _check_same(a.grid, b.grid)
    out = weyl_symbol(weyl_quantize(a) @ weyl_quantize(b))
    out.meta = {"kind": "moyal_product"}
    return out


def poisson_bracket(a, b) -> SymbolGrid:
    """``{a, b} = d_xi a d_x b - d_x a d_xi b``; analytic models are accepted for either slot."""
    g = _grid_of(a, b)
    da, db = _Derivs(a, g), _Derivs(b, g)
    meta = {"kind": "poisson"}
    tails = [spectral.tail_fraction(s) for s in (a, b) if isinstance(s, SymbolGrid)]
    if tails and max(tails) > TAIL_WARN:
        meta["aliasing_warning"] = {"tail_fraction": max(tails)}
    return SymbolGrid(g, da(0, 1) * db(1, 0) - da(1, 0) * db(0, 1), meta)


def _term(j: int, da: _Derivs, db: _Derivs, hbar: float) -> np.ndarray:
    acc = 0
    for k in range(j + 1):
        acc = acc + (-1) ** k * math.comb(j, k) * da(k, j - k) * db(j - k, k)
    return (hbar / 2j) ** j / math.factorial(j) * acc


def moyal_term(j: int, a, b) -> SymbolGrid:
    """``P_j(a, b)`` for ``j <= 6``."""
    if j < 0 or j > MAX_ORDER:
        raise UnsupportedOrder(f"expansion order {j} outside [0, {MAX_ORDER}]")
    g = _grid_of(a, b)
    da, db = _Derivs(a, g), _Derivs(b, g)
    return SymbolGrid(g, np.asarray(_term(j, da, db, g.hbar)) * np.ones((g.N, g.N)), {"kind": f"P_{j}"})


@dataclass
class MoyalExpansion:
    terms: list
    remainder: SymbolGrid
    j0: int
    hbar: float

    @property
    def product(self) -> SymbolGrid:
        out = self.remainder
        for t in self.terms:
            out = out + t
        return out


def moyal_expansion(j0: int, a: SymbolGrid, b: SymbolGrid, product: SymbolGrid | None = None) -> MoyalExpansion:
    if j0 < 0 or j0 > MAX_ORDER:
        raise UnsupportedOrder(f"expansion order {j0} outside [0, {MAX_ORDER}]")
    ab = moyal_product(a, b) if product is None else product
    da, db = _Derivs(a, a.grid), _Derivs(b, b.grid)
    terms = [SymbolGrid(a.grid, _term(j, da, db, a.grid.hbar), {"kind": f"P_{j}"}) for j in range(j0 + 1)]
    rem = ab.values - sum(t.values for t in terms)
    return MoyalExpansion(terms, SymbolGrid(a.grid, rem, {"kind": f"remainder_{j0 + 1}"}), j0, a.grid.hbar)


def moyal_remainder(j0: int, a: SymbolGrid, b: SymbolGrid) -> SymbolGrid:
    """``a # b - sum_{j <= j0} P_j(a, b)``."""
    return moyal_expansion(j0, a, b).remainder


def commutator_defect(a: SymbolGrid, b: SymbolGrid) -> SymbolGrid:
    """``i (a # b - b # a) / hbar - {a, b}``, of size ``O(hbar^2)``.

    With ``{x, xi} = -1`` and ``x # xi - xi # x = i hbar`` the scaled
    commutator carries the factor ``i / hbar``, matching the generator
    ``i (p # a - a # p) / hbar`` of the conjugated dynamics.
    """
    h = a.grid.hbar
    c = moyal_product(a, b) - moyal_product(b, a)
    return c * (1j / h) - poisson_bracket(a, b)


@dataclass
class ScanRow:
    hbar: float
    j0: int
    remainder_norm: float
    N: int


def moyal_scan(a_fn, b_fn, hbars, j0s, side: float = 6.0):
    """Remainder norms over an ``hbar`` sweep with fixed symbols.

    Each ``hbar`` gets a square box of the given side, so the symbols are
    sampled identically and only ``hbar`` changes. Returns the rows and one
    log-log fit per ``j0``.
    """
    from .fitting import fit_loglog

    rows = []
    for h in hbars:
        g = GridSpec.square(h, side=side)
        a, b = SymbolGrid.from_function(g, a_fn), SymbolGrid.from_function(g, b_fn)
        ab = moyal_product(a, b)
        for j0 in j0s:
            r = moyal_expansion(j0, a, b, product=ab).remainder
            rows.append(ScanRow(h, j0, r.l2(), g.N))
    fits = {j0: fit_loglog([r.hbar for r in rows if r.j0 == j0],
                           [r.remainder_norm for r in rows if r.j0 == j0]) for j0 in j0s}
    return rows, fits
