"""Exact discrete semiclassical Weyl quantization on a periodic 1D grid.

Model
-----
Position nodes ``x_m = m * dx`` with ``m`` centered in ``[-(N-1)/2, (N-1)/2]``,
``dx = L / N`` and ``N`` odd. Momentum nodes ``xi_k = 2 pi hbar k / L`` with the
same centered range. A symbol is sampled on an ``N x N`` grid whose position
axis is the half-grid ``y_J = J dx / 2`` (``J`` centered) and whose momentum
axis is ``xi_k``. Quantization is

    M[m, n] = (1/N) sum_k a(y_J, xi_k) exp(i xi_k (x_m - x_n) / hbar),

where ``J`` is the centered residue of ``m + n`` modulo ``N``. Because ``N`` is
odd the map ``(m, n) -> (J, m - n mod N)`` is a bijection of ``Z_N x Z_N``, so
quantization is an exactly invertible linear map between symbol grids and
``N x N`` matrices, and both directions cost ``O(N^2 log N)``.

The symbol grid covers ``|x| < L/4``, ``|xi| < pi hbar N / L``. The model is
torus Weyl quantization of the symbol extended ``L/2``-periodically in ``x``;
each operator therefore carries a copy ("ghost") of its symbol translated by
``L/2``, located at the seam of the position box. For symbols and dynamics
confined to the symbol box the ghost evolves exactly like the original, and
symbol extraction is faithful.

Normalization
-------------
With cell area ``dA = (dx/2) * dxi = pi hbar / N`` the grid pairing is
``<a, b>_grid = sum conj(a) b dA / (2 pi hbar) = sum conj(a) b / (2N)``. The
ghost doubles the trace, so ``<a, b>_grid = C_GRID * tr(Op(a)^* Op(b))`` with
``C_GRID = 1/2``. Wigner functions of unit vectors integrate to one against the
same cell weight.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import erf

C_GRID = 0.5


class GridError(ValueError):
    """Raised on an invalid grid or mismatched grids."""


@dataclass(frozen=True)
class GridSpec:
    """Periodic discretization parameters.

    Parameters
    ----------
    L : float
        Length of the position box ``[-L/2, L/2)``.
    N : int
        Odd number of position nodes.
    hbar : float
        Semiclassical parameter in ``(0, 1]``.
    """

    L: float
    N: int
    hbar: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3 or self.N % 2 == 0:
            raise GridError(f"N must be odd and >= 3, got {self.N}")
        if not self.L > 0:
            raise GridError(f"L must be positive, got {self.L}")
        if not 0 < self.hbar <= 1:
            raise GridError(f"hbar must lie in (0, 1], got {self.hbar}")

    @classmethod
    def square(cls, hbar: float, N: int | None = None, side: float | None = None) -> "GridSpec":
        """Grid whose symbol box is a square.

        Give exactly one of ``N`` (box side follows) or ``side`` (smallest odd
        ``N`` whose square box has at least that side).
        """
        if (N is None) == (side is None):
            raise GridError("give exactly one of N or side")
        if N is None:
            N = int(np.ceil(side**2 / (np.pi * hbar)))
            N += 1 - N % 2
        return cls(L=2.0 * np.sqrt(np.pi * hbar * N), N=int(N), hbar=hbar)

    @property
    def half(self) -> int:
        return (self.N - 1) // 2

    @property
    def index(self) -> np.ndarray:
        return np.arange(-self.half, self.half + 1)

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def hx(self) -> float:
        """Spacing of the symbol position axis (the half-grid)."""
        return self.L / (2 * self.N)

    @property
    def dxi(self) -> float:
        return 2 * np.pi * self.hbar / self.L

    @property
    def x_nodes(self) -> np.ndarray:
        return self.index * self.dx

    @property
    def xs(self) -> np.ndarray:
        """Symbol position axis ``y_J``."""
        return self.index * self.hx

    @property
    def xis(self) -> np.ndarray:
        return self.index * self.dxi

    @property
    def period_x(self) -> float:
        return self.N * self.hx

    @property
    def period_xi(self) -> float:
        return self.N * self.dxi

    @property
    def cell(self) -> float:
        """Pairing weight ``dA / (2 pi hbar) = 1 / (2N)``."""
        return 1.0 / (2 * self.N)

    @property
    def area(self) -> float:
        """Phase-space area of one symbol cell, ``hx * dxi = pi hbar / N``."""
        return self.hx * self.dxi

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.xis, indexing="ij")

    def interior(self, frac: float = 1 / 3) -> np.ndarray:
        """Boolean mask of the central rectangle, ``frac`` of the half-box on each axis."""
        X, XI = self.mesh()
        return (np.abs(X) < frac * self.period_x / 2) & (np.abs(XI) < frac * self.period_xi / 2)

    def plateau(self, frac: float = 0.7, width: float = 0.06) -> np.ndarray:
        """Product of erf plateaus in ``x`` and ``xi``, resolved by the grid.

        Multiplying a polynomial by this makes it band-limited while leaving it
        unchanged to machine precision on ``interior()``.
        """
        X, XI = self.mesh()
        out = np.ones_like(X)
        for Z, P in ((X, self.period_x), (XI, self.period_xi)):
            z0, d = frac * P / 2, width * P / 2
            out = out * (erf((z0 - Z) / d) + erf((z0 + Z) / d)) / 2
        return out

    def same_as(self, other: "GridSpec") -> bool:
        return self.N == other.N and np.isclose(self.L, other.L, rtol=1e-14) and np.isclose(
            self.hbar, other.hbar, rtol=1e-14)


def _check_same(g1: GridSpec, g2: GridSpec) -> None:
    if not g1.same_as(g2):
        raise GridError(f"grid mismatch: {g1} vs {g2}")


@dataclass
class SymbolGrid:
    """Symbol values on the ``(y_J, xi_k)`` grid, indexed ``values[J, k]``."""

    grid: GridSpec
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.N, self.grid.N):
            raise GridError(f"values must have shape {(self.grid.N,) * 2}, got {self.values.shape}")

    @classmethod
    def from_function(cls, grid: GridSpec, f, **meta) -> "SymbolGrid":
        X, XI = grid.mesh()
        vals = np.broadcast_to(np.asarray(f(X, XI), dtype=complex), X.shape)
        return cls(grid, vals.copy(), dict(meta))

    @classmethod
    def constant(cls, grid: GridSpec, c: complex = 1.0) -> "SymbolGrid":
        return cls(grid, np.full((grid.N, grid.N), c, dtype=complex), {"kind": "constant"})

    def like(self, values, **meta) -> "SymbolGrid":
        return SymbolGrid(self.grid, values, {**self.meta, **meta})

    def __add__(self, other):
        if isinstance(other, SymbolGrid):
            _check_same(self.grid, other.grid)
            return self.like(self.values + other.values)
        return self.like(self.values + other)

    def __sub__(self, other):
        if isinstance(other, SymbolGrid):
            _check_same(self.grid, other.grid)
            return self.like(self.values - other.values)
        return self.like(self.values - other)

    def __mul__(self, c):
        if isinstance(c, SymbolGrid):
            _check_same(self.grid, c.grid)
            return self.like(self.values * c.values)
        return self.like(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    def inner(self, other: "SymbolGrid") -> complex:
        """Grid pairing ``sum conj(a) b dA / (2 pi hbar)``."""
        _check_same(self.grid, other.grid)
        return complex(np.vdot(self.values, other.values) * self.grid.cell)

    def norm(self) -> float:
        """Hilbert-Schmidt normalized norm, ``sqrt(<a, a>_grid)``."""
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.cell))

    def l2(self, mask: np.ndarray | None = None) -> float:
        """Phase-space ``L^2(dx dxi)`` norm, optionally over a mask.

        Unlike ``norm`` this carries no ``1/(2 pi hbar)``, so it is the norm to
        use when fitting powers of ``hbar`` for fixed symbols.
        """
        v = self.values if mask is None else self.values[mask]
        return float(np.sqrt(np.sum(np.abs(v) ** 2) * self.grid.area))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    # -- serialization -------------------------------------------------
    def to_bytes(self) -> bytes:
        head = struct.pack("<dqd", self.grid.L, self.grid.N, self.grid.hbar)
        body = np.ascontiguousarray(self.values, dtype="<c16").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SymbolGrid":
        L, N, hbar = struct.unpack("<dqd", blob[:24])
        vals = np.frombuffer(blob[24:], dtype="<c16").reshape(N, N)
        return cls(GridSpec(L, int(N), hbar), vals.copy())

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SymbolGrid":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self, path) -> None:
        X, XI = self.grid.mesh()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "xi", "re", "im"])
            for row in zip(X.ravel(), XI.ravel(), self.values.real.ravel(), self.values.imag.ravel()):
                w.writerow([f"{v:.17g}" for v in row])


@dataclass
class MatrixOperator:
    """Dense operator on the position grid."""

    grid: GridSpec
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.shape != (self.grid.N, self.grid.N):
            raise GridError(f"entries must have shape {(self.grid.N,) * 2}")

    def __matmul__(self, other: "MatrixOperator") -> "MatrixOperator":
        _check_same(self.grid, other.grid)
        return MatrixOperator(self.grid, self.entries @ other.entries)

    def adjoint(self) -> "MatrixOperator":
        return MatrixOperator(self.grid, self.entries.conj().T)

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.entries @ u


@lru_cache(maxsize=16)
def _perm(N: int):
    """Index maps between matrix entries ``(m, n)`` and ``(J, s)`` storage."""
    h = (N - 1) // 2
    m = np.arange(N)[:, None]
    n = np.arange(N)[None, :]
    j = (m + n - h) % N
    s = (m - n) % N
    phase = np.exp(-2j * np.pi * h * np.arange(N) / N)
    return j, s, phase


def weyl_quantize(a: SymbolGrid) -> MatrixOperator:
    """Quantize a symbol grid; ``a = 1`` maps to the identity exactly."""
    N = a.grid.N
    j, s, phase = _perm(N)
    B = np.fft.ifft(a.values, axis=1) * phase[None, :]
    return MatrixOperator(a.grid, B[j, s])


def weyl_symbol(M: MatrixOperator) -> SymbolGrid:
    """Exact inverse of :func:`weyl_quantize`."""
    N = M.grid.N
    j, s, phase = _perm(N)
    B = np.empty((N, N), dtype=complex)
    B[j, s] = M.entries
    return SymbolGrid(M.grid, np.fft.fft(B * phase.conj()[None, :], axis=1))


def wigner_transform(grid: GridSpec, u: np.ndarray, v: np.ndarray | None = None) -> SymbolGrid:
    """Discrete cross-Wigner function.

    Normalized so that ``<Op(a) u, v> = sum(a * W) / (2N)`` (bilinear in ``a``)
    and, for discretely normalized Gaussians, ``W`` approximates the continuum
    ``int conj(v(x + s/2)) u(x - s/2) exp(i xi s / hbar) ds``.
    """
    u = np.asarray(u, dtype=complex)
    v = u if v is None else np.asarray(v, dtype=complex)
    if u.shape != (grid.N,) or v.shape != (grid.N,):
        raise GridError(f"state vectors must have length {grid.N}")
    # <Op(a)u, v> = sum_{mn} conj(v_m) M_mn u_n; transpose of the quantization map.
    K = MatrixOperator(grid, np.outer(v.conj(), u))
    N = grid.N
    j, s, phase = _perm(N)
    B = np.empty((N, N), dtype=complex)
    B[j, s] = K.entries
    # sum_s B[J,s] exp(+2 pi i k_c s / N) = N * ifft(B * phase)[k]
    W = 2.0 * N * np.fft.ifft(B * phase[None, :], axis=1)
    return SymbolGrid(grid, W, {"kind": "wigner"})


def hs_isometry_check(a: SymbolGrid, b: SymbolGrid) -> float:
    """Defect of ``<a, b>_grid = C_GRID * tr(Op(a)^* Op(b))``."""
    _check_same(a.grid, b.grid)
    A, B = weyl_quantize(a).entries, weyl_quantize(b).entries
    return abs(a.inner(b) - C_GRID * np.vdot(A, B))


def position_operator_diag(a_of_x, grid: GridSpec) -> np.ndarray:
    """Diagonal of ``Op(a(x))``: ``a`` sampled on the ``L/2``-periodized axis."""
    J = (2 * grid.index + grid.half) % grid.N
    return np.asarray(a_of_x(grid.xs[J]))
