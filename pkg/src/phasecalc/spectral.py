"""Spectral calculus on the periodic symbol box: derivatives and interpolation."""

from __future__ import annotations

import numpy as np
import finufft

from .quantize import GridSpec, SymbolGrid

NUFFT_EPS = 1e-14


def _wavenumbers(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    kx = 2 * np.pi * grid.index / grid.period_x
    kxi = 2 * np.pi * grid.index / grid.period_xi
    return kx, kxi


def coefficients(values: np.ndarray) -> np.ndarray:
    """Centered Fourier coefficients ``c[q1, q2]`` of a centered grid array."""
    N1, N2 = values.shape
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(values))) / (N1 * N2)


def from_coefficients(c: np.ndarray) -> np.ndarray:
    N1, N2 = c.shape
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(c))) * (N1 * N2)


def derivative(a: SymbolGrid, nx: int = 0, nxi: int = 0) -> SymbolGrid:
    """Spectral ``d_x^nx d_xi^nxi a``."""
    if nx == 0 and nxi == 0:
        return a.like(a.values.copy())
    kx, kxi = _wavenumbers(a.grid)
    c = coefficients(a.values)
    c = c * ((1j * kx)[:, None] ** nx) * ((1j * kxi)[None, :] ** nxi)
    return a.like(from_coefficients(c))


def derivatives(a: SymbolGrid, order: int) -> dict[tuple[int, int], np.ndarray]:
    """All mixed derivatives up to total ``order``, sharing one FFT."""
    kx, kxi = _wavenumbers(a.grid)
    c = coefficients(a.values)
    out = {}
    for n in range(order + 1):
        for i in range(n + 1):
            out[(n - i, i)] = from_coefficients(
                c * ((1j * kx)[:, None] ** (n - i)) * ((1j * kxi)[None, :] ** i))
    return out


def tail_fraction(a: SymbolGrid, frac: float = 0.8) -> float:
    """Energy fraction in Fourier modes beyond ``frac`` of the band on either axis."""
    c = coefficients(a.values)
    q = np.abs(a.grid.index) > frac * a.grid.half
    outer = q[:, None] | q[None, :]
    tot = np.sum(np.abs(c) ** 2)
    return float(np.sum(np.abs(c[outer]) ** 2) / tot) if tot > 0 else 0.0


def boundary_fraction(a: SymbolGrid, width: int = 3) -> float:
    """Largest value on the box rim relative to the global max."""
    v = np.abs(a.values)
    m = v.max()
    if m == 0:
        return 0.0
    rim = np.concatenate([v[:width].ravel(), v[-width:].ravel(), v[:, :width].ravel(), v[:, -width:].ravel()])
    return float(rim.max() / m)


class Interpolant:
    """Trigonometric interpolant of a grid symbol, evaluated by type-2 NUFFT."""

    def __init__(self, a: SymbolGrid, eps: float = NUFFT_EPS):
        self.grid = a.grid
        self.coef = np.ascontiguousarray(coefficients(a.values))
        self.eps = eps

    def __call__(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast(x, xi).shape
        x, xi = np.broadcast_to(x, shape).ravel(), np.broadcast_to(xi, shape).ravel()
        if x.size == 0:
            return np.zeros(shape, dtype=complex)
        g = self.grid
        tx = np.mod(2 * np.pi * x / g.period_x + np.pi, 2 * np.pi) - np.pi
        ty = np.mod(2 * np.pi * xi / g.period_xi + np.pi, 2 * np.pi) - np.pi
        out = finufft.nufft2d2(tx, ty, self.coef, eps=self.eps, isign=1)
        return out.reshape(shape)
