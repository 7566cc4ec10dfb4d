"""Uniform-grid quadrature and convolution helpers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

EXP_GUARD = 700.0


def uniform_grid(x_min: float, x_max: float, n_points: int) -> np.ndarray:
    if n_points < 2 or not x_max > x_min:
        raise ValueError("grid needs n_points >= 2 and x_max > x_min")
    return np.linspace(x_min, x_max, n_points)


def trapezoid_weights(n: int, dx: float) -> np.ndarray:
    w = np.full(n, dx)
    w[0] = w[-1] = 0.5 * dx
    return w


def grid_spacing(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    dx = (x[-1] - x[0]) / (x.size - 1)
    if not dx > 0:
        raise ValueError("grid must be strictly increasing")
    return dx


def convolve_on_grid(func, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(func * values)(x_i) = sum_j w_j func(x_i - x_j) values_j, trapezoid weights.

    Evaluated as an exact discrete convolution through FFT; the kernel is
    sampled on all 2n-1 grid offsets, so nothing is truncated.
    """
    n = x.size
    dx = grid_spacing(x)
    offsets = dx * np.arange(-(n - 1), n)
    kern = func(offsets)
    full = fftconvolve(kern, trapezoid_weights(n, dx) * values)
    return full[n - 1 : 2 * n - 1]


def convolve_at(func, values: np.ndarray, x: np.ndarray, points, chunk: int = 256) -> np.ndarray:
    """Direct trapezoid quadrature of (func * values) at arbitrary points."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    w = trapezoid_weights(x.size, grid_spacing(x)) * values
    out = np.empty(points.size)
    for s in range(0, points.size, chunk):
        p = points[s : s + chunk]
        out[s : s + chunk] = func(p[:, None] - x[None, :]) @ w
    return out


def integrate(values: np.ndarray, x: np.ndarray) -> float:
    return float(np.sum(trapezoid_weights(x.size, grid_spacing(x)) * values))


@dataclass(frozen=True)
class GridFunction:
    """Real function sampled on a uniform grid."""

    x: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def l2_norm(self) -> float:
        return float(np.sqrt(integrate(self.values**2, self.x)))

    def to_csv(self, path, header: str = "x,value") -> None:
        np.savetxt(path, np.column_stack([self.x, self.values]), delimiter=",",
                   header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0].copy(), data[:, 1].copy())


def phase_sum(freqs, nodes, weights, block: int = 32) -> np.ndarray:
    """sum_j weights_j exp(i freqs_k nodes_j) for every k.

    On a uniform frequency grid the phases are built by a multiplicative
    recurrence restarted every ``block`` frequencies, which keeps rounding
    drift near machine precision while avoiding one complex exp per term.
    """
    f = np.asarray(freqs, dtype=float)
    x = np.asarray(nodes, dtype=float)
    w = np.asarray(weights)
    out = np.empty(f.size, dtype=complex)
    if f.size > 2 and np.allclose(np.diff(f), f[1] - f[0], rtol=1e-12, atol=0.0):
        step = np.exp(1j * (f[1] - f[0]) * x)
        buf = np.empty((block, x.size), dtype=complex)
        for s in range(0, f.size, block):
            k = min(block, f.size - s)
            buf[0] = np.exp(1j * f[s] * x)
            buf[1:k] = step
            np.cumprod(buf[:k], axis=0, out=buf[:k])
            out[s : s + k] = buf[:k] @ w
        return out
    for s in range(0, f.size, 128):
        out[s : s + 128] = np.exp(1j * np.outer(f[s : s + 128], x)) @ w
    return out
