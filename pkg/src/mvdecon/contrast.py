"""Minimal-contrast estimation of alpha and construction of Psi_N."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._quadrature import GridFunction
from .errors import ConfigError, ExtrapolationError


def _unit(t: np.ndarray) -> np.ndarray:
    return (t > 0) & (t < 1)


def _bump(t):
    out = np.zeros_like(t)
    k = _unit(t)
    out[k] = np.exp(-1.0 / (t[k] * (1.0 - t[k])))
    return out


WEIGHT_SHAPES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "bump": _bump,
    "uniform": lambda t: _unit(t).astype(float),
    "tent": lambda t: np.where(_unit(t), 1.0 - np.abs(2.0 * t - 1.0), 0.0),
    "poly": lambda t: np.where(_unit(t), (t * (1.0 - t)) ** 2, 0.0),
    "sine": lambda t: np.where(_unit(t), np.sin(np.pi * t) ** 2, 0.0),
}


@dataclass(frozen=True)
class WeightFunction:
    """Nonnegative weight supported on [eps, 1], normalized to unit mass.

    The shape is evaluated at t = (x - eps)/(1 - eps).
    """

    eps: float
    shape: str = "bump"
    scale: float = 1.0
    C2: float = float("nan")
    C_inf: float = float("nan")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.scale * WEIGHT_SHAPES[self.shape]((x - self.eps) / (1.0 - self.eps))

    def eval(self, x):
        return self(x)

    def scaled(self, x, U: float):
        """w_U(x) = w(x/U)/U."""
        return self(np.asarray(x, dtype=float) / U) / U


def make_weight(eps: float = 0.9, shape: str = "bump") -> WeightFunction:
    if not 0 < eps < 1:
        raise ConfigError("eps must lie in (0, 1)")
    if shape not in WEIGHT_SHAPES:
        raise ConfigError(f"unknown weight shape {shape!r}; choose from {sorted(WEIGHT_SHAPES)}")
    x = np.linspace(eps, 1.0, 200001)
    raw = WeightFunction(eps, shape)(x)
    scale = 1.0 / np.trapezoid(raw, x)
    c2 = float(np.trapezoid(x * x * raw, x) * scale)
    c_inf = float(np.max(x * x * raw) * scale)
    if not c2 > 0:
        raise ConfigError("weight has C2 = 0")
    return WeightFunction(eps, shape, float(scale), c2, c_inf)


def _vals(f) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(f.x, dtype=float), np.asarray(f.values, dtype=float)


def _tilde(tilde_v_prime: Optional[Callable], x: np.ndarray) -> np.ndarray:
    return np.zeros_like(x) if tilde_v_prime is None else np.asarray(tilde_v_prime(x), dtype=float)


def estimate_alpha(l_est, tilde_v_prime: Optional[Callable], w: WeightFunction, U: float) -> float:
    """alpha_N = -(1/(2 C2 U^2)) int (l_N + 2 V~') x w_U dx.

    ``C2 U^2 = int x^2 w_U`` is evaluated with the same quadrature as the
    numerator, so an exact l = -2 alpha x - 2 V~' returns alpha to rounding.
    """
    if U < 1:
        raise ConfigError("window radius U must be at least 1")
    x, l = _vals(l_est)
    if U > x[-1] or -U < x[0]:
        raise ExtrapolationError(f"grid [{x[0]}, {x[-1]}] does not cover the window radius U={U}")
    wu = w.scaled(x, U)
    num = np.trapezoid((l + 2.0 * _tilde(tilde_v_prime, x)) * x * wu, x)
    den = np.trapezoid(x * x * wu, x)
    if not den > 0:
        raise ConfigError("weight window holds no grid points; refine the grid")
    return float(-num / (2.0 * den))


def build_psi(l_est, alpha_hat: float, tilde_v_prime: Optional[Callable], eps: float, U: float) -> GridFunction:
    """Psi_N(y) = (l_N(y) + 2 alpha_N y + 2 V~'(y)) 1{|y| <= eps U}."""
    x, l = _vals(l_est)
    r = eps * U
    meta = {"window": r}
    if r > min(-x[0], x[-1]):
        warnings.warn(f"Psi window {r:.4g} exceeds the grid; clipped to the grid", RuntimeWarning, stacklevel=2)
        meta["clipped"] = True
    inside = np.abs(x) <= r
    psi = np.where(inside, l + 2.0 * alpha_hat * x + 2.0 * _tilde(tilde_v_prime, x), 0.0)
    return GridFunction(x, psi, meta)


__all__ = ["WeightFunction", "WEIGHT_SHAPES", "make_weight", "estimate_alpha", "build_psi"]

