"""Higher-order kernels, kernel density estimates and tuning constants."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ._quadrature import GridFunction
from .errors import ConfigError
from .invariant import GridDensity
from .potentials import PotentialModel

SUPPORTED_ORDERS = (2, 4, 6, 8)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def _kernel_coefficients(m: int) -> np.ndarray:
    """Even coefficients c_j of P(x) = sum_j c_j x^(2j) with Gaussian moments 1, 0, ..., 0."""
    r = m // 2
    gauss = np.array([[_double_factorial(2 * (j + k) - 1) for j in range(r)] for k in range(r)], dtype=float)
    rhs = np.zeros(r)
    rhs[0] = 1.0
    return np.linalg.solve(gauss, rhs)


@dataclass(frozen=True)
class HighOrderKernel:
    """K(x) = P(x) phi(x) with P an even polynomial killing moments 1..m-1."""

    order_m: int
    poly: np.polynomial.Polynomial
    radius: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.poly(x) * np.exp(-0.5 * x * x) * INV_SQRT_2PI

    def eval(self, x):
        return self(x)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return (self.poly.deriv()(x) - x * self.poly(x)) * np.exp(-0.5 * x * x) * INV_SQRT_2PI

    def moment(self, j: int) -> float:
        """Exact moment int x^j K from Gaussian moment identities."""
        if j % 2:
            return 0.0
        c = self.poly.coef
        return float(sum(c[i] * _double_factorial(i + j - 1) for i in range(0, c.size, 2)))


def make_kernel(m: int) -> HighOrderKernel:
    if m not in SUPPORTED_ORDERS:
        raise ConfigError(f"kernel order must be one of {SUPPORTED_ORDERS}")
    coef = np.zeros(m - 1)
    coef[0::2] = _kernel_coefficients(m)
    poly = np.polynomial.Polynomial(coef)
    x = np.linspace(0.0, 40.0, 40001)
    k = np.abs(poly(x)) * np.exp(-0.5 * x * x)
    radius = float(x[np.nonzero(k > 1e-17)[0][-1]])
    return HighOrderKernel(m, poly, radius)


# ---------------------------------------------------------------------------
# Tuning constants
# ---------------------------------------------------------------------------

def rate_factor(m: int) -> float:
    return m / (2.0 * (m + 2))


def window_constant(m: int, C_tilde: float, C_V: float, eps: float) -> float:
    """c_u in U^2 = c_u log N_T."""
    return rate_factor(m) / (C_tilde + C_V * eps * eps / 4.0)


def rate_exponent(m: int, C_tilde: float, C_V: float, eps: float) -> float:
    """gamma, the exponent of the Psi rate."""
    return rate_factor(m) / (1.0 + 4.0 * C_tilde / (eps * eps * C_V))


def regularization_floor(N_T: float, c_u: float, gamma: float, a: float, eps: float) -> float:
    """eps_NT = exp((a eps/2) sqrt(c_u log N_T)) (log N_T)^(1/4) N_T^(-gamma/2)."""
    log_n = math.log(N_T)
    return math.exp(0.5 * a * eps * math.sqrt(c_u * log_n)) * log_n**0.25 * N_T ** (-gamma / 2.0)


@dataclass(frozen=True)
class EstimatorConfig:
    m: int
    N_T: float
    h0: float
    h1: float
    U: float
    eps: float
    c_u: float
    gamma: float
    a: float
    eps_NT: float
    C_tilde: float
    C_V: float
    c1_hat: Optional[float] = None
    delta: Optional[float] = None

    def with_c1_hat(self, c1_hat: float) -> "EstimatorConfig":
        if not c1_hat > 0:
            raise ConfigError("c1_hat must be positive")
        return replace(self, c1_hat=float(c1_hat), delta=threshold(c1_hat, self.C_tilde, self.U))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def threshold(c1_hat: float, C_tilde: float, U: float) -> float:
    """delta = (c1_hat/2) exp(-C~ U^2)."""
    return 0.5 * c1_hat * math.exp(-C_tilde * U * U)


def derive_config(pm: PotentialModel, N: float, T: float, m: int = 2, eps: float = 0.9, a: float = 0.0,
                  c1_hat: Optional[float] = None, N_T: Optional[float] = None) -> EstimatorConfig:
    """All tuning constants from (model, N, T, m, eps, a).

    ``N_T`` overrides (1/N + exp(-lambda T))^(-1).  Without ``c1_hat`` the
    threshold is left unset until data is available (see ``with_c1_hat``).
    """
    if m not in SUPPORTED_ORDERS:
        raise ConfigError(f"kernel order must be one of {SUPPORTED_ORDERS}")
    if not 0 < eps < 1:
        raise ConfigError("eps must lie in (0, 1)")
    if a < 0:
        raise ConfigError("line offset a must be nonnegative")
    cp = pm.confinement
    if cp.tilde_v is not None and m > cp.smoothness_J:
        raise ConfigError(f"kernel order m={m} exceeds the confinement smoothness J={cp.smoothness_J}")
    if N_T is None:
        if not (N >= 1 and T >= 0):
            raise ConfigError("need N >= 1 and T >= 0")
        N_T = 1.0 / (1.0 / N + math.exp(-pm.lam * T))
    if not N_T > 1:
        raise ConfigError("N_T must exceed 1")
    ct, cv = cp.C_tilde, cp.C_V
    c_u = window_constant(m, ct, cv, eps)
    gamma = rate_exponent(m, ct, cv, eps)
    U = math.sqrt(c_u * math.log(N_T))
    cfg = EstimatorConfig(m=m, N_T=N_T, h0=N_T ** (-1.0 / (2 * (m + 1))), h1=N_T ** (-1.0 / (2 * (m + 2))),
                          U=U, eps=eps, c_u=c_u, gamma=gamma, a=a,
                          eps_NT=regularization_floor(N_T, c_u, gamma, a, eps), C_tilde=ct, C_V=cv)
    return cfg.with_c1_hat(c1_hat) if c1_hat is not None else cfg


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _grid(grid) -> np.ndarray:
    if isinstance(grid, GridDensity):
        return grid.x
    if isinstance(grid, tuple) and len(grid) == 3:
        return np.linspace(*grid)
    return np.asarray(grid, dtype=float)


def _positions(e) -> np.ndarray:
    return np.asarray(getattr(e, "positions", e), dtype=float).ravel()


def _kernel_sum(fn, y: np.ndarray, pos: np.ndarray, h: float, chunk: int = 256) -> np.ndarray:
    out = np.empty(y.size)
    for s in range(0, y.size, chunk):
        out[s : s + chunk] = fn((y[s : s + chunk, None] - pos[None, :]) / h).sum(axis=1)
    return out


def estimate_density(e, k: HighOrderKernel, h0: float, grid) -> GridFunction:
    """pi_N(y) = (1/(N h0)) sum_i K((y - X_i)/h0); not clipped to be nonnegative."""
    if not h0 > 0:
        raise ConfigError("bandwidth must be positive")
    y, pos = _grid(grid), _positions(e)
    return GridFunction(y, _kernel_sum(k, y, pos, h0) / (pos.size * h0), {"h0": h0, "m": k.order_m})


def estimate_density_derivative(e, k: HighOrderKernel, h1: float, grid) -> GridFunction:
    """pi'_N(y) = (1/(N h1^2)) sum_i K'((y - X_i)/h1)."""
    if not h1 > 0:
        raise ConfigError("bandwidth must be positive")
    y, pos = _grid(grid), _positions(e)
    return GridFunction(y, _kernel_sum(k.derivative, y, pos, h1) / (pos.size * h1 * h1), {"h1": h1, "m": k.order_m})


def log_density_derivative(pi_est, pi_prime_est, delta: float) -> GridFunction:
    """l_N = pi'_N / pi_N where pi_N > delta, exactly 0 elsewhere."""
    if not delta > 0:
        raise ConfigError("delta must be positive")
    p = np.asarray(getattr(pi_est, "values", pi_est), dtype=float)
    d = np.asarray(getattr(pi_prime_est, "values", pi_prime_est), dtype=float)
    keep = p > delta
    out = np.zeros_like(p)
    out[keep] = d[keep] / p[keep]
    x = getattr(pi_est, "x", None)
    if x is None:
        return out
    return GridFunction(x, out, {"delta": delta})


def default_c1_hat(pi_est) -> float:
    """Data-driven lower-envelope constant: 0.1 max pi_N."""
    return 0.1 * float(np.max(getattr(pi_est, "values", pi_est)))


def export_estimates(path, y, pi_hat, pi_prime_hat, l_hat) -> None:
    cols = [np.asarray(getattr(v, "values", v), dtype=float) for v in (y, pi_hat, pi_prime_hat, l_hat)]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header="y,pi_hat,pi_prime_hat,l_hat",
               comments="", fmt="%.17g")


__all__ = [
    "HighOrderKernel", "EstimatorConfig", "make_kernel", "derive_config", "window_constant", "rate_exponent",
    "regularization_floor", "threshold", "estimate_density", "estimate_density_derivative",
    "log_density_derivative", "default_c1_hat", "export_estimates",
]
