"""Stationary density, log-density derivative and the mean-field density flow."""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import exprel

from ._quadrature import convolve_at, convolve_on_grid, grid_spacing, integrate, uniform_grid
from .errors import ConfigError, ConvergenceError, InstabilityError, SchemaError
from .potentials import PotentialModel

MAGIC = b"MKVD1"
DEFAULT_GRID = (-8.0, 8.0, 4097)


def _readonly(a):
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridDensity:
    """Probability density sampled on a uniform grid.

    ``derivative_values`` optionally holds pi'; ``normalizer`` is the constant
    Z with pi = exp(-2V - W*pi)/Z (NaN when unknown).
    """

    x_min: float
    x_max: float
    n_points: int
    values: np.ndarray
    derivative_values: Optional[np.ndarray] = None
    normalizer: float = float("nan")
    mass_tol: float = field(default=1e-9, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        object.__setattr__(self, "derivative_values", _readonly(self.derivative_values))
        if self.n_points < 2 or not self.x_max > self.x_min:
            raise ConfigError("grid spacing must be positive")
        if self.values.shape != (self.n_points,):
            raise ConfigError("values length does not match n_points")
        if self.derivative_values is not None and self.derivative_values.shape != (self.n_points,):
            raise ConfigError("derivative_values length does not match n_points")
        if not np.all(np.isfinite(self.values)) or np.min(self.values) < 0:
            raise ConfigError("density values must be finite and nonnegative")
        mass = integrate(self.values, self.x)
        if abs(mass - 1.0) > self.mass_tol:
            raise ConfigError(f"density mass {mass!r} differs from 1")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @classmethod
    def from_values(cls, x, values, derivative_values=None, normalizer=float("nan")) -> "GridDensity":
        """Normalize ``values`` on the uniform grid ``x`` and wrap them."""
        x = np.asarray(x, dtype=float)
        grid_spacing(x)
        v = np.asarray(values, dtype=float)
        mass = integrate(v, x)
        if not mass > 0:
            raise ConfigError("values have no positive mass")
        d = None if derivative_values is None else np.asarray(derivative_values, dtype=float) / mass
        return cls(float(x[0]), float(x[-1]), x.size, v / mass, d, normalizer * mass)

    def mean(self) -> float:
        return integrate(self.x * self.values, self.x)

    def variance(self) -> float:
        m = self.mean()
        return integrate((self.x - m) ** 2 * self.values, self.x)

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid integral at the grid nodes."""
        v = self.values
        c = np.concatenate([[0.0], np.cumsum(0.5 * self.dx * (v[1:] + v[:-1]))])
        return c

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridDensity):
            return NotImplemented
        same_d = (self.derivative_values is None) == (other.derivative_values is None) and (
            self.derivative_values is None or np.array_equal(self.derivative_values, other.derivative_values))
        return (self.x_min, self.x_max, self.n_points) == (other.x_min, other.x_max, other.n_points) and \
            np.array_equal(self.values, other.values) and same_d

    # serialization -------------------------------------------------------
    def to_csv(self, path) -> None:
        d = self.derivative_values if self.derivative_values is not None else np.full(self.n_points, np.nan)
        np.savetxt(path, np.column_stack([self.x, self.values, d]), delimiter=",",
                   header="x,pi,pi_prime", comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        with open(path) as fh:
            if fh.readline().strip() != "x,pi,pi_prime":
                raise SchemaError("expected header x,pi,pi_prime")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        d = data[:, 2]
        return cls(float(data[0, 0]), float(data[-1, 0]), data.shape[0], data[:, 1].copy(),
                   None if np.all(np.isnan(d)) else d.copy())

    def to_bytes(self) -> bytes:
        has_d = self.derivative_values is not None
        head = MAGIC + struct.pack("<ddQdB", self.x_min, self.x_max, self.n_points, self.normalizer, has_d)
        body = self.values.astype("<f8").tobytes()
        if has_d:
            body += self.derivative_values.astype("<f8").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GridDensity":
        if blob[:5] != MAGIC:
            raise SchemaError("bad magic bytes for a density file")
        x_min, x_max, n, z, has_d = struct.unpack_from("<ddQdB", blob, 5)
        off = 5 + struct.calcsize("<ddQdB")
        vals = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        der = np.frombuffer(blob, dtype="<f8", count=n, offset=off + 8 * n) if has_d else None
        return cls(x_min, x_max, n, vals.astype(float), None if der is None else der.astype(float), z)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GridDensity":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class DensityFlow:
    """Snapshots of the mean-field law mu_t."""

    times: np.ndarray
    densities: tuple

    def __post_init__(self):
        object.__setattr__(self, "times", _readonly(self.times))
        object.__setattr__(self, "densities", tuple(self.densities))
        if len(self.times) != len(self.densities):
            raise ConfigError("times and densities differ in length")

    def at(self, t: float, tol: float = 1e-9) -> GridDensity:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise ConfigError(f"no snapshot at t={t}")
        return self.densities[k]


# ---------------------------------------------------------------------------
# Fixed point
# ---------------------------------------------------------------------------

def _exponent(pm: PotentialModel, x: np.ndarray, values: np.ndarray) -> np.ndarray:
    expo = -2.0 * pm.confinement(x, 0)
    if not pm.interaction.is_zero:
        expo = expo - convolve_on_grid(pm.interaction.w, values, x)
    return expo


def picard_map(pm: PotentialModel, x: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, float]:
    """normalize(exp(-2V - W*values)) and the normalizer Z."""
    expo = _exponent(pm, x, values)
    top = float(np.max(expo))
    g = np.exp(expo - top)
    mass = integrate(g, x)
    return g / mass, mass * math.exp(top)


def residual(pm: PotentialModel, pi: GridDensity) -> float:
    """Sup-norm of pi - normalize(exp(-2V - W*pi)) on the grid."""
    new, _ = picard_map(pm, pi.x, pi.values)
    return float(np.max(np.abs(pi.values - new)))


def solve_invariant(pm: PotentialModel, grid: Sequence = DEFAULT_GRID, tol: float = 1e-10,
                    max_iter: int = 10_000, damping: float = 0.5) -> GridDensity:
    """Damped Picard iteration for pi = exp(-2V - W*pi)/Z, started from exp(-2V)."""
    if not tol > 0:
        raise ConfigError("tol must be positive")
    if not 0 < damping <= 1:
        raise ConfigError("damping must lie in (0, 1]")
    x = uniform_grid(*grid)
    edge = float(np.max(np.exp(-2.0 * pm.confinement(x[[0, -1]], 0))))
    if edge >= 1e-14:
        warnings.warn(f"grid may be too narrow: exp(-2V) = {edge:.3g} at the endpoints", RuntimeWarning,
                      stacklevel=2)
    pi, z = picard_map(pm, x, np.zeros_like(x))
    res = math.inf
    for it in range(1, max_iter + 1):
        new, z = picard_map(pm, x, pi)
        res = float(np.max(np.abs(new - pi)))
        if res <= tol:
            pi = new
            break
        pi = (1.0 - damping) * pi + damping * new
    else:
        raise ConvergenceError(f"no convergence after {max_iter} iterations", residual=res, iterations=max_iter)
    final = GridDensity.from_values(x, pi, normalizer=z)
    return with_derivative(pm, final)


# ---------------------------------------------------------------------------
# Log-density derivative
# ---------------------------------------------------------------------------

def log_derivative_on_grid(pm: PotentialModel, pi: GridDensity) -> np.ndarray:
    """l = -2V' - W'*pi at the grid nodes."""
    x = pi.x
    out = -2.0 * pm.confinement(x, 1)
    if not pm.interaction.is_zero:
        out = out - convolve_on_grid(pm.interaction.w_prime, pi.values, x)
    return out


def exact_log_derivative(pm: PotentialModel, pi: GridDensity, x):
    """l(x) = pi'(x)/pi(x) = -2V'(x) - (W'*pi)(x)."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < pi.x_min) or np.any(xs > pi.x_max):
        raise ConfigError("x lies outside the density grid")
    out = -2.0 * pm.confinement(xs, 1)
    if not pm.interaction.is_zero:
        out = out - convolve_at(pm.interaction.w_prime, pi.values, pi.x, xs)
    return out if np.ndim(x) else float(out[0])


def with_derivative(pm: PotentialModel, pi: GridDensity) -> GridDensity:
    """Copy of ``pi`` with pi' = l * pi filled in."""
    return replace(pi, derivative_values=log_derivative_on_grid(pm, pi) * pi.values)


# ---------------------------------------------------------------------------
# Gaussian envelope checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SandwichFit:
    c1: float
    c2: float
    C_tilde: float
    C_V: float
    lower_ok: bool
    upper_ok: bool

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok


def check_gaussian_sandwich(pm: PotentialModel, pi: GridDensity, x_range: float = 4.0) -> SandwichFit:
    """Fit c1 exp(-C~ x^2) <= pi <= c2 exp(-C_V x^2) on |x| <= x_range.

    The fit passes when both constants are positive and finite and the bounds
    extend to the whole grid with a factor-two slack.
    """
    x, v = pi.x, pi.values
    ct, cv = pm.confinement.C_tilde, pm.confinement.C_V
    inside = np.abs(x) <= x_range
    with np.errstate(over="ignore"):
        c1 = float(np.min(v[inside] * np.exp(ct * x[inside] ** 2)))
        c2 = float(np.max(v[inside] * np.exp(cv * x[inside] ** 2)))
        lower = np.all(v >= 0.5 * c1 * np.exp(-ct * x**2))
        upper = np.all(v <= 2.0 * c2 * np.exp(-cv * x**2))
    finite = np.isfinite(c1) and np.isfinite(c2)
    return SandwichFit(c1, c2, ct, cv, bool(finite and c1 > 0 and lower), bool(finite and c2 > 0 and upper))


def check_derivative_growth(pm: PotentialModel, pi: GridDensity, orders=(1, 2), x_range: float = 6.0) -> dict:
    """Fitted c with |pi^(n)(x)| <= c (1+|x|)^n exp(-C_V x^2), by finite differences."""
    x = pi.x
    inside = np.abs(x) <= x_range
    cv = pm.confinement.C_V
    out = {}
    d = pi.values
    for n in range(1, max(orders) + 1):
        d = np.gradient(d, pi.dx)
        if n in orders:
            env = (1 + np.abs(x[inside])) ** n * np.exp(-cv * x[inside] ** 2)
            c = float(np.max(np.abs(d[inside]) / env))
            out[n] = {"c": c, "passed": bool(np.isfinite(c) and c > 0)}
    return out


# ---------------------------------------------------------------------------
# Fokker-Planck flow
# ---------------------------------------------------------------------------

def _bernoulli(p: np.ndarray) -> np.ndarray:
    return 1.0 / exprel(p)


def fokker_planck_evolve(pm: PotentialModel, mu0: GridDensity, T: float, dt: float,
                         record_dt: Optional[float] = None) -> DensityFlow:
    """Evolve d_t mu = mu''/2 + d_x((V' + W'*mu/2) mu) on mu0's grid.

    Scharfetter-Gummel fluxes with zero-flux boundaries; the discrete
    stationary state is exactly normalize(exp(-2V - W*mu)).  The step ``dt`` is
    reduced so that it divides ``record_dt`` (default: only t=0 and t=T).
    """
    if T < 0:
        raise ConfigError("T must be nonnegative")
    dx = mu0.dx
    if not 0 < dt <= 0.4 * dx * dx * (1 + 1e-12):
        raise InstabilityError(f"dt={dt} violates the explicit bound 0.4*dx^2={0.4 * dx * dx:.3g}")
    record_dt = T if record_dt is None or record_dt <= 0 else record_dt
    n_rec = 0 if T == 0 else int(round(T / record_dt))
    if n_rec and abs(n_rec * record_dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError("T must be a multiple of record_dt")
    sub = max(1, math.ceil(record_dt / dt - 1e-12)) if n_rec else 0
    h = record_dt / sub if n_rec else 0.0

    x = mu0.x
    v2 = 2.0 * pm.confinement(x, 0)
    mu = np.array(mu0.values)
    times, snaps = [0.0], [mu0]
    zero = pm.interaction.is_zero
    lam = 0.5 * h / (dx * dx)
    for r in range(1, n_rec + 1):
        for _ in range(sub):
            phi2 = v2 if zero else v2 + convolve_on_grid(pm.interaction.w, mu, x)
            pe = -np.diff(phi2)
            flux = lam * (_bernoulli(-pe) * mu[:-1] - _bernoulli(pe) * mu[1:])
            mu[:-1] -= flux
            mu[1:] += flux
        if not np.all(np.isfinite(mu)) or np.min(mu) < -1e-3 * np.max(mu):
            raise InstabilityError(f"Fokker-Planck step failed near t={r * record_dt:.4g}; reduce dt")
        mu = np.clip(mu, 0.0, None)
        snap = GridDensity.from_values(x, mu)
        mu = np.array(snap.values)
        times.append(r * record_dt)
        snaps.append(snap)
    return DensityFlow(np.array(times), tuple(snaps))


def gaussian_density(mean: float, std: float, grid: Sequence = (-8.0, 8.0, 401)) -> GridDensity:
    x = uniform_grid(*grid)
    return GridDensity.from_values(x, np.exp(-0.5 * ((x - mean) / std) ** 2))


__all__ = [
    "GridDensity", "DensityFlow", "SandwichFit", "solve_invariant", "residual", "picard_map",
    "exact_log_derivative", "log_derivative_on_grid", "with_derivative", "check_gaussian_sandwich",
    "check_derivative_growth", "fokker_planck_evolve", "gaussian_density", "DEFAULT_GRID",
]
