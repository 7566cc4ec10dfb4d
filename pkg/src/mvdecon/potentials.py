"""Confinement and interaction potentials, built-in models and drifts.

A model is ``V(x) = alpha x^2 / 2 + tilde_V(x)`` together with an even
interaction potential ``W``.  All functions are closures with analytic
derivatives; structural constants (C_V, C_W, tilde c_j) are either supplied in
closed form or measured by a dense grid scan.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import comb, wofz

from ._quadrature import convolve_at
from .errors import AssumptionError, ConfigError, ExtrapolationError, UnsupportedDerivativeError

Array = np.ndarray
DerivFn = Callable[[Array, int], Array]

SCAN_GRID = np.linspace(-20.0, 20.0, 40001)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfinementPotential:
    """V(x) = alpha x^2/2 + tilde_V(x).

    ``tilde_v(x, k)`` returns the k-th derivative of tilde_V; ``None`` means
    tilde_V = 0 (the infinitely smooth case).
    """

    alpha: float
    tilde_v: Optional[DerivFn] = None
    smoothness_J: float = math.inf
    c_tilde: dict = field(default_factory=dict)
    C_V: float = float("nan")
    max_order: float = math.inf

    def __call__(self, x, order: int = 0):
        if order < 0 or order > self.max_order:
            raise UnsupportedDerivativeError(
                f"derivative order {order} exceeds available range 0..{self.max_order}")
        x = np.asarray(x, dtype=float)
        if order == 0:
            quad = 0.5 * self.alpha * x * x
        elif order == 1:
            quad = self.alpha * x
        elif order == 2:
            quad = np.full_like(x, self.alpha)
        else:
            quad = np.zeros_like(x)
        if self.tilde_v is not None:
            quad = quad + self.tilde_v(x, order)
        return quad

    def tilde(self, x, order: int = 0):
        x = np.asarray(x, dtype=float)
        if self.tilde_v is None:
            return np.zeros_like(x)
        return self.tilde_v(x, order)

    @property
    def C_tilde(self) -> float:
        return self.alpha + self.c_tilde.get(2, 0.0)


@dataclass(frozen=True)
class InteractionPotential:
    w: Callable[[Array], Array]
    w_prime: Callable[[Array], Array]
    w_second: Callable[[Array], Array]
    C_W: float
    tail_p: float = math.inf
    l1_norm_wprime: Optional[float] = None
    sup_norm_wprime: Optional[float] = None
    is_zero: bool = False
    support_radius: float = math.inf

    def __call__(self, x, order: int = 0):
        if order not in (0, 1, 2):
            raise UnsupportedDerivativeError("interaction derivatives are available for orders 0..2")
        x = np.asarray(x, dtype=float)
        return (self.w, self.w_prime, self.w_second)[order](x)


@dataclass(frozen=True)
class PotentialModel:
    confinement: ConfinementPotential
    interaction: InteractionPotential
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def lam(self) -> float:
        """Contraction rate lambda = C_V - C_W."""
        return self.confinement.C_V - self.interaction.C_W

    @property
    def alpha(self) -> float:
        return self.confinement.alpha


def confinement_eval(cp: ConfinementPotential, x, order: int = 0):
    return cp(x, order)


def interaction_eval(ip: InteractionPotential, x, order: int = 0):
    return ip(x, order)


# ---------------------------------------------------------------------------
# Analytic derivative machinery
# ---------------------------------------------------------------------------

def _abs_power_derivs(x: Array, s: int, kmax: int) -> list:
    """Derivatives 0..kmax of |x|^s for integer s (one-sided, averaged at 0)."""
    ax = np.abs(x)
    sg = np.sign(x)
    out = []
    for k in range(kmax + 1):
        if k > s:
            out.append(np.zeros_like(x))
            continue
        ff = math.perm(s, k)
        out.append(ff * ax ** (s - k) * sg**k)
    return out


def _rational_cutoff_derivs(x: Array, b: float, p: float, kmax: int) -> list:
    """Derivatives of r(x) = (1 + x^2/b^2)^(-p) via the recursion from q r' = -p q' r."""
    q = 1.0 + (x / b) ** 2
    q1 = 2.0 * x / b**2
    q2 = 2.0 / b**2
    r = [q ** (-p)]
    if kmax >= 1:
        r.append(-p * q1 * r[0] / q)
    for n in range(1, kmax):
        nxt = -((n + p) * q1 * r[n] + (n * (n - 1) / 2 + p * n) * q2 * r[n - 1]) / q
        r.append(nxt)
    return r[: kmax + 1]


def _psi_derivs(t: Array, kmax: int) -> list:
    """Derivatives of psi(t) = exp(-1/t) (t > 0, else 0): psi^(k) = P_k(1/t) psi."""
    pos = t > 0
    u = np.zeros_like(t)
    u[pos] = 1.0 / t[pos]
    base = np.zeros_like(t)
    base[pos] = np.exp(-u[pos])
    poly = np.polynomial.Polynomial([1.0])
    x2 = np.polynomial.Polynomial([0.0, 0.0, 1.0])
    out = []
    for _ in range(kmax + 1):
        out.append(np.where(pos, poly(u) * base, 0.0))
        poly = x2 * (poly - poly.deriv())
    return out


def _compact_step_derivs(t: Array, kmax: int) -> list:
    """Derivatives of the C-infinity step S = psi(t)/(psi(t)+psi(1-t)); S=0 for t<=0, 1 for t>=1."""
    f = _psi_derivs(t, kmax)
    h = _psi_derivs(1.0 - t, kmax)
    g = [f[k] + (-1) ** k * h[k] for k in range(kmax + 1)]
    S = []
    for n in range(kmax + 1):
        acc = f[n].copy()
        for k in range(n):
            acc -= comb(n, k, exact=True) * S[k] * g[n - k]
        S.append(acc / g[0])
    return S


def _leibniz(a: list, b: list, order: int) -> Array:
    return sum(comb(order, k, exact=True) * a[k] * b[order - k] for k in range(order + 1))


def nonsmooth_tilde_v(J: int, kappa: float, cutoff: str = "rational", width: float = 2.0) -> DerivFn:
    """tilde_V(x) = kappa |x|^(J+1) chi(x): C^J but not C^(J+1) at the origin.

    ``cutoff="rational"`` uses chi = (1 + x^2/width^2)^(-J/2), which keeps all
    derivatives of order >= 2 bounded and tilde_V'' >= 0.  ``cutoff="compact"``
    uses the C-infinity plateau cutoff (1 on [-1,1], 0 outside [-2,2]).
    """
    if J < 2:
        raise ConfigError("J must be >= 2")
    if cutoff not in ("rational", "compact"):
        raise ConfigError(f"unknown cutoff {cutoff!r}")

    def tilde_v(x, order):
        x = np.asarray(x, dtype=float)
        shape = x.shape
        xf = np.atleast_1d(x).astype(float).ravel()
        a = _abs_power_derivs(xf, J + 1, order)
        if cutoff == "rational":
            c = _rational_cutoff_derivs(xf, width, J / 2.0, order)
        else:
            sd = _compact_step_derivs(2.0 - np.abs(xf), order)
            c = [(-np.sign(xf)) ** k * sd[k] for k in range(order + 1)]
        return (kappa * _leibniz(a, c, order)).reshape(shape)

    return tilde_v


def _scan_constants(tilde_v: DerivFn, J: float) -> tuple[dict, float]:
    jmax = 2 if math.isinf(J) else int(J)
    c_tilde = {j: float(np.max(np.abs(tilde_v(SCAN_GRID, j)))) for j in range(2, jmax + 1)}
    inf_second = float(np.min(tilde_v(SCAN_GRID, 2)))
    return c_tilde, inf_second


def make_confinement(alpha: float, tilde_v: Optional[DerivFn] = None, J: float = math.inf,
                     max_order: Optional[float] = None) -> ConfinementPotential:
    if tilde_v is None:
        return ConfinementPotential(alpha=alpha, tilde_v=None, smoothness_J=math.inf,
                                    c_tilde={}, C_V=float(alpha), max_order=math.inf)
    c_tilde, inf_second = _scan_constants(tilde_v, J)
    if max_order is None:
        max_order = math.inf if math.isinf(J) else int(J) + 2
    return ConfinementPotential(alpha=alpha, tilde_v=tilde_v, smoothness_J=J,
                                c_tilde=c_tilde, C_V=alpha + inf_second, max_order=max_order)


def _effective_radius(fn, sup: float, rel: float = 1e-14) -> float:
    r = np.linspace(0.0, 60.0, 60001)
    v = np.abs(fn(r))
    big = np.nonzero(v > rel * sup)[0]
    return float(r[big[-1]]) if big.size else 0.0


def make_interaction(w, w_prime, w_second, *, C_W: Optional[float] = None, tail_p: float = math.inf,
                     l1_norm_wprime=None, sup_norm_wprime=None, is_zero: bool = False) -> InteractionPotential:
    if is_zero:
        return InteractionPotential(w, w_prime, w_second, C_W=0.0, tail_p=math.inf, l1_norm_wprime=0.0,
                                    sup_norm_wprime=0.0, is_zero=True, support_radius=0.0)
    if C_W is None:
        C_W = max(0.0, -float(np.min(w_second(SCAN_GRID))))
    sup = sup_norm_wprime if sup_norm_wprime is not None else float(np.max(np.abs(w_prime(SCAN_GRID))))
    radius = _effective_radius(w_prime, sup)
    return InteractionPotential(w, w_prime, w_second, C_W=C_W, tail_p=tail_p,
                                l1_norm_wprime=l1_norm_wprime, sup_norm_wprime=sup_norm_wprime,
                                is_zero=False, support_radius=radius)


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------

def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


ZERO_INTERACTION = make_interaction(_zero, _zero, _zero, is_zero=True)


def hermite_interaction(theta: float) -> InteractionPotential:
    """W(x) = theta (1 - exp(-x^2/2)), W'(x) = theta x exp(-x^2/2)."""
    if theta < 0:
        raise AssumptionError("theta must be nonnegative")

    def w(x):
        return theta * -np.expm1(-0.5 * np.asarray(x, dtype=float) ** 2)

    def wp(x):
        x = np.asarray(x, dtype=float)
        return theta * x * np.exp(-0.5 * x * x)

    def ws(x):
        x = np.asarray(x, dtype=float)
        return theta * (1.0 - x * x) * np.exp(-0.5 * x * x)

    # tail exponent: exp(2 p x^2) int_{|y|>x} |W'|^2 stays bounded for every p < 1/2
    return make_interaction(w, wp, ws, C_W=2.0 * theta * math.exp(-1.5), tail_p=0.5,
                            l1_norm_wprime=2.0 * theta, sup_norm_wprime=theta * math.exp(-0.5))


def _gauss_sine_integral(x: Array, freq: float) -> Array:
    """int_0^x exp(-t^2/2) sin(freq t) dt, stable through the Faddeeva function (x >= 0)."""
    z = (freq + 1j * x) / math.sqrt(2.0)
    val = math.sqrt(math.pi / 2.0) * (wofz(freq / math.sqrt(2.0))
                                      - np.exp(-0.5 * x * x + 1j * freq * x) * wofz(z))
    return val.imag


def sine_gaussian_interaction(components) -> InteractionPotential:
    """W' = sum_k -2 c_k/sqrt(2 pi) exp(-x^2/2) sin(m_k x) for (c_k, m_k) in components.

    With (1, 1) this is the real form of f_0 and with (delta, m) of f_{delta,m};
    W is the even antiderivative shifted so that inf W = 0.
    """
    s2p = math.sqrt(2.0 * math.pi)

    def raw_w(x):
        ax = np.abs(np.asarray(x, dtype=float))
        return sum(-2.0 * c / s2p * _gauss_sine_integral(ax, m) for c, m in components)

    shift = -float(np.min(raw_w(SCAN_GRID)))

    def w(x):
        return raw_w(x) + shift

    def wp(x):
        x = np.asarray(x, dtype=float)
        g = np.exp(-0.5 * x * x)
        return sum(-2.0 * c / s2p * g * np.sin(m * x) for c, m in components)

    def ws(x):
        x = np.asarray(x, dtype=float)
        g = np.exp(-0.5 * x * x)
        return sum(-2.0 * c / s2p * g * (m * np.cos(m * x) - x * np.sin(m * x)) for c, m in components)

    return make_interaction(w, wp, ws, tail_p=0.5)


BUILTIN_DEFAULTS = {
    "zero_interaction": {"alpha": 1.0},
    "hermite": {"theta": 0.5, "alpha": 0.5},
    "hermite_pair_f0": {"alpha": 1.5},
    "hermite_pair_f0_plus_fdm": {"alpha": 1.5, "delta": 0.1, "freq": 2.0},
    "nonsmooth_confinement_J": {"J": 2, "kappa": 0.1, "alpha": 1.0, "cutoff": "rational", "width": 2.0},
}


def builtin_model(name: str, params: Optional[dict] = None) -> PotentialModel:
    """Construct a named model; unspecified parameters take their defaults."""
    if name not in BUILTIN_DEFAULTS:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(BUILTIN_DEFAULTS)}")
    p = dict(BUILTIN_DEFAULTS[name])
    unknown = set(params or {}) - set(p)
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")
    p.update(params or {})
    if not p["alpha"] > 0:
        raise AssumptionError("alpha must be positive")

    if name == "zero_interaction":
        conf, inter = make_confinement(p["alpha"]), ZERO_INTERACTION
    elif name == "hermite":
        conf, inter = make_confinement(p["alpha"]), hermite_interaction(p["theta"])
    elif name == "hermite_pair_f0":
        conf, inter = make_confinement(p["alpha"]), sine_gaussian_interaction([(1.0, 1.0)])
    elif name == "hermite_pair_f0_plus_fdm":
        conf = make_confinement(p["alpha"])
        inter = sine_gaussian_interaction([(1.0, 1.0), (p["delta"], p["freq"])])
    else:
        J = int(p["J"])
        tv = nonsmooth_tilde_v(J, p["kappa"], p["cutoff"], p["width"])
        conf, inter = make_confinement(p["alpha"], tv, J=J), ZERO_INTERACTION

    model = PotentialModel(conf, inter, name=name, params=p)
    if not conf.C_V > 0:
        raise AssumptionError(f"C_V = {conf.C_V:.6g} must be positive")
    if not model.lam > 0:
        raise AssumptionError(
            f"lambda = C_V - C_W = {conf.C_V:.6g} - {inter.C_W:.6g} = {model.lam:.6g} must be positive")
    return model


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    checks: dict
    details: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list:
        return [k for k, v in self.checks.items() if not v]


def validate_assumptions(pm: PotentialModel, n_points: int = 10001, half_width: float = 20.0) -> ValidationReport:
    x = np.linspace(-half_width, half_width, n_points)
    ip, cp = pm.interaction, pm.confinement
    checks, details = {}, {}

    W, Wm = ip(x, 0), ip(-x, 0)
    Wp, Wpm = ip(x, 1), ip(-x, 1)
    checks["W_even"] = bool(np.max(np.abs(W - Wm)) <= 1e-10)
    checks["W_prime_odd"] = bool(np.max(np.abs(Wp + Wpm)) <= 1e-10)
    checks["W_nonnegative"] = bool(np.min(W) >= -1e-12)
    details["min_W_second"] = float(np.min(ip(x, 2)))
    checks["W_second_lower_bound"] = bool(details["min_W_second"] >= -ip.C_W - 1e-10)

    l1 = float(np.trapezoid(np.abs(Wp), x))
    sup = float(np.max(np.abs(Wp)))
    edge = float(max(abs(Wp[0]), abs(Wp[-1])))
    details.update(l1_norm_wprime=l1, sup_norm_wprime=sup)
    ok = np.isfinite(l1) and np.isfinite(sup) and edge <= 1e-8 * max(sup, 1.0)
    if ip.l1_norm_wprime is not None and ip.l1_norm_wprime > 0:
        ok = ok and abs(l1 - ip.l1_norm_wprime) <= 0.01 * ip.l1_norm_wprime
    checks["W_prime_bounded_integrable"] = bool(ok)

    details["lambda"] = pm.lam
    checks["lambda_positive"] = bool(pm.lam > 0)
    checks["C_V_positive"] = bool(cp.C_V > 0)

    tv, tvm = cp.tilde(x, 0), cp.tilde(-x, 0)
    checks["tilde_V_even"] = bool(np.max(np.abs(tv - tvm)) <= 1e-10)
    checks["tilde_V_prime_zero_at_origin"] = bool(abs(float(cp.tilde(np.array([0.0]), 1)[0])) <= 1e-12)
    checks["c_tilde_finite"] = bool(all(np.isfinite(v) for v in cp.c_tilde.values()))
    details["c_tilde"] = dict(cp.c_tilde)
    details["rate_tail_condition_p_gt_C_V"] = bool(ip.tail_p > cp.C_V)
    return ValidationReport(checks, details)


# ---------------------------------------------------------------------------
# Drifts
# ---------------------------------------------------------------------------

def mean_field_drift(pm: PotentialModel, x, mu) -> np.ndarray:
    """-V'(x) - (W' * mu)(x)/2 with the convolution by trapezoid quadrature on mu's grid."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    grid = mu.x
    reach = pm.interaction.support_radius
    if np.any(xs < grid[0] - reach) or np.any(xs > grid[-1] + reach):
        raise ExtrapolationError("evaluation point outside grid coverage of the convolution")
    drift = -pm.confinement(xs, 1)
    if not pm.interaction.is_zero:
        drift = drift - 0.5 * convolve_at(pm.interaction.w_prime, mu.values, grid, xs)
    return drift if np.ndim(x) else float(drift[0])


def empirical_drift(pm: PotentialModel, i: int, positions) -> float:
    """Drift of particle ``i`` (0-based): -V'(x_i) - (1/2N) sum_j W'(x_i - x_j)."""
    pos = np.asarray(positions, dtype=float)
    if pos.size == 0:
        raise ConfigError("empty ensemble")
    xi = pos[i]
    inter = float(np.sum(pm.interaction.w_prime(xi - pos))) / pos.size
    return float(-pm.confinement(xi, 1) - 0.5 * inter)


__all__ = [
    "ConfinementPotential", "InteractionPotential", "PotentialModel", "ValidationReport",
    "confinement_eval", "interaction_eval", "builtin_model", "validate_assumptions",
    "mean_field_drift", "empirical_drift", "make_confinement", "make_interaction",
    "nonsmooth_tilde_v", "hermite_interaction", "sine_gaussian_interaction",
]
