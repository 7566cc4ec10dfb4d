"""Fourier transforms on complex lines, regularized deconvolution and transform diagnostics.

Conventions: F(f)(z) = int f(x) exp(i z x) dx with z = y + i a, so on the line
L_a the transform is int f(x) exp(i y x) exp(-a x) dx, and the inverse is
f(x) = (1/2 pi) exp(a x) int F(y + i a) exp(-i y x) dy.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._quadrature import EXP_GUARD, GridFunction, convolve_on_grid, grid_spacing, phase_sum, trapezoid_weights
from .contrast import WeightFunction, build_psi, estimate_alpha, make_weight
from .errors import ConfigError, GridMismatchError, RangeGuardError, SchemaError
from .invariant import GridDensity
from .kernels import (EstimatorConfig, HighOrderKernel, default_c1_hat, estimate_density,
                      estimate_density_derivative, log_density_derivative, make_kernel)

MODES = ("oracle_shift", "clip")


@dataclass(frozen=True)
class LineTransform:
    """Samples of F(f)(y + i a) on a uniform y grid."""

    a: float
    y_values: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        y = np.array(self.y_values, dtype=float)
        v = np.array(self.values, dtype=complex)
        if y.ndim != 1 or v.shape != y.shape:
            raise ConfigError("y_values and values must be 1-D of equal length")
        if y.size > 1:
            d = np.diff(y)
            if not np.all(d > 0) or np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(d[0])):
                raise ConfigError("y_values must be strictly increasing and uniform")
        if not np.all(np.isfinite(v)):
            raise ConfigError("transform values must be finite")
        y.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "y_values", y)
        object.__setattr__(self, "values", v)

    def to_csv(self, path) -> None:
        body = np.column_stack([self.y_values, self.values.real, self.values.imag])
        np.savetxt(path, body, delimiter=",", header=f"# a={self.a!r}\ny,re,im", comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "LineTransform":
        with open(path) as fh:
            first = fh.readline().strip()
            second = fh.readline().strip()
        if not first.startswith("# a=") or second != "y,re,im":
            raise SchemaError("expected '# a=<value>' and 'y,re,im' header lines")
        data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        return cls(float(first[4:]), data[:, 0], data[:, 1] + 1j * data[:, 2])


@dataclass(frozen=True)
class DeconvolutionSettings:
    a: float = 0.0
    y_max: float = 20.0
    n_freq: int = 4096
    eps_NT: Optional[float] = None
    mode: str = "oracle_shift"

    def __post_init__(self):
        mode = "oracle_shift" if self.mode == "oracle" else self.mode
        object.__setattr__(self, "mode", mode)
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not self.y_max > 0 or self.n_freq < 2:
            raise ConfigError("need y_max > 0 and n_freq >= 2")
        if self.eps_NT is not None and not self.eps_NT > 0:
            raise ConfigError("eps_NT must be positive")

    def frequencies(self) -> np.ndarray:
        return np.linspace(-self.y_max, self.y_max, self.n_freq)


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def _support(x: np.ndarray, v: np.ndarray) -> slice:
    nz = np.nonzero(v)[0]
    if nz.size == 0:
        return slice(0, 0)
    return slice(max(nz[0] - 1, 0), min(nz[-1] + 2, x.size))


def forward_line_transform(f, a: float, y) -> LineTransform:
    """F(f)(y_k + i a) by trapezoid quadrature over the nonzero part of ``f``.

    ``f`` is a grid function (anything with ``x`` and ``values``).
    """
    x = np.asarray(f.x, dtype=float)
    v = np.asarray(f.values, dtype=float)
    y = np.asarray(y, dtype=float)
    sl = _support(x, v)
    out = np.zeros(y.size, dtype=complex)
    if sl.stop > sl.start:
        xs = x[sl]
        if abs(a) * float(np.max(np.abs(xs))) > EXP_GUARD:
            raise RangeGuardError("|a| times the support radius exceeds the exponential range guard")
        w = trapezoid_weights(x.size, grid_spacing(x))[sl] * v[sl] * np.exp(-a * xs)
        out = phase_sum(y, xs, w)
    return LineTransform(a, y, out)


def empirical_line_transform(e, a: float, y) -> LineTransform:
    """(1/N) sum_j exp(i (y_k + i a) X_j), exact sums."""
    pos = np.asarray(getattr(e, "positions", e), dtype=float).ravel()
    if pos.size == 0:
        raise ConfigError("empty sample")
    if np.max(np.abs(a * pos)) > EXP_GUARD:
        raise RangeGuardError("|a X_j| exceeds the exponential range guard")
    y = np.asarray(y, dtype=float)
    return LineTransform(a, y, phase_sum(y, pos, np.exp(-a * pos) / pos.size))


def _check_match(*ts: Optional[LineTransform]) -> None:
    ref = ts[0]
    for t in ts[1:]:
        if t is None:
            continue
        if t.a != ref.a or t.y_values.shape != ref.y_values.shape or np.any(t.y_values != ref.y_values):
            raise GridMismatchError("transforms live on different lines or frequency grids")


def _enforce_floor(den: np.ndarray, eps: float) -> np.ndarray:
    """Rescale entries with |den| < eps to modulus eps, keeping phase (phase of 0 is +1)."""
    den = den.copy()
    mod = np.abs(den)
    low = mod < eps
    if np.any(low):
        phase = np.where(mod[low] > 0, den[low] / np.where(mod[low] > 0, mod[low], 1.0), 1.0)
        den[low] = eps * phase
        for _ in range(8):
            short = np.abs(den) < eps
            if not np.any(short):
                break
            den[short] *= 1.0 + 4.0 * np.finfo(float).eps
    return den


def regularized_denominator(F_den: Optional[LineTransform], F_pi_oracle: Optional[LineTransform],
                            s: DeconvolutionSettings, eps_NT: Optional[float] = None) -> np.ndarray:
    """Denominator F(Pi_N) + rho_N with |denominator| >= eps_NT at every frequency.

    ``oracle_shift`` uses F(Pi) + eps_NT; ``clip`` raises |F(Pi_N)| to eps_NT
    where it falls below.  Oracle frequencies with |F(Pi) + eps_NT| < eps_NT
    fall back to the clip rule.
    """
    eps = s.eps_NT if eps_NT is None else eps_NT
    if eps is None or not eps > 0:
        raise ConfigError("a positive eps_NT is required")
    if s.mode == "oracle_shift":
        if F_pi_oracle is None:
            raise ConfigError("oracle_shift mode needs the oracle transform of pi")
        den = F_pi_oracle.values + eps
    else:
        if F_den is None:
            raise ConfigError("clip mode needs the empirical transform")
        den = np.array(F_den.values)
    return _enforce_floor(den, eps)


def regularized_divide(F_psi: LineTransform, F_den: Optional[LineTransform],
                       F_pi_oracle: Optional[LineTransform], s: DeconvolutionSettings,
                       eps_NT: Optional[float] = None) -> LineTransform:
    """F(W'_N) = -F(Psi_N) / (F(Pi_N) + rho_N)."""
    _check_match(F_psi, F_den, F_pi_oracle)
    den = regularized_denominator(F_den, F_pi_oracle, s, eps_NT)
    out = -F_psi.values / den
    return LineTransform(F_psi.a, F_psi.y_values, out, {"min_abs_denominator": float(np.min(np.abs(den)))})


def inverse_line_transform(F: LineTransform, x, real_target: bool = True) -> GridFunction:
    """f(x) = (1/2 pi) exp(a x) int F(y + i a) exp(-i y x) dy over the sampled band.

    Warns when |F| at the band edge exceeds 1e-3 max|F| or when the imaginary
    residue exceeds 1e-6 of the real part; both ratios go into ``meta``.
    """
    x = np.asarray(x, dtype=float)
    y = F.y_values
    if abs(F.a) * float(np.max(np.abs(x))) > EXP_GUARD:
        raise RangeGuardError("|a x| exceeds the exponential range guard")
    w = trapezoid_weights(y.size, grid_spacing(y)) * F.values
    acc = phase_sum(-x, y, w)
    acc *= np.exp(F.a * x) / (2.0 * math.pi)
    peak = float(np.max(np.abs(F.values))) if F.values.size else 0.0
    tail = float(max(abs(F.values[0]), abs(F.values[-1])) / peak) if peak > 0 else 0.0
    re_norm = float(np.linalg.norm(acc.real))
    imag = float(np.linalg.norm(acc.imag) / re_norm) if re_norm > 0 else 0.0
    if tail > 1e-3:
        warnings.warn(f"transform not decayed at the band edge (ratio {tail:.2e})", RuntimeWarning, stacklevel=2)
    if real_target and imag > 1e-6:
        warnings.warn(f"imaginary residue {imag:.2e} of the inverse transform", RuntimeWarning, stacklevel=2)
    return GridFunction(x, acc.real.copy(), {"tail_ratio": tail, "imag_ratio": imag, "a": F.a})


# ---------------------------------------------------------------------------
# Parseval identities
# ---------------------------------------------------------------------------

def parseval_norm(F: LineTransform) -> float:
    """(1/2 pi) int |F(y + i a)|^2 dy; for a = 0 this is the squared L2 norm."""
    y = F.y_values
    return float(np.sum(trapezoid_weights(y.size, grid_spacing(y)) * np.abs(F.values) ** 2) / (2 * math.pi))


def two_line_parseval(F_minus: LineTransform, F_plus: LineTransform) -> float:
    """(1/2 pi) int conj(F(y - i a)) F(y + i a) dy, equal to the squared L2 norm."""
    if F_minus.a != -F_plus.a or np.any(F_minus.y_values != F_plus.y_values):
        raise GridMismatchError("need the lines L_{-a} and L_a on a common frequency grid")
    y = F_plus.y_values
    val = np.sum(trapezoid_weights(y.size, grid_spacing(y)) * np.conj(F_minus.values) * F_plus.values)
    return float(val.real / (2 * math.pi))


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

def deconvolve(psi, pi, settings: DeconvolutionSettings, x_out, F_den: Optional[LineTransform] = None,
               eps_NT: Optional[float] = None) -> tuple[GridFunction, LineTransform]:
    """W' from Psi = -W' * pi: forward transforms, regularized division, inverse."""
    y = settings.frequencies()
    F_psi = forward_line_transform(psi, settings.a, y)
    F_pi = forward_line_transform(pi, settings.a, y) if settings.mode == "oracle_shift" else None
    F_w = regularized_divide(F_psi, F_den, F_pi, settings, eps_NT)
    return inverse_line_transform(F_w, x_out), F_w


def _l2(values, x) -> float:
    return float(math.sqrt(np.trapezoid(np.asarray(values) ** 2, x)))


def estimate_interaction(e, cfg: EstimatorConfig, settings: DeconvolutionSettings, x_grid=None,
                         tilde_v_prime: Optional[Callable] = None, pi_oracle: Optional[GridDensity] = None,
                         truth: Optional[Callable] = None, kernel: Optional[HighOrderKernel] = None,
                         weight: Optional[WeightFunction] = None, est_grid=(-8.0, 8.0, 1601),
                         pi_transform: Optional[LineTransform] = None) -> tuple[GridFunction, dict]:
    """Kernel estimates, contrast estimate of alpha, Psi_N and the regularized deconvolution.

    ``truth`` (the true W') and ``pi_oracle`` only feed error diagnostics and
    the oracle_shift denominator; they never enter the data path otherwise.
    ``pi_transform`` may carry a precomputed F(pi) on the settings' frequencies.
    """
    pos = np.asarray(getattr(e, "positions", e), dtype=float).ravel()
    kernel = kernel or make_kernel(cfg.m)
    weight = weight or make_weight(cfg.eps)
    y = np.linspace(*est_grid)
    x_out = np.linspace(-6.0, 6.0, 1201) if x_grid is None else np.asarray(x_grid, dtype=float)
    eps_NT = settings.eps_NT if settings.eps_NT is not None else cfg.eps_NT

    pi_n = estimate_density(pos, kernel, cfg.h0, y)
    pi_p = estimate_density_derivative(pos, kernel, cfg.h1, y)
    if cfg.delta is None:
        cfg = cfg.with_c1_hat(default_c1_hat(pi_n))
    l_n = log_density_derivative(pi_n, pi_p, cfg.delta)
    alpha_hat = estimate_alpha(l_n, tilde_v_prime, weight, max(cfg.U, 1.0))
    psi = build_psi(l_n, alpha_hat, tilde_v_prime, cfg.eps, cfg.U)

    freqs = settings.frequencies()
    F_den = empirical_line_transform(pos, settings.a, freqs)
    F_pi = None
    if settings.mode == "oracle_shift":
        if pi_transform is not None:
            F_pi = pi_transform
        elif pi_oracle is None:
            raise ConfigError("oracle_shift mode needs pi_oracle")
        else:
            F_pi = forward_line_transform(pi_oracle, settings.a, freqs)
    F_psi = forward_line_transform(psi, settings.a, freqs)
    F_w = regularized_divide(F_psi, F_den, F_pi, settings, eps_NT)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        w_est = inverse_line_transform(F_w, x_out)

    report = {
        "alpha_hat": alpha_hat, "eps_NT": eps_NT, "min_abs_denominator": F_w.meta["min_abs_denominator"],
        "floor_ok": bool(F_w.meta["min_abs_denominator"] >= eps_NT), "delta": cfg.delta, "c1_hat": cfg.c1_hat,
        "U": cfg.U, "window": cfg.eps * cfg.U, "h0": cfg.h0, "h1": cfg.h1, "N_T": cfg.N_T, "mode": settings.mode,
        "a": settings.a, "tail_ratio": w_est.meta["tail_ratio"], "imag_ratio": w_est.meta["imag_ratio"],
        "wprime_l2_norm": _l2(w_est.values, x_out), "psi_l2_norm": _l2(psi.values, y),
    }
    if pi_oracle is not None:
        on = np.interp(y, pi_oracle.x, pi_oracle.values)
        report["pi_l2_error"] = _l2(pi_n.values - on, y)
    if truth is not None:
        report["wprime_l2_error"] = _l2(w_est.values - truth(x_out), x_out)
        if pi_oracle is not None:
            psi_true = -convolve_on_grid(truth, pi_oracle.values, pi_oracle.x)
            pt = np.interp(y, pi_oracle.x, psi_true)
            report["psi_l2_error"] = _l2(psi.values - pt, y)
            inside = np.abs(y) <= cfg.eps * cfg.U
            report["psi_l2_error_window"] = _l2(np.where(inside, psi.values - pt, 0.0), y)
    return w_est, {**report, "psi": psi, "pi_hat": pi_n, "pi_prime_hat": pi_p, "l_hat": l_n}


# ---------------------------------------------------------------------------
# Transform diagnostics
# ---------------------------------------------------------------------------

def _ratio_integral(Fw: np.ndarray, Fp: np.ndarray, y: np.ndarray, ymax: float) -> float:
    k = np.abs(y) <= ymax + 1e-12
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        r = np.abs(Fw[k]) ** 2 / np.abs(Fp[k]) ** 2
    return float(np.trapezoid(r, y[k]))


def decay_slope(F: LineTransform, y_range=(10.0, 40.0)) -> tuple[float, float]:
    """Least-squares slope (and its standard error) of log|F| against log y on y_range."""
    y = F.y_values
    k = (y >= y_range[0]) & (y <= y_range[1])
    if np.count_nonzero(k) < 3:
        raise ConfigError("too few frequencies in the decay range")
    lx, ly = np.log(y[k]), np.log(np.abs(F.values[k]))
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    dof = lx.size - 2
    s2 = float(res[0]) / dof if res.size and dof > 0 else 0.0
    se = math.sqrt(s2 / np.sum((lx - lx.mean()) ** 2))
    return float(coef[0]), se


def fts_diagnostic(pi: GridDensity, w_prime: Optional[Callable] = None, a: float = 0.0, y_max: float = 4.0,
                   w_prime_transform: Optional[Callable] = None, candidates=(0.0, 0.25, 0.5, 1.0),
                   decay_range=(10.0, 40.0), n_freq: int = 2049, x_wprime=(-20.0, 20.0, 8001)) -> dict:
    """Check that int |F(W')/F(pi)|^2 stays bounded on L_a and L_-a.

    The truncated integral is computed at y_max and 2 y_max; the check passes
    when the relative increment stays below 0.1 on both lines.  Also reports
    min |F(pi)| on each candidate line and the decay slope of |F(pi)| on
    ``decay_range``.  Supply either ``w_prime`` (a function, integrated on
    ``x_wprime``) or ``w_prime_transform`` (a function of complex z).
    """
    if (w_prime is None) == (w_prime_transform is None):
        raise ConfigError("supply exactly one of w_prime and w_prime_transform")
    y = np.linspace(-2 * y_max, 2 * y_max, 2 * n_freq - 1)
    lines = {}
    passed = True
    for sign in ((1.0,) if a == 0 else (1.0, -1.0)):
        aa = sign * a
        Fp = forward_line_transform(pi, aa, y).values
        if w_prime is not None:
            xw = np.linspace(*x_wprime)
            Fw = forward_line_transform(GridFunction(xw, w_prime(xw)), aa, y).values
        else:
            Fw = np.asarray(w_prime_transform(y + 1j * aa), dtype=complex)
        i1 = _ratio_integral(Fw, Fp, y, y_max)
        i2 = _ratio_integral(Fw, Fp, y, 2 * y_max)
        inc = (i2 - i1) / i1 if i1 > 0 and np.isfinite(i2) else (0.0 if i2 == i1 == 0 else math.inf)
        ok = bool(np.isfinite(inc) and inc < 0.1)
        passed &= ok
        lines[aa] = {"integral": i1, "integral_doubled": i2, "increment_ratio": inc, "passed": ok}

    yz = np.linspace(-y_max, y_max, n_freq)
    zero_scan = {float(c): float(np.min(np.abs(forward_line_transform(pi, c, yz).values))) for c in candidates}
    yd = np.linspace(decay_range[0], decay_range[1], 301)
    slope, se = decay_slope(forward_line_transform(pi, 0.0, yd), decay_range)
    return {"passed": bool(passed), "lines": lines, "zero_scan": zero_scan,
            "decay_slope": slope, "decay_slope_se": se, "y_max": y_max, "a": a}


__all__ = [
    "LineTransform", "DeconvolutionSettings", "forward_line_transform", "empirical_line_transform",
    "regularized_denominator", "regularized_divide", "inverse_line_transform", "parseval_norm",
    "two_line_parseval", "deconvolve", "estimate_interaction", "decay_slope", "fts_diagnostic",
]
