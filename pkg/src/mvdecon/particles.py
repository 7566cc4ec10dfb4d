"""Interacting particle simulation, coupled mean-field copies and sample statistics."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve
from scipy.stats import wasserstein_distance

from ._quadrature import EXP_GUARD, convolve_on_grid
from .errors import ConfigError, GridMismatchError, InstabilityError, RangeGuardError, SchemaError
from .invariant import DensityFlow, GridDensity
from .potentials import PotentialModel

MAGIC = b"MKVE1"
BLOWUP = 1e6
NOISE_CHUNK = 256


@dataclass(frozen=True)
class ParticleEnsemble:
    """Positions X_T^{i,N} of N particles at horizon T."""

    positions: np.ndarray
    N: int
    T: float
    dt: float
    seed: int
    model_id: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.N < 1 or pos.shape != (self.N,):
            raise ConfigError("positions must be a length-N array with N >= 1")
        if self.T < 0 or not self.dt > 0:
            raise ConfigError("need T >= 0 and dt > 0")
        if not np.all(np.isfinite(pos)):
            raise ConfigError("positions must be finite")

    def sidecar(self) -> dict:
        return {"N": self.N, "T": self.T, "dt": self.dt, "seed": int(self.seed),
                "model_id": self.model_id, "meta": self.meta}

    def save(self, path, fmt: str = "csv") -> None:
        """Write positions (CSV ``index,position`` or ``MKVE1`` binary) plus a JSON sidecar."""
        path = Path(path)
        if fmt == "csv":
            np.savetxt(path, np.column_stack([np.arange(self.N), self.positions]), delimiter=",",
                       header="index,position", comments="", fmt=["%d", "%.17g"])
        elif fmt == "binary":
            path.write_bytes(MAGIC + struct.pack("<Q", self.N) + self.positions.astype("<f8").tobytes())
        else:
            raise ConfigError(f"unknown format {fmt!r}")
        Path(str(path) + ".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ParticleEnsemble":
        path = Path(path)
        side = json.loads(Path(str(path) + ".json").read_text())
        blob = path.read_bytes()
        if blob[:5] == MAGIC:
            (n,) = struct.unpack_from("<Q", blob, 5)
            pos = np.frombuffer(blob, dtype="<f8", count=n, offset=13).astype(float)
        else:
            if not blob.startswith(b"index,position"):
                raise SchemaError("expected header index,position")
            pos = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, 1]
        return cls(pos, side["N"], side["T"], side["dt"], side["seed"], side["model_id"], side.get("meta", {}))


@dataclass(frozen=True)
class CoupledPaths:
    """System particles and mean-field copies driven by the same noise."""

    system_positions: np.ndarray
    copy_positions: np.ndarray
    seed: int
    T: float
    dt: float

    def __post_init__(self):
        a = np.array(self.system_positions, dtype=float)
        b = np.array(self.copy_positions, dtype=float)
        if a.shape != b.shape:
            raise ConfigError("system and copies differ in length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ConfigError("coupled positions must be finite")
        object.__setattr__(self, "system_positions", a)
        object.__setattr__(self, "copy_positions", b)

    def gap_moment(self, p: int) -> float:
        return float(np.mean((self.system_positions - self.copy_positions) ** p))


# ---------------------------------------------------------------------------
# Time rules
# ---------------------------------------------------------------------------

def balanced_horizon(pm: PotentialModel, N: int) -> float:
    """T = ceil(log N / lambda), so that exp(-lambda T) <= 1/N."""
    return float(math.ceil(math.log(N) / pm.lam))


def effective_sample_size(pm: PotentialModel, N: float, T: float) -> float:
    """N_T = (1/N + exp(-lambda T))^(-1)."""
    return 1.0 / (1.0 / N + math.exp(-pm.lam * T))


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

class _Streams:
    """Counter-based normal streams, one per particle, keyed by (seed, stream id)."""

    def __init__(self, seed: int, stream_ids: np.ndarray):
        key = np.random.SeedSequence(int(seed)).generate_state(2, np.uint64)
        self.gens = [np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(i)]))
                     for i in stream_ids]

    def draw(self, k: int) -> np.ndarray:
        return np.stack([g.standard_normal(k) for g in self.gens])


def _initial_positions(init: Optional[dict], streams: _Streams) -> np.ndarray:
    init = {"kind": "normal", "mean": 0.0, "std": 1.0} if init is None else init
    kind = init.get("kind")
    z = streams.draw(1)[:, 0]
    if kind == "point":
        return np.full(z.size, float(init.get("value", 0.0)))
    if kind == "normal":
        std = float(init.get("std", 1.0))
        if std < 0:
            raise ConfigError("init std must be nonnegative")
        return float(init.get("mean", 0.0)) + std * z
    raise ConfigError(f"unknown init kind {kind!r}")


def _n_steps(T: float, dt: float) -> int:
    if T < 0 or not dt > 0:
        raise ConfigError("need T >= 0 and dt > 0")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ConfigError("T must be an integer multiple of dt")
    return n


# ---------------------------------------------------------------------------
# Interaction sums
# ---------------------------------------------------------------------------

def pairwise_interaction(pm: PotentialModel, x: np.ndarray, chunk: int = 512) -> np.ndarray:
    """(1/N) sum_j W'(x_i - x_j), exact and chunked over i."""
    out = np.empty_like(x)
    for s in range(0, x.size, chunk):
        out[s : s + chunk] = pm.interaction.w_prime(x[s : s + chunk, None] - x[None, :]).sum(axis=1)
    return out / x.size


class _MeshInteraction:
    """Particle-mesh approximation of (1/N) sum_j W'(x_i - x_j).

    Cloud-in-cell deposit onto a lattice of spacing h, FFT convolution with W'
    sampled on lattice offsets, and linear gather.  The odd kernel and
    symmetric deposit/gather leave no self-force.
    """

    def __init__(self, pm: PotentialModel, h: float):
        self.h = h
        radius = pm.interaction.support_radius
        self.L = int(math.ceil(min(radius, 60.0) / h))
        self.kern = pm.interaction.w_prime(h * np.arange(-self.L, self.L + 1))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = self.h
        i0 = math.floor(float(np.min(x)) / h) - 1
        i1 = math.ceil(float(np.max(x)) / h) + 1
        m = i1 - i0 + 1
        t = x / h - i0
        k = np.floor(t).astype(np.int64)
        f = t - k
        mass = np.bincount(k, weights=1.0 - f, minlength=m) + np.bincount(k + 1, weights=f, minlength=m)
        fld = fftconvolve(mass[:m], self.kern)[self.L : self.L + m]
        return ((1.0 - f) * fld[k] + f * fld[k + 1]) / x.size


def _interaction_fn(pm: PotentialModel, method: str, mesh_dx: float):
    if pm.interaction.is_zero:
        return None
    if method == "exact":
        return lambda x: pairwise_interaction(pm, x)
    if method == "mesh":
        if not mesh_dx > 0:
            raise ConfigError("mesh_dx must be positive")
        return _MeshInteraction(pm, mesh_dx)
    raise ConfigError(f"unknown interaction method {method!r}")


def _check_step(pm: PotentialModel, dt: float) -> None:
    if not pm.lam > 0:
        raise ConfigError("model needs lambda > 0")
    bound = 0.1 / max(pm.alpha + pm.interaction.C_W, 1.0)
    if dt > bound * (1 + 1e-12):
        raise ConfigError(f"dt={dt} exceeds the stability bound {bound:.4g}")


def _guard(x: np.ndarray, step: int) -> None:
    if not np.all(np.abs(x) <= BLOWUP):
        raise InstabilityError(f"particles diverged at step {step}")


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def simulate_system(pm: PotentialModel, N: int, T: float, dt: float, seed: int, init: Optional[dict] = None,
                    method: str = "mesh", mesh_dx: float = 0.005,
                    stream_ids: Optional[Sequence[int]] = None) -> ParticleEnsemble:
    """Euler-Maruyama for dX = -V'(X)dt - (1/2N) sum_j W'(X - X_j) dt + dB.

    Particle i reads its initial draw and its increments from stream
    ``stream_ids[i]`` (default i), so ensembles of different N share noise.
    """
    if N < 1:
        raise ConfigError("N must be >= 1")
    _check_step(pm, dt)
    n = _n_steps(T, dt)
    ids = np.arange(N) if stream_ids is None else np.asarray(stream_ids, dtype=np.int64)
    if ids.shape != (N,):
        raise ConfigError("stream_ids must have length N")
    streams = _Streams(seed, ids)
    x = _initial_positions(init, streams)
    inter = _interaction_fn(pm, method, mesh_dx)
    sq = math.sqrt(dt)
    step = 0
    while step < n:
        k = min(NOISE_CHUNK, n - step)
        noise = streams.draw(k)
        for j in range(k):
            drift = -pm.confinement(x, 1)
            if inter is not None:
                drift = drift - 0.5 * inter(x)
            x = x + drift * dt + sq * noise[:, j]
            step += 1
            _guard(x, step)
    meta = {"init": init or {"kind": "normal", "mean": 0.0, "std": 1.0}, "method": method,
            "mesh_dx": mesh_dx, "model_params": pm.params}
    return ParticleEnsemble(x, N, float(T), float(dt), int(seed), pm.name, meta)


def simulate_coupled(pm: PotentialModel, flow: DensityFlow, N: int, T: float, dt: float, seed: int,
                     init: Optional[dict] = None, method: str = "mesh", mesh_dx: float = 0.005) -> CoupledPaths:
    """Run the particle system and its mean-field copies on identical noise.

    Copies use -V'(x) - (W' * mu_t)(x)/2 with mu_t read from ``flow`` at every
    step time k*dt.
    """
    _check_step(pm, dt)
    n = _n_steps(T, dt)
    if len(flow.times) < n + 1 or np.any(np.abs(flow.times[: n + 1] - dt * np.arange(n + 1)) > 1e-9):
        raise GridMismatchError("flow snapshots do not sit on the step times k*dt")
    streams = _Streams(seed, np.arange(N))
    x = _initial_positions(init, streams)
    xb = x.copy()
    inter = _interaction_fn(pm, method, mesh_dx)
    if inter is not None:
        grid = flow.densities[0].x
        fields = [convolve_on_grid(pm.interaction.w_prime, d.values, grid) for d in flow.densities[:n]]
    sq = math.sqrt(dt)
    step = 0
    while step < n:
        k = min(NOISE_CHUNK, n - step)
        noise = streams.draw(k)
        for j in range(k):
            d = -pm.confinement(x, 1)
            db = -pm.confinement(xb, 1)
            if inter is not None:
                d = d - 0.5 * inter(x)
                db = db - 0.5 * np.interp(xb, grid, fields[step])
            x = x + d * dt + sq * noise[:, j]
            xb = xb + db * dt + sq * noise[:, j]
            step += 1
            _guard(x, step)
            _guard(xb, step)
    return CoupledPaths(x, xb, int(seed), float(T), float(dt))


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def _positions(e) -> np.ndarray:
    pos = e.positions if isinstance(e, ParticleEnsemble) else np.asarray(e, dtype=float).ravel()
    if pos.size == 0:
        raise ConfigError("empty sample")
    return pos


def _cell_tables(d: GridDensity):
    x, p, h = d.x, d.values, d.dx
    s = np.diff(p) / h
    F = d.cdf()
    g = x[:-1] * (p[:-1] * h + s * h * h / 2) + p[:-1] * h * h / 2 + s * h**3 / 3
    G = np.concatenate([[0.0], np.cumsum(g)])
    return x, p, s, F, G, h


def _eval_cum(tab, t):
    """F(t) and G(t) = int_{x_0}^t s pi(s) ds for the piecewise-linear density."""
    x, p, s, F, G, h = tab
    t = np.clip(t, x[0], x[-1])
    k = np.clip(((t - x[0]) / h).astype(np.int64), 0, x.size - 2)
    tau = t - x[k]
    pk, sk = p[k], s[k]
    f = F[k] + pk * tau + sk * tau**2 / 2
    g = G[k] + x[k] * (pk * tau + sk * tau**2 / 2) + pk * tau**2 / 2 + sk * tau**3 / 3
    return f, g


def _quantile(tab, u):
    x, p, s, F, G, h = tab
    k = np.clip(np.searchsorted(F, u, side="right") - 1, 0, x.size - 2)
    r = np.maximum(u - F[k], 0.0)
    pk, sk = p[k], s[k]
    disc = np.sqrt(np.maximum(pk * pk + 2 * sk * r, 0.0))
    den = pk + disc
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(den > 0, 2 * r / den, 0.0)
    return x[k] + np.clip(tau, 0.0, h)


def _w1_sample_density(sample: np.ndarray, d: GridDensity) -> float:
    xs = np.sort(sample)
    n = xs.size
    tab = _cell_tables(d)
    q = _quantile(tab, np.arange(n + 1) / n)
    q[0], q[-1] = d.x_min, d.x_max
    lo, hi = q[:-1], q[1:]
    c = np.clip(xs, lo, hi)
    F_lo, G_lo = _eval_cum(tab, lo)
    F_c, G_c = _eval_cum(tab, c)
    F_hi, G_hi = _eval_cum(tab, hi)
    inner = xs * (F_c - F_lo) - (G_c - G_lo) + (G_hi - G_c) - xs * (F_hi - F_c)
    return float(np.sum(inner))


def wasserstein1(a, b) -> float:
    """1-D Wasserstein-1 distance between samples and/or grid densities."""
    da, db = isinstance(a, GridDensity), isinstance(b, GridDensity)
    if da and db:
        if (a.x_min, a.x_max, a.n_points) != (b.x_min, b.x_max, b.n_points):
            raise GridMismatchError("densities must share a grid")
        diff = np.abs(a.cdf() - b.cdf())
        return float(a.dx * (np.sum(diff) - 0.5 * (diff[0] + diff[-1])))
    if da:
        a, b = b, a
    if db or da:
        return _w1_sample_density(_positions(a), b)
    return float(wasserstein_distance(_positions(a), _positions(b)))


def empirical_char_fn(e, z: complex) -> complex:
    """(1/N) sum_j exp(i z X_j) with an overflow guard on |Im z * X_j|."""
    pos = _positions(e)
    z = complex(z)
    if np.max(np.abs(z.imag * pos)) > EXP_GUARD:
        raise RangeGuardError("|a X_j| exceeds the exponential range guard")
    return complex(np.mean(np.exp(1j * z.real * pos - z.imag * pos)))


def moment_report(e, orders=(1, 2, 4), c: float = 1.0) -> dict:
    """Empirical E[X^k] and E[exp(+-cX)] with standard errors."""
    pos = _positions(e)
    if np.max(np.abs(c * pos)) > EXP_GUARD:
        raise RangeGuardError("|c X_j| exceeds the exponential range guard")
    n = pos.size
    sd = (lambda v: float(np.std(v, ddof=1) / math.sqrt(n))) if n > 1 else (lambda v: float("nan"))
    out = {"N": n, "moments": {}, "moment_se": {}}
    for k in orders:
        v = pos**k
        out["moments"][int(k)] = float(np.mean(v))
        out["moment_se"][int(k)] = sd(v)
    ep, em = np.exp(c * pos), np.exp(-c * pos)
    out.update(c=c, exp_plus=float(np.mean(ep)), exp_minus=float(np.mean(em)),
               exp_plus_se=sd(ep), exp_minus_se=sd(em))
    return out


__all__ = [
    "ParticleEnsemble", "CoupledPaths", "simulate_system", "simulate_coupled", "pairwise_interaction",
    "wasserstein1", "empirical_char_fn", "moment_report", "balanced_horizon", "effective_sample_size",
]
