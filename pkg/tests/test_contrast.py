import math

import numpy as np
import pytest

from mvdecon._quadrature import GridFunction, convolve_at
from mvdecon.contrast import WEIGHT_SHAPES, build_psi, estimate_alpha, make_weight
from mvdecon.errors import ConfigError, ExtrapolationError
from mvdecon.invariant import log_derivative_on_grid
from mvdecon.kernels import derive_config, estimate_density, estimate_density_derivative, log_density_derivative, make_kernel

Y = np.linspace(-8, 8, 1601)


@pytest.mark.parametrize("shape", sorted(WEIGHT_SHAPES))
def test_weight_support_and_mass(shape):
    w = make_weight(0.9, shape)
    x = np.linspace(0, 1.2, 240001)
    v = w(x)
    assert np.all(v >= 0)
    assert np.all(v[(x < 0.9) | (x > 1.0)] == 0)
    assert np.trapezoid(v, x) == pytest.approx(1.0, abs=2 * (x[1] - x[0]) / 0.1)
    assert 0.81 < w.C2 < 1.0


def test_weight_errors():
    with pytest.raises(ConfigError):
        make_weight(1.0)
    with pytest.raises(ConfigError):
        make_weight(0.5, "triangle")


def test_alpha_from_exact_linear_score():
    w = make_weight(0.9)
    assert estimate_alpha(GridFunction(Y, -1.4 * Y), None, w, 3.0) == pytest.approx(0.7, abs=1e-8)


def test_alpha_ignores_compact_perturbation():
    w = make_weight(0.9)
    g = np.where(np.abs(Y) <= 1, np.sin(3 * Y), 0.0)
    assert estimate_alpha(GridFunction(Y, -2 * Y - g), None, w, 2.0) == pytest.approx(1.0, abs=1e-8)


def test_alpha_subtracts_known_confinement_part():
    w = make_weight(0.9)
    tv = lambda x: 0.3 * np.tanh(x)
    l = -2 * 0.8 * Y - 2 * tv(Y)
    assert estimate_alpha(GridFunction(Y, l), tv, w, 4.0) == pytest.approx(0.8, abs=1e-8)


def test_alpha_window_errors():
    w = make_weight(0.9)
    with pytest.raises(ConfigError):
        estimate_alpha(GridFunction(Y, -Y), None, w, 0.5)
    with pytest.raises(ExtrapolationError):
        estimate_alpha(GridFunction(Y, -Y), None, w, 9.0)


def test_alpha_pipeline_on_ou_sample(zero_model):
    x = np.random.default_rng(6).normal(0, math.sqrt(0.5), 10_000)
    cfg = derive_config(zero_model, 1, 0, N_T=1e4)
    k = make_kernel(2)
    p0 = estimate_density(x, k, cfg.h0, Y)
    p1 = estimate_density_derivative(x, k, cfg.h1, Y)
    l = log_density_derivative(p0, p1, 1e-12)
    assert abs(estimate_alpha(l, None, make_weight(0.9), cfg.U) - 1.0) < 0.1


def test_psi_examples():
    z = build_psi(GridFunction(Y, -2 * Y), 1.0, None, 0.9, 4.0)
    assert np.all(z.values == 0)
    q = np.sin(Y)
    psi = build_psi(GridFunction(Y, -2 * Y - q), 1.0, None, 0.9, 4.0)
    inside = np.abs(Y) <= 3.6
    assert np.allclose(psi.values[inside], -q[inside], atol=1e-14)
    assert np.all(psi.values[~inside] == 0)


def test_psi_window_clipped_with_warning():
    with pytest.warns(RuntimeWarning):
        psi = build_psi(GridFunction(Y, -Y), 0.0, None, 0.9, 10.0)
    assert psi.meta["clipped"]


def test_psi_oracle_identity(hermite, hermite_pi_wide):
    pi = hermite_pi_wide
    l = GridFunction(pi.x, log_derivative_on_grid(hermite, pi))
    psi = build_psi(l, hermite.alpha, None, 0.8, 10.0)
    inside = np.abs(pi.x) <= 8.0
    direct = -convolve_at(hermite.interaction.w_prime, pi.values, pi.x, pi.x[inside])
    assert np.max(np.abs(psi.values[inside] - direct)) < 1e-8
