import math
import warnings

import numpy as np
import pytest

from mvdecon._quadrature import GridFunction, convolve_on_grid
from mvdecon.deconvolution import (DeconvolutionSettings, LineTransform, decay_slope, deconvolve,
                                   empirical_line_transform, estimate_interaction, forward_line_transform,
                                   fts_diagnostic, inverse_line_transform, parseval_norm, regularized_denominator,
                                   regularized_divide, two_line_parseval)
from mvdecon.errors import ConfigError, GridMismatchError, RangeGuardError, SchemaError
from mvdecon.invariant import solve_invariant
from mvdecon.kernels import derive_config
from mvdecon.particles import simulate_system
from mvdecon.potentials import builtin_model

X = np.linspace(-10, 10, 4001)
GAUSS = GridFunction(X, np.exp(-X * X))


def _bump(x, r=2.0):
    out = np.zeros_like(x)
    k = np.abs(x) < r
    out[k] = np.exp(-1 / (1 - (x[k] / r) ** 2))
    return out


def test_forward_examples():
    y = np.array([0.0])
    assert forward_line_transform(GAUSS, 0.0, y).values[0] == pytest.approx(math.sqrt(math.pi), abs=1e-12)
    assert forward_line_transform(GAUSS, 1.0, y).values[0] == pytest.approx(math.sqrt(math.pi) * math.exp(0.25),
                                                                          abs=1e-12)
    zero = forward_line_transform(GridFunction(X, np.zeros_like(X)), 0.3, np.linspace(-5, 5, 11))
    assert np.all(zero.values == 0)


def test_forward_gaussian_closed_form():
    y = np.linspace(-10, 10, 201)
    F = forward_line_transform(GAUSS, 0.0, y).values
    assert np.max(np.abs(F - math.sqrt(math.pi) * np.exp(-y * y / 4))) < 1e-12


def test_forward_hermite_force_closed_form(hermite):
    theta = hermite.params["theta"]
    y = np.linspace(-6, 6, 121)
    xw = np.linspace(-20, 20, 8001)
    F = forward_line_transform(GridFunction(xw, hermite.interaction.w_prime(xw)), 0.0, y).values
    expected = 1j * theta * math.sqrt(2 * math.pi) * y * np.exp(-y * y / 2)
    assert np.max(np.abs(F - expected)) < 1e-10


def test_forward_range_guard():
    with pytest.raises(RangeGuardError):
        forward_line_transform(GAUSS, 100.0, np.zeros(1))


def test_conjugate_symmetry_of_real_functions():
    y = np.linspace(-6, 6, 61)
    f = GridFunction(X, _bump(X - 0.3))
    F = forward_line_transform(f, 0.5, y).values
    assert np.max(np.abs(F[::-1] - np.conj(F))) < 1e-12


def test_empirical_examples():
    y = np.linspace(-3, 3, 7)
    assert np.allclose(empirical_line_transform(np.array([0.0]), 0.0, y).values, 1.0, atol=0)
    assert empirical_line_transform(np.array([1.0, -1.0]), 1.0, [0.0]).values[0] == pytest.approx(math.cosh(1), abs=1e-14)
    assert empirical_line_transform(np.array([1.0, -1.0]), 0.0, [math.pi]).values[0] == pytest.approx(-1, abs=1e-14)
    with pytest.raises(RangeGuardError):
        empirical_line_transform(np.array([800.0]), 1.0, [0.0])


def test_empirical_matches_direct_sum():
    x = np.random.default_rng(8).normal(size=700)
    y = np.linspace(-15, 15, 301)
    got = empirical_line_transform(x, 0.4, y).values
    direct = np.mean(np.exp(1j * (y[:, None] + 0.4j) * x[None, :]), axis=1)
    assert np.max(np.abs(got - direct)) < 1e-13


XB = np.linspace(-5, 5, 4001)


@pytest.mark.parametrize("a,f,tol", [(0.0, GAUSS, 1e-6), (0.5, GAUSS, 1e-4), (0.5, GridFunction(XB, _bump(XB, 4.0)), 1e-4)])
def test_round_trip(a, f, tol):
    s = DeconvolutionSettings(a=a, y_max=20.0, n_freq=4096)
    back = inverse_line_transform(forward_line_transform(f, a, s.frequencies()), f.x)
    assert np.max(np.abs(back.values - f.values)) < tol


def test_inverse_of_zero():
    y = np.linspace(-5, 5, 11)
    out = inverse_line_transform(LineTransform(0.0, y, np.zeros(11)), X)
    assert np.all(out.values == 0)


def test_inverse_warns_on_undecayed_band():
    y = np.linspace(-1, 1, 101)
    F = forward_line_transform(GAUSS, 0.0, y)
    with pytest.warns(RuntimeWarning, match="band edge"):
        out = inverse_line_transform(F, X)
    assert out.meta["tail_ratio"] > 1e-3


def test_parseval_identities():
    y = np.linspace(-20, 20, 4096)
    l2 = np.trapezoid(GAUSS.values**2, X)
    assert parseval_norm(forward_line_transform(GAUSS, 0.0, y)) == pytest.approx(l2, rel=1e-4)
    f = GridFunction(X, _bump(X))
    l2b = np.trapezoid(f.values**2, X)
    val = two_line_parseval(forward_line_transform(f, -0.5, y), forward_line_transform(f, 0.5, y))
    assert val == pytest.approx(l2b, rel=1e-4)
    with pytest.raises(GridMismatchError):
        two_line_parseval(forward_line_transform(f, 0.5, y), forward_line_transform(f, 0.5, y))


def test_regularized_divide_recovers_force_exactly(hermite, hermite_pi_wide):
    pi = hermite_pi_wide
    y = np.linspace(-4, 4, 161)
    xw = np.linspace(-20, 20, 8001)
    Fw = forward_line_transform(GridFunction(xw, hermite.interaction.w_prime(xw)), 0.0, y)
    Fp = forward_line_transform(pi, 0.0, y)
    F_psi = LineTransform(0.0, y, -Fw.values * Fp.values)
    out = regularized_divide(F_psi, None, Fp, DeconvolutionSettings(eps_NT=1e-10))
    k = np.abs(Fw.values) > 0
    assert np.max(np.abs(out.values[k] - Fw.values[k]) / np.abs(Fw.values[k])) < 1e-6


def test_clip_mode_floor():
    y = np.linspace(-1, 1, 5)
    den = LineTransform(0.0, y, np.array([0.0, 0.05j, 0.5, -0.01, 2.0]))
    psi = LineTransform(0.0, y, np.ones(5))
    s = DeconvolutionSettings(mode="clip", eps_NT=0.1)
    d = regularized_denominator(den, None, s)
    assert np.min(np.abs(d)) >= 0.1
    assert d[0] == pytest.approx(0.1) and d[1] == pytest.approx(0.1j) and d[3] == pytest.approx(-0.1)
    assert d[2] == 0.5 and d[4] == 2.0
    out = regularized_divide(psi, den, None, s)
    assert np.all(np.abs(out.values) <= 1 / 0.1)
    zero = regularized_divide(LineTransform(0.0, y, np.zeros(5)), den, None, s)
    assert np.all(zero.values == 0)


def test_floor_is_exact_for_awkward_values():
    rng = np.random.default_rng(0)
    y = np.linspace(-1, 1, 2001)
    for eps in (0.3, 1 / 3, 1.37, 0.1 + 0.2):
        vals = (rng.normal(size=y.size) + 1j * rng.normal(size=y.size)) * eps
        for mode in ("clip", "oracle_shift"):
            F = LineTransform(0.0, y, vals)
            s = DeconvolutionSettings(mode=mode, eps_NT=eps)
            d = regularized_denominator(F, F, s)
            assert np.min(np.abs(d)) >= eps


def test_divide_rejects_mismatched_grids():
    a = LineTransform(0.0, np.linspace(-1, 1, 5), np.ones(5))
    b = LineTransform(0.5, np.linspace(-1, 1, 5), np.ones(5))
    with pytest.raises(GridMismatchError):
        regularized_divide(a, b, None, DeconvolutionSettings(mode="clip", eps_NT=0.1))


def test_settings_validation():
    assert DeconvolutionSettings(mode="oracle").mode == "oracle_shift"
    with pytest.raises(ConfigError):
        DeconvolutionSettings(mode="tikhonov")
    with pytest.raises(ConfigError):
        DeconvolutionSettings(eps_NT=0.0)


def test_line_transform_csv(tmp_path):
    F = forward_line_transform(GAUSS, 0.25, np.linspace(-2, 2, 9))
    p = tmp_path / "F.csv"
    F.to_csv(p)
    back = LineTransform.from_csv(p)
    assert back.a == 0.25 and np.array_equal(back.values, F.values)
    p.write_text("y,re,im\n0,1,0\n")
    with pytest.raises(SchemaError):
        LineTransform.from_csv(p)


def test_oracle_deconvolution_identity(hermite, hermite_pi_wide):
    pi = hermite_pi_wide
    psi = GridFunction(pi.x, -convolve_on_grid(hermite.interaction.w_prime, pi.values, pi.x))
    x = np.linspace(-6, 6, 1201)
    w, _ = deconvolve(psi, pi, DeconvolutionSettings(y_max=20.0, eps_NT=1e-10), x)
    truth = hermite.interaction.w_prime(x)
    rel = math.sqrt(np.trapezoid((w.values - truth) ** 2, x) / np.trapezoid(truth**2, x))
    assert rel < 1e-5


def test_estimate_interaction_report(hermite, hermite_pi):
    e = simulate_system(hermite, 500, 23.0, 0.01, seed=1)
    cfg = derive_config(hermite, 500, 23.0)
    w, rep = estimate_interaction(e, cfg, DeconvolutionSettings(), pi_oracle=hermite_pi,
                                  truth=hermite.interaction.w_prime)
    assert rep["floor_ok"] and rep["min_abs_denominator"] >= rep["eps_NT"] == cfg.eps_NT
    assert 0.3 < rep["alpha_hat"] < 0.7
    for key in ("pi_l2_error", "psi_l2_error", "psi_l2_error_window", "wprime_l2_error"):
        assert np.isfinite(rep[key])
    assert w.x.size == 1201
    clip_w, clip_rep = estimate_interaction(e, cfg, DeconvolutionSettings(mode="clip"))
    assert clip_rep["floor_ok"] and "wprime_l2_error" not in clip_rep
    with pytest.raises(ConfigError):
        estimate_interaction(e, cfg, DeconvolutionSettings())


def test_zero_interaction_estimate_shrinks(zero_model):
    pi = solve_invariant(zero_model, (-8.0, 8.0, 4097))
    norms = {}
    for N in (500, 8000):
        cfg = derive_config(zero_model, N, math.ceil(math.log(N) / zero_model.lam))
        vals = []
        for seed in range(20):
            x = np.random.default_rng(seed).normal(0, math.sqrt(0.5), N)
            _, rep = estimate_interaction(x, cfg, DeconvolutionSettings(), pi_oracle=pi)
            vals.append(rep["wprime_l2_norm"])
        norms[N] = np.median(vals)
    assert norms[8000] < norms[500]


def test_fts_diagnostic(hermite):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pi = solve_invariant(hermite)
    good = fts_diagnostic(pi, hermite.interaction.w_prime)
    assert good["passed"] and good["lines"][0.0]["increment_ratio"] < 0.1
    both = fts_diagnostic(pi, hermite.interaction.w_prime, a=0.5)
    assert both["passed"] and set(both["lines"]) == {0.5, -0.5}
    bad = fts_diagnostic(pi, w_prime_transform=lambda z: 1 / (1 + z * z))
    assert not bad["passed"]
    assert all(v > 0 for v in good["zero_scan"].values())
    with pytest.raises(ConfigError):
        fts_diagnostic(pi)


def test_decay_slope_of_power_law():
    y = np.linspace(10, 40, 301)
    F = LineTransform(0.0, y, 3.0 * y**-4.0)
    slope, se = decay_slope(F)
    assert slope == pytest.approx(-4.0, abs=1e-12) and se < 1e-10
    with pytest.raises(ConfigError):
        decay_slope(F, (50.0, 60.0))
