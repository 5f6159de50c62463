import dataclasses
import itertools

import numpy as np
import pytest

from aqia.ensemble import PRESETS
from aqia.meanfield import LoopConfig
from aqia.scaling import (NoCrossingError, binder_crossing_fit, bootstrap_fit,
                          collapse_fit, collapse_variance, fss_scan, hysteresis_sweep,
                          peak_scaling_fit, susceptibility_peaks)
from synthetic import TRUTH, perfect_collapse, sampled_collapse

TINY = PRESETS["critical"].with_(N=5, n=3, R=2)
ONE_START = [(1.0, 1.0, 0.2)]


# -- collapse objective -----------------------------------------------------

def test_perfect_collapse_variance_near_zero():
    d = perfect_collapse()
    assert collapse_variance(TRUTH, *d.flat()) < 1e-6
    assert collapse_variance((1.1, 1.0, 0.125), *d.flat()) > 1e-4


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_variance_quadratic_in_scale(c):
    N, g, s = perfect_collapse().flat()
    p = (1.05, 0.9, 0.2)
    assert collapse_variance(p, N, g, c * s) == pytest.approx(c ** 2 * collapse_variance(p, N, g, s),
                                                             rel=1e-12)


def test_collapse_fit_recovers_truth():
    fit = collapse_fit(perfect_collapse())
    np.testing.assert_allclose((fit.gamma_c, fit.nu, fit.beta_over_nu), TRUTH, atol=0.02)
    assert fit.collapse_variance < 1e-6 and fit.success


def test_simplex_beats_coarse_grid(rng):
    d = sampled_collapse(rng, noise=0.02)
    N, g, s = d.flat()
    grid = itertools.product(np.linspace(0.8, 1.2, 9), np.linspace(0.5, 2.0, 7),
                             np.linspace(0.0, 0.5, 6))
    grid_min = min(collapse_variance(p, N, g, s) for p in grid)
    assert collapse_fit(d).collapse_variance <= grid_min


def test_frozen_critical_field():
    fit = collapse_fit(perfect_collapse(), gamma_c=1.0)
    assert fit.gamma_c == 1.0
    assert fit.nu == pytest.approx(1.0, abs=0.02)


def test_collapse_needs_three_sizes():
    with pytest.raises(ValueError):
        collapse_fit(perfect_collapse(sizes=(20, 30)))
    with pytest.raises(ValueError):
        collapse_fit(perfect_collapse(), bins=3)


# -- Binder crossing ---------------------------------------------------------

def with_binder(d, U4):
    return dataclasses.replace(d, U4=np.asarray(U4, float))


def test_constructed_crossing():
    d = perfect_collapse()
    NN, GG = np.meshgrid(d.sizes, d.gammas, indexing="ij")
    U4 = (2 / 3) * 0.5 * (1 - np.tanh((GG - 1.0) * NN / 10))
    fit = binder_crossing_fit(with_binder(d, U4))
    assert fit.gamma_c == pytest.approx(1.0, abs=1e-12)
    assert fit.nu == pytest.approx(1.0, abs=0.02)


def test_parallel_curves_have_no_crossing():
    d = perfect_collapse()
    U4 = 0.5 - 0.1 * d.gammas[None, :] + 0.01 * np.arange(d.sizes.size)[:, None]
    with pytest.raises(NoCrossingError):
        binder_crossing_fit(with_binder(d, U4))


# -- susceptibility peaks ------------------------------------------------------

def quadratic_peaks(sizes=(20, 30, 40, 50)):
    d = perfect_collapse(sizes, np.linspace(0.9, 1.2, 31))
    NN, GG = np.meshgrid(d.sizes, d.gammas, indexing="ij")
    peak = 1.0 + NN ** -1.0
    chi = NN ** 1.1 - 50.0 * (GG - peak) ** 2
    return dataclasses.replace(d, chi=chi)


def test_parabola_vertex_exact():
    d = quadratic_peaks()
    sizes, pos, height = susceptibility_peaks(d.gammas, d.chi, d.sizes)
    np.testing.assert_allclose(pos, 1 + 1 / sizes, atol=1e-12)
    np.testing.assert_allclose(height, sizes ** 1.1, rtol=1e-12)


def test_constructed_power_law_peaks():
    fit = peak_scaling_fit(quadratic_peaks())
    assert fit.gamma_c == pytest.approx(1.0, abs=1e-6)
    assert fit.nu == pytest.approx(1.0, abs=1e-5)
    assert fit.extras["peak_height_exponent"] == pytest.approx(1.1, abs=1e-9)
    assert fit.beta_over_nu == pytest.approx(0.125, abs=0.02)


def test_boundary_peaks_dropped():
    d = quadratic_peaks()
    chi = d.chi.copy()
    chi[0] = np.linspace(0, 1, d.gammas.size)
    with pytest.warns(UserWarning, match="boundary"):
        sizes, _, _ = susceptibility_peaks(d.gammas, chi, d.sizes)
    assert 20 not in sizes


def test_methods_agree_on_perfect_collapse():
    d = perfect_collapse(gammas=np.linspace(0.5, 1.5, 41))
    NN, GG = np.meshgrid(d.sizes, d.gammas, indexing="ij")
    d = with_binder(d, (2 / 3) * 0.5 * (1 - np.tanh((GG - 1.0) * NN / 10)))
    fits = [collapse_fit(d), binder_crossing_fit(d)]
    for f in fits:
        np.testing.assert_allclose((f.gamma_c, f.nu, f.beta_over_nu), TRUTH, atol=0.02)


# -- bootstrap -----------------------------------------------------------------

def test_identical_realizations_zero_width():
    d = sampled_collapse(np.random.default_rng(0), R=4, noise=0.0)
    bs = bootstrap_fit(d, resamples=6, initial_guesses=ONE_START)
    for lo, hi in bs.fit.ci95.values():
        assert hi - lo == pytest.approx(0.0, abs=1e-12)


def test_bootstrap_medians_inside_intervals():
    d = sampled_collapse(np.random.default_rng(1))
    bs = bootstrap_fit(d, resamples=30, seed=4, initial_guesses=ONE_START)
    assert bs.distribution.shape == (30, 4) and bs.failures == 0
    for name in ("gamma_c", "nu", "beta_over_nu"):
        lo, hi = bs.fit.ci95[name]
        assert np.isfinite(lo) and lo <= getattr(bs.fit, name) <= hi


def test_bootstrap_stable_under_more_resamples():
    d = sampled_collapse(np.random.default_rng(2))
    a = bootstrap_fit(d, resamples=30, seed=1, initial_guesses=ONE_START)
    b = bootstrap_fit(d, resamples=60, seed=1, initial_guesses=ONE_START)
    for name in ("gamma_c", "nu", "beta_over_nu"):
        width = np.subtract(*a.fit.ci95[name][::-1])
        assert abs(getattr(a.fit, name) - getattr(b.fit, name)) <= 0.5 * width + 1e-9


def test_bootstrap_deterministic():
    d = sampled_collapse(np.random.default_rng(3))
    a = bootstrap_fit(d, resamples=5, seed=9, initial_guesses=ONE_START)
    b = bootstrap_fit(d, resamples=5, seed=9, initial_guesses=ONE_START, threads=2)
    np.testing.assert_array_equal(a.distribution, b.distribution)


def test_bootstrap_needs_samples():
    with pytest.raises(ValueError):
        bootstrap_fit(perfect_collapse(), resamples=2)


# -- simulated scan ---------------------------------------------------------------

def test_fss_scan_table_and_samples():
    d = fss_scan(TINY, [4, 5, 6], [0.8, 1.0, 1.2], 3, 0)
    assert d.absS.shape == (3, 3) and np.all(d.counts == 3)
    s = d.samples[(5, 1)]
    assert s["absS"].shape == (3,)
    assert d.absS[1, 1] == pytest.approx(s["absS"].mean())
    assert np.all(np.isfinite(d.chi))
    assert np.all(d.U4 <= 2 / 3 + 1e-12)


def test_fss_scan_thread_invariant():
    a = fss_scan(TINY, [4, 5], [0.9, 1.1], 2, 3)
    b = fss_scan(TINY, [4, 5], [0.9, 1.1], 2, 3, threads=2)
    np.testing.assert_array_equal(a.absS, b.absS)
    np.testing.assert_array_equal(a.U4, b.U4)


# -- hysteresis --------------------------------------------------------------------

RATIOS = np.linspace(0.5, 1.5, 5)


def test_no_feedback_no_hysteresis():
    sw = hysteresis_sweep(TINY, RATIOS, 2, 0, LoopConfig(feedback=False))
    np.testing.assert_array_equal(sw.forward, sw.backward)
    assert sw.loop_area == 0.0


def test_schedule_validation():
    with pytest.raises(ValueError):
        hysteresis_sweep(TINY, [1.0], 1, 0)
    with pytest.raises(ValueError):
        hysteresis_sweep(TINY, [0.5, 1.0, 0.7], 1, 0)
    with pytest.raises(ValueError):
        hysteresis_sweep(TINY, RATIOS, 0, 0)


def test_reversed_schedule_mirrors_from_equilibrium():
    tiny = TINY.with_(N=6, n=4)
    r = np.linspace(0.5, 1.5, 6)
    a = hysteresis_sweep(tiny, r, 1, 0, start="converged")
    b = hysteresis_sweep(tiny, r[::-1], 1, 0, start="converged")
    assert a.loop_area > 0
    assert b.loop_area == pytest.approx(a.loop_area, rel=0.05)


def test_unknown_start_rejected():
    with pytest.raises(ValueError):
        hysteresis_sweep(TINY, RATIOS, 1, 0, start="random")
