"""Measure representations and the transform algebra."""

import numpy as np
import pytest
from scipy.optimize import bisect

from jacspec import measures as ms
from jacspec.measures import (
    Atomic,
    DomainError,
    Empirical,
    GridDensity,
    HerglotzSample,
    InversionError,
    RangeError,
    cdf,
    dilate,
    inverse_mgf,
    ks_distance,
    measure_from_json,
    measure_to_json,
    mgf,
    moments,
    s_transform,
    stieltjes,
    stieltjes_inversion,
    support_max,
)
from jacspec.rng import make_rng

D1 = Atomic([1.0], [1.0])
MIX14 = Atomic([1.0, 4.0], [0.5, 0.5])
MIXK = Atomic([0.25, 1.0], [0.5, 0.5])


def _random_atomic(gen, max_atoms=6):
    k = int(gen.integers(1, max_atoms + 1))
    pos = np.sort(gen.uniform(0.0, 5.0, k))
    w = gen.uniform(0.1, 1.0, k)
    return Atomic(pos, w / w.sum())


# -- construction invariants -------------------------------------------------


def test_constructors_enforce_support_and_mass():
    with pytest.raises(ValueError):
        Atomic([-0.1, 1.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        Atomic([1.0], [0.5])  # mass != 1
    with pytest.raises(ValueError):
        Atomic([1.0, 2.0], [1.0, -0.1])
    with pytest.raises(ValueError):
        GridDensity([0.0, 1.0, 0.5], [1.0, 1.0, 1.0])  # not increasing
    with pytest.raises(ValueError):
        GridDensity([0.0, 1.0], [-0.5, 2.5])  # negative density
    with pytest.raises(ValueError):
        Empirical([-1.0, 2.0])
    ev = Empirical([3.0, 1.0, 2.0]).eigenvalues
    assert np.array_equal(ev, [1.0, 2.0, 3.0])


def test_measures_are_readonly():
    with pytest.raises(ValueError):
        D1.positions[0] = 5.0


# -- Stieltjes transform -----------------------------------------------------


def test_stieltjes_point_mass_values():
    assert stieltjes(D1, -1.0) == pytest.approx(0.5, abs=0)
    assert stieltjes(D1, 1j) == pytest.approx(0.5 + 0.5j, abs=1e-15)
    assert stieltjes(MIX14, -2.0) == pytest.approx(0.25, abs=1e-15)


def test_stieltjes_rejects_points_on_the_cut():
    for z in (0.5, 1.0 + 0j, 0.0, 2.0 + 1e-13j):
        with pytest.raises(DomainError):
            stieltjes(D1, z)


def test_stieltjes_is_herglotz_and_has_far_field_decay():
    gen = make_rng(2718)
    for _ in range(25):
        mu = _random_atomic(gen)
        z = complex(gen.uniform(-3, 6), gen.uniform(0.05, 3.0))
        assert stieltjes(mu, z).imag > 0
        xi = gen.uniform(1.0, 100.0)
        val = stieltjes(mu, -xi)
        assert val.imag == 0 and 0 < xi * val.real < 1
        assert abs(xi * val.real - 1.0) < support_max(mu) / xi


def test_stieltjes_of_grid_density_matches_trapezoid_quadrature():
    # the piecewise-linear kernel must agree with dense trapezoid quadrature
    grid = np.linspace(0.0, 6.0, 3001)
    samples = [HerglotzSample(complex(g, 0.03), stieltjes(MIX14, complex(g, 0.03)))
               for g in grid]
    dens = stieltjes_inversion(samples, grid)
    for z in (-0.7, 0.9 + 0.3j, 5.0 + 0.2j):
        direct = np.trapezoid(dens.density / (dens.grid - z), dens.grid)
        assert stieltjes(dens, z) == pytest.approx(direct, abs=1e-4)


# -- moment generating function ----------------------------------------------


def test_mgf_geometric_series_for_point_mass():
    for c, w in ((2.0, 0.1), (0.5, -0.4), (3.0, -0.2)):
        assert mgf(Atomic([c], [1.0]), w) == pytest.approx(c * w / (1 - c * w), abs=1e-14)
    assert mgf(D1, -1.0) == pytest.approx(-0.5, abs=0)
    assert mgf(D1, 0.0) == 0.0


def test_mgf_agrees_with_truncated_moment_series():
    gen = make_rng(11)
    for _ in range(10):
        mu = _random_atomic(gen)
        s = support_max(mu)
        w = gen.uniform(-0.5, 0.5) / s
        series = sum(moments(mu, k) * w**k for k in range(1, 61))
        assert abs(mgf(mu, w) - series) < 1e-10


def test_mgf_linked_to_stieltjes_at_random_points():
    gen = make_rng(13)
    mu = Atomic([0.3, 1.2, 2.5], [0.2, 0.5, 0.3])
    for _ in range(50):
        w = complex(gen.uniform(-2, 2), gen.uniform(0.05, 2))
        assert abs(mgf(mu, w) - (-1 - stieltjes(mu, 1 / w) / w)) < 1e-10


def test_mgf_domain_guard_on_positive_reals():
    with pytest.raises(DomainError):
        mgf(MIX14, 0.3)  # 1/w = 3.33 sits inside the support hull [0, 4]
    assert mgf(MIX14, 0.2) == pytest.approx(2.125, abs=1e-14)  # 1/w = 5 clears it


def test_moments_examples():
    assert moments(Atomic([2.0], [1.0]), 3) == pytest.approx(8.0, abs=0)
    assert moments(MIX14, 2) == pytest.approx(8.5, abs=0)
    assert moments(Empirical([1.0, 4.0]), 1) == pytest.approx(2.5, abs=0)
    with pytest.raises(ValueError):
        moments(D1, 0)


# -- functional inverse and S-transform ---------------------------------------


def test_inverse_mgf_point_mass_closed_form():
    # w(m) = m / (c (1 + m)) inverts m(w) = c w / (1 - c w)
    got = inverse_mgf(Atomic([2.0], [1.0]), -0.25)
    assert got == pytest.approx(-0.25 / (2.0 * 0.75), abs=1e-12)


def test_inverse_mgf_round_trip():
    gen = make_rng(21)
    for _ in range(10):
        mu = _random_atomic(gen)
        w0 = gen.uniform(-0.3, -0.01) / support_max(mu)
        m = mgf(mu, w0).real
        assert inverse_mgf(mu, m) == pytest.approx(w0, abs=1e-10)
    # the positive branch of the window
    w0 = 0.2 / support_max(MIX14)
    assert inverse_mgf(MIX14, mgf(MIX14, w0).real) == pytest.approx(w0, abs=1e-10)


def test_inverse_mgf_against_scalar_bisection_oracle():
    target = -0.2

    def half_half(w):
        return 0.5 * w / (1 - w) + 0.5 * 4 * w / (1 - 4 * w) - target

    oracle = bisect(half_half, -5.0, -1e-12, xtol=1e-14)
    assert inverse_mgf(MIX14, target) == pytest.approx(oracle, abs=1e-10)


def test_inverse_mgf_window_errors():
    with pytest.raises(RangeError):
        inverse_mgf(MIX14, -1.5)  # below the attainable infimum (> -1)
    with pytest.raises(RangeError):
        inverse_mgf(MIX14, 0.0)
    with pytest.raises(RangeError):
        inverse_mgf(Atomic([0.0, 1e-12], [0.5, 0.5]), 5.0)


def test_s_transform_point_mass_is_constant_reciprocal():
    vals = [s_transform(Atomic([2.0], [1.0]), m) for m in (-0.4, -0.3, -0.2, -0.1, -0.05)]
    assert np.max(np.abs(np.array(vals) - 0.5)) < 1e-10
    assert s_transform(D1, -0.3) == pytest.approx(1.0, abs=1e-10)


def test_s_transform_matches_inverse_oracle():
    m = -0.2
    w = inverse_mgf(MIX14, m)
    assert s_transform(MIX14, m) == pytest.approx(w * (1 + m) / m, abs=1e-14)
    with pytest.raises(RangeError):
        s_transform(MIX14, -1.0)


# -- Stieltjes--Perron inversion ----------------------------------------------


def _samples(mu, grid, eps):
    return [HerglotzSample(complex(g, eps), stieltjes(mu, complex(g, eps))) for g in grid]


def test_inversion_reproduces_cauchy_kernel():
    grid = np.linspace(0.0, 2.0, 2001)  # node exactly at 1.0
    eps = 0.05
    dens = stieltjes_inversion(_samples(D1, grid, eps), grid)
    peak = dens.density[np.searchsorted(grid, 1.0)]
    # raw kernel peak 1/(pi eps) ~ 6.366, then mass renormalization (~0.984)
    assert peak == pytest.approx(1.0 / (np.pi * eps) / 0.98378, rel=1e-3)
    assert np.trapezoid(dens.density, dens.grid) == pytest.approx(1.0, abs=1e-9)


def test_inversion_separates_two_lobes():
    grid = np.linspace(0.0, 6.0, 2000)
    dens = stieltjes_inversion(_samples(MIX14, grid, 0.01), grid)
    split = np.searchsorted(grid, 2.5)
    lo = np.trapezoid(dens.density[:split], grid[:split])
    hi = np.trapezoid(dens.density[split:], grid[split:])
    assert lo == pytest.approx(0.5, abs=0.02)
    assert hi == pytest.approx(0.5, abs=0.02)
    spacing = grid[1] - grid[0]
    for target in (1.0, 4.0):
        lobe = grid[np.argmax(np.where(np.abs(grid - target) < 0.5, dens.density, 0.0))]
        assert abs(lobe - target) <= spacing


def test_inversion_rejects_mass_drift():
    grid = np.linspace(0.0, 2.0, 400)
    with pytest.raises(InversionError):
        stieltjes_inversion(_samples(D1, grid, 0.2), grid)  # fat kernel leaks mass


def test_inversion_rejects_inconsistent_samples():
    grid = np.linspace(0.0, 2.0, 100)
    samples = _samples(D1, grid, 0.05)
    samples[3] = HerglotzSample(complex(grid[3], 0.06), samples[3].f)
    with pytest.raises(ValueError):
        stieltjes_inversion(samples, grid)
    with pytest.raises(ValueError):
        stieltjes_inversion(_samples(D1, grid, 0.05)[:-1], grid)


def test_herglotz_sample_validation():
    with pytest.raises(ValueError):
        HerglotzSample(1.0 + 0.1j, 0.5 - 0.2j)


# -- KS distance ---------------------------------------------------------------


def test_ks_trivial_cases():
    assert ks_distance(MIX14, MIX14) == 0.0
    assert ks_distance(Atomic([0.0], [1.0]), D1) == 1.0


def test_ks_empirical_sample_close_to_law():
    gen = make_rng(99)
    draws = np.where(gen.random(1000) < 0.5, 1.0, 4.0)
    assert ks_distance(Empirical(draws), MIX14) < 0.06


def test_ks_metric_axioms_on_fixtures():
    grid = np.linspace(0.0, 5.0, 1500)
    smooth = stieltjes_inversion(_samples(MIX14, grid, 0.02), grid)
    fixtures = [D1, MIX14, MIXK, Atomic([0.0], [1.0]), smooth, Empirical([0.5, 2.0, 2.0])]
    for a in fixtures:
        assert ks_distance(a, a) == 0.0
        for b in fixtures:
            assert ks_distance(a, b) == ks_distance(b, a)
            for c in fixtures:
                assert ks_distance(a, c) <= ks_distance(a, b) + ks_distance(b, c) + 1e-15


def test_cdf_step_conventions():
    assert cdf(D1, 1.0) == 1.0
    assert cdf(D1, 1.0, left=True) == 0.0
    assert cdf(MIX14, 2.0) == 0.5


# -- dilation and serialization -------------------------------------------------


def test_dilate_examples():
    d4 = dilate(D1, 4.0)
    assert np.array_equal(d4.positions, [4.0]) and np.array_equal(d4.weights, [1.0])
    scaled = dilate(MIX14, 2.0)
    assert np.array_equal(scaled.positions, [2.0, 8.0])
    for k in range(1, 5):
        assert moments(scaled, k) == pytest.approx(2.0**k * moments(MIX14, k), rel=1e-14)
    with pytest.raises(ValueError):
        dilate(D1, 0.0)


def test_dilate_grid_preserves_mass():
    grid = np.linspace(0.0, 6.0, 1200)
    dens = stieltjes_inversion(_samples(MIX14, grid, 0.02), grid)
    scaled = dilate(dens, 3.0)
    assert np.trapezoid(scaled.density, scaled.grid) == pytest.approx(1.0, abs=1e-9)


def test_json_round_trip():
    grid = np.linspace(0.0, 6.0, 600)
    dens = stieltjes_inversion(_samples(MIX14, grid, 0.05), grid)
    emp = Empirical([0.5, 1.5, 1.5, 3.0])
    for mu in (MIX14, dens, emp):
        back = measure_from_json(measure_to_json(mu))
        assert type(back) is type(mu)
        assert ks_distance(mu, back) == 0.0
    with pytest.raises(ValueError):
        measure_from_json({"type": "nope", "data": {}})
