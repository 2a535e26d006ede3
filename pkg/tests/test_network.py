"""Forward recurrence, Jacobian assembly and Gram-spectrum contracts."""

import numpy as np
import pytest
from scipy.stats import ks_2samp

from jacspec import (
    q_fixed_point,
    ConfigError,
    ConstantNorm,
    Empirical,
    ExplicitVector,
    ForwardTrace,
    NetworkConfig,
    assemble_jacobian,
    depth_spectrum,
    empirical_ncm,
    forward_pass,
    gauss_hermite,
    gram_matrix,
    ks_distance,
    layer_q,
    q_recursion,
)
from jacspec.nonlinearity import hard_tanh, scaled_erf, sine
from jacspec.rng import make_rng, sample_haar_orthogonal


def _spectrum(trace):
    return empirical_ncm(gram_matrix(assemble_jacobian(trace)))


def test_hand_evaluated_single_layer():
    cfg = NetworkConfig(1, 2, 0.0, sine(1.0), ExplicitVector(np.array([1.0, 0.0])), seed=0)
    trace = forward_pass(cfg, weights=[np.eye(2)], biases=[np.zeros(2)])
    assert np.allclose(trace.pre_activations[0], [1.0, 0.0], atol=0)
    assert np.allclose(trace.activations[0], [np.sin(1.0), 0.0], atol=1e-15)
    assert np.allclose(trace.derivatives[0], [np.cos(1.0), 1.0], atol=1e-15)


def test_activations_and_derivatives_bounded():
    for phi in (sine(1.3), hard_tanh(2.0), scaled_erf(0.7)):
        cfg = NetworkConfig(4, 48, 0.2, phi, ConstantNorm(1.1), seed=21)
        trace = forward_pass(cfg)
        for x, d in zip(trace.activations, trace.derivatives):
            assert np.max(np.abs(x)) <= phi.value_bound + 1e-15
            assert np.max(np.abs(d)) <= phi.slope_bound + 1e-15


def test_forward_determinism():
    cfg = NetworkConfig(3, 32, 0.1, sine(1.0), ConstantNorm(1.0), seed=77)
    t1, t2 = forward_pass(cfg), forward_pass(cfg)
    for a, b in zip(t1.activations, t2.activations):
        assert np.array_equal(a, b)
    for a, b in zip(t1.weights, t2.weights):
        assert np.array_equal(a, b)


def test_layer_scales_track_quadrature_recursion():
    # finite-width layer scales concentrate around the wide-limit recursion
    cfg = NetworkConfig(3, 256, 0.1, sine(1.0), ConstantNorm(1.0), seed=5)
    trace = forward_pass(cfg)
    profile = q_recursion(sine(1.0), 1.0, 0.1, 3, gauss_hermite(81))
    assert np.max(np.abs(trace.q_values - profile.values)) < 5.0 / np.sqrt(cfg.width)


def test_jacobian_single_layer_diagonal():
    cfg = NetworkConfig(1, 2, 0.0, sine(1.0), ExplicitVector(np.array([1.0, 1.0])), seed=0)
    trace = forward_pass(cfg, weights=[np.eye(2)], biases=[np.zeros(2)])
    trace.derivatives = [np.array([1.0, 2.0])]
    assert np.array_equal(assemble_jacobian(trace), np.diag([1.0, 2.0]))


def test_jacobian_operator_norm_bound():
    for phi, depth in ((sine(1.0), 4), (hard_tanh(1.5), 3), (scaled_erf(2.0), 2)):
        cfg = NetworkConfig(depth, 24, 0.1, phi, ConstantNorm(0.9), seed=8)
        jac = assemble_jacobian(forward_pass(cfg))
        assert np.linalg.norm(jac, 2) <= phi.slope_bound**depth + 1e-9


def _finite_difference_jacobian(cfg, trace, step=1e-5):
    n = cfg.width
    fd = np.empty((n, n))
    for j in range(n):
        cols = []
        for sgn in (1.0, -1.0):
            x0 = trace.x0.copy()
            x0[j] += sgn * step
            shifted = NetworkConfig(cfg.depth, n, cfg.sigma_b2, cfg.phi,
                                    ExplicitVector(x0), cfg.seed)
            out = forward_pass(shifted, weights=trace.weights, biases=trace.biases)
            cols.append(out.activations[-1])
        fd[:, j] = (cols[0] - cols[1]) / (2 * step)
    return fd


@pytest.mark.parametrize("phi", [scaled_erf(1.0), sine(1.0)])
def test_jacobian_matches_finite_differences(phi):
    cfg = NetworkConfig(3, 20, 0.1, phi, ConstantNorm(0.8), seed=13)
    trace = forward_pass(cfg)
    jac = assemble_jacobian(trace)
    fd = _finite_difference_jacobian(cfg, trace)
    assert np.linalg.norm(fd - jac) / np.linalg.norm(jac) < 1e-5


def test_hardtanh_finite_differences_away_from_kinks():
    phi = hard_tanh(1.0)
    cfg = NetworkConfig(2, 16, 0.05, phi, ConstantNorm(0.7), seed=3)
    trace = forward_pass(cfg)
    gaps = [np.min(np.abs(np.abs(y) - 1.0)) for y in trace.pre_activations]
    assert min(gaps) > 1e-3  # the probe is valid only off the kink set
    jac = assemble_jacobian(trace)
    fd = _finite_difference_jacobian(cfg, trace)
    assert np.linalg.norm(fd - jac) / np.linalg.norm(jac) < 1e-5


def test_gram_matrix_examples():
    assert np.array_equal(gram_matrix(np.diag([1.0, 2.0])), np.diag([1.0, 4.0]))
    o = sample_haar_orthogonal(12, make_rng(4))
    assert np.max(np.abs(gram_matrix(o) - np.eye(12))) < 1e-12
    j = make_rng(6).standard_normal((50, 50))
    eigs = empirical_ncm(gram_matrix(j)).eigenvalues
    sv2 = np.sort(np.linalg.svd(j, compute_uv=False) ** 2)
    assert np.max(np.abs(eigs - sv2)) < 1e-9


def test_gram_matrix_requires_square():
    with pytest.raises(ValueError):
        gram_matrix(np.ones((3, 2)))


def test_empirical_ncm_examples():
    assert np.array_equal(empirical_ncm(np.eye(5)).eigenvalues, np.ones(5))
    assert np.array_equal(empirical_ncm(np.diag([4.0, 1.0])).eigenvalues, [1.0, 4.0])


def test_empirical_ncm_rejects_asymmetry_and_negatives():
    bad = np.eye(3)
    bad[0, 1] = 1e-6
    with pytest.raises(ValueError):
        empirical_ncm(bad)
    with pytest.raises(ValueError):
        empirical_ncm(np.diag([-1e-6, 1.0]))
    # roundoff-scale negatives are clamped, not fatal
    ev = empirical_ncm(np.diag([-0.5e-10, 1.0])).eigenvalues
    assert ev[0] == 0.0


def test_depth_one_spectrum_is_squared_derivative_multiset():
    for phi, s2 in ((sine(1.0), 0.1), (hard_tanh(1.2), 0.0), (scaled_erf(0.9), 0.3)):
        cfg = NetworkConfig(1, 64, s2, phi, ConstantNorm(0.9 + s2), seed=17)
        trace = forward_pass(cfg)
        spec = _spectrum(trace)
        assert np.max(np.abs(spec.eigenvalues - np.sort(trace.derivatives[0] ** 2))) < 1e-10


def test_normalized_trace_of_squared_gram_is_bounded():
    for phi, depth in ((sine(1.0), 3), (hard_tanh(1.4), 2)):
        cfg = NetworkConfig(depth, 32, 0.1, phi, ConstantNorm(1.0), seed=23)
        m = gram_matrix(assemble_jacobian(forward_pass(cfg)))
        assert np.trace(m @ m) / cfg.width <= phi.slope_bound ** (4 * depth) * (1 + 1e-12)


def test_layer_q_examples():
    assert layer_q(np.zeros(7), 0.3) == 0.3
    assert layer_q(np.ones(11), 0.0) == 1.0
    cfg = NetworkConfig(1, 8, 0.5, sine(1.0), ConstantNorm(1.5), seed=1)
    trace = forward_pass(cfg)
    assert layer_q(trace.x0, 0.5) == 1.5


def test_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig(0, 4, 0.1, sine(1.0), ConstantNorm(1.0))
    with pytest.raises(ConfigError):
        NetworkConfig(1, 0, 0.1, sine(1.0), ConstantNorm(1.0))
    with pytest.raises(ConfigError):
        NetworkConfig(1, 4, 0.5, sine(1.0), ConstantNorm(0.5))  # q0 not above sigma_b2
    cfg = NetworkConfig(1, 4, 0.0, sine(1.0), ExplicitVector(np.zeros(4)))
    with pytest.raises(ConfigError):
        forward_pass(cfg)  # zero input vector


def test_spectrum_invariant_under_weight_right_permutation():
    # post-multiplying each sampled weight by a fixed even permutation leaves
    # the law of the spectrum (hence of KS statistics) unchanged
    n, depth, trials = 32, 2, 200
    phi = sine(1.0)
    qstar = q_fixed_point(phi, 0.1, gauss_hermite(81))
    grid = np.linspace(0.0, 1.3, 2600)
    theory = depth_spectrum(phi, qstar, 0.1, depth, grid, quad=gauss_hermite(81))
    perm = np.eye(n)[[1, 2, 0] + list(range(3, n))]  # 3-cycle, det +1
    assert abs(np.linalg.det(perm) - 1.0) < 1e-12

    def arm(right_factor, seed_base):
        stats = []
        for t in range(trials):
            seed = seed_base + t
            gen = make_rng(seed)
            ws = [sample_haar_orthogonal(n, gen) @ right_factor for _ in range(depth)]
            cfg = NetworkConfig(depth, n, 0.1, phi, ConstantNorm(qstar), seed=seed)
            trace = forward_pass(cfg, weights=ws)
            stats.append(ks_distance(_spectrum(trace), theory))
        return np.array(stats)

    assert ks_2samp(arm(np.eye(n), 9000), arm(perm, 90000)).pvalue > 0.01
