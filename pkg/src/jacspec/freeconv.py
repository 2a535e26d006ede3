"""Limiting-spectrum engine: q-recursion, squared-derivative law, and the
free multiplicative convolution computed from its functional-equation system.

The convolution nu_K boxtimes nu_R is the limiting spectrum of
K^{1/2} O R O^T K^{1/2} with Haar orthogonal O.  Its Stieltjes transform f_M
solves

    (1 + z f_M) f_M = h_K h_R,
    f_R(z f_M / h_K) = h_K,
    f_K(z f_M / h_R) = h_R,

with all three functions Herglotz (Im f * Im z > 0, real positive on the
negative half-line).  Numerically the system is iterated in subordination
variables u = z f_M/h_K, v = z f_M/h_R:

    u <- z f_K(v) / T_K(v),   v <- z f_R(u) / T_R(u),

where T(w) = 1 + w f(w) = integral lam/(lam - w) dnu.  This form needs no
quadratic root selection (picking roots of the first equation is unstable:
the physical branch swaps sides where the discriminant vanishes) and the
composed map is a half-plane self-map, so the undamped iteration converges
from the asymptotic start u = z/m1(K), v = z/m1(R).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import roots_hermite

from .measures import (
    Atomic,
    DomainError,
    GridDensity,
    HerglotzSample,
    SpectralMeasure,
    _kernel_deriv_many,
    _kernel_many,
    cdf,
    moments,
    stieltjes,
    stieltjes_inversion,
    support_max,
)
from .nonlinearity import Nonlinearity

__all__ = [
    "ConvergenceError",
    "QuadratureRule",
    "gauss_hermite",
    "QProfile",
    "q_recursion",
    "q_fixed_point",
    "nu_k_measure",
    "FixedPointSolution",
    "solve_fixed_point",
    "solve_on_negative_axis",
    "free_mult_conv",
    "smoothed_density",
    "depth_spectrum",
    "master_equation",
    "IsometryMetrics",
    "isometry_metrics",
]

DEFAULT_QUADRATURE_ORDER = 201
_ATOM_MERGE_TOL = 1e-12
_ATOM_DROP_WEIGHT = 1e-14

# Self-test hook: report the mate root -1/z - f_M of the quadratic equation
# (it satisfies the first equation with the same h_K h_R but breaks the other
# two and the Herglotz class).  Never set outside negative-control tests.
_CORRUPT_ROOT_CHOICE = False


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed to reach the residual tolerance."""

    def __init__(self, message: str, trajectory: Optional[list] = None):
        super().__init__(message)
        self.trajectory = trajectory or []


# ---------------------------------------------------------------------------
# Gaussian quadrature and the layer-scale recursion


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss--Hermite nodes/weights normalized to the standard Gaussian weight."""

    nodes: np.ndarray
    weights: np.ndarray

    def expect(self, fn) -> float:
        """E[fn(gamma)] for standard Gaussian gamma."""
        return float(np.sum(self.weights * fn(self.nodes)))


def gauss_hermite(order: int = DEFAULT_QUADRATURE_ORDER) -> QuadratureRule:
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    x, w = roots_hermite(order)
    return QuadratureRule(np.sqrt(2.0) * x, w / w.sum())


@dataclass(frozen=True)
class QProfile:
    """Layer scales q^0..q^L; q^l = E phi(sqrt(q^{l-1}) gamma)^2 (+ sigma_b2)."""

    values: np.ndarray
    sigma_b2: float
    include_bias_in_recursion: bool


def q_recursion(
    phi: Nonlinearity,
    q0: float,
    sigma_b2: float,
    depth: int,
    quad: Optional[QuadratureRule] = None,
    include_bias: bool = True,
) -> QProfile:
    """Iterate the layer-scale map for ``depth`` steps from q0.

    The default convention adds sigma_b2 each step (pre-activation variance at
    layer l is then q^{l-1} in total); ``include_bias=False`` switches to the
    plain Gaussian-square average for side-by-side comparison.
    """
    if sigma_b2 < 0:
        raise ValueError(f"sigma_b2 must be >= 0, got {sigma_b2}")
    if q0 <= sigma_b2:
        raise ValueError(f"q0 = {q0} must strictly exceed sigma_b2 = {sigma_b2}")
    quad = quad or gauss_hermite()
    qs = [float(q0)]
    for _ in range(depth):
        root = math.sqrt(qs[-1])
        q_next = quad.expect(lambda g: phi.value(root * g) ** 2)
        if include_bias:
            q_next += sigma_b2
        if not math.isfinite(q_next):
            raise DomainError(f"non-finite quadrature sum at q = {qs[-1]}")
        qs.append(q_next)
    return QProfile(np.array(qs), sigma_b2, include_bias)


def q_fixed_point(
    phi: Nonlinearity,
    sigma_b2: float,
    quad: Optional[QuadratureRule] = None,
    include_bias: bool = True,
    tol: float = 1e-14,
    max_iter: int = 10_000,
) -> float:
    """Fixed point q* of the layer-scale map (constant-profile seed)."""
    quad = quad or gauss_hermite()
    q = max(1.0, 2 * sigma_b2 + 0.1)
    for _ in range(max_iter):
        root = math.sqrt(q)
        q_next = quad.expect(lambda g: phi.value(root * g) ** 2)
        if include_bias:
            q_next += sigma_b2
        if abs(q_next - q) < tol:
            return q_next
        q = q_next
    raise ConvergenceError(f"q fixed point not reached within {max_iter} iterations")


def nu_k_measure(
    phi: Nonlinearity, q: float, quad: Optional[QuadratureRule] = None
) -> Atomic:
    """Law of phi'(sqrt(q) gamma)^2, gamma standard Gaussian, as a quadrature measure.

    Atoms closer than 1e-12 merge (HardTanh collapses to masses at 0 and
    gain^2); atoms below weight 1e-14 are dropped and the mass renormalized.
    """
    if q <= 0:
        raise ValueError(f"q must be > 0, got {q}")
    quad = quad or gauss_hermite()
    pos = phi.derivative(math.sqrt(q) * quad.nodes) ** 2
    order = np.argsort(pos)
    pos, wts = pos[order], quad.weights[order]
    merged_pos, merged_w = [], []
    start = 0
    for i in range(1, pos.size + 1):
        if i == pos.size or pos[i] - pos[i - 1] > _ATOM_MERGE_TOL:
            block_w = wts[start:i].sum()
            merged_pos.append(float(np.dot(pos[start:i], wts[start:i]) / block_w))
            merged_w.append(float(block_w))
            start = i
    p = np.array(merged_pos)
    w = np.array(merged_w)
    keep = w >= _ATOM_DROP_WEIGHT
    p, w = p[keep], w[keep]
    return Atomic(p, w / w.sum())


# ---------------------------------------------------------------------------
# The functional-equation solver


@dataclass(frozen=True)
class FixedPointSolution:
    """Solved triple (f_M, h_K, h_R) at one point z with its equation defects."""

    z: complex
    f_m: complex
    h_k: complex
    h_r: complex
    residual: float
    iterations: int
    herglotz_projections: int = 0

    def subordination_points(self) -> tuple[complex, complex]:
        """(z f_M/h_K, z f_M/h_R) -- warm-start state for a nearby z."""
        return self.z * self.f_m / self.h_k, self.z * self.f_m / self.h_r


def _initial_uv(nu_k, nu_r, zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return zs / moments(nu_k, 1), zs / moments(nu_r, 1)


def _project_off_axis(w: np.ndarray, upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Push iterates off [0, inf): upper half-plane when Im z > 0, the negative
    half-line when z is real.  Returns the projected array and the mask."""
    bad_upper = upper & (w.imag <= 0)
    bad_real = (~upper) & ((w.real >= 0) | (w.imag != 0))
    mask = bad_upper | bad_real
    if mask.any():
        w = w.copy()
        w[bad_upper] = w.real[bad_upper] + 1e-12j * np.maximum(1.0, np.abs(w[bad_upper]))
        w[bad_real] = np.minimum(w.real[bad_real], -1e-12) + 0j
    return w, mask


def _aitken(u, du, du_prev, v, dv, dv_prev):
    """Geometric-tail extrapolation (Aitken delta-squared) on u and v.

    Where consecutive increments satisfy d_n ~ r d_{n-1} with |r| < 1, the
    remaining tail sums to d_n * r/(1 - r); components with an unstable ratio
    are left untouched."""
    out = []
    for cur, d, d_prev in ((u, du, du_prev), (v, dv, dv_prev)):
        x = cur.copy()
        scale = 1.0 + np.abs(cur)
        safe = (np.abs(d_prev) > 0) & (np.abs(d) > 1e-12 * scale)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(safe, d / np.where(safe, d_prev, 1.0), 0.0)
            tail = d * ratio / (1.0 - ratio)
        good = safe & (np.abs(ratio) > 0.2) & (np.abs(ratio) < 0.995) & np.isfinite(tail)
        x[good] = cur[good] + tail[good]
        out.append(x)
    return out[0], out[1]


def _residual_floor(nu_k, nu_r, zs, f, h_k, h_r) -> np.ndarray:
    """Attainable absolute-defect level in double precision.

    Near an atom of the output measure the equation defects amplify machine
    noise by the local derivatives of f_K, f_R even when (f, h_K, h_R) are
    correct to the last digit; points whose residual sits at this floor are
    solved, not failed."""
    with np.errstate(divide="ignore", invalid="ignore"):
        u = zs * f / h_k
        v = zs * f / h_r
        amp = (
            1.0
            + np.abs((1.0 + zs * f) * f)
            + np.abs(u * _kernel_deriv_many(nu_r, u))
            + np.abs(v * _kernel_deriv_many(nu_k, v))
        )
    return 500 * np.finfo(float).eps * np.where(np.isfinite(amp), amp, np.inf)


def _residuals(nu_k, nu_r, zs, f, h_k, h_r) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        e1 = np.abs((1.0 + zs * f) * f - h_k * h_r)
        fr, _ = _kernel_many(nu_r, zs * f / h_k)
        e2 = np.abs(fr - h_k)
        fk, _ = _kernel_many(nu_k, zs * f / h_r)
        e3 = np.abs(fk - h_r)
    res = np.maximum(np.maximum(e1, e2), e3)
    return np.where(np.isfinite(res), res, np.inf)


def _solve_many(
    nu_k,
    nu_r,
    zs: np.ndarray,
    uv0: Optional[tuple[np.ndarray, np.ndarray]] = None,
    damping: float = 1.0,
    max_iter: int = 5000,
    tol: float = 1e-10,
):
    """Damped subordination iteration, vectorized over the points zs.

    Returns (f, h_k, h_r, residual, iterations, projections) arrays.  Points
    that fail to reach ``tol`` keep residual > tol; callers decide whether
    that is an error.
    """
    zs = np.asarray(zs, dtype=complex)
    upper = zs.imag > 0
    if uv0 is None:
        u, v = _initial_uv(nu_k, nu_r, zs)
    else:
        u = np.array(uv0[0], dtype=complex)
        v = np.array(uv0[1], dtype=complex)
    alpha = float(damping)
    if not 0 < alpha <= 1:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    projections = np.zeros(zs.shape, dtype=int)
    iterations = np.zeros(zs.shape, dtype=int)
    active = np.ones(zs.shape, dtype=bool)
    res = np.full(zs.shape, np.inf)
    last_res = np.full(zs.shape, np.inf)
    stall = np.zeros(zs.shape, dtype=int)
    floor_count = np.zeros(zs.shape, dtype=int)
    alphas = np.full(zs.shape, alpha)
    du_prev = np.zeros(zs.shape, dtype=complex)
    dv_prev = np.zeros(zs.shape, dtype=complex)
    for it in range(max_iter):
        za = zs[active]
        u_old, v_old = u[active], v[active]
        fk, tk = _kernel_many(nu_k, v_old)
        u_new = za * fk / tk
        u_new, mask1 = _project_off_axis(u_new, upper[active])
        fr, tr = _kernel_many(nu_r, u_new)
        v_new = za * fr / tr
        v_new, mask2 = _project_off_axis(v_new, upper[active])
        proj_local = (mask1 | mask2).astype(int)
        if proj_local.any():
            pa = projections[active]
            projections[active] = pa + proj_local
        a = alphas[active]
        moved = np.abs(u_new - u_old) + np.abs(v_new - v_old)
        du, dv = u_new - u_old, v_new - v_old
        if it % 8 == 7 and alpha == 1.0:
            # Aitken extrapolation where convergence is slow but steadily
            # geometric (near spectrum edges and point masses the map's
            # contraction rate approaches 1)
            u_new, v_new = _aitken(u_new, du, du_prev[active], v_new, dv, dv_prev[active])
            u_new, _ = _project_off_axis(u_new, upper[active])
            v_new, _ = _project_off_axis(v_new, upper[active])
        du_prev[active] = du
        dv_prev[active] = dv
        u[active] = (1 - a) * u_old + a * u_new
        v[active] = (1 - a) * v_old + a * v_new
        # convergence check on the subordination increment, then certify by residual
        scale = 1.0 + np.abs(u[active]) + np.abs(v[active])
        settled_local = moved <= 1e-13 * scale
        iterations[active] = it + 1
        if settled_local.any() or it == max_iter - 1 or (it + 1) % 25 == 0:
            h_k_a, _ = _kernel_many(nu_r, u[active])
            h_r_a, _ = _kernel_many(nu_k, v[active])
            f_a = u[active] * h_k_a / za
            res_a = _residuals(nu_k, nu_r, za, f_a, h_k_a, h_r_a)
            res[active] = res_a
            # oscillation safeguard: halve damping where the residual worsens
            worse = res_a > last_res[active]
            stall_a = np.where(worse, stall[active] + 1, 0)
            stall[active] = stall_a
            alphas_a = alphas[active]
            alphas_a = np.where(stall_a >= 10, np.maximum(alphas_a / 2, 0.05), alphas_a)
            alphas[active] = alphas_a
            last_res[active] = res_a
            # iterates pinned at the floating-point noise floor cannot improve
            # the defect certificate further; stop burning iterations on them
            at_floor = moved <= 5e-15 * scale
            floor_a = np.where(at_floor, floor_count[active] + 1, 0)
            floor_count[active] = floor_a
            done = (res_a <= tol) | (floor_a >= 3)
            keep = active.copy()
            keep[active] = ~done
            active = keep
            if not active.any():
                break
    h_k, _ = _kernel_many(nu_r, u)
    h_r, _ = _kernel_many(nu_k, v)
    f = u * h_k / zs
    res = _residuals(nu_k, nu_r, zs, f, h_k, h_r)
    return _SolveState(f, h_k, h_r, res, iterations, projections, u, v)


@dataclass
class _SolveState:
    f: np.ndarray
    h_k: np.ndarray
    h_r: np.ndarray
    res: np.ndarray
    iterations: np.ndarray
    projections: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __iter__(self):
        return iter((self.f, self.h_k, self.h_r, self.res, self.iterations, self.projections))


def solve_fixed_point(
    nu_k: SpectralMeasure,
    nu_r: SpectralMeasure,
    z: complex,
    damping: float = 1.0,
    max_iter: int = 5000,
    tol: float = 1e-10,
    init: Optional[FixedPointSolution] = None,
) -> FixedPointSolution:
    """Solve the functional-equation system at one point z.

    z must have Im z > 0 or be real negative.  ``init`` warm-starts from a
    solution at a nearby point.  Raises ConvergenceError (carrying the
    residual trajectory tail) when the tolerance is not met.
    """
    z = complex(z)
    if z.imag < 0 or (z.imag == 0 and z.real >= 0):
        raise DomainError(f"z must satisfy Im z > 0 or z < 0, got {z}")
    uv0 = None
    if init is not None:
        u0, v0 = init.subordination_points()
        uv0 = (np.array([u0]), np.array([v0]))
    zs = np.array([z])
    f, h_k, h_r, res, its, proj = _solve_many(
        nu_k, nu_r, zs, uv0, damping=damping, max_iter=max_iter, tol=tol
    )
    if res[0] > tol:
        # retry with stronger damping before giving up
        f, h_k, h_r, res, its, proj = _solve_many(
            nu_k, nu_r, zs, None, damping=min(damping, 0.5), max_iter=max_iter, tol=tol
        )
    if res[0] > tol:
        raise ConvergenceError(
            f"residual {res[0]:.3e} > {tol} after {its[0]} iterations at z = {z}",
            trajectory=[complex(f[0]), complex(h_k[0]), complex(h_r[0])],
        )
    f_m = complex(f[0])
    if _CORRUPT_ROOT_CHOICE:
        f_m = -1.0 / z - f_m
    return FixedPointSolution(
        z, f_m, complex(h_k[0]), complex(h_r[0]),
        float(res[0]), int(its[0]), int(proj[0]),
    )


def solve_on_negative_axis(
    nu_k: SpectralMeasure,
    nu_r: SpectralMeasure,
    xis: Sequence[float],
    damping: float = 1.0,
    max_iter: int = 5000,
    tol: float = 1e-10,
) -> list[FixedPointSolution]:
    """Solve at z = -xi for each xi > 0, marching from the far field inward.

    Warm starts propagate along the descending-|z| path, which keeps the
    iteration on the physical branch all the way to small xi.
    """
    xis = np.asarray(xis, dtype=float)
    if np.any(xis <= 0):
        raise ValueError("all xi must be > 0")
    order = np.argsort(-xis)
    far = max(100.0, 10.0 * support_max(nu_k) * max(support_max(nu_r), 1.0), xis.max())
    path = np.geomspace(far, xis[order[-1]], 32)
    sols: dict[int, FixedPointSolution] = {}
    targets = sorted(
        [(xis[i], i) for i in order], key=lambda t: -t[0]
    )
    points = sorted(set(path.tolist()) | {x for x, _ in targets}, reverse=True)
    prev = None
    want = {x: [] for x, _ in targets}
    for x, i in targets:
        want[x].append(i)
    for x in points:
        prev = solve_fixed_point(
            nu_k, nu_r, complex(-x, 0.0), damping, max_iter, tol, init=prev
        )
        for i in want.get(x, ()):
            sols[i] = prev
    return [sols[i] for i in range(xis.size)]


# ---------------------------------------------------------------------------
# Density computation and depth composition


def smoothed_density(mu: SpectralMeasure, grid: np.ndarray, epsilon: float) -> GridDensity:
    """Render any measure as Im f(lam + i*eps)/pi on the grid (Cauchy smoothing)."""
    grid = np.asarray(grid, dtype=float)
    zs = grid + 1j * epsilon
    f, _ = _kernel_many(mu, zs)
    samples = [HerglotzSample(complex(z), complex(fz)) for z, fz in zip(zs, f)]
    return stieltjes_inversion(samples, grid)


def free_mult_conv(
    nu_k: SpectralMeasure,
    nu_r: SpectralMeasure,
    grid: np.ndarray,
    epsilon: Optional[float] = None,
    damping: float = 1.0,
    max_iter: int = 5000,
    tol: float = 1e-10,
    diagnostics: Optional[list] = None,
) -> GridDensity:
    """Free multiplicative convolution rendered as a density on the grid.

    Solves the functional-equation system at every lam + i*eps and applies
    Stieltjes--Perron inversion.  The uniform grid must start at 0 and reach
    past the product of the support maxima (checked for atomic/empirical
    operands; for grid operands the mass-drift check is the guard).  Up to 1%
    of grid points may fail to converge and are filled by linear
    interpolation; more aborts with ConvergenceError.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 8:
        raise ValueError("grid must be a 1-d array with at least 8 points")
    spacing = np.diff(grid)
    if np.any(spacing <= 0) or not np.allclose(spacing, spacing[0], rtol=1e-8, atol=0):
        raise ValueError("grid must be uniform and strictly increasing")
    if grid[0] > 1e-9:
        raise DomainError(f"grid must start at 0, got {grid[0]}")
    if not isinstance(nu_r, GridDensity) and not isinstance(nu_k, GridDensity):
        product = support_max(nu_k) * support_max(nu_r)
        if grid[-1] < product:
            raise DomainError(
                f"grid must cover [0, {product:.6g}] (support product), ends at {grid[-1]:.6g}"
            )
    if epsilon is None:
        epsilon = 2.0 * float(spacing[0])
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    # kernel-width continuation: converge fast at a wide kernel, then descend
    # to the target epsilon with warm starts (the map's contraction rate
    # degrades like 1 - O(sqrt(eps)) near spectral edges)
    span = float(grid[-1] - grid[0])
    eps_path = [epsilon]
    while eps_path[-1] < 0.01 * span:
        eps_path.append(min(5.0 * eps_path[-1], 0.01 * span))
    state = None
    for eps_k in reversed(eps_path):
        zs = grid + 1j * eps_k
        uv0 = (state.u, state.v) if state is not None else None
        state = _solve_many(
            nu_k, nu_r, zs, uv0, damping=damping, max_iter=max_iter, tol=tol
        )
    f, h_k, h_r, res = state.f, state.h_k, state.h_r, state.res
    its = state.iterations
    bad = res > np.maximum(tol, _residual_floor(nu_k, nu_r, zs, f, h_k, h_r))
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        # one more attempt for the stragglers, resumed with a larger budget
        idx_bad = np.where(bad)[0]
        retry = _solve_many(
            nu_k, nu_r, zs[idx_bad], (state.u[idx_bad], state.v[idx_bad]),
            damping=damping, max_iter=4 * max_iter, tol=tol,
        )
        better = retry.res < res[idx_bad]
        for arr, arr2 in ((f, retry.f), (h_k, retry.h_k), (h_r, retry.h_r)):
            arr[idx_bad[better]] = arr2[better]
        res[idx_bad[better]] = retry.res[better]
        bad = res > np.maximum(tol, _residual_floor(nu_k, nu_r, zs, f, h_k, h_r))
        n_bad = int(np.count_nonzero(bad))
    if n_bad > max(1, int(0.01 * grid.size)):
        raise ConvergenceError(
            f"{n_bad}/{grid.size} grid points failed to converge "
            f"(first at lam = {grid[np.argmax(bad)]:.6g})"
        )
    # residual stragglers keep the solver's own estimate (interpolating
    # across them would flatten genuine peaks); diagnostics record them
    if diagnostics is not None:
        diagnostics.append((res.copy(), its.copy()))
    samples = [HerglotzSample(complex(z), complex(fz)) for z, fz in zip(zs, f)]
    return stieltjes_inversion(samples, grid)


def depth_spectrum(
    phi: Nonlinearity,
    q0: float,
    sigma_b2: float,
    depth: int,
    grid: np.ndarray,
    epsilon: Optional[float] = None,
    quad: Optional[QuadratureRule] = None,
    include_bias: bool = True,
    damping: float = 1.0,
    max_iter: int = 5000,
    diagnostics: Optional[list] = None,
) -> SpectralMeasure:
    """Limiting spectrum at the given depth: fold of the per-layer laws.

    Builds the layer scales q^0..q^{L-1}, forms the squared-derivative law for
    each layer, and folds left-to-right starting from the depth-1 identity
    (the unit point mass is a neutral factor, so depth 1 returns the atomic
    layer law itself; deeper folds return grid densities).
    """
    quad = quad or gauss_hermite()
    profile = q_recursion(phi, q0, sigma_b2, depth, quad, include_bias)
    result: SpectralMeasure = nu_k_measure(phi, profile.values[0], quad)
    for level in range(1, depth):
        nu_next = nu_k_measure(phi, profile.values[level], quad)
        result = free_mult_conv(
            nu_next,
            result,
            grid,
            epsilon,
            damping=damping,
            max_iter=max_iter,
            diagnostics=diagnostics,
        )
    return result


# ---------------------------------------------------------------------------
# Master equation (equal layer laws) and summary metrics


def master_equation(
    m_k: Callable[[complex], complex],
    depth: int,
    z: complex,
    damping: float = 0.5,
    max_iter: int = 5000,
    tol: float = 1e-12,
) -> complex:
    """Solve m = m_K(z^{1/L} (m/(1+m))^{1-1/L}) for the depth-L moment function.

    Valid when the layer law is depth-independent (constant q-profile).  Both
    fractional powers use principal branches with arg in (-pi, pi]; exactly
    negative real z is evaluated in real arithmetic (the two principal-branch
    phases combine to a real negative argument), while complex z with an
    argument within 1e-3 of the cut is refused rather than silently picking a
    sheet.  At depth 1 the equation degenerates to m = m_K(z).
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    z = complex(z)
    if z == 0:
        return 0.0
    real_negative = z.imag == 0 and z.real < 0
    if not real_negative and math.pi - abs(np.angle(z)) < 1e-3:
        raise DomainError(
            f"arg z = {np.angle(z):.6f} lies within 1e-3 of the branch cut"
        )
    if depth == 1:
        return complex(m_k(z))
    expo = 1.0 - 1.0 / depth
    m = complex(m_k(z))
    history = []
    for it in range(max_iter):
        if real_negative:
            ratio = m.real / (1.0 + m.real)
            if not -1.0 < m.real < 0.0 or ratio >= 0:
                raise ConvergenceError(
                    f"iterate m = {m} left the window (-1, 0) at z = {z}", history
                )
            arg = -((-z.real) ** (1.0 / depth)) * (-ratio) ** expo
            m_new = complex(m_k(arg))
        else:
            arg = z ** (1.0 / depth) * (m / (1.0 + m)) ** expo
            m_new = complex(m_k(arg))
        history.append(m_new)
        delta = abs(m_new - m)
        m = (1 - damping) * m + damping * m_new
        if delta < tol * max(1.0, abs(m)):
            return m
    raise ConvergenceError(
        f"master equation not converged after {max_iter} iterations at z = {z}",
        history[-20:],
    )


@dataclass(frozen=True)
class IsometryMetrics:
    """Singular-value summary of a squared-singular-value measure."""

    mean_sv: float
    var_sv: float
    mass_within: float  # mass of sqrt(lam) in [1/2, 2], i.e. lam in [1/4, 4]


def isometry_metrics(mu: SpectralMeasure) -> IsometryMetrics:
    """Mean/variance of sqrt(lam) and the mass within a factor 2 of unity."""
    if isinstance(mu, GridDensity):
        mean = float(np.trapezoid(np.sqrt(mu.grid) * mu.density, mu.grid))
        second = moments(mu, 1)
    else:
        if isinstance(mu, Atomic):
            pos, wts = mu.positions, mu.weights
        else:
            pos = mu.eigenvalues
            wts = np.full(pos.shape, 1.0 / pos.size)
        mean = float(np.sum(wts * np.sqrt(pos)))
        second = float(np.sum(wts * pos))
    var = max(second - mean**2, 0.0)
    mass = float(cdf(mu, 4.0) - cdf(mu, 0.25, left=True))
    return IsometryMetrics(mean, var, mass)
