"""Spectral measures on [0, inf) and their transform algebra.

Three representations share one interface and are never converted implicitly:

* :class:`Atomic` -- finitely many weighted point masses (quadrature output,
  exact transform algebra);
* :class:`GridDensity` -- a density sampled on a strictly increasing grid
  (Stieltjes--Perron inversion output);
* :class:`Empirical` -- a sorted eigenvalue sample (simulation output).

Transforms follow the conventions

    f(z)  = integral (lam - z)^{-1} dmu(lam),   z off [0, inf),
    m(w)  = sum_{k>=1} m_k w^k  with  m(w) = -1 - f(1/w)/w,
    S(m)  = z(m) (m + 1)/m      with  z(m) the functional inverse of m(.),

so Im f(z) * Im z > 0 off the real axis and f is positive on the negative
half-line.  Measures are immutable values; their arrays are read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Atomic",
    "GridDensity",
    "Empirical",
    "SpectralMeasure",
    "HerglotzSample",
    "DomainError",
    "RangeError",
    "InversionError",
    "stieltjes",
    "mgf",
    "moments",
    "inverse_mgf",
    "s_transform",
    "stieltjes_inversion",
    "ks_distance",
    "dilate",
    "cdf",
    "support_max",
    "measure_to_json",
    "measure_from_json",
]

_MASS_TOL = 1e-9
_AXIS_TOL = 1e-12


class DomainError(ValueError):
    """Transform evaluated outside its admissible domain."""


class RangeError(ValueError):
    """Requested value lies outside the attainable/invertible window."""


class InversionError(RuntimeError):
    """Stieltjes--Perron inversion failed (grid or kernel width inadequate)."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Atomic:
    """Probability measure sum_i w_i * delta_{a_i} with a_i >= 0, w_i > 0."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.atleast_1d(np.asarray(self.positions, dtype=float))
        wts = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if pos.shape != wts.shape or pos.ndim != 1 or pos.size == 0:
            raise ValueError("positions and weights must be equal-length 1-d arrays")
        order = np.argsort(pos)
        pos, wts = pos[order], wts[order]
        if pos[0] < 0:
            raise ValueError(f"atom positions must be >= 0, got min {pos[0]}")
        if np.any(wts <= 0):
            raise ValueError("atom weights must be > 0")
        if abs(wts.sum() - 1.0) > _MASS_TOL:
            raise ValueError(f"total mass must be 1 within {_MASS_TOL}, got {wts.sum()}")
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "weights", _readonly(wts))


@dataclass(frozen=True)
class GridDensity:
    """Density values on a strictly increasing nonnegative grid, trapezoid mass 1."""

    grid: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if g.ndim != 1 or g.shape != d.shape or g.size < 2:
            raise ValueError("grid and density must be equal-length 1-d arrays, length >= 2")
        if g[0] < 0 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing and >= 0")
        if np.any(d < -1e-12):
            raise ValueError(f"density must be >= 0, got min {d.min()}")
        d = np.maximum(d, 0.0)
        mass = np.trapezoid(d, g)
        if abs(mass - 1.0) > _MASS_TOL:
            raise ValueError(f"trapezoid mass must be 1 within {_MASS_TOL}, got {mass}")
        object.__setattr__(self, "grid", _readonly(g))
        object.__setattr__(self, "density", _readonly(d))


@dataclass(frozen=True)
class Empirical:
    """Uniform measure on a finite eigenvalue sample (stored sorted)."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        if ev.ndim != 1 or ev.size == 0:
            raise ValueError("eigenvalues must be a nonempty 1-d array")
        ev = np.sort(ev)
        if ev[0] < 0:
            raise ValueError(f"eigenvalues must be >= 0, got min {ev[0]}")
        object.__setattr__(self, "eigenvalues", _readonly(ev))


SpectralMeasure = Union[Atomic, GridDensity, Empirical]


@dataclass(frozen=True)
class HerglotzSample:
    """One Stieltjes-transform sample f = f(z) with Im f * Im z >= 0."""

    z: complex
    f: complex

    def __post_init__(self):
        if self.z.imag != 0 and self.f.imag * self.z.imag < -_AXIS_TOL:
            raise ValueError(
                f"not a Herglotz sample: Im f = {self.f.imag} at Im z = {self.z.imag}"
            )


def _atoms_of(mu: SpectralMeasure):
    if isinstance(mu, Atomic):
        return mu.positions, mu.weights
    if isinstance(mu, Empirical):
        ev = mu.eigenvalues
        return ev, np.full(ev.shape, 1.0 / ev.size)
    return None


def support_max(mu: SpectralMeasure) -> float:
    if isinstance(mu, Atomic):
        return float(mu.positions[-1])
    if isinstance(mu, Empirical):
        return float(mu.eigenvalues[-1])
    if isinstance(mu, GridDensity):
        return float(mu.grid[-1])
    raise TypeError(f"not a SpectralMeasure: {type(mu)!r}")


def _dist_to_halfline(z: complex) -> float:
    if z.real >= 0:
        return abs(z.imag)
    return abs(z)


def _kernel(mu: SpectralMeasure, z: complex) -> tuple[complex, complex]:
    """Return (f(z), T(z)) with T(z) = int lam/(lam - z) dmu = 1 + z f(z).

    Accepts any z off the support (including real z beyond it); callers
    enforce their own domain restrictions.  For atomic/empirical measures both
    values are exact sums; T carries no cancellation even for large |z|.
    """
    pair = _atoms_of(mu)
    if pair is not None:
        a, w = pair
        denom = a - z
        f = complex(np.sum(w / denom))
        t = complex(np.sum(w * a / denom))
        return f, t
    g, d = mu.grid, mu.density
    # Exact Stieltjes transform of the piecewise-linear interpolant:
    # over [x0, x1] with density a + b*lam,
    #   int (a + b lam)/(lam - z) dlam = b (x1 - x0) + (a + b z) log((x1-z)/(x0-z)).
    x0, x1 = g[:-1], g[1:]
    y0, y1 = d[:-1], d[1:]
    b = (y1 - y0) / (x1 - x0)
    a = y0 - b * x0
    logs = np.log(x1 - z) - np.log(x0 - z)
    f = complex(np.sum(b * (x1 - x0) + (a + b * z) * logs))
    return f, 1.0 + z * f


def _kernel_many(mu: SpectralMeasure, zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`_kernel` over an array of points."""
    zs = np.asarray(zs, dtype=complex)
    pair = _atoms_of(mu)
    if pair is not None:
        a, w = pair
        denom = a[:, np.newaxis] - zs[np.newaxis, :]
        f = np.sum(w[:, np.newaxis] / denom, axis=0)
        t = np.sum((w * a)[:, np.newaxis] / denom, axis=0)
        return f, t
    g, d = mu.grid, mu.density
    x0, x1 = g[:-1], g[1:]
    y0, y1 = d[:-1], d[1:]
    b = (y1 - y0) / (x1 - x0)
    a = y0 - b * x0
    f = np.empty(zs.shape, dtype=complex)
    # chunk to cap the (intervals x points) temporaries
    step = max(1, int(4e6 / max(1, x0.size)))
    for i in range(0, zs.size, step):
        z = zs[i : i + step][np.newaxis, :]
        logs = np.log(x1[:, np.newaxis] - z) - np.log(x0[:, np.newaxis] - z)
        f[i : i + step] = np.sum(
            (b * (x1 - x0))[:, np.newaxis] + (a[:, np.newaxis] + b[:, np.newaxis] * z) * logs,
            axis=0,
        )
    return f, 1.0 + zs * f


def _kernel_deriv_many(mu: SpectralMeasure, zs: np.ndarray) -> np.ndarray:
    """f'(z) = integral (lam - z)^{-2} dmu(lam), vectorized (conditioning probe)."""
    zs = np.asarray(zs, dtype=complex)
    pair = _atoms_of(mu)
    if pair is not None:
        a, w = pair
        return np.sum(w[:, np.newaxis] / (a[:, np.newaxis] - zs[np.newaxis, :]) ** 2, axis=0)
    g, d = mu.grid, mu.density
    x0, x1 = g[:-1], g[1:]
    y0, y1 = d[:-1], d[1:]
    b = (y1 - y0) / (x1 - x0)
    a = y0 - b * x0
    out = np.empty(zs.shape, dtype=complex)
    step = max(1, int(4e6 / max(1, x0.size)))
    for i in range(0, zs.size, step):
        z = zs[i : i + step][np.newaxis, :]
        t0, t1 = x0[:, np.newaxis] - z, x1[:, np.newaxis] - z
        logs = np.log(t1) - np.log(t0)
        out[i : i + step] = np.sum(
            b[:, np.newaxis] * logs + (a[:, np.newaxis] + b[:, np.newaxis] * z) * (1 / t0 - 1 / t1),
            axis=0,
        )
    return out


def stieltjes(mu: SpectralMeasure, z: complex) -> complex:
    """f(z) = integral (lam - z)^{-1} dmu(lam) for z off [0, inf)."""
    z = complex(z)
    if _dist_to_halfline(z) <= _AXIS_TOL:
        raise DomainError(f"z = {z} is within {_AXIS_TOL} of the positive half-line")
    f, _ = _kernel(mu, z)
    return f


def mgf(mu: SpectralMeasure, w: complex) -> complex:
    """Moment generating function m(w) = -1 - f(1/w)/w, with m(0) = 0.

    For real w > 0 the point 1/w must exceed the support; the invertibility
    window of :func:`inverse_mgf` on (0, m_max) lives on that real segment.
    """
    w = complex(w)
    if w == 0:
        return 0.0
    z = 1.0 / w
    if z.imag == 0 and z.real >= 0:
        s = support_max(mu)
        if z.real <= s * (1 + _AXIS_TOL) + _AXIS_TOL:
            raise DomainError(f"1/w = {z.real} does not clear the support max {s}")
    _, t = _kernel(mu, z)
    return -t  # -T(1/w) = -1 - f(1/w)/w


def moments(mu: SpectralMeasure, k: int) -> float:
    """k-th raw moment, k >= 1."""
    if k < 1:
        raise ValueError(f"moment order must be >= 1, got {k}")
    pair = _atoms_of(mu)
    if pair is not None:
        a, w = pair
        return float(np.sum(w * a**k))
    return float(np.trapezoid(mu.density * mu.grid**k, mu.grid))


def _mgf_real(mu: SpectralMeasure, w: float) -> float:
    return mgf(mu, complex(w)).real


def _mgf_slope(mu: SpectralMeasure, w: float) -> float:
    """d/dw m(w) on the real axis: int lam/(1 - lam w)^2 dmu."""
    pair = _atoms_of(mu)
    if pair is not None:
        a, wt = pair
        return float(np.sum(wt * a / (1.0 - a * w) ** 2))
    h = max(abs(w), 1e-3) * 1e-6
    return (_mgf_real(mu, w + h) - _mgf_real(mu, w - h)) / (2 * h)


def inverse_mgf(mu: SpectralMeasure, m: float, tol: float = 1e-12) -> float:
    """Solve mgf(mu, w) = m for real w; |residual| < tol.

    m(.) is strictly increasing along the real axis (slope int lam/(1-lam w)^2
    > 0), negative for w < 0 and positive on 0 < w < 1/support_max.  The
    attainable window is probed adaptively; m outside it raises RangeError.
    Root finding is safeguarded Newton with bisection fallback on a bracket.
    """
    m = float(m)
    if m == 0.0:
        raise RangeError("m = 0 corresponds to w = 0; the window excludes it")
    s = support_max(mu)
    if s <= 0:
        raise RangeError("measure concentrated at zero has no invertible window")
    if m < 0:
        hi = -min(1.0, 1.0 / s) * 1e-12
        lo = -min(1.0, 1.0 / s)
        for _ in range(80):
            if _mgf_real(mu, lo) < m:
                break
            lo *= 2.0
        else:
            raise RangeError(
                f"m = {m} below the attainable infimum ~{_mgf_real(mu, lo):.6g} on w < 0"
            )
    else:
        lo = min(1.0, 1.0 / s) * 1e-12
        hi = None
        for j in range(1, 54):
            cand = (1.0 - 0.5**j) / s
            val = _mgf_real(mu, cand)
            if val > m:
                hi = cand
                break
        if hi is None:
            raise RangeError(
                f"m = {m} above the attainable supremum ~{val:.6g} on 0 < w < 1/s"
            )
    a, b = lo, hi  # mgf(a) - m < 0 < mgf(b) - m
    w = 0.5 * (a + b)
    for _ in range(200):
        fw = _mgf_real(mu, w) - m
        if abs(fw) < tol:
            return float(w)
        if fw < 0:
            a = w
        else:
            b = w
        slope = _mgf_slope(mu, w)
        step = w - fw / slope if slope > 0 else None
        w = step if step is not None and a < step < b else 0.5 * (a + b)
    raise RangeError(f"inverse_mgf did not reach residual {tol} (last w = {w})")


def s_transform(mu: SpectralMeasure, m: float) -> float:
    """S(m) = z(m) (m + 1)/m; multiplicative under free multiplicative convolution."""
    if m in (0.0, -1.0):
        raise RangeError(f"S-transform undefined at m = {m}")
    return inverse_mgf(mu, m) * (m + 1.0) / m


def stieltjes_inversion(
    samples: Sequence[HerglotzSample], grid: np.ndarray
) -> GridDensity:
    """Recover a density from f(lam_i + i*eps) via rho = Im f / pi.

    Requires a uniform grid and a single kernel width eps > 0 shared by all
    samples.  The raw density is renormalized to total mass 1 when the
    trapezoid mass drifts by less than 1e-2; larger drift raises
    InversionError (the grid window or eps is inadequate).
    """
    grid = np.asarray(grid, dtype=float)
    if len(samples) != grid.size:
        raise ValueError("need exactly one sample per grid point")
    spacing = np.diff(grid)
    if grid.size < 2 or np.any(spacing <= 0):
        raise ValueError("grid must be strictly increasing")
    if not np.allclose(spacing, spacing[0], rtol=1e-8, atol=0):
        raise ValueError("grid must be uniform")
    eps = samples[0].z.imag
    if eps <= 0:
        raise ValueError("samples must sit above the real axis (eps > 0)")
    for s, lam in zip(samples, grid):
        if abs(s.z.imag - eps) > 1e-12 * max(1.0, eps) or abs(s.z.real - lam) > 1e-9:
            raise ValueError("samples must lie on grid + i*eps with a single eps")
    rho = np.array([s.f.imag for s in samples]) / np.pi
    rho = np.maximum(rho, 0.0)
    mass = np.trapezoid(rho, grid)
    if abs(mass - 1.0) >= 1e-2:
        raise InversionError(
            f"mass drift |{mass:.6f} - 1| >= 1e-2; refine the grid window or eps"
        )
    return GridDensity(grid, rho / mass)


def cdf(mu: SpectralMeasure, x, left: bool = False) -> np.ndarray:
    """Distribution function F(x) (right-continuous); left=True gives F(x-)."""
    x = np.asarray(x, dtype=float)
    pair = _atoms_of(mu)
    if pair is not None:
        a, w = pair
        cum = np.concatenate([[0.0], np.cumsum(w)])
        side = "left" if left else "right"
        return cum[np.searchsorted(a, x, side=side)]
    g, d = mu.grid, mu.density
    inc = 0.5 * (d[1:] + d[:-1]) * np.diff(g)
    cum = np.concatenate([[0.0], np.cumsum(inc)])
    vals = np.interp(x, g, cum)
    return np.clip(np.where(x >= g[-1], 1.0, np.where(x < g[0], 0.0, vals)), 0.0, 1.0)


def _breakpoints(mu: SpectralMeasure) -> np.ndarray:
    pair = _atoms_of(mu)
    if pair is not None:
        return pair[0]
    return mu.grid


def ks_distance(a: SpectralMeasure, b: SpectralMeasure) -> float:
    """sup_x |F_a(x) - F_b(x)| over the merged evaluation grid of both measures."""
    xs = np.unique(np.concatenate([_breakpoints(a), _breakpoints(b)]))
    d_right = np.max(np.abs(cdf(a, xs) - cdf(b, xs)))
    d_left = np.max(np.abs(cdf(a, xs, left=True) - cdf(b, xs, left=True)))
    return float(max(d_right, d_left))


def dilate(mu: SpectralMeasure, c: float) -> SpectralMeasure:
    """Pushforward under lam -> c*lam, c > 0."""
    if c <= 0:
        raise ValueError(f"dilation factor must be > 0, got {c}")
    if isinstance(mu, Atomic):
        return Atomic(mu.positions * c, mu.weights)
    if isinstance(mu, Empirical):
        return Empirical(mu.eigenvalues * c)
    return GridDensity(mu.grid * c, mu.density / c)


def measure_to_json(mu: SpectralMeasure) -> dict:
    """Serialize to a {"type", "data"} JSON object."""
    if isinstance(mu, Atomic):
        return {
            "type": "atomic",
            "data": {"atoms": [[float(p), float(w)] for p, w in zip(mu.positions, mu.weights)]},
        }
    if isinstance(mu, GridDensity):
        return {
            "type": "grid_density",
            "data": {"grid": mu.grid.tolist(), "density": mu.density.tolist()},
        }
    return {"type": "empirical", "data": {"eigenvalues": mu.eigenvalues.tolist()}}


def measure_from_json(obj: dict) -> SpectralMeasure:
    kind, data = obj["type"], obj["data"]
    if kind == "atomic":
        atoms = np.asarray(data["atoms"], dtype=float)
        return Atomic(atoms[:, 0], atoms[:, 1])
    if kind == "grid_density":
        return GridDensity(np.asarray(data["grid"]), np.asarray(data["density"]))
    if kind == "empirical":
        return Empirical(np.asarray(data["eigenvalues"]))
    raise ValueError(f"unknown measure type {kind!r}")
