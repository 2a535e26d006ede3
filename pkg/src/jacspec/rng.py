"""Deterministic sampling of Haar orthogonal matrices, Gaussian biases and inputs.

All samplers take an explicit ``numpy.random.Generator`` and are pure given its
state.  Generators are built on the Philox bit generator, a counter-based PRNG
with 64-bit keys, so that independent streams can be derived by keying
``master_seed + trial_index``.  Gaussian variates come from numpy's ziggurat
``standard_normal``; streams are bit-reproducible per platform per seed (no
cross-platform floating-point guarantee is made).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "make_rng",
    "trial_rng",
    "sample_haar_orthogonal",
    "sample_gaussian_vector",
    "sample_uniform_sphere",
]

_SEED_MOD = 2**64

# Self-test hook: skipping the QR sign fix yields a non-Haar law that the
# moment checks must catch.  Never set outside negative-control tests.
_SKIP_QR_SIGN_FIX = False


def make_rng(seed: int) -> np.random.Generator:
    """Create a Philox-keyed Generator from a 64-bit unsigned seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) % _SEED_MOD))


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Independent stream for one Monte Carlo trial: key = master_seed + trial_index."""
    return make_rng((int(master_seed) + int(trial_index)) % _SEED_MOD)


def sample_haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an n-by-n matrix Haar-distributed on SO(n).

    Construction: fill an n-by-n matrix with i.i.d. standard Gaussians and take
    its QR factorization; multiplying each column of Q by the sign of the
    matching diagonal entry of R removes the sign ambiguity of raw QR and makes
    the law Haar on O(n).  If the determinant comes out -1, the last column is
    negated.  That projection is right-multiplication by a fixed reflection, so
    spectral statistics of conjugated matrices are unaffected.

    Returns a matrix O with O.T @ O = I to ~1e-12 per entry and det O = +1.
    Raises ValueError for n < 1.
    """
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    if not _SKIP_QR_SIGN_FIX:
        d = np.sign(np.diag(r))
        d[d == 0.0] = 1.0
        q = q * d[np.newaxis, :]
    sign, _ = np.linalg.slogdet(q)
    if sign < 0:
        q[:, -1] = -q[:, -1]
    return q


def sample_gaussian_vector(n: int, sigma_b2: float, rng: np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. centered Gaussians of variance sigma_b2 (zero vector if sigma_b2 = 0)."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    if sigma_b2 < 0:
        raise ValueError(f"variance must be >= 0, got {sigma_b2}")
    return np.sqrt(sigma_b2) * rng.standard_normal(n)


def sample_uniform_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a uniform point on the unit sphere S^{n-1} as gamma / ||gamma||."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    g = rng.standard_normal(n)
    return g / np.linalg.norm(g)
