"""Forward recurrence, Jacobian product and empirical Gram spectrum.

The network iterates x^l = phi(y^l), y^l = O^l x^{l-1} + b^l for l = 1..L with
Haar SO(n) weights and Gaussian biases, all layers of equal width n.  The
input-output Jacobian is the product J = D^L O^L ... D^1 O^1 with
D^l = diag(phi'(y^l)), and the object of study is the spectrum of M = J J^T.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .measures import Empirical
from .nonlinearity import Nonlinearity
from .rng import make_rng, sample_gaussian_vector, sample_haar_orthogonal

__all__ = [
    "ConfigError",
    "ConstantNorm",
    "ExplicitVector",
    "IidFromSeed",
    "InputSpec",
    "NetworkConfig",
    "ForwardTrace",
    "forward_pass",
    "assemble_jacobian",
    "gram_matrix",
    "empirical_ncm",
    "layer_q",
]

_PSD_CLAMP = -1e-10
_SYM_TOL = 1e-8


class ConfigError(ValueError):
    """Invalid network or experiment configuration."""


@dataclass(frozen=True)
class ConstantNorm:
    """Input with ||x0||^2 = n*(q0 - sigma_b2) exactly, so layer_q(x0) = q0."""

    q0: float


@dataclass(frozen=True)
class ExplicitVector:
    values: np.ndarray


@dataclass(frozen=True)
class IidFromSeed:
    """i.i.d. centered Gaussian entries with the given per-entry variance."""

    variance: float


InputSpec = Union[ConstantNorm, ExplicitVector, IidFromSeed]


@dataclass(frozen=True)
class NetworkConfig:
    depth: int
    width: int
    sigma_b2: float
    phi: Nonlinearity
    input_spec: InputSpec
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.width < 1:
            raise ConfigError(f"width must be >= 1, got {self.width}")
        if self.sigma_b2 < 0:
            raise ConfigError(f"sigma_b2 must be >= 0, got {self.sigma_b2}")
        if isinstance(self.input_spec, ConstantNorm) and self.input_spec.q0 <= self.sigma_b2:
            raise ConfigError(
                f"q0 = {self.input_spec.q0} must strictly exceed sigma_b2 = {self.sigma_b2}"
            )


@dataclass
class ForwardTrace:
    """Per-layer record of one forward pass (layer l stored at index l-1)."""

    config: NetworkConfig
    x0: np.ndarray
    pre_activations: list  # y^l
    activations: list  # x^l
    derivatives: list  # diag of D^l = phi'(y^l)
    weights: list  # O^l
    biases: list  # b^l
    q_values: np.ndarray = field(default=None)  # q^0 .. q^L


def _build_input(config: NetworkConfig, rng) -> np.ndarray:
    spec = config.input_spec
    n = config.width
    if isinstance(spec, ConstantNorm):
        return np.full(n, np.sqrt(spec.q0 - config.sigma_b2))
    if isinstance(spec, ExplicitVector):
        x0 = np.asarray(spec.values, dtype=float)
        if x0.shape != (n,):
            raise ConfigError(f"explicit input must have shape ({n},), got {x0.shape}")
        return x0
    if isinstance(spec, IidFromSeed):
        if spec.variance <= 0:
            raise ConfigError("i.i.d. input variance must be > 0")
        return np.sqrt(spec.variance) * rng.standard_normal(n)
    raise ConfigError(f"unknown input spec {spec!r}")


def layer_q(x: np.ndarray, sigma_b2: float) -> float:
    """q = ||x||^2 / n + sigma_b2, the squared scale driving the next layer."""
    x = np.asarray(x, dtype=float)
    return float(x @ x / x.size + sigma_b2)


def forward_pass(
    config: NetworkConfig,
    weights: Optional[Sequence[np.ndarray]] = None,
    biases: Optional[Sequence[np.ndarray]] = None,
) -> ForwardTrace:
    """Run the recurrence, sampling O^l then b^l per layer from config.seed.

    ``weights``/``biases`` inject fixed per-layer values (tests use this to
    pin O^l = I etc.); sampling still consumes the stream in the same order so
    partial injection stays reproducible.
    """
    rng = make_rng(config.seed)
    n, L, s2, phi = config.width, config.depth, config.sigma_b2, config.phi
    x = _build_input(config, rng)
    q0 = layer_q(x, s2)
    if q0 <= s2:
        raise ConfigError("input vector must be nonzero (q0 must exceed sigma_b2)")
    trace = ForwardTrace(config, x, [], [], [], [], [])
    qs = [q0]
    for l in range(L):
        o = sample_haar_orthogonal(n, rng)
        b = sample_gaussian_vector(n, s2, rng)
        if weights is not None and weights[l] is not None:
            o = np.asarray(weights[l], dtype=float)
        if biases is not None and biases[l] is not None:
            b = np.asarray(biases[l], dtype=float)
        y = o @ x + b
        x = phi.value(y)
        trace.weights.append(o)
        trace.biases.append(b)
        trace.pre_activations.append(y)
        trace.activations.append(x)
        trace.derivatives.append(phi.derivative(y))
        qs.append(layer_q(x, s2))
    trace.q_values = np.array(qs)
    return trace


def assemble_jacobian(trace: ForwardTrace) -> np.ndarray:
    """J = D^L O^L ... D^1 O^1, left-multiplying from l = L down to 1."""
    jac = None
    for d, o in zip(trace.derivatives, trace.weights):
        layer = d[:, np.newaxis] * o
        jac = layer if jac is None else layer @ jac
    return jac


def gram_matrix(jac: np.ndarray) -> np.ndarray:
    """M = J J^T, symmetrized to kill roundoff asymmetry."""
    jac = np.asarray(jac, dtype=float)
    if jac.ndim != 2 or jac.shape[0] != jac.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {jac.shape}")
    m = jac @ jac.T
    return 0.5 * (m + m.T)


def empirical_ncm(m: np.ndarray) -> Empirical:
    """Full symmetric eigendecomposition of a PSD matrix as an Empirical measure.

    Rejects inputs asymmetric beyond 1e-8.  Eigenvalues in [-1e-10, 0) are
    clamped to 0; anything more negative signals a broken pipeline and raises.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > _SYM_TOL:
        raise ValueError(f"matrix asymmetry {asym} exceeds {_SYM_TOL}")
    ev = np.linalg.eigvalsh(0.5 * (m + m.T))
    if ev[0] < _PSD_CLAMP:
        raise ValueError(f"eigenvalue {ev[0]} below the PSD clamp {_PSD_CLAMP}")
    return Empirical(np.maximum(ev, 0.0))
