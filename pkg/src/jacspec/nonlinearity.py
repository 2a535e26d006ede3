"""Catalog of bounded activations with bounded derivatives.

Every member has sup|phi| and sup|phi'| finite, and phi' not identically zero:

* ``hard_tanh(g)`` -- phi(x) = clamp(g*x, -1, 1); the piecewise-linear case.
  The derivative is defined as 0 at the kinks |x| = 1/g (the kink set has
  Gaussian measure zero, so limiting spectra do not see the choice, but
  simulation and theory must agree on it).
* ``sine(g)`` -- phi(x) = sin(g*x); admits closed-form Gaussian integrals.
* ``scaled_erf(g)`` -- phi(x) = erf(g*x*sqrt(pi)/2); smooth, with
  phi'(x) = g*exp(-(g*x*sqrt(pi)/2)^2), convenient for finite differences.

All three have phi'(0) = g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

__all__ = ["Nonlinearity", "hard_tanh", "sine", "scaled_erf", "parse_nonlinearity"]


@dataclass(frozen=True)
class Nonlinearity:
    kind: str
    gain: float
    value_bound: float  # sup |phi|
    slope_bound: float  # sup |phi'|

    def value(self, x):
        x = np.asarray(x, dtype=float)
        g = self.gain
        if self.kind == "hardtanh":
            return np.clip(g * x, -1.0, 1.0)
        if self.kind == "sin":
            return np.sin(g * x)
        if self.kind == "scalederf":
            return erf(g * x * np.sqrt(np.pi) / 2.0)
        raise ValueError(f"unknown nonlinearity kind {self.kind!r}")

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        g = self.gain
        if self.kind == "hardtanh":
            return np.where(np.abs(x) < 1.0 / g, g, 0.0)
        if self.kind == "sin":
            return g * np.cos(g * x)
        if self.kind == "scalederf":
            u = g * x * np.sqrt(np.pi) / 2.0
            return g * np.exp(-(u**2))
        raise ValueError(f"unknown nonlinearity kind {self.kind!r}")

    def label(self) -> str:
        return f"{self.kind}:{self.gain:g}"


def _check_gain(gain: float) -> float:
    gain = float(gain)
    if not np.isfinite(gain) or gain <= 0:
        raise ValueError(f"gain must be positive and finite, got {gain}")
    return gain


def hard_tanh(gain: float = 1.0) -> Nonlinearity:
    gain = _check_gain(gain)
    return Nonlinearity("hardtanh", gain, 1.0, gain)


def sine(gain: float = 1.0) -> Nonlinearity:
    gain = _check_gain(gain)
    return Nonlinearity("sin", gain, 1.0, gain)


def scaled_erf(gain: float = 1.0) -> Nonlinearity:
    gain = _check_gain(gain)
    return Nonlinearity("scalederf", gain, 1.0, gain)


_FACTORIES = {"hardtanh": hard_tanh, "sin": sine, "scalederf": scaled_erf}


def parse_nonlinearity(text: str) -> Nonlinearity:
    """Parse "kind" or "kind:gain" strings, e.g. "sin:1.0" or "hardtanh"."""
    kind, _, gain = text.strip().lower().partition(":")
    if kind not in _FACTORIES:
        raise ValueError(
            f"unknown nonlinearity {kind!r}; choose from {sorted(_FACTORIES)}"
        )
    return _FACTORIES[kind](float(gain) if gain else 1.0)
