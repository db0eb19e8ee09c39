"""Gate nonlinearities: positive gain functions and saturations.

Two pairs are provided.  The primary pair is (clip, softplus); the
alternative pair is an algebraic saturation v / sqrt(1 + v^2) with the
shifted-sqrt positive function (g + sqrt(g^2 + B)) / 2.  Both positive
functions are strictly increasing with increasing first derivative, and both
saturations are odd, vanish at zero, and map into [-1, 1] with slope at
most 1 -- exactly what the sector and Lipschitz guarantees of the controller
require.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GatePair",
    "InvalidConfigError",
    "algebraic_saturation",
    "clip_saturation",
    "identity_gate_target",
    "lipschitz_bound",
    "softplus",
    "softplus_prime",
    "sqrt_shift_positive",
]

CLIP_SOFTPLUS = "clip_softplus"
ALGEBRAIC_SQRT = "algebraic_sqrt"

# Strictly positive floor on the gate output so a zero controller output
# implies a zero command even under floating point.
GATE_FLOOR = 1e-30


class InvalidConfigError(ValueError):
    """Gate parameters outside their valid range."""


class DomainError(ValueError):
    """Argument outside the function's domain."""


def softplus(v):
    """log(1 + e^v), elementwise; linear/exponential tails past |v| > 30."""
    v = np.asarray(v, dtype=float)
    out = np.where(v > 30.0, v, np.where(v < -30.0, np.exp(np.minimum(v, 0.0)), np.log1p(np.exp(-np.abs(v))) + np.maximum(v, 0.0)))
    return out if out.ndim else float(out)


def softplus_prime(v):
    """Logistic sigmoid, the derivative of softplus."""
    v = np.asarray(v, dtype=float)
    t = np.exp(-np.abs(v))
    out = np.where(v >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
    return out if out.ndim else float(out)


def _softplus_second(v):
    s = softplus_prime(v)
    return s * (1.0 - s)


def clip_saturation(v):
    v = np.asarray(v, dtype=float)
    out = np.clip(v, -1.0, 1.0)
    return out if out.ndim else float(out)


def _clip_prime(v):
    v = np.asarray(v, dtype=float)
    out = (np.abs(v) < 1.0).astype(float)
    return out if out.ndim else float(out)


def algebraic_saturation(v):
    """Odd map v / sqrt(1 + v^2) with range (-1, 1) and slope <= 1."""
    v = np.asarray(v, dtype=float)
    out = v / np.sqrt(1.0 + v * v)
    return out if out.ndim else float(out)


def _algebraic_saturation_prime(v):
    v = np.asarray(v, dtype=float)
    out = (1.0 + v * v) ** -1.5
    return out if out.ndim else float(out)


def sqrt_shift_positive(g, B: float):
    """(g + sqrt(g^2 + B)) / 2: strictly positive, increasing, convex."""
    if B <= 0.0:
        raise InvalidConfigError(f"shift parameter B must be > 0, got {B}")
    g = np.asarray(g, dtype=float)
    out = 0.5 * (g + np.sqrt(g * g + B))
    return out if out.ndim else float(out)


def _sqrt_shift_prime(g, B: float):
    g = np.asarray(g, dtype=float)
    out = 0.5 * (1.0 + g / np.sqrt(g * g + B))
    return out if out.ndim else float(out)


def _sqrt_shift_second(g, B: float):
    g = np.asarray(g, dtype=float)
    out = 0.5 * B * (g * g + B) ** -1.5
    return out if out.ndim else float(out)


def identity_gate_target(x: float, B: float) -> float:
    """Gate pre-image that makes the algebraic pair reproduce its input.

    For |x| < 1 returns g with sat((g + sqrt(g^2 + B))/2 * x) = x, i.e.
    g(x) = (4 - B (1 - x^2)) / (4 sqrt(1 - x^2)).
    """
    if B <= 0.0:
        raise InvalidConfigError(f"shift parameter B must be > 0, got {B}")
    if not abs(x) < 1.0:
        raise DomainError(f"identity gate target needs |x| < 1, got {x}")
    one_minus = 1.0 - x * x
    return (4.0 - B * one_minus) / (4.0 * math.sqrt(one_minus))


@dataclass(frozen=True)
class GatePair:
    """A (saturation, positive gain) pair used by the controller."""

    kind: str = CLIP_SOFTPLUS
    B: float = 4.0

    def __post_init__(self):
        if self.kind not in (CLIP_SOFTPLUS, ALGEBRAIC_SQRT):
            raise InvalidConfigError(f"unknown gate pair {self.kind!r}")
        if self.kind == ALGEBRAIC_SQRT and self.B <= 0.0:
            raise InvalidConfigError(f"shift parameter B must be > 0, got {self.B}")

    def positive(self, g):
        if self.kind == CLIP_SOFTPLUS:
            return softplus(g)
        return sqrt_shift_positive(g, self.B)

    def positive_prime(self, g):
        if self.kind == CLIP_SOFTPLUS:
            return softplus_prime(g)
        return _sqrt_shift_prime(g, self.B)

    def positive_second(self, g):
        if self.kind == CLIP_SOFTPLUS:
            return _softplus_second(g)
        return _sqrt_shift_second(g, self.B)

    def saturate(self, v):
        if self.kind == CLIP_SOFTPLUS:
            return clip_saturation(v)
        return algebraic_saturation(v)

    def saturate_prime(self, v):
        if self.kind == CLIP_SOFTPLUS:
            return _clip_prime(v)
        return _algebraic_saturation_prime(v)


def lipschitz_bound(l_theta: float, b_theta_norm: float, c: float, gate: GatePair) -> float:
    """Slope bound of the gated pre-saturation map x -> p(g(z)) * x.

    Evaluates p'(L c + b) L c + p(L c + b) where L bounds the gate network's
    Lipschitz constant, b its output magnitude at zero, and c the command
    magnitude.  Monotone nondecreasing in every argument.
    """
    if c <= 0.0:
        raise InvalidConfigError(f"command bound c must be > 0, got {c}")
    if l_theta < 0.0:
        raise InvalidConfigError(f"lipschitz constant must be >= 0, got {l_theta}")
    a = l_theta * c + b_theta_norm
    return float(gate.positive_prime(a) * l_theta * c + gate.positive(a))
