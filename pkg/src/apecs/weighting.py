"""Loss balancing between command mimicry and expert correction.

The training objective is a convex combination gamma * L_human +
(1 - gamma) * L_expert of two mean-squared errors.  Because a saturated,
sign-preserving controller can be arbitrarily far from an opposing expert,
the two terms have very different worst-case magnitudes; this module holds
the closed forms of those worst cases, the weight gamma* that equalizes
them, the validity test and initializer for the target Lipschitz constant,
and the estimator of the expert-opposition bound alpha from data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossBreakdown",
    "WorstCaseParams",
    "dual_loss",
    "estimate_alpha",
    "gamma_conditions",
    "init_lipschitz",
    "optimal_gamma",
    "total_loss_slope",
    "worst_case_expert_loss",
    "worst_case_human_loss",
]

# Initializing the target Lipschitz constant at (or too close to) zero kills
# the gradient through the gate; below this floor the fallback value is used.
MIN_INIT_LIPSCHITZ = 0.01
FALLBACK_INIT_LIPSCHITZ = 0.5


@dataclass(frozen=True)
class LossBreakdown:
    """The two loss components and their convex combination."""

    l_human: float
    l_expert: float
    gamma: float
    l_total: float


@dataclass(frozen=True)
class WorstCaseParams:
    """Expert opposition bound and target Lipschitz constant."""

    alpha: float
    l_t: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not self.l_t > 0.0:
            raise ValueError(f"target Lipschitz constant must be > 0, got {self.l_t}")


def dual_loss(x_hat: np.ndarray, x: np.ndarray, x_bar: np.ndarray, gamma: float) -> LossBreakdown:
    """Mean-squared distances of the controller output to the human and
    expert commands, averaged over all sample components."""
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x_bar = np.atleast_2d(np.asarray(x_bar, dtype=float))
    if x_hat.size == 0:
        raise ValueError("dual_loss: empty batch")
    if not (x_hat.shape == x.shape == x_bar.shape):
        raise ValueError(f"dual_loss: incongruent shapes {x_hat.shape}, {x.shape}, {x_bar.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    l_human = float(np.mean((x_hat - x) ** 2))
    l_expert = float(np.mean((x_hat - x_bar) ** 2))
    return LossBreakdown(
        l_human=l_human,
        l_expert=l_expert,
        gamma=gamma,
        l_total=gamma * l_human + (1.0 - gamma) * l_expert,
    )


def worst_case_expert_loss(alpha: float, l_t: float) -> float:
    """Expert-loss ceiling for an L_t-Lipschitz saturated controller when the
    expert fully opposes the command with magnitude alpha."""
    WorstCaseParams(alpha, l_t)
    if l_t <= 1.0:
        return alpha * alpha + alpha * l_t + l_t * l_t / 3.0
    return (alpha + 1.0) ** 2 - (alpha + 2.0 / 3.0) / l_t


def worst_case_human_loss(l_t: float) -> float:
    """Human-loss ceiling: distance of the best L_t-Lipschitz saturated
    response from the command itself.  Zero at l_t = 1 and 1/3 in both the
    l_t -> 0 and l_t -> inf limits."""
    if not l_t > 0.0:
        raise ValueError(f"target Lipschitz constant must be > 0, got {l_t}")
    if l_t <= 1.0:
        return (l_t - 1.0) ** 2 / 3.0
    return (l_t - 1.0) ** 2 / (3.0 * l_t * l_t)


def optimal_gamma(alpha: float) -> float:
    """Weight that equalizes the worst-case magnitudes of the two losses:
    gamma* satisfies gamma*/3 = (1 - gamma*) (alpha + 1)^2."""
    if not (np.isfinite(alpha) and alpha >= 0.0):
        raise ValueError(f"alpha must be finite and >= 0, got {alpha}")
    return 3.0 * (alpha + 1.0) ** 2 / (3.0 * alpha * (alpha + 2.0) + 4.0)


def gamma_conditions(alpha: float, gamma: float) -> bool:
    """Validity test for the closed-form target-Lipschitz initializer."""
    if not (np.isfinite(alpha) and alpha >= 0.0):
        raise ValueError(f"alpha must be finite and >= 0, got {alpha}")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if gamma > 0.6:
        return True
    return alpha < 2.0 * gamma / (3.0 - 3.0 * gamma)


def init_lipschitz(alpha: float, gamma: float) -> float:
    """Initial target Lipschitz constant.

    Uses the stationary point (3/2) alpha (gamma - 1) + gamma of the
    worst-case total loss when the validity conditions hold and the value is
    meaningfully positive; otherwise falls back to 1/2.
    """
    value = 1.5 * alpha * (gamma - 1.0) + gamma
    if gamma_conditions(alpha, gamma) and value > MIN_INIT_LIPSCHITZ:
        return value
    return FALLBACK_INIT_LIPSCHITZ


def total_loss_slope(alpha: float, gamma: float, l_t: float) -> float:
    """Derivative of gamma * worst_case_human + (1-gamma) * worst_case_expert
    with respect to the target Lipschitz constant."""
    WorstCaseParams(alpha, l_t)
    if l_t < 1.0:
        return -alpha * gamma + alpha - 2.0 * gamma / 3.0 + 2.0 * l_t / 3.0
    if l_t == 1.0:
        return -(3.0 * alpha + 2.0) * (gamma - 1.0) / 3.0
    return ((2.0 - 3.0 * alpha * (gamma - 1.0)) * l_t - 2.0 * gamma) / (3.0 * l_t**3)


def estimate_alpha(x: np.ndarray, x_bar: np.ndarray) -> float:
    """Expert opposition bound from data: how far the expert command reaches
    against the sign of the human command, floored at zero."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x_bar = np.atleast_2d(np.asarray(x_bar, dtype=float))
    if x.size == 0:
        raise ValueError("estimate_alpha: empty dataset")
    if x.shape != x_bar.shape:
        raise ValueError(f"estimate_alpha: incongruent shapes {x.shape}, {x_bar.shape}")
    return max(0.0, -float(np.min(np.sign(x) * x_bar)))
