"""The gated command controller: x_hat = s(p(g(z)) * x), optionally rescaled.

The controller multiplies each human command component by a strictly
positive, state-dependent gain and saturates the result.  By construction
the output stays in [-1, 1], is exactly zero iff the command is zero, and
preserves the sign of every component.  In rescaled mode the gain is
normalized by a certified slope bound and multiplied by exp(alpha_scale), so
the map from command to output is exp(alpha_scale)-Lipschitz over the whole
declared input box; alpha_scale is a trainable parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import net_core
from .gating import GATE_FLOOR, DomainError, GatePair, lipschitz_bound
from .net_core import GradientTape, Network, ShapeError

__all__ = [
    "ApecsController",
    "apecs_backward",
    "apecs_forward",
    "controller_from_doc",
    "controller_lipschitz_bound",
    "controller_to_doc",
]

DEFAULT_ALPHA_SCALE = math.log(0.5)


@dataclass
class ApecsController:
    """Gating network plus gate pair and scaling state.

    ``net`` maps the stacked input [command, tracking errors, environment]
    to one gate logit per command component.  ``c`` bounds the command
    magnitude (1 for commands in [-1, 1]).  ``alpha_scale`` is the log of the
    target Lipschitz constant; it only participates when ``rescaled``.
    """

    net: Network
    gate: GatePair = field(default_factory=GatePair)
    c: float = 1.0
    alpha_scale: float = DEFAULT_ALPHA_SCALE
    rescaled: bool = True

    @property
    def n_x(self) -> int:
        return self.net.out_dim

    @property
    def n_env(self) -> int:
        return self.net.in_dim - self.n_x

    def domain_radius(self) -> float:
        """Euclidean radius of the declared input box.

        Commands are bounded by ``c`` per component and every other input
        feature by 1, so any input z satisfies ||z|| <= this radius.
        """
        return math.sqrt(self.n_x * self.c * self.c + self.n_env)

    def effective_bias_bound(self) -> float:
        """Bound on |g(0, env)| over the whole declared environment box.

        The gate network's value at an arbitrary in-box environment differs
        from its value at zero by at most L * (domain radius - command
        contribution), which is what the slope certificate must absorb.
        """
        l_theta = self.net.cached_lipschitz
        return self.net.bias_norm() + l_theta * (self.domain_radius() - self.c)

    def target_lipschitz(self) -> float:
        return math.exp(self.alpha_scale)


def controller_lipschitz_bound(ctrl: ApecsController) -> float:
    """Certified slope bound of the pre-saturation gated map for ``ctrl``."""
    return lipschitz_bound(ctrl.net.cached_lipschitz, ctrl.effective_bias_bound(), ctrl.c, ctrl.gate)


def _stack_inputs(ctrl: ApecsController, x, E, e):
    x_arr = np.asarray(x, dtype=float)
    single = x_arr.ndim == 1
    x2 = np.atleast_2d(x_arr)
    E2 = np.atleast_2d(np.asarray(E, dtype=float))
    e2 = np.atleast_2d(np.asarray(e, dtype=float))
    if x2.shape[1] != ctrl.n_x:
        raise ShapeError(f"command has {x2.shape[1]} components, controller expects {ctrl.n_x}")
    if e2.shape[1] + E2.shape[1] != ctrl.n_env:
        raise ShapeError(
            f"environment+error features have {e2.shape[1] + E2.shape[1]} components, "
            f"controller expects {ctrl.n_env}"
        )
    if not (np.all(np.isfinite(x2)) and np.all(np.isfinite(E2)) and np.all(np.isfinite(e2))):
        raise DomainError("controller inputs must be finite")
    if np.any(np.abs(x2) > ctrl.c):
        raise DomainError(f"command outside [-{ctrl.c}, {ctrl.c}]")
    z = np.concatenate([x2, e2, E2], axis=1)
    return x2, z, single


def _gate_values(ctrl: ApecsController, g: np.ndarray) -> np.ndarray:
    return np.maximum(ctrl.gate.positive(g), GATE_FLOOR)


def apecs_forward(ctrl: ApecsController, x, E, e) -> np.ndarray:
    """Transform commands; accepts single vectors or (N, dim) batches.

    Input layout fed to the gate network is [x, e, E].
    """
    x2, z, single = _stack_inputs(ctrl, x, E, e)
    g = net_core.forward(ctrl.net, z)
    gain = _gate_values(ctrl, np.atleast_2d(g))
    if ctrl.rescaled:
        gain = gain * (ctrl.target_lipschitz() / controller_lipschitz_bound(ctrl))
    out = ctrl.gate.saturate(gain * x2)
    return out[0] if single else out


def apecs_backward(ctrl: ApecsController, x, E, e, output_grad) -> tuple[GradientTape, float]:
    """Gradients of ``output_grad . apecs_forward`` w.r.t. net params and alpha_scale.

    Sums over the batch.  Saturated clip components contribute zero.  The
    dependence of the certified slope bound on the network's bias is
    differentiated; spectral estimates are treated as constants, matching
    ``net_core.backward``.
    """
    x2, z, _ = _stack_inputs(ctrl, x, E, e)
    grad = np.atleast_2d(np.asarray(output_grad, dtype=float))
    if grad.shape != x2.shape:
        raise ShapeError("output_grad shape does not match the command batch")

    g = np.atleast_2d(net_core.forward(ctrl.net, z))
    gain = _gate_values(ctrl, g)
    l_p = controller_lipschitz_bound(ctrl) if ctrl.rescaled else 1.0
    r = ctrl.target_lipschitz() / l_p if ctrl.rescaled else 1.0
    u = r * gain * x2
    gu = grad * ctrl.gate.saturate_prime(u)

    # path through the gate network at z
    gate_grad = gu * r * x2 * ctrl.gate.positive_prime(g)
    tape = net_core.backward(ctrl.net, z, gate_grad)

    d_alpha = 0.0
    if ctrl.rescaled:
        # d u / d alpha = u;  d u / d L_p = -u / L_p
        d_alpha = float(np.sum(gu * u))
        coeff = float(np.sum(gu * (-u / l_p)))
        l_theta = ctrl.net.cached_lipschitz
        a = l_theta * ctrl.c + ctrl.effective_bias_bound()
        dlp_da = ctrl.gate.positive_second(a) * l_theta * ctrl.c + ctrl.gate.positive_prime(a)
        # the bias bound follows the largest-magnitude component of g(0)
        bias = ctrl.net.cached_bias
        k = int(np.argmax(np.abs(bias)))
        seed_grad = np.zeros((1, ctrl.n_x))
        seed_grad[0, k] = coeff * dlp_da * float(np.sign(bias[k]))
        tape.add_(net_core.backward(ctrl.net, np.zeros((1, ctrl.net.in_dim)), seed_grad))
    return tape, d_alpha


def controller_to_doc(ctrl: ApecsController, seed: int | None = None) -> dict:
    doc = net_core.network_to_doc(ctrl.net, seed=seed)
    doc.update(
        {
            "gate": ctrl.gate.kind,
            "B": ctrl.gate.B,
            "alpha_scale": ctrl.alpha_scale,
            "c": ctrl.c,
            "rescaled": ctrl.rescaled,
        }
    )
    return doc


def controller_from_doc(doc: dict) -> ApecsController:
    net = net_core.network_from_doc(doc)
    return ApecsController(
        net=net,
        gate=GatePair(kind=doc["gate"], B=float(doc["B"])),
        c=float(doc["c"]),
        alpha_scale=float(doc["alpha_scale"]),
        rescaled=bool(doc.get("rescaled", True)),
    )
