"""Lipschitz-certified, sector-bounded gating of human control commands."""

from .controller import (
    ApecsController,
    apecs_backward,
    apecs_forward,
    controller_from_doc,
    controller_lipschitz_bound,
    controller_to_doc,
)
from .gating import (
    GatePair,
    algebraic_saturation,
    clip_saturation,
    identity_gate_target,
    lipschitz_bound,
    softplus,
    softplus_prime,
    sqrt_shift_positive,
)
from .net_core import (
    AdamState,
    DenseLayer,
    GradientTape,
    Network,
    adam_step,
    backward,
    build_network,
    forward,
    network_from_doc,
    network_to_doc,
    spectral_norm,
)
from .weighting import (
    LossBreakdown,
    dual_loss,
    estimate_alpha,
    gamma_conditions,
    init_lipschitz,
    optimal_gamma,
    total_loss_slope,
    worst_case_expert_loss,
    worst_case_human_loss,
)

__version__ = "0.1.0"
