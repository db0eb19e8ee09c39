"""Dataset generation, the training matrix, closed-loop evaluation, sweeps.

Three model kinds are trained: ``apecs`` (gated controller over a
spectral-norm constrained network, rescaled to a certified Lipschitz
target), ``apecs_nl`` (same gating, unconstrained network, no rescale), and
``f`` (a plain feed-forward network predicting the command directly).  Each
can be trained under three loss weightings: gamma = 0, gamma = 1/2, or the
equalizing gamma* derived from the data.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import net_core
from .controller import (
    ApecsController,
    apecs_backward,
    apecs_forward,
    controller_from_doc,
    controller_lipschitz_bound,
    controller_to_doc,
)
from .features import N_COMMAND, N_FEATURES, environment_features, expert_label
from .gating import GatePair
from .net_core import AdamState, Network, TrainingDivergedError, build_network
from .operators import Command, ExpertConfig, ExpertOperator, NoviceConfig, NoviceOperator
from .sim import Course, RunTrace, VehicleParams, rmse, run_closed_loop
from .weighting import (
    FALLBACK_INIT_LIPSCHITZ,
    dual_loss,
    estimate_alpha,
    init_lipschitz,
    optimal_gamma,
)

__all__ = [
    "Dataset",
    "EvalContext",
    "ExperimentPlan",
    "GatedModel",
    "DirectModel",
    "TrainReport",
    "MODEL_KINDS",
    "GAMMA_MODES",
    "build_model",
    "empirical_lipschitz",
    "evaluate_closed_loop",
    "generate_dataset",
    "lipschitz_sweep",
    "load_model_doc",
    "model_to_doc",
    "train",
]

MODEL_KINDS = ("apecs", "apecs_nl", "f")
GAMMA_MODES = ("g0", "ghalf", "gstar")
_FIXED_GAMMAS = {"g0": 0.0, "ghalf": 0.5}


@dataclass(frozen=True)
class ExperimentPlan:
    """One training run: model kind, loss weighting, and hyperparameters."""

    kind: str = "apecs"
    gamma_mode: str = "gstar"
    epochs: int = 1000
    learning_rate: float = 5e-4
    lr_final: float = 2e-5
    seed: int = 1
    lipschitz_bound: float = 20.0
    init_gain: float = 1.6
    hidden_layers: int = 5
    width: int = 9
    constrained_activation: str = "relu"
    gate_kind: str = "clip_softplus"
    gate_B: float = 4.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.gamma_mode not in GAMMA_MODES:
            raise ValueError(f"unknown gamma mode {self.gamma_mode!r}")
        if self.lipschitz_bound <= 0.0:
            raise ValueError("lipschitz_bound must be > 0")
        if self.learning_rate <= 0.0 or self.lr_final <= 0.0:
            raise ValueError("learning rates must be > 0")

    @property
    def plan_id(self) -> str:
        return f"{self.kind}-{self.gamma_mode}"


@dataclass
class Dataset:
    """Training arrays: stacked features z, with views x (commands) and the
    expert targets xbar."""

    z: np.ndarray  # (N, 7)
    xbar: np.ndarray  # (N, 2)

    @property
    def x(self) -> np.ndarray:
        return self.z[:, :N_COMMAND]

    @property
    def n(self) -> int:
        return self.z.shape[0]


def generate_dataset(
    n: int,
    seed: int,
    expert_cfg: ExpertConfig,
    vehicle: VehicleParams,
    dt: float,
) -> Dataset:
    """Uniformly sampled feature rows with expert labels.

    All 7 features are drawn uniformly from [-1, 1]; the expert command for
    each row is computed from the decoded physical state.  Deterministic per
    seed.
    """
    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, size=(n, N_FEATURES))
    xbar = np.empty((n, N_COMMAND))
    for i in range(n):
        xbar[i] = expert_label(z[i], expert_cfg, vehicle, dt)
    return Dataset(z=z, xbar=xbar)


class GatedModel:
    """Sector-bounded gated controller (rescaled or not)."""

    def __init__(self, kind: str, ctrl: ApecsController):
        self.kind = kind
        self.ctrl = ctrl

    def apply_env(self, x: np.ndarray, env: np.ndarray) -> np.ndarray:
        return apecs_forward(self.ctrl, x, env[..., 3:], env[..., :3])

    def apply_z(self, z: np.ndarray) -> np.ndarray:
        return self.apply_env(z[..., :N_COMMAND], z[..., N_COMMAND:])


class DirectModel:
    """Plain feed-forward command predictor (the unstructured baseline)."""

    kind = "f"

    def __init__(self, net: Network):
        self.net = net

    def apply_env(self, x: np.ndarray, env: np.ndarray) -> np.ndarray:
        return self.apply_z(np.concatenate([np.atleast_2d(x), np.atleast_2d(env)], axis=-1))

    def apply_z(self, z: np.ndarray) -> np.ndarray:
        return net_core.forward(self.net, z)


def model_to_doc(model, seed: int | None = None) -> dict:
    if isinstance(model, DirectModel):
        doc = net_core.network_to_doc(model.net, seed=seed)
    else:
        doc = controller_to_doc(model.ctrl, seed=seed)
    doc["model_kind"] = model.kind
    return doc


def load_model_doc(doc: dict):
    kind = doc["model_kind"]
    if kind == "f":
        return DirectModel(net_core.network_from_doc(doc))
    if kind in ("apecs", "apecs_nl"):
        return GatedModel(kind, controller_from_doc(doc))
    raise ValueError(f"unknown model kind {kind!r} in checkpoint")


def build_model(plan: ExperimentPlan, n_env: int = N_FEATURES - N_COMMAND):
    """Fresh model for a plan, seeded.

    For the rescaled kind the initial log-gain is chosen so the effective
    gate sits near ``plan.init_gain``: training then approaches the loss
    balance from the amplifying side, which lets both loss components fall
    from their initial values instead of trading off against a near-zero
    gate.  The log-gain is capped at log(lipschitz_bound) throughout.
    """
    dims = [N_COMMAND + n_env] + [plan.width] * plan.hidden_layers + [N_COMMAND]
    gate = GatePair(kind=plan.gate_kind, B=plan.gate_B)
    if plan.kind == "f":
        net = build_network(dims, activation="gelu", constraint_mode=net_core.UNCONSTRAINED, seed=plan.seed)
        return DirectModel(net)
    if plan.kind == "apecs_nl":
        net = build_network(dims, activation="gelu", constraint_mode=net_core.UNCONSTRAINED, seed=plan.seed)
        return GatedModel("apecs_nl", ApecsController(net=net, gate=gate, rescaled=False))
    net = build_network(
        dims,
        activation=plan.constrained_activation,
        constraint_mode=net_core.UNIT_LIPSCHITZ,
        seed=plan.seed,
    )
    ctrl = ApecsController(net=net, gate=gate, rescaled=True)
    gate_at_zero = float(gate.positive(0.0))
    target = plan.init_gain * controller_lipschitz_bound(ctrl) / gate_at_zero
    ctrl.alpha_scale = math.log(min(plan.lipschitz_bound, target))
    return GatedModel("apecs", ctrl)


@dataclass
class TrainReport:
    """Everything a run produced: losses per epoch, derived constants,
    certification numbers, and the closed-loop score."""

    plan: ExperimentPlan
    gamma: float
    alpha: float
    l_t_init: float
    alpha_scale_init: float | None
    loss_human: list = field(default_factory=list)
    loss_expert: list = field(default_factory=list)
    loss_total: list = field(default_factory=list)
    final_empirical_lipschitz: float | None = None
    rmse_m: float | None = None
    eval_aborted: bool = False
    final_layer_norms: list = field(default_factory=list)


def resolve_gamma(plan: ExperimentPlan, data: Dataset) -> tuple[float, float]:
    """(gamma, alpha) for a plan; alpha is estimated from the data either way."""
    alpha = estimate_alpha(data.x, data.xbar)
    if plan.gamma_mode == "gstar":
        return optimal_gamma(alpha), alpha
    return _FIXED_GAMMAS[plan.gamma_mode], alpha


def _loss_grad(x_hat, x, xbar, gamma):
    scale = 2.0 / x_hat.size
    return scale * (gamma * (x_hat - x) + (1.0 - gamma) * (x_hat - xbar))


class _ScalarAdam:
    def __init__(self):
        self.m = 0.0
        self.v = 0.0

    def step(self, value, grad, lr, beta1, beta2, eps, t):
        self.m = beta1 * self.m + (1.0 - beta1) * grad
        self.v = beta2 * self.v + (1.0 - beta2) * grad * grad
        m_hat = self.m / (1.0 - beta1**t)
        v_hat = self.v / (1.0 - beta2**t)
        return value - lr * m_hat / (math.sqrt(v_hat) + eps)


def train(plan: ExperimentPlan, data: Dataset, eval_ctx: "EvalContext | None" = None):
    """Full-batch Adam for ``plan.epochs`` epochs.

    Loss components are recorded at the parameters *before* each epoch's
    update, so index 0 is the initialization.  Returns (model, TrainReport).
    """
    if data.n == 0:
        raise ValueError("train: empty dataset")
    gamma, alpha = resolve_gamma(plan, data)
    # gamma = 0 is outside the initializer conditions' domain; use the fallback
    l_t_init = init_lipschitz(alpha, gamma) if gamma > 0.0 else FALLBACK_INIT_LIPSCHITZ
    model = build_model(plan)
    report = TrainReport(
        plan=plan,
        gamma=gamma,
        alpha=alpha,
        l_t_init=l_t_init,
        alpha_scale_init=model.ctrl.alpha_scale if plan.kind == "apecs" else None,
    )

    net = model.net if isinstance(model, DirectModel) else model.ctrl.net
    state = AdamState.zeros_like(net)
    alpha_adam = _ScalarAdam()
    log_bound = math.log(plan.lipschitz_bound)
    x, xbar, z = data.x, data.xbar, data.z
    # exponential step-size decay: full-batch Adam at a fixed rate keeps
    # wandering after convergence, which destabilizes the gated nets
    decay = plan.lr_final / plan.learning_rate
    span = max(plan.epochs - 1, 1)

    for epoch in range(plan.epochs):
        lr = plan.learning_rate * decay ** (epoch / span)
        x_hat = model.apply_z(z)
        losses = dual_loss(x_hat, x, xbar, gamma)
        if not math.isfinite(losses.l_total):
            raise TrainingDivergedError("loss is non-finite", epoch=epoch)
        report.loss_human.append(losses.l_human)
        report.loss_expert.append(losses.l_expert)
        report.loss_total.append(losses.l_total)

        grad = _loss_grad(x_hat, x, xbar, gamma)
        t = epoch + 1
        if isinstance(model, DirectModel):
            tape = net_core.backward(net, z, grad)
        else:
            tape, d_alpha = apecs_backward(model.ctrl, x, z[:, 2:5], z[:, 5:], grad)
            if model.ctrl.rescaled:
                if not math.isfinite(d_alpha):
                    raise TrainingDivergedError("non-finite gradients", epoch=epoch)
                new_alpha = alpha_adam.step(model.ctrl.alpha_scale, d_alpha, lr, 0.9, 0.999, 1e-8, t)
                model.ctrl.alpha_scale = min(new_alpha, log_bound)
        try:
            net_core.adam_step(net, tape, state, lr=lr, t=t)
        except TrainingDivergedError as err:
            raise TrainingDivergedError(str(err), epoch=epoch) from err

    report.final_layer_norms = [float(v) for v in net.layer_norms]
    if isinstance(model, GatedModel) and model.ctrl.rescaled:
        report.final_empirical_lipschitz = empirical_lipschitz(
            model.apply_env, n_pairs=100_000, seed=plan.seed
        )
    if eval_ctx is not None:
        trace, score = evaluate_closed_loop(model, eval_ctx)
        report.rmse_m = score
        report.eval_aborted = trace.aborted
    return model, report


def empirical_lipschitz(
    apply_env,
    n_pairs: int = 100_000,
    seed: int = 0,
    n_x: int = N_COMMAND,
    n_env: int = N_FEATURES - N_COMMAND,
    c: float = 1.0,
) -> float:
    """Sampled lower bound on the command-to-output Lipschitz constant.

    Draws command pairs at shared random environment features and takes the
    largest ratio ||f(x1) - f(x2)|| / ||x1 - x2||.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-c, c, size=(n_pairs, n_x))
    x2 = rng.uniform(-c, c, size=(n_pairs, n_x))
    env = rng.uniform(-1.0, 1.0, size=(n_pairs, n_env))
    y1 = np.atleast_2d(apply_env(x1, env))
    y2 = np.atleast_2d(apply_env(x2, env))
    num = np.linalg.norm(y1 - y2, axis=1)
    den = np.linalg.norm(x1 - x2, axis=1)
    ok = den > 1e-12
    return float(np.max(num[ok] / den[ok]))


@dataclass(frozen=True)
class EvalContext:
    """Everything a closed-loop run needs besides the model."""

    course: Course
    vehicle: VehicleParams
    expert_cfg: ExpertConfig
    novice_cfg: NoviceConfig
    dt: float = 0.1
    max_steps: int = 2000


def make_transform(model, course: Course, expert_cfg: ExpertConfig):
    """Wrap a model as a per-step command transform for the simulator."""

    def transform(cmd: Command, state) -> Command:
        env = environment_features(state, course, expert_cfg)
        out = model.apply_env(cmd.as_array()[None, :], env[None, :])[0]
        return Command(steer=float(out[0]), throttle=float(out[1]))

    return transform


def evaluate_closed_loop(model, ctx: EvalContext) -> tuple[RunTrace, float]:
    """Novice drives, the model (if any) transforms; returns (trace, RMSE).

    ``model=None`` evaluates the raw novice and ``model="expert"`` the raw
    expert; anything else is applied as a command transform.
    """
    if model == "expert":
        source = ExpertOperator(ctx.expert_cfg, ctx.vehicle, ctx.dt)
        transform = None
    else:
        source = NoviceOperator(ctx.novice_cfg)
        transform = None if model is None else make_transform(model, ctx.course, ctx.expert_cfg)
    trace = run_closed_loop(source, ctx.course, ctx.vehicle, ctx.dt, ctx.max_steps, transform=transform)
    return trace, rmse(trace)


def _sweep_one(args):
    plan, data, ctx, bound = args
    run_plan = replace(plan, lipschitz_bound=bound)
    try:
        _, report = train(run_plan, data, eval_ctx=ctx)
        return {
            "bound": bound,
            "rmse_m": report.rmse_m,
            "diverged": report.eval_aborted,
            "empirical_lipschitz": report.final_empirical_lipschitz,
        }
    except TrainingDivergedError as err:
        return {"bound": bound, "rmse_m": None, "diverged": True, "error": str(err)}


def lipschitz_sweep(
    bounds,
    plan: ExperimentPlan,
    data: Dataset,
    ctx: EvalContext,
    max_workers: int | None = None,
) -> list[dict]:
    """Train one rescaled controller per bound (shared seed) and score it.

    Runs are independent; ``max_workers`` (or the APECS_THREADS environment
    variable) caps the process pool.  Diverged runs are recorded and the
    sweep continues.
    """
    bounds = [float(b) for b in bounds]
    if not bounds or any(b <= 0.0 for b in bounds):
        raise ValueError("sweep bounds must be a non-empty list of positive numbers")
    if max_workers is None:
        env = os.environ.get("APECS_THREADS")
        max_workers = int(env) if env else min(len(bounds), os.cpu_count() or 1)
    jobs = [(plan, data, ctx, b) for b in bounds]
    if max_workers <= 1:
        return [_sweep_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_sweep_one, jobs))
