"""Minimal dense feed-forward networks with reverse-mode gradients.

Supports an optional per-layer spectral-norm constraint: in "unit-lipschitz"
mode every layer applies its weights pre-divided by their largest singular
value and uses an activation with slope at most 1, so the whole network is
1-Lipschitz by construction.  The network carries a certified Lipschitz
constant (product of effective layer norms and activation slopes) and its
bias, the forward value at the all-zeros input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "DenseLayer",
    "GradientTape",
    "InvalidInputError",
    "Network",
    "ShapeError",
    "TrainingDivergedError",
    "adam_step",
    "backward",
    "build_network",
    "forward",
    "forward_trace",
    "network_from_doc",
    "network_to_doc",
    "spectral_norm",
]

UNCONSTRAINED = "unconstrained"
UNIT_LIPSCHITZ = "unit-lipschitz"

# Max slope of exact (erf-based) gelu, attained at sqrt(2).  Rounded up one ulp
# so it is a valid upper bound.
GELU_LIPSCHITZ = 1.1289041451851548

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Input or gradient dimensions do not match the network."""


class InvalidInputError(ValueError):
    """Non-finite or structurally invalid numeric input."""


class TrainingDivergedError(RuntimeError):
    """Raised when gradients or losses stop being finite."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


def _gelu(v):
    return 0.5 * v * (1.0 + erf(v / _SQRT2))


def _gelu_prime(v):
    phi = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
    return 0.5 * (1.0 + erf(v / _SQRT2)) + v * phi


# name -> (f, f', Lipschitz constant of f)
ACTIVATIONS = {
    "identity": (lambda v: v, lambda v: np.ones_like(v), 1.0),
    "relu": (lambda v: np.maximum(v, 0.0), lambda v: (v > 0.0).astype(float), 1.0),
    "tanh": (np.tanh, lambda v: 1.0 - np.tanh(v) ** 2, 1.0),
    "gelu": (_gelu, _gelu_prime, GELU_LIPSCHITZ),
}

# Activations whose slope never exceeds 1; only these are allowed in
# unit-lipschitz mode (gelu overshoots 1 near sqrt(2)).
_UNIT_SLOPE_ACTIVATIONS = frozenset({"identity", "relu", "tanh"})


def spectral_norm(weights: np.ndarray, max_iters: int = 100, tol: float = 1e-9) -> float:
    """Largest singular value of ``weights``.

    Power iteration from the normalized all-ones vector (deterministic),
    stopped by the singular-pair residual ||W^T u - sigma v|| <= tol * sigma,
    which actually certifies the estimate; stagnation of the estimate alone
    does not, because near-degenerate spectra make progress per step
    arbitrarily slow.  If the certificate is not met within ``max_iters`` the
    exact dense 2-norm is returned instead, so the result is always safe to
    use as a normalization divisor.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.size == 0:
        raise InvalidInputError("spectral_norm expects a non-empty 2-d matrix")
    if not np.all(np.isfinite(w)):
        raise InvalidInputError("spectral_norm: matrix has non-finite entries")
    if max_iters < 1:
        raise InvalidInputError("spectral_norm: max_iters must be >= 1")

    m = w.shape[0]
    u = np.ones(m) / math.sqrt(m)
    v = None
    sigma = 0.0
    for _ in range(max_iters):
        wtu = w.T @ u
        if v is not None:
            resid = wtu - sigma * v
            if math.sqrt(float(resid @ resid)) <= tol * sigma:
                return sigma
        nv = math.sqrt(float(wtu @ wtu))
        if nv == 0.0:
            # u landed in the null space; restart from the largest row
            # (deterministic); a second failure means the matrix is zero
            u = np.zeros(m)
            u[int(np.argmax(np.einsum("ij,ij->i", w, w)))] = 1.0
            wtu = w.T @ u
            nv = math.sqrt(float(wtu @ wtu))
            if nv == 0.0:
                return 0.0
        v = wtu / nv
        wv = w @ v
        sigma = math.sqrt(float(wv @ wv))
        if sigma == 0.0:
            return 0.0
        u = wv / sigma
    return float(np.linalg.norm(w, 2))


@dataclass
class DenseLayer:
    """One affine layer followed by an elementwise activation."""

    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Network:
    """Ordered dense layers plus cached certification quantities.

    ``layer_norms`` holds the spectral norm of each layer's raw weight matrix
    as of the last :func:`refresh`; in unit-lipschitz mode it is the divisor
    applied to the weights at evaluation time.  ``cached_lipschitz`` is the
    product over layers of (spectral norm of the *effective* weights x
    activation slope bound) and ``cached_bias`` the forward value at zero.
    Call ``refresh()`` after mutating parameters; ``adam_step`` does so.
    """

    layers: list[DenseLayer]
    constraint_mode: str = UNCONSTRAINED
    layer_norms: list[float] = field(default_factory=list)
    cached_lipschitz: float = 0.0
    cached_bias: np.ndarray | None = None

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def divisor(self, index: int) -> float:
        if self.constraint_mode == UNIT_LIPSCHITZ:
            return max(self.layer_norms[index], 1e-300)
        return 1.0

    def effective_weights(self, index: int) -> np.ndarray:
        if self.constraint_mode == UNCONSTRAINED:
            return self.layers[index].weights
        return self.layers[index].weights / self.divisor(index)

    def refresh(self, update_norms: bool = True) -> None:
        """Recompute cached normalizers, Lipschitz constant, and bias.

        With ``update_norms=False`` only the bias cache is recomputed and the
        spectral estimates are kept frozen; gradient checks rely on this to
        probe exactly the function ``backward`` differentiates.
        """
        for layer in self.layers:
            if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.bias))):
                raise TrainingDivergedError("network parameters are non-finite")
        if update_norms:
            self.layer_norms = [spectral_norm(layer.weights) for layer in self.layers]
            lip = 1.0
            for i, layer in enumerate(self.layers):
                sigma_eff = self.layer_norms[i] / self.divisor(i)
                lip *= sigma_eff * ACTIVATIONS[layer.activation][2]
            self.cached_lipschitz = lip
        self.cached_bias = forward(self, np.zeros(self.in_dim))

    def bias_norm(self) -> float:
        """Largest absolute component of the forward value at zero."""
        return float(np.max(np.abs(self.cached_bias)))


def build_network(
    dims: list[int],
    activation: str = "tanh",
    constraint_mode: str = UNCONSTRAINED,
    seed: int = 0,
    output_activation: str = "identity",
) -> Network:
    """Glorot-uniform initialized network; ``dims`` includes input and output."""
    if len(dims) < 2:
        raise InvalidInputError("need at least an input and an output dimension")
    if activation not in ACTIVATIONS or output_activation not in ACTIVATIONS:
        raise InvalidInputError(f"unknown activation {activation!r}")
    if constraint_mode not in (UNCONSTRAINED, UNIT_LIPSCHITZ):
        raise InvalidInputError(f"unknown constraint mode {constraint_mode!r}")
    if constraint_mode == UNIT_LIPSCHITZ:
        for act in (activation, output_activation):
            if act not in _UNIT_SLOPE_ACTIVATIONS:
                raise InvalidInputError(
                    f"activation {act!r} has slope > 1 and cannot certify a unit-lipschitz layer"
                )
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = output_activation if i == len(dims) - 2 else activation
        layers.append(DenseLayer(weights=w, bias=np.zeros(fan_out), activation=act))
    net = Network(layers=layers, constraint_mode=constraint_mode)
    net.refresh()
    return net


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ShapeError(f"{what}: expected vectors of length {dim}, got shape {np.shape(x)}")
    return arr, single


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Evaluate the network; accepts a vector or an (N, in_dim) batch."""
    a, single = _as_batch(x, net.in_dim, "forward input")
    for i, layer in enumerate(net.layers):
        z = a @ net.effective_weights(i).T + layer.bias
        a = ACTIVATIONS[layer.activation][0](z)
    return a[0] if single else a


def forward_trace(net: Network, x: np.ndarray):
    """Forward pass that records pre- and post-activation values per layer."""
    a, single = _as_batch(x, net.in_dim, "forward input")
    pre, post = [], [a]
    for i, layer in enumerate(net.layers):
        z = a @ net.effective_weights(i).T + layer.bias
        a = ACTIVATIONS[layer.activation][0](z)
        pre.append(z)
        post.append(a)
    return (a[0] if single else a), (pre, post, single)


@dataclass
class GradientTape:
    """Per-parameter gradients mirroring the owning network's shape."""

    d_weights: list[np.ndarray]
    d_bias: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Network) -> "GradientTape":
        return cls(
            d_weights=[np.zeros_like(layer.weights) for layer in net.layers],
            d_bias=[np.zeros_like(layer.bias) for layer in net.layers],
        )

    def add_(self, other: "GradientTape") -> "GradientTape":
        for a, b in zip(self.d_weights, other.d_weights):
            a += b
        for a, b in zip(self.d_bias, other.d_bias):
            a += b
        return self

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.d_weights) and all(
            np.all(np.isfinite(g)) for g in self.d_bias
        )


def backward(net: Network, x: np.ndarray, output_grad: np.ndarray) -> GradientTape:
    """Gradients of ``output_grad . forward(net, x)`` w.r.t. all parameters.

    Batched inputs give the gradient summed over the batch.  Spectral
    normalization divisors are treated as constants, so the result is the
    exact gradient of the forward map with the cached normalizers frozen.
    """
    _, (pre, post, single) = forward_trace(net, x)
    g, g_single = _as_batch(output_grad, net.out_dim, "output_grad")
    if single != g_single or g.shape[0] != post[0].shape[0]:
        raise ShapeError("output_grad batch shape does not match the input batch")

    tape = GradientTape.zeros_like(net)
    delta = g
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        delta = delta * ACTIVATIONS[layer.activation][1](pre[i])
        # gradient w.r.t. raw weights: effective weights are raw / divisor
        tape.d_weights[i] = (delta.T @ post[i]) / net.divisor(i)
        tape.d_bias[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ net.effective_weights(i)
    return tape


@dataclass
class AdamState:
    """First/second moment buffers, shape-congruent with a network."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_bias: list[np.ndarray]
    v_bias: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Network) -> "AdamState":
        return cls(
            m_weights=[np.zeros_like(layer.weights) for layer in net.layers],
            v_weights=[np.zeros_like(layer.weights) for layer in net.layers],
            m_bias=[np.zeros_like(layer.bias) for layer in net.layers],
            v_bias=[np.zeros_like(layer.bias) for layer in net.layers],
        )


def _adam_update(param, grad, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def adam_step(
    net: Network,
    tape: GradientTape,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
) -> tuple[Network, AdamState]:
    """Standard bias-corrected Adam update, in place; refreshes the caches."""
    if t < 1:
        raise InvalidInputError("adam_step: step index t must be >= 1")
    if not tape.is_finite():
        raise TrainingDivergedError("non-finite gradients")
    for i, layer in enumerate(net.layers):
        _adam_update(layer.weights, tape.d_weights[i], state.m_weights[i], state.v_weights[i], lr, beta1, beta2, eps, t)
        _adam_update(layer.bias, tape.d_bias[i], state.m_bias[i], state.v_bias[i], lr, beta1, beta2, eps, t)
    net.refresh()
    return net, state


def network_to_doc(net: Network, seed: int | None = None) -> dict:
    """Plain-data checkpoint document (row-major weights)."""
    return {
        "layers": [
            {
                "rows": layer.out_dim,
                "cols": layer.in_dim,
                "weights": [float(v) for v in layer.weights.ravel()],
                "bias": [float(v) for v in layer.bias],
                "activation": layer.activation,
            }
            for layer in net.layers
        ],
        "constraint_mode": net.constraint_mode,
        "seed": seed,
    }


def network_from_doc(doc: dict) -> Network:
    layers = []
    for spec in doc["layers"]:
        rows, cols = int(spec["rows"]), int(spec["cols"])
        w = np.array(spec["weights"], dtype=float).reshape(rows, cols)
        b = np.array(spec["bias"], dtype=float)
        if b.shape != (rows,):
            raise ShapeError("checkpoint bias length does not match rows")
        if spec["activation"] not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {spec['activation']!r} in checkpoint")
        layers.append(DenseLayer(weights=w, bias=b, activation=spec["activation"]))
    for prev, nxt in zip(layers[:-1], layers[1:]):
        if nxt.in_dim != prev.out_dim:
            raise ShapeError("checkpoint layers are not shape-compatible")
    net = Network(layers=layers, constraint_mode=doc["constraint_mode"])
    net.refresh()
    return net
