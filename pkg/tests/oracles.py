"""Independent reference implementations used only to check the package.

Each oracle deliberately takes a different computational route than the code
under test: the SVD here is one-sided Jacobi (vs power iteration), the net
evaluator is a scalar straight-line interpreter (vs vectorized matmuls), the
losses are Monte-Carlo estimates (vs closed forms), and gradients come from
central finite differences (vs reverse mode).
"""

from __future__ import annotations

import math

import numpy as np


def jacobi_sigma_max(a: np.ndarray, sweeps: int = 60, tol: float = 1e-14) -> float:
    """Largest singular value via one-sided Jacobi column orthogonalization."""
    u = np.array(a, dtype=float, copy=True)
    if u.shape[0] < u.shape[1]:
        u = u.T.copy()
    n = u.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = float(u[:, p] @ u[:, q])
                app = float(u[:, p] @ u[:, p])
                aqq = float(u[:, q] @ u[:, q])
                if app * aqq > 0.0:
                    off = max(off, abs(apq) / math.sqrt(app * aqq))
                if apq == 0.0:
                    continue
                tau = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                col_p = u[:, p].copy()
                u[:, p] = c * col_p - s * u[:, q]
                u[:, q] = s * col_p + c * u[:, q]
        if off < tol:
            break
    return math.sqrt(max(float(u[:, j] @ u[:, j]) for j in range(n)))


def straight_line_net(layer_data, x):
    """Scalar interpreter: layer_data is [(weights, bias, act_name), ...]."""

    def act(name, v):
        if name == "identity":
            return v
        if name == "relu":
            return v if v > 0.0 else 0.0
        if name == "tanh":
            return math.tanh(v)
        if name == "gelu":
            return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))
        raise ValueError(name)

    values = list(x)
    for weights, bias, name in layer_data:
        nxt = []
        for row, b in zip(weights, bias):
            acc = b
            for w, v in zip(row, values):
                acc += w * v
            nxt.append(act(name, acc))
        values = nxt
    return np.array(values)


def fd_gradient(f, arrays, eps: float = 1e-6, refresh=None):
    """Central finite differences of scalar ``f()`` w.r.t. each array in place.

    ``refresh``, when given, is called after every in-place perturbation (used
    to rebuild caches the forward pass depends on).
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            if refresh:
                refresh()
            fp = f()
            arr[idx] = orig - eps
            if refresh:
                refresh()
            fm = f()
            arr[idx] = orig
            if refresh:
                refresh()
            g[idx] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def mc_worst_expert_loss(alpha: float, l_t: float, n: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo E[(clip(l_t x) + alpha)^2] over x ~ U(0, 1)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    y = np.clip(l_t * x, -1.0, 1.0)
    return float(np.mean((y + alpha) ** 2))


def mc_worst_human_loss(l_t: float, n: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo E[(clip(l_t x) - x)^2] over x ~ U(0, 1)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    y = np.clip(l_t * x, -1.0, 1.0)
    return float(np.mean((y - x) ** 2))


def reference_adam(params, grads_fn, steps, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar-sequence Adam for cross-checking trajectories."""
    p = list(params)
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    history = [tuple(p)]
    for t in range(1, steps + 1):
        g = grads_fn(p)
        for i in range(len(p)):
            m[i] = beta1 * m[i] + (1 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i]
            m_hat = m[i] / (1 - beta1**t)
            v_hat = v[i] / (1 - beta2**t)
            p[i] = p[i] - lr * m_hat / (math.sqrt(v_hat) + eps)
        history.append(tuple(p))
    return history


def sampled_map_slope(f, n_x: int, n_pairs: int, seed: int, c: float = 1.0) -> float:
    """Max finite-difference slope of ``f`` over random command pairs."""
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-c, c, size=(n_pairs, n_x))
    x2 = rng.uniform(-c, c, size=(n_pairs, n_x))
    y1 = f(x1)
    y2 = f(x2)
    num = np.linalg.norm(np.atleast_2d(y1) - np.atleast_2d(y2), axis=1)
    den = np.linalg.norm(x1 - x2, axis=1)
    ok = den > 1e-12
    return float(np.max(num[ok] / den[ok]))
