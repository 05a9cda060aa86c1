"""Tiny ReLU MLPs with hand-written backprop, the sigmoid phase regulator and
Adam.

The networks used by the meta-learner have one hidden layer (Linear-ReLU-
Linear). Extra hidden layers are supported for the network-depth sweep; the
single-hidden-layer case runs through the compiled kernels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpParams:
    """Layer weights (out x in) and biases, input layer first."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, hidden: int = 200, depth: int = 1):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
        sizes = [n_in] + [hidden] * depth + [n_out]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, n_in: int, n_out: int, hidden: int = 200, depth: int = 1):
        sizes = [n_in] + [hidden] * depth + [n_out]
        return cls(
            [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
            [np.zeros(o) for o in sizes[1:]],
        )

    @property
    def W1(self):
        return self.weights[0]

    @property
    def b1(self):
        return self.biases[0]

    @property
    def W2(self):
        return self.weights[-1]

    @property
    def b2(self):
        return self.biases[-1]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "MlpParams":
        half = len(arrays) // 2
        return cls(list(arrays[:half]), list(arrays[half:]))

    def map(self, fn) -> "MlpParams":
        return MlpParams.from_arrays([fn(a) for a in self.arrays()])

    def copy(self) -> "MlpParams":
        return self.map(np.copy)

    def named(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            out[f"{prefix}W{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out


@dataclass
class MlpCache:
    x: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]


def _forward(params: MlpParams, x: np.ndarray):
    if x.shape[1] != params.n_in:
        raise ValueError(f"input length {x.shape[1]} != network input size {params.n_in}")
    if len(params.weights) == 2:
        y, z, a = _kernels.active.mlp_forward(
            params.weights[0], params.biases[0], params.weights[1], params.biases[1], x
        )
        return y, MlpCache(x, [z], [a])
    pre, post = [], []
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ w.T + b
        h = np.maximum(z, 0.0)
        pre.append(z)
        post.append(h)
    return h @ params.weights[-1].T + params.biases[-1], MlpCache(x, pre, post)


def mlp_forward(params: MlpParams, x: np.ndarray, return_cache: bool = False):
    """Evaluate the network on a vector or a (batch, in) array."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    y, cache = _forward(params, np.ascontiguousarray(np.atleast_2d(arr)))
    if single:
        y = y[0]
    return (y, cache) if return_cache else y


def mlp_backward_cached(params: MlpParams, cache: MlpCache, upstream: np.ndarray):
    up = np.ascontiguousarray(np.atleast_2d(upstream), dtype=float)
    if len(params.weights) == 2:
        gW1, gb1, gW2, gb2, gx = _kernels.active.mlp_backward(
            params.weights[0], params.weights[1], cache.x, cache.pre[0], cache.post[0], up
        )
        return MlpParams([gW1, gW2], [gb1, gb2]), gx
    gws, gbs = [], []
    g = up
    inputs = [cache.x, *cache.post]
    for layer in range(len(params.weights) - 1, -1, -1):
        gws.append(g.T @ inputs[layer])
        gbs.append(g.sum(axis=0))
        g = g @ params.weights[layer]
        if layer > 0:
            g = g * (cache.pre[layer - 1] > 0.0)
    return MlpParams(gws[::-1], gbs[::-1]), g


def mlp_backward(params: MlpParams, x: np.ndarray, upstream: np.ndarray):
    """Vector-Jacobian products of :func:`mlp_forward`.

    Returns parameter gradients (summed over the batch) and the gradient
    with respect to the input, shaped like ``x``. ReLU'(0) is taken as 0.
    """
    arr = np.asarray(x, dtype=float)
    _, cache = mlp_forward(params, arr, return_cache=True)
    grads, gx = mlp_backward_cached(params, cache, upstream)
    return grads, (gx[0] if arr.ndim == 1 else gx)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegulatorSpec:
    lam: float = 2.0 * np.pi

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("regulator amplification must be nonnegative")


_S_LO = 2.0**-52
_S_HI = 1.0 - 2.0**-52


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def regulator(delta_theta_raw, spec: RegulatorSpec = RegulatorSpec()) -> np.ndarray:
    """Map raw phase increments into the open interval (0, lam).

    The sigmoid is clipped a hair inside (0, 1) so that saturated inputs
    still land strictly inside the interval.
    """
    return spec.lam * np.clip(sigmoid(delta_theta_raw), _S_LO, _S_HI)


def regulator_grad(delta_theta_raw, spec: RegulatorSpec = RegulatorSpec()) -> np.ndarray:
    s = np.clip(sigmoid(delta_theta_raw), _S_LO, _S_HI)
    return spec.lam * s * (1.0 - s)


# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    t: int = 0

    @classmethod
    def fresh(cls, like: MlpParams) -> "AdamState":
        return cls(like.map(np.zeros_like), like.map(np.zeros_like), 0)


def adam_step(state: AdamState, grads: MlpParams, params: MlpParams, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
    """One bias-corrected Adam descent step. Inputs are not modified."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    t = state.t + 1
    new_m, new_v, new_p = [], [], []
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for m, v, g, p in zip(state.m.arrays(), state.v.arrays(), grads.arrays(), params.arrays()):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
    return (
        AdamState(MlpParams.from_arrays(new_m), MlpParams.from_arrays(new_v), t),
        MlpParams.from_arrays(new_p),
    )


def trajectory_grads(channel, theta_init, x_init, params_pn, params_tn, cfg, hyper, w_inherited=None):
    """Loss of one unrolled outer iteration and its parameter gradients.

    Thin wrapper over :func:`rismeta.trajectory.unroll`; see there for the
    exact computation. Returns ``(grad_pn, grad_tn, loss)``.
    """
    from .trajectory import unroll

    traj = unroll(channel, cfg, hyper, theta_init, x_init, params_pn, params_tn, w_inherited=w_inherited)
    g_pn, g_tn = traj.backward()
    return g_pn, g_tn, traj.loss
