"""Dense-network substrate: MLP forward/backward, Adam, losses, Gaussian head.

Everything is float64 numpy with hand-written reverse-mode gradients; the
computation graph is fixed (chains of affine layers + ReLU/Tanh), so no
general autodiff is needed.  All gradients are validated against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MLPSpec:
    """Layer sizes (input first, output last) and hidden activation."""

    layer_sizes: tuple[int, ...]
    activation: str = "relu"  # applied to hidden layers only

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError(f"MLPSpec needs at least 2 layer sizes, got {self.layer_sizes}")
        if any(int(s) < 1 for s in self.layer_sizes):
            raise ValueError(f"MLPSpec layer sizes must be >= 1, got {self.layer_sizes}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]


class MLPParams:
    """Per-layer weight matrices (out x in) and bias vectors."""

    __slots__ = ("spec", "weights", "biases")

    def __init__(self, spec: MLPSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.spec = spec
        self.weights = weights
        self.biases = biases

    def copy(self) -> "MLPParams":
        return MLPParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


class MLPGrads(MLPParams):
    """Same layout as MLPParams; holds gradients."""


@dataclass
class MLPCache:
    """Activation record from a forward pass, consumed by mlp_backward."""

    params: MLPParams
    inputs: list[np.ndarray]   # input to each affine layer (post-activation)
    preacts: list[np.ndarray]  # pre-activation outputs of hidden layers
    squeeze: bool              # True if the forward input was 1-D


def mlp_init(spec: MLPSpec, seed) -> MLPParams:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.

    ``seed`` is an int or a numpy Generator; results are deterministic
    given the same seed.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(spec, weights, biases)


def mlp_zeros_like(params: MLPParams) -> MLPGrads:
    return MLPGrads(
        params.spec,
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


def mlp_forward_nograd(params: MLPParams, x: np.ndarray) -> np.ndarray:
    """Forward pass without building a cache (rollout/evaluation hot path).

    Issues the exact BLAS call sequence of mlp_forward (vectors go through
    the same (1, d) matmul shape), so outputs are bit-identical to the
    caching path.
    """
    tanh = params.spec.activation == "tanh"
    n_layers = len(params.weights)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if l < n_layers - 1:
            h = np.tanh(h) if tanh else np.maximum(h, 0.0)
    return h[0] if squeeze else h


def mlp_forward(params: MLPParams, x: np.ndarray) -> tuple[np.ndarray, MLPCache]:
    """Forward pass; accepts a vector (d,) or a batch (B, d).

    Returns the output and a cache sufficient for mlp_backward.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[-1] != params.spec.in_dim:
        raise ValueError(f"input dim {h.shape[-1]} != spec input dim {params.spec.in_dim}")
    inputs, preacts = [], []
    n_layers = len(params.weights)
    tanh = params.spec.activation == "tanh"
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        if l < n_layers - 1:
            preacts.append(z)
            h = np.tanh(z) if tanh else np.maximum(z, 0.0)
        else:
            h = z
    out = h[0] if squeeze else h
    return out, MLPCache(params, inputs, preacts, squeeze)


def mlp_backward(
    params: MLPParams, cache: MLPCache, grad_output: np.ndarray
) -> tuple[MLPGrads, np.ndarray]:
    """Exact reverse-mode gradients of (output . grad_output).

    Batched inputs accumulate parameter gradients over the batch; the
    caller controls scaling through grad_output.
    """
    if cache.params is not params:
        raise ValueError("cache does not belong to these params (stale or mismatched)")
    g = np.asarray(grad_output, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], params.spec.out_dim):
        raise ValueError(f"grad_output shape {grad_output.shape} mismatches forward output")
    grads = mlp_zeros_like(params)
    tanh = params.spec.activation == "tanh"
    n_layers = len(params.weights)
    for l in range(n_layers - 1, -1, -1):
        grads.weights[l] += g.T @ cache.inputs[l]
        grads.biases[l] += g.sum(axis=0)
        g = g @ params.weights[l]
        if l > 0:
            z = cache.preacts[l - 1]
            g = g * (1.0 - np.tanh(z) ** 2) if tanh else g * (z > 0.0)
    grad_input = g[0] if cache.squeeze else g
    return grads, grad_input


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators mirroring MLPParams shapes."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(arrays: list[np.ndarray], lr: float = 3e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(arrays: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """Standard bias-corrected Adam update, in place on ``arrays``."""
    if len(arrays) != len(state.m) or len(grads) != len(state.m):
        raise ValueError("adam_step: array/grad/state length mismatch")
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise ValueError(f"adam_step: non-finite gradient in array {k} (shape {g.shape})")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        a -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad


# ---------------------------------------------------------------------------
# Diagonal Gaussian policy head
# ---------------------------------------------------------------------------

def clamp_log_std(log_std: np.ndarray) -> np.ndarray:
    return np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)


@dataclass
class GaussianHead:
    """Diagonal Gaussian with state-independent (learned) log_std."""

    mean: np.ndarray
    log_std: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("GaussianHead: non-finite mean")
        self.log_std = clamp_log_std(np.asarray(self.log_std, dtype=np.float64))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.exp(self.log_std) * rng.standard_normal(self.mean.shape)

    def log_prob(self, action: np.ndarray) -> float:
        return float(gaussian_log_prob(self.mean, self.log_std, action))

    def entropy(self) -> float:
        return float(gaussian_entropy(self.log_std))


def gaussian_log_prob(mean, log_std, action) -> np.ndarray:
    """Summed per-dimension log density; batched over leading axes."""
    mean = np.asarray(mean, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    z = (action - mean) / np.exp(log_std)
    per_dim = -0.5 * z * z - log_std - 0.5 * _LOG_2PI
    return per_dim.sum(axis=-1)


def gaussian_entropy(log_std) -> float:
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(0.5 * (1.0 + _LOG_2PI) + log_std))


def gaussian_log_prob_grads(mean, log_std, action) -> tuple[np.ndarray, np.ndarray]:
    """d log_prob / d mean and d log_prob / d log_std (batched)."""
    mean = np.asarray(mean, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    inv_var = np.exp(-2.0 * log_std)
    diff = action - mean
    d_mean = diff * inv_var
    d_log_std = diff * diff * inv_var - 1.0
    return d_mean, d_log_std
