"""Feed-forward network core: parameters, forward/backward passes, Adam, and
a finite-difference gradient checker.

Everything is plain float64 numpy; training is deterministic for a given
seed. The same machinery backs the per-playlist MLP baseline and the phi/rho
networks of the set-level classifier.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh")


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; the configuration is recorded as failed."""


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, numerically stabilized."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class MlpParameters:
    """Per-layer weights/biases of a fully connected network."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ValueError(
                    f"layer {i} output dim {self.weights[i].shape[1]} does not match "
                    f"layer {i + 1} input dim {self.weights[i + 1].shape[0]}"
                )
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValueError("bias shape must match layer output dim")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("parameters must be finite")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Flat list of parameter arrays, weights then bias per layer."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParameters":
        return MlpParameters(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation
        )


def init_mlp(sizes: list[int], activation: str, rng: np.random.Generator) -> MlpParameters:
    """He initialization for relu, Glorot for tanh; zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if activation == "relu":
            scale = np.sqrt(2.0 / fan_in)
        else:
            scale = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParameters(weights, biases, activation)


def mlp_forward(
    params: MlpParameters, X: np.ndarray, activate_last: bool = False
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Forward pass; returns (output, caches) with per-layer (input, pre-activation)."""
    out = np.asarray(X, dtype=np.float64)
    caches = []
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = out @ w + b
        caches.append((out, z))
        out = _activate(z, params.activation) if (i < last or activate_last) else z
    return out, caches


@dataclass
class MlpGradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def mlp_backward(
    params: MlpParameters,
    caches: list[tuple[np.ndarray, np.ndarray]],
    grad_out: np.ndarray,
    activate_last: bool = False,
) -> tuple[MlpGradients, np.ndarray]:
    """Backpropagate grad_out through the network; also returns d loss / d input."""
    gw = [np.empty(0)] * params.n_layers
    gb = [np.empty(0)] * params.n_layers
    grad = grad_out
    last = params.n_layers - 1
    for i in range(last, -1, -1):
        layer_in, z = caches[i]
        if i < last or activate_last:
            grad = grad * _activate_grad(z, params.activation)
        gw[i] = layer_in.T @ grad
        gb[i] = grad.sum(axis=0)
        grad = grad @ params.weights[i].T
    return MlpGradients(gw, gb), grad


def cross_entropy(
    probs: np.ndarray, y: np.ndarray, sample_weights: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax outputs and its gradient w.r.t. the logits."""
    n = len(y)
    if sample_weights is None:
        sample_weights = np.ones(n)
    w = sample_weights / sample_weights.sum()
    picked = np.clip(probs[np.arange(n), y], 1e-300, None)
    loss = float(-(w * np.log(picked)).sum())
    grad_logits = (probs - one_hot(y, probs.shape[1])) * w[:, None]
    return loss, grad_logits


class Adam:
    """Adam optimizer over a fixed list of parameter arrays (updated in place)."""

    def __init__(
        self,
        arrays: list[np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            a -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def gradient_check(
    arrays: list[np.ndarray],
    loss_fn,
    analytic: list[np.ndarray],
    step: float = 1e-5,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn`` must read the (mutated in place) ``arrays``. Intended for tiny
    models; cost is two loss evaluations per parameter.
    """
    worst = 0.0
    for arr, grad in zip(arrays, analytic):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_fn()
            flat[i] = orig - step
            minus = loss_fn()
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * step)
            denom = max(abs(gflat[i]) + abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
