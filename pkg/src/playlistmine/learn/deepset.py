"""Set-level classifier: encode each playlist with a shared MLP (phi), pool
the embeddings with average, max and summation, concatenate the three pooled
vectors, and classify the result with a second MLP (rho) under softmax.

The pooling makes the model permutation invariant; to make it bit-for-bit
reproducible the rows of each input set are first put in a canonical
(lexicographic) order, and the max pool routes its gradient to the
lowest-index maximizer on ties.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..metrics import weighted_f1
from .nn import (
    Adam,
    MlpParameters,
    TrainingDivergedError,
    cross_entropy,
    init_mlp,
    mlp_backward,
    mlp_forward,
    softmax,
)

AGGREGATORS = ("average", "max", "sum")


@dataclass
class DeepSetParameters:
    """Encoder and head networks; the head consumes the 3 pooled embeddings."""

    phi: MlpParameters
    rho: MlpParameters

    def __post_init__(self) -> None:
        phi_out = self.phi.sizes[-1]
        rho_in = self.rho.sizes[0]
        if rho_in != 3 * phi_out:
            raise ValueError(
                f"rho input dim must be 3 x phi output dim; got {rho_in} vs 3*{phi_out}"
            )

    @property
    def n_classes(self) -> int:
        return self.rho.sizes[-1]

    def arrays(self) -> list[np.ndarray]:
        return self.phi.arrays() + self.rho.arrays()

    def copy(self) -> "DeepSetParameters":
        return DeepSetParameters(self.phi.copy(), self.rho.copy())


def canonical_set_order(X: np.ndarray) -> np.ndarray:
    """Rows sorted lexicographically, so any permutation of a set maps to one
    fixed summation order."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"a set must be a 2-D matrix, got shape {X.shape}")
    order = np.lexsort(X.T[::-1])
    return X[order]


def phi_sizes_for(input_dim: int, n_layers: int) -> list[int]:
    """Funnel encoder shapes: 1 -> (d, 64), 2 -> (d, 64, 32), 3 -> (d, 64, 32, 16)."""
    if n_layers not in (1, 2, 3):
        raise ValueError(f"phi layer count must be 1..3, got {n_layers}")
    return [input_dim] + [64, 32, 16][:n_layers]


def rho_sizes_for(phi_out: int, n_layers: int, n_classes: int) -> list[int]:
    """Head shapes from 3*phi_out down to the class count, halving per layer."""
    if n_layers not in (1, 2, 3):
        raise ValueError(f"rho layer count must be 1..3, got {n_layers}")
    start = 3 * phi_out
    hidden = [max(n_classes, start // (2 ** i)) for i in range(1, n_layers)]
    return [start] + hidden + [n_classes]


def init_deepset(
    input_dim: int,
    n_classes: int,
    phi_layers: int,
    rho_layers: int,
    activation: str,
    rng: np.random.Generator,
    phi_hidden: tuple[int, ...] | None = None,
) -> DeepSetParameters:
    if phi_hidden is not None:
        phi_size_list = [input_dim, *phi_hidden]
    else:
        phi_size_list = phi_sizes_for(input_dim, phi_layers)
    phi = init_mlp(phi_size_list, activation, rng)
    rho = init_mlp(rho_sizes_for(phi_size_list[-1], rho_layers, n_classes), activation, rng)
    return DeepSetParameters(phi, rho)


@dataclass
class _ForwardCache:
    Z: np.ndarray
    phi_caches: list
    segments: list[tuple[int, int]]
    embeddings: np.ndarray
    rho_caches: list
    probs: np.ndarray


def _forward_stacked(
    params: DeepSetParameters, X: np.ndarray, segments: list[tuple[int, int]]
) -> _ForwardCache:
    """Forward pass over several sets stacked into one matrix."""
    Z, phi_caches = mlp_forward(params.phi, X, activate_last=True)
    m = Z.shape[1]
    E = np.empty((len(segments), 3 * m))
    for u, (start, end) in enumerate(segments):
        seg = Z[start:end]
        E[u, :m] = seg.mean(axis=0)
        E[u, m : 2 * m] = seg.max(axis=0)
        E[u, 2 * m :] = seg.sum(axis=0)
    logits, rho_caches = mlp_forward(params.rho, E, activate_last=False)
    return _ForwardCache(Z, phi_caches, segments, E, rho_caches, softmax(logits))


def _backward_stacked(
    params: DeepSetParameters, cache: _ForwardCache, grad_logits: np.ndarray
) -> list[np.ndarray]:
    """Backpropagate through rho, the three pools, and phi."""
    rho_grads, grad_E = mlp_backward(params.rho, cache.rho_caches, grad_logits)
    m = cache.Z.shape[1]
    grad_Z = np.zeros_like(cache.Z)
    for u, (start, end) in enumerate(cache.segments):
        n = end - start
        seg = cache.Z[start:end]
        grad_Z[start:end] += grad_E[u, :m] / n          # average pool
        argmax_rows = seg.argmax(axis=0)                # lowest index on ties
        grad_Z[start + argmax_rows, np.arange(m)] += grad_E[u, m : 2 * m]
        grad_Z[start:end] += grad_E[u, 2 * m :]          # sum pool
    phi_grads, _ = mlp_backward(params.phi, cache.phi_caches, grad_Z, activate_last=True)
    return phi_grads.arrays() + rho_grads.arrays()


def stack_sets(sets: list[np.ndarray]) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Canonicalize each set's row order and stack into one matrix."""
    ordered = [canonical_set_order(s) for s in sets]
    if any(s.shape[0] == 0 for s in ordered):
        raise ValueError("every set must be non-empty")
    segments = []
    start = 0
    for s in ordered:
        segments.append((start, start + s.shape[0]))
        start += s.shape[0]
    return np.concatenate(ordered, axis=0), segments


def deepset_forward(params: DeepSetParameters, X_set: np.ndarray) -> np.ndarray:
    """Class probability distribution for one set of playlist vectors."""
    X, segments = stack_sets([np.atleast_2d(X_set)])
    return _forward_stacked(params, X, segments).probs[0]


def deepset_predict_proba(params: DeepSetParameters, sets: list[np.ndarray]) -> np.ndarray:
    X, segments = stack_sets(sets)
    return _forward_stacked(params, X, segments).probs


def deepset_loss_and_grads(
    params: DeepSetParameters, sets: list[np.ndarray], y: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over the sets plus gradients for every parameter
    array (phi then rho, in ``DeepSetParameters.arrays()`` order)."""
    X, segments = stack_sets(sets)
    cache = _forward_stacked(params, X, segments)
    loss, grad_logits = cross_entropy(cache.probs, np.asarray(y, dtype=np.int64))
    return loss, _backward_stacked(params, cache, grad_logits)


class DeepSetClassifier:
    """Trainable wrapper: Adam over user mini-batches with early stopping on
    validation weighted F1 (patience 20, at most 200 epochs)."""

    def __init__(
        self,
        phi_layers: int = 2,
        rho_layers: int = 1,
        activation: str = "relu",
        lr: float = 0.001,
        batch_size: int = 32,
        max_epochs: int = 200,
        patience: int = 20,
        seed: int = 0,
        phi_hidden: tuple[int, ...] | None = None,
    ) -> None:
        self.phi_layers = phi_layers
        self.rho_layers = rho_layers
        self.activation = activation
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.phi_hidden = phi_hidden
        self.params: DeepSetParameters | None = None
        self.n_classes = 0
        self.n_epochs_ = 0
        self.best_val_f1_ = 0.0
        self.loss_history_: list[float] = []

    def fit(
        self,
        train_sets: list[np.ndarray],
        y_train: np.ndarray,
        val_sets: list[np.ndarray],
        y_val: np.ndarray,
        n_classes: int | None = None,
    ) -> "DeepSetClassifier":
        y_train = np.asarray(y_train, dtype=np.int64)
        y_val = np.asarray(y_val, dtype=np.int64)
        self.n_classes = int(n_classes if n_classes is not None else y_train.max() + 1)
        rng = np.random.default_rng(self.seed)
        input_dim = train_sets[0].shape[1]
        self.params = init_deepset(
            input_dim, self.n_classes, self.phi_layers, self.rho_layers,
            self.activation, rng, self.phi_hidden,
        )
        arrays = self.params.arrays()
        opt = Adam(arrays, lr=self.lr)
        X_train, segments = stack_sets(train_sets)
        n_users = len(train_sets)
        best_params = self.params.copy()
        best_f1 = -1.0
        stall = 0
        self.loss_history_ = []
        for epoch in range(self.max_epochs):
            order = rng.permutation(n_users)
            epoch_loss = 0.0
            for start in range(0, n_users, self.batch_size):
                batch_users = order[start : start + self.batch_size]
                pieces = [X_train[segments[u][0] : segments[u][1]] for u in batch_users]
                batch_X = np.concatenate(pieces, axis=0)
                batch_segments = []
                pos = 0
                for piece in pieces:
                    batch_segments.append((pos, pos + piece.shape[0]))
                    pos += piece.shape[0]
                cache = _forward_stacked(self.params, batch_X, batch_segments)
                loss, grad_logits = cross_entropy(cache.probs, y_train[batch_users])
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
                grads = _backward_stacked(self.params, cache, grad_logits)
                opt.step(arrays, grads)
                epoch_loss += loss * len(batch_users)
            self.loss_history_.append(epoch_loss / n_users)
            self.n_epochs_ = epoch + 1
            val_pred = self.predict_sets(val_sets)
            val_f1 = weighted_f1(y_val, val_pred)
            if val_f1 > best_f1:
                best_f1 = val_f1
                best_params = self.params.copy()
                stall = 0
            else:
                stall += 1
                if stall >= self.patience:
                    break
        self.params = best_params
        self.best_val_f1_ = best_f1
        return self

    def predict_proba_sets(self, sets: list[np.ndarray]) -> np.ndarray:
        return deepset_predict_proba(self.params, sets)

    def predict_sets(self, sets: list[np.ndarray]) -> np.ndarray:
        return self.predict_proba_sets(sets).argmax(axis=1)

    def get_state(self) -> dict:
        return {
            "phi_layers": self.phi_layers,
            "rho_layers": self.rho_layers,
            "activation": self.activation,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "phi_hidden": list(self.phi_hidden) if self.phi_hidden else None,
            "phi_weights": [w.tolist() for w in self.params.phi.weights],
            "phi_biases": [b.tolist() for b in self.params.phi.biases],
            "rho_weights": [w.tolist() for w in self.params.rho.weights],
            "rho_biases": [b.tolist() for b in self.params.rho.biases],
        }

    @classmethod
    def from_state(cls, state: dict) -> "DeepSetClassifier":
        model = cls(
            phi_layers=state["phi_layers"],
            rho_layers=state["rho_layers"],
            activation=state["activation"],
            lr=state["lr"],
            batch_size=state["batch_size"],
            seed=state["seed"],
            phi_hidden=tuple(state["phi_hidden"]) if state["phi_hidden"] else None,
        )
        model.n_classes = state["n_classes"]
        model.params = DeepSetParameters(
            MlpParameters(
                [np.asarray(w) for w in state["phi_weights"]],
                [np.asarray(b) for b in state["phi_biases"]],
                state["activation"],
            ),
            MlpParameters(
                [np.asarray(w) for w in state["rho_weights"]],
                [np.asarray(b) for b in state["rho_biases"]],
                state["activation"],
            ),
        )
        return model
