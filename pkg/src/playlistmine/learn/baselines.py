"""Per-playlist baseline classifiers: logistic regression, k-NN, the MLP, and
the stratified random guesser.

Every baseline predicts a class probability distribution for a single
playlist; user-level predictions average those distributions across the
user's playlists and take the argmax (lowest index on ties).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Adam, MlpParameters, TrainingDivergedError, cross_entropy, init_mlp, mlp_forward, mlp_backward, one_hot, softmax
from .trees import class_weight_vector


class TrainingError(RuntimeError):
    """Training preconditions violated (e.g. a class missing from the split)."""


@dataclass(frozen=True)
class Scaler:
    """Column z-scoring fitted on the training split only."""

    mean: np.ndarray
    scale: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def get_state(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "Scaler":
        return cls(np.asarray(state["mean"]), np.asarray(state["scale"]))


def fit_scaler(X: np.ndarray) -> Scaler:
    X = np.asarray(X, dtype=np.float64)
    std = X.std(axis=0)
    return Scaler(X.mean(axis=0), np.where(std > 0, std, 1.0))


def require_all_classes(y: np.ndarray, n_classes: int) -> None:
    counts = np.bincount(y, minlength=n_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise TrainingError(
            f"classes {missing.tolist()} absent from the training split; re-stratify"
        )


class LogisticRegression:
    """Multinomial (softmax) logistic regression with L2 penalty.

    Optimized full-batch with Adam until the gradient's max norm falls below
    tolerance. ``C`` is the inverse regularization strength.
    """

    def __init__(
        self,
        C: float = 1.0,
        fit_intercept: bool = True,
        class_weight: str | None = None,
        max_iter: int = 1000,
        tol: float = 1e-8,
        seed: int = 0,
    ) -> None:
        self.C = C
        self.fit_intercept = fit_intercept
        self.class_weight = class_weight
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed
        self.coef: np.ndarray | None = None
        self.intercept: np.ndarray | None = None
        self.n_classes = 0

    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int | None = None) -> "LogisticRegression":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        require_all_classes(y, self.n_classes)
        n, d = X.shape
        sw = class_weight_vector(y, self.n_classes, self.class_weight)
        sw = sw / sw.mean()
        W = np.zeros((d, self.n_classes))
        b = np.zeros(self.n_classes)
        arrays = [W, b] if self.fit_intercept else [W]
        opt = Adam(arrays, lr=0.1)
        lam = 1.0 / (self.C * n)
        wsum = sw.sum()
        targets = one_hot(y, self.n_classes)
        for _ in range(self.max_iter):
            probs = softmax(X @ W + b)
            gl = (probs - targets) * (sw / wsum)[:, None]
            gW = X.T @ gl + lam * W
            grads = [gW]
            if self.fit_intercept:
                grads.append(gl.sum(axis=0))
            if max(float(np.abs(g).max()) for g in grads) < self.tol:
                break
            opt.step(arrays, grads)
        self.coef, self.intercept = W, b
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(np.asarray(X, dtype=np.float64) @ self.coef + self.intercept)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def get_state(self) -> dict:
        return {
            "C": self.C,
            "fit_intercept": self.fit_intercept,
            "class_weight": self.class_weight,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "coef": self.coef.tolist(),
            "intercept": self.intercept.tolist(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "LogisticRegression":
        model = cls(
            C=state["C"],
            fit_intercept=state["fit_intercept"],
            class_weight=state["class_weight"],
            seed=state["seed"],
        )
        model.n_classes = state["n_classes"]
        model.coef = np.asarray(state["coef"])
        model.intercept = np.asarray(state["intercept"])
        return model


class KNearestNeighbors:
    """Euclidean k-NN; probabilities are (optionally distance-weighted)
    neighbor class frequencies.

    With ``weights="distance"`` an exact-match neighbor takes all the mass.
    Neighbor ties at equal distance resolve toward the lower training index.
    """

    def __init__(self, n_neighbors: int = 5, weights: str = "uniform", seed: int = 0) -> None:
        if weights not in ("uniform", "distance"):
            raise ValueError(f"weights must be uniform or distance, got {weights!r}")
        self.n_neighbors = n_neighbors
        self.weights = weights
        self.seed = seed
        self.X: np.ndarray | None = None
        self.y: np.ndarray | None = None
        self.n_classes = 0

    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int | None = None) -> "KNearestNeighbors":
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(n_classes if n_classes is not None else self.y.max() + 1)
        if self.n_neighbors > len(self.y):
            raise TrainingError(
                f"n_neighbors={self.n_neighbors} exceeds training size {len(self.y)}"
            )
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros((len(X), self.n_classes))
        for i, row in enumerate(X):
            d = np.sqrt(((self.X - row) ** 2).sum(axis=1))
            order = np.lexsort((np.arange(len(d)), d))[: self.n_neighbors]
            dists = d[order]
            labels = self.y[order]
            if self.weights == "uniform":
                w = np.ones(self.n_neighbors)
            elif (dists == 0).any():
                w = (dists == 0).astype(np.float64)
            else:
                w = 1.0 / dists
            counts = np.bincount(labels, weights=w, minlength=self.n_classes)
            out[i] = counts / counts.sum()
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def get_state(self) -> dict:
        return {
            "n_neighbors": self.n_neighbors,
            "weights": self.weights,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "X": self.X.tolist(),
            "y": self.y.tolist(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "KNearestNeighbors":
        model = cls(n_neighbors=state["n_neighbors"], weights=state["weights"], seed=state["seed"])
        model.n_classes = state["n_classes"]
        model.X = np.asarray(state["X"])
        model.y = np.asarray(state["y"], dtype=np.int64)
        return model


class MlpClassifier:
    """Cross-entropy MLP trained with Adam on playlist rows.

    The learning rate adapts: two consecutive epochs without a ``tol``
    improvement of the epoch loss divide it by 5, and training stops once it
    falls below 1e-6 (or at ``max_epochs``). ``alpha`` is the L2 penalty on
    weights.
    """

    def __init__(
        self,
        hidden: tuple[int, ...] = (111,),
        activation: str = "relu",
        lr: float = 0.001,
        alpha: float = 0.0001,
        batch_size: int = 128,
        max_epochs: int = 200,
        tol: float = 1e-5,
        seed: int = 0,
    ) -> None:
        self.hidden = tuple(hidden)
        self.activation = activation
        self.lr = lr
        self.alpha = alpha
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.tol = tol
        self.seed = seed
        self.params: MlpParameters | None = None
        self.n_classes = 0
        self.n_epochs_ = 0
        self.final_lr_ = lr
        self.loss_history_: list[float] = []

    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int | None = None) -> "MlpClassifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        require_all_classes(y, self.n_classes)
        rng = np.random.default_rng(self.seed)
        sizes = [X.shape[1], *self.hidden, self.n_classes]
        self.params = init_mlp(sizes, self.activation, rng)
        arrays = self.params.arrays()
        opt = Adam(arrays, lr=self.lr)
        n = len(y)
        best_loss = np.inf
        stall = 0
        self.loss_history_ = []
        self.final_lr_ = self.lr
        for epoch in range(self.max_epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                xb, yb = X[idx], y[idx]
                logits, caches = mlp_forward(self.params, xb)
                probs = softmax(logits)
                loss, grad_logits = cross_entropy(probs, yb)
                if self.alpha:
                    loss += (
                        self.alpha
                        * sum(float((w * w).sum()) for w in self.params.weights)
                        / (2.0 * len(yb))
                    )
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
                grads, _ = mlp_backward(self.params, caches, grad_logits)
                if self.alpha:
                    for gw, w in zip(grads.weights, self.params.weights):
                        gw += self.alpha * w / len(yb)
                opt.step(arrays, grads.arrays())
                epoch_loss += loss * len(yb)
            epoch_loss /= n
            self.loss_history_.append(epoch_loss)
            self.n_epochs_ = epoch + 1
            if epoch_loss > best_loss - self.tol:
                stall += 1
                if stall >= 2:
                    self.final_lr_ /= 5.0
                    opt.lr = self.final_lr_
                    stall = 0
                    if self.final_lr_ < 1e-6:
                        break
            else:
                stall = 0
            best_loss = min(best_loss, epoch_loss)
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        logits, _ = mlp_forward(self.params, np.asarray(X, dtype=np.float64))
        return softmax(logits)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def get_state(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "activation": self.activation,
            "lr": self.lr,
            "alpha": self.alpha,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "weights": [w.tolist() for w in self.params.weights],
            "biases": [b.tolist() for b in self.params.biases],
        }

    @classmethod
    def from_state(cls, state: dict) -> "MlpClassifier":
        model = cls(
            hidden=tuple(state["hidden"]),
            activation=state["activation"],
            lr=state["lr"],
            alpha=state["alpha"],
            batch_size=state["batch_size"],
            seed=state["seed"],
        )
        model.n_classes = state["n_classes"]
        model.params = MlpParameters(
            [np.asarray(w) for w in state["weights"]],
            [np.asarray(b) for b in state["biases"]],
            state["activation"],
        )
        return model


class RandomGuess:
    """Stratified dummy: one i.i.d. draw from the training class prior per
    prediction, deterministic for a given seed.

    Unlike the real baselines this guesser predicts at the user level
    directly; averaging independent draws over playlists would bias it toward
    the majority class.
    """

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.prior: np.ndarray | None = None
        self.n_classes = 0

    def fit(self, y: np.ndarray, n_classes: int | None = None) -> "RandomGuess":
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        counts = np.bincount(y, minlength=self.n_classes)
        self.prior = counts / counts.sum()
        return self

    def predict(self, n: int) -> np.ndarray:
        """n i.i.d. class draws; a fresh generator per call keeps it repeatable."""
        rng = np.random.default_rng(self.seed)
        return rng.choice(self.n_classes, size=n, p=self.prior)

    def predict_proba(self, n: int) -> np.ndarray:
        return one_hot(self.predict(n), self.n_classes)

    def get_state(self) -> dict:
        return {"seed": self.seed, "n_classes": self.n_classes, "prior": self.prior.tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "RandomGuess":
        model = cls(seed=state["seed"])
        model.n_classes = state["n_classes"]
        model.prior = np.asarray(state["prior"])
        return model


def average_user_prediction(playlist_probs: np.ndarray) -> tuple[np.ndarray, int]:
    """Element-wise mean of per-playlist distributions, plus the argmax class.

    Ties break toward the lowest class index.
    """
    probs = np.asarray(playlist_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("need a non-empty (n_playlists, n_classes) matrix")
    mean = probs.mean(axis=0)
    return mean, int(mean.argmax())
