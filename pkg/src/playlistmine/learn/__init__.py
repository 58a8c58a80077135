"""Model zoo: five per-playlist baselines with probability averaging, the
set-level classifier, and a stratified random guesser, all on a from-scratch
numerical core.

Feature scaling (z-score, fitted on the training split only) applies to LR,
KNN, MLP and DS; trees consume raw features.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    KNearestNeighbors,
    LogisticRegression,
    MlpClassifier,
    RandomGuess,
    Scaler,
    TrainingError,
    average_user_prediction,
    fit_scaler,
    require_all_classes,
)
from .deepset import (
    DeepSetClassifier,
    DeepSetParameters,
    canonical_set_order,
    deepset_forward,
    deepset_loss_and_grads,
    deepset_predict_proba,
    init_deepset,
)
from .nn import (
    Adam,
    MlpParameters,
    TrainingDivergedError,
    cross_entropy,
    gradient_check,
    init_mlp,
    mlp_backward,
    mlp_forward,
    one_hot,
    softmax,
)
from .trees import DecisionTree, RandomForest

CHECKPOINT_VERSION = 1

# report order: random guess first, set model last
MODEL_KINDS = ("RG", "LR", "DT", "RF", "KNN", "MLP", "DS")
SCALED_KINDS = frozenset({"LR", "KNN", "MLP", "DS"})

_ESTIMATORS = {
    "LR": LogisticRegression,
    "DT": DecisionTree,
    "RF": RandomForest,
    "KNN": KNearestNeighbors,
    "MLP": MlpClassifier,
    "DS": DeepSetClassifier,
    "RG": RandomGuess,
}


@dataclass
class TrainedModel:
    """A fitted estimator bound to a task, with its scaler and provenance."""

    kind: str
    task: str
    classes: tuple[str, ...]
    estimator: object
    scaler: Scaler | None
    hyperparameters: dict
    metadata: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def _transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.scaler.transform(X) if self.scaler is not None else X

    def predict_playlists(self, X: np.ndarray) -> np.ndarray:
        """(n, c) per-playlist probability rows; baselines only."""
        if self.kind in ("DS", "RG"):
            raise TrainingError(f"{self.kind} does not predict single playlists")
        return self.estimator.predict_proba(self._transform(X))

    def predict_playlist(self, vector: np.ndarray) -> np.ndarray:
        """Probability distribution for one playlist descriptor."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.ndim != 1:
            raise ValueError(f"expected a single descriptor, got shape {vector.shape}")
        return self.predict_playlists(vector[None, :])[0]

    def predict_users(self, sets: list[np.ndarray]) -> np.ndarray:
        """(U, c) user-level probability rows.

        Baselines average their per-playlist distributions; the set model
        consumes each whole set; the random guesser draws once per user.
        """
        if self.kind == "RG":
            return self.estimator.predict_proba(len(sets))
        if self.kind == "DS":
            return self.estimator.predict_proba_sets([self._transform(s) for s in sets])
        out = np.empty((len(sets), self.n_classes))
        for i, s in enumerate(sets):
            mean, _ = average_user_prediction(self.predict_playlists(s))
            out[i] = mean
        return out

    def predict_user_labels(self, sets: list[np.ndarray]) -> np.ndarray:
        return self.predict_users(sets).argmax(axis=1)


def train_baseline(
    kind: str,
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    hyperparameters: dict | None = None,
    seed: int = 0,
) -> object:
    """Fit one per-playlist baseline (LR, DT, RF, KNN or MLP) and return it.

    Inputs are assumed already scaled where the kind requires it. Raises
    TrainingError when a class is absent from the training split.
    """
    if kind not in ("LR", "DT", "RF", "KNN", "MLP"):
        raise ValueError(f"not a per-playlist baseline kind: {kind!r}")
    hyper = dict(hyperparameters or {})
    y = np.asarray(y, dtype=np.int64)
    require_all_classes(y, n_classes)
    estimator = _ESTIMATORS[kind](**hyper, seed=seed)
    estimator.fit(np.asarray(X, dtype=np.float64), y, n_classes)
    return estimator


def save_checkpoint(model: TrainedModel, path: str | Path) -> None:
    """Write a versioned JSON checkpoint, portable across implementations."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "task": model.task,
        "classes": list(model.classes),
        "hyperparameters": model.hyperparameters,
        "scaler": model.scaler.get_state() if model.scaler is not None else None,
        "parameters": model.estimator.get_state(),
        "metadata": model.metadata,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path: str | Path) -> TrainedModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    kind = payload["kind"]
    if kind not in _ESTIMATORS:
        raise ValueError(f"unknown model kind {kind!r}")
    estimator = _ESTIMATORS[kind].from_state(payload["parameters"])
    scaler = Scaler.from_state(payload["scaler"]) if payload["scaler"] is not None else None
    return TrainedModel(
        kind=kind,
        task=payload["task"],
        classes=tuple(payload["classes"]),
        estimator=estimator,
        scaler=scaler,
        hyperparameters=payload["hyperparameters"],
        metadata=payload["metadata"],
    )
