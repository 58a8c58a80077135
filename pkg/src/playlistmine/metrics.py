"""Evaluation metrics shared by training and the experiment harness."""
from __future__ import annotations

import numpy as np


def weighted_f1(y_true, y_pred) -> float:
    """Support-weighted mean of per-class F1 scores.

    A class with zero predicted and zero true positives gets F1 = 0 by
    convention; classes with no true support carry zero weight.
    """
    yt = np.asarray(y_true)
    yp = np.asarray(y_pred)
    if yt.shape != yp.shape or yt.ndim != 1:
        raise ValueError(f"label vectors must be equal-length 1-D, got {yt.shape} and {yp.shape}")
    if yt.size == 0:
        raise ValueError("label vectors must be non-empty")
    total = 0.0
    for cls in np.unique(yt):
        tp = int(((yt == cls) & (yp == cls)).sum())
        fp = int(((yt != cls) & (yp == cls)).sum())
        fn = int(((yt == cls) & (yp != cls)).sum())
        f1 = 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
        total += (tp + fn) / yt.size * f1
    return float(total)


def expected_stratified_guess_f1(train_prior: np.ndarray, test_prior: np.ndarray) -> float:
    """Closed-form expected weighted F1 of a stratified random guesser.

    With predictions drawn i.i.d. from the training prior q and true labels
    distributed as w, class c has recall q_c and precision w_c, so
    F1_c = 2 q_c w_c / (q_c + w_c) and the weighted score is sum_c w_c F1_c.
    """
    q = np.asarray(train_prior, dtype=np.float64)
    w = np.asarray(test_prior, dtype=np.float64)
    out = 0.0
    for qc, wc in zip(q, w):
        if qc + wc > 0:
            out += wc * (2 * qc * wc / (qc + wc))
    return float(out)
