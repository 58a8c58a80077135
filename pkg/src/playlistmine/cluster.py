"""Playlist-similarity analysis: PCA, k-means clustering, cluster filtering
and leading-cluster detection.

The pipeline clusters playlist descriptors and looks for clusters whose class
mix for an attribute is anomalous relative to the playlist-level prior: class
share above Th(class, alpha) = prior + alpha * (1 - prior). Clusters made by
too few distinct owners (Simpson diversity < 0.5) or with fewer than 5
playlists are discarded first.
"""
from __future__ import annotations

import csv
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AttributeTask
from .features import DegenerateInputWarning, FeaturizedCorpus, simpson_diversity

logger = logging.getLogger(__name__)

DEFAULT_VARIANCE_TARGET = 0.8
DEFAULT_K_RANGE = range(50, 201, 5)
DEFAULT_MIN_DIVERSITY = 0.5
DEFAULT_MIN_SIZE = 5
KMEANS_TOL = 1e-4
KMEANS_MAX_ITER = 300


class ClusterError(ValueError):
    """Clustering preconditions violated (degenerate data, bad parameters)."""


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Z-score columns of X on X itself; zero-variance columns are dropped.

    Returns (standardized matrix, indices of the kept columns).
    """
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = np.flatnonzero(std > 0)
    if keep.size < X.shape[1]:
        logger.warning("dropping %d zero-variance columns before PCA", X.shape[1] - keep.size)
    if keep.size == 0:
        raise ClusterError("all columns have zero variance")
    return (X[:, keep] - mean[keep]) / std[keep], keep


@dataclass(frozen=True, eq=False)
class PcaResult:
    projected: np.ndarray        # (n, k)
    components: np.ndarray       # (k, d) row-wise basis on the kept columns
    explained_ratios: np.ndarray  # (k,) of the selected components
    kept_columns: np.ndarray     # indices into the original feature space

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def pca_reduce(
    X: np.ndarray,
    variance_target: float = DEFAULT_VARIANCE_TARGET,
    pre_standardize: bool = True,
) -> PcaResult:
    """Project onto the smallest number of principal components whose
    cumulative explained variance reaches the target.

    Input columns are z-scored first (the feature scales are wildly
    different); component signs are fixed so each component's
    largest-magnitude loading is positive.
    """
    if not 0 < variance_target <= 1:
        raise ClusterError(f"variance target must be in (0, 1], got {variance_target}")
    if pre_standardize:
        Z, kept = standardize(X)
    else:
        Z = np.asarray(X, dtype=np.float64)
        Z = Z - Z.mean(axis=0)
        kept = np.arange(Z.shape[1])
    # SVD of the centered matrix gives eigenvectors of the covariance
    _, s, vt = np.linalg.svd(Z, full_matrices=False)
    var = s * s
    total = var.sum()
    if total == 0:
        raise ClusterError("data has zero total variance")
    ratios = var / total
    cumulative = np.cumsum(ratios)
    k = int(np.searchsorted(cumulative, variance_target - 1e-12) + 1)
    k = min(k, vt.shape[0])
    components = vt[:k].copy()
    for i in range(k):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    return PcaResult(Z @ components.T, components, ratios[:k], kept)


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = X[first]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total == 0:
            centroids[i] = X[int(rng.integers(n))]
            continue
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        centroids[i] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[i]) ** 2).sum(axis=1))
    return centroids


def kmeans(X: np.ndarray, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ init; returns (assignments, centroids).

    Runs until the inertia improvement falls below KMEANS_TOL or 300
    iterations. An emptied cluster is re-seeded at the point farthest from its
    assigned centroid. The objective is verified non-increasing every step.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 2:
        raise ClusterError(f"k must be >= 2, got {k}")
    if k > n:
        raise ClusterError(f"k={k} exceeds the number of points ({n})")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(X, k, rng)
    prev_inertia = np.inf
    assignments = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignments = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), assignments]
        reseeded = False
        for ci in range(k):
            members = assignments == ci
            if members.any():
                centroids[ci] = X[members].mean(axis=0)
            else:
                far = int(point_d2.argmax())
                centroids[ci] = X[far]
                assignments[far] = ci
                point_d2[far] = 0.0
                reseeded = True
        inertia = float(point_d2.sum())
        # Lloyd's objective is provably non-increasing except across a
        # re-seeding step, which perturbs it before the next assignment
        if not reseeded and inertia > prev_inertia + 1e-9:
            raise AssertionError("k-means objective increased; this is a bug")
        if prev_inertia - inertia < KMEANS_TOL:
            break
        prev_inertia = inertia
    return assignments, centroids


def silhouette(
    X: np.ndarray, assignments: np.ndarray, distances: np.ndarray | None = None
) -> float:
    """Mean silhouette over all points, exact Euclidean pairwise distances.

    Points in single-member clusters score 0 by convention. Pass a
    precomputed distance matrix to amortize it over several k values.
    """
    X = np.asarray(X, dtype=np.float64)
    assignments = np.asarray(assignments)
    n = X.shape[0]
    if distances is None:
        distances = pairwise_distances(X)
    labels = np.unique(assignments)
    if labels.size < 2:
        raise ClusterError("silhouette needs at least 2 clusters")
    scores = np.zeros(n)
    masks = {lab: assignments == lab for lab in labels}
    sizes = {lab: int(masks[lab].sum()) for lab in labels}
    for i in range(n):
        own = assignments[i]
        if sizes[own] == 1:
            scores[i] = 0.0
            continue
        a = distances[i, masks[own]].sum() / (sizes[own] - 1)
        b = min(
            distances[i, masks[lab]].mean() for lab in labels if lab != own
        )
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance matrix."""
    sq = (X * X).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def select_k(
    X: np.ndarray, k_range: range = DEFAULT_K_RANGE, seed: int = 0
) -> tuple[int, dict[int, float]]:
    """Pick the cluster count with the best silhouette over the k grid.

    Ties go to the smallest k. When the dataset is smaller than the grid the
    range shrinks with a warning (the source datasets are far larger than
    desk-scale test sets).
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    candidates = [k for k in k_range if 2 <= k < n]
    if not candidates:
        fallback = list(range(2, n))
        if not fallback:
            raise ClusterError(f"cannot cluster {n} points")
        logger.warning(
            "k range %s infeasible for %d points; shrinking to 2..%d", k_range, n, n - 1
        )
        candidates = fallback
    elif len(candidates) < len(list(k_range)):
        logger.warning(
            "k range %s truncated to %d..%d for %d points",
            k_range, candidates[0], candidates[-1], n,
        )
    if np.allclose(X, X[0]):
        raise ClusterError("all rows identical; clustering is degenerate")
    distances = pairwise_distances(X)
    scores: dict[int, float] = {}
    for k in candidates:
        assignments, _ = kmeans(X, k, seed)
        scores[k] = silhouette(X, assignments, distances)
    best = max(sorted(scores), key=lambda k: scores[k])
    return best, scores


@dataclass(frozen=True, eq=False)
class ClusterReport:
    """One playlist cluster with its owner mix and class distributions."""

    cluster_id: int
    playlist_ids: tuple[str, ...]
    owner_diversity: float
    # attribute -> class label -> share among members with a known label
    distributions: dict[str, dict[str, float]]
    # (attribute, alpha) -> leading flag, filled in by detect_leading
    leading: dict[tuple[str, float], bool] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.playlist_ids)


def build_cluster_reports(
    fc: FeaturizedCorpus,
    assignments: np.ndarray,
    tasks: list[AttributeTask],
) -> list[ClusterReport]:
    """Assemble per-cluster membership, owner diversity and label mixes."""
    _, playlist_ids, owner_ids = fc.playlist_matrix()
    labels_by_user = {u.user_id: u.attributes for u in fc.users}
    reports = []
    for cid in sorted(set(int(a) for a in assignments)):
        idx = np.flatnonzero(assignments == cid)
        pids = tuple(playlist_ids[i] for i in idx)
        owners = [owner_ids[i] for i in idx]
        owner_counts = Counter(owners)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateInputWarning)
            diversity = simpson_diversity([owner_counts[o] for o in sorted(owner_counts)])
        distributions: dict[str, dict[str, float]] = {}
        for task in tasks:
            counts = Counter(
                labels_by_user[o][task.name]
                for o in owners
                if task.name in labels_by_user[o]
            )
            total = sum(counts.values())
            if total:
                distributions[task.name] = {c: counts.get(c, 0) / total for c in task.classes}
        reports.append(ClusterReport(cid, pids, diversity, distributions))
    return reports


def filter_clusters(
    clusters: list[ClusterReport],
    min_diversity: float = DEFAULT_MIN_DIVERSITY,
    min_size: int = DEFAULT_MIN_SIZE,
) -> list[ClusterReport]:
    """Drop clusters owned by too few distinct users or with too few playlists."""
    return [
        c for c in clusters if c.owner_diversity >= min_diversity and c.size >= min_size
    ]


@dataclass(frozen=True)
class Threshold:
    """Per-class leading thresholds Th(class, alpha) = prior + alpha*(1 - prior)."""

    attribute: str
    alpha: float
    values: dict[str, float]


def leading_threshold(prior: dict[str, float], alpha: float, attribute: str = "") -> Threshold:
    """Blend each class's prior toward 1 by the selectivity parameter alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise ClusterError(f"alpha must be in [0, 1], got {alpha}")
    total = sum(prior.values())
    if abs(total - 1.0) > 1e-9:
        raise ClusterError(f"prior must sum to 1, got {total}")
    values = {c: p + alpha * (1.0 - p) for c, p in prior.items()}
    return Threshold(attribute, alpha, values)


def class_prior(fc: FeaturizedCorpus, task: AttributeTask, level: str = "playlist") -> dict[str, float]:
    """Class shares over playlists or over users.

    Playlist level (each playlist labeled by its owner) is the default for
    leading-cluster detection, since the compared cluster distributions are
    playlist-level; the user level is available as a switch.
    """
    if level not in ("playlist", "user"):
        raise ClusterError(f"prior level must be playlist or user, got {level!r}")
    counts: Counter = Counter()
    for user in fc.users:
        label = user.attributes.get(task.name)
        if label is not None:
            counts[label] += user.n_playlists if level == "playlist" else 1
    total = sum(counts.values())
    if total == 0:
        raise ClusterError(f"no labeled playlists for task {task.name}")
    return {c: counts.get(c, 0) / total for c in task.classes}


def playlist_level_prior(fc: FeaturizedCorpus, task: AttributeTask) -> dict[str, float]:
    """Class shares over playlists (each playlist labeled by its owner)."""
    return class_prior(fc, task, "playlist")


def detect_leading(
    clusters: list[ClusterReport],
    task: AttributeTask,
    alpha: float,
    prior: dict[str, float],
) -> list[ClusterReport]:
    """Clusters where some class's share strictly exceeds its threshold.

    Clusters without any labeled member for the task are excluded. The strict
    inequality means a cluster exactly at the prior is never leading, even at
    alpha = 0.
    """
    threshold = leading_threshold(prior, alpha, task.name)
    leading = []
    for cluster in clusters:
        dist = cluster.distributions.get(task.name)
        if dist is None:
            continue
        is_leading = any(dist[c] > threshold.values[c] for c in task.classes)
        cluster.leading[(task.name, alpha)] = is_leading
        if is_leading:
            leading.append(cluster)
    return leading


def sweep_alpha(
    clusters: list[ClusterReport],
    task: AttributeTask,
    prior: dict[str, float],
    alphas: list[float] | None = None,
) -> dict[float, float]:
    """Percentage of eligible clusters that are leading, per alpha.

    Default grid is 0.0 to 1.0 in steps of 0.1. The eligible population is
    the set of filtered clusters with at least one labeled member.
    """
    if alphas is None:
        alphas = [round(0.1 * i, 1) for i in range(11)]
    eligible = [c for c in clusters if task.name in c.distributions]
    out: dict[float, float] = {}
    for alpha in alphas:
        if not eligible:
            out[alpha] = 0.0
            continue
        leading = detect_leading(eligible, task, alpha, prior)
        out[alpha] = 100.0 * len(leading) / len(eligible)
    return out


def write_sweep_csv(
    sweeps: dict[str, dict[float, float]], path: str | Path
) -> None:
    """Alpha-sweep CSV: rows = alpha values, columns = attributes."""
    attributes = sorted(sweeps)
    alphas = sorted({a for sweep in sweeps.values() for a in sweep})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha"] + attributes)
        for alpha in alphas:
            writer.writerow(
                [repr(alpha)] + [repr(sweeps[attr].get(alpha, 0.0)) for attr in attributes]
            )


def cluster_report_json(
    clusters: list[ClusterReport], metadata: dict | None = None
) -> dict:
    """JSON-ready structure for the per-cluster report."""
    return {
        "metadata": metadata or {},
        "clusters": [
            {
                "cluster_id": c.cluster_id,
                "size": c.size,
                "playlist_ids": list(c.playlist_ids),
                "owner_diversity": c.owner_diversity,
                "distributions": c.distributions,
                "leading": {
                    f"{attr}@{alpha}": flag for (attr, alpha), flag in sorted(c.leading.items())
                },
            }
            for c in clusters
        ],
    }
