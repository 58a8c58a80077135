import numpy as np
import pytest

from playlistmine.cluster import (
    ClusterError,
    ClusterReport,
    build_cluster_reports,
    detect_leading,
    filter_clusters,
    kmeans,
    leading_threshold,
    pairwise_distances,
    pca_reduce,
    playlist_level_prior,
    select_k,
    silhouette,
    sweep_alpha,
)
from playlistmine.core import get_task
from playlistmine.features import featurize_corpus
from playlistmine.synth import GenerationSpec, PureClusterEffect, generate_corpus


# ------------------------------------------------------------------ pca

def test_pca_rank_one_line():
    t = np.linspace(-2, 2, 40)
    direction = np.array([1.0, -0.5, 2.0, 0.3, 1.1])
    X = np.outer(t, direction)
    result = pca_reduce(X, 0.8)
    assert result.n_components == 1
    assert float(result.explained_ratios.sum()) == pytest.approx(1.0)


def test_pca_isotropic_needs_both_components():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 2))
    result = pca_reduce(X, 0.8)
    assert result.n_components == 2


def test_pca_anisotropic_eigenvalue_ratio():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(4000, 2)) * np.array([3.0, 1.0])  # covariance diag(9, 1)
    result = pca_reduce(X, 0.8, pre_standardize=False)
    assert float(result.explained_ratios[0]) == pytest.approx(0.9, abs=0.02)


def test_pca_sign_convention_deterministic():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 6))
    r1 = pca_reduce(X, 0.9)
    for row in r1.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_full_rank_reconstruction():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 8))
    result = pca_reduce(X, 1.0)
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    reconstructed = result.projected @ result.components
    assert np.abs(reconstructed - Z).max() < 1e-9


def test_pca_drops_constant_columns():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 4))
    X[:, 2] = 7.0
    result = pca_reduce(X, 0.9)
    assert 2 not in result.kept_columns.tolist()


# ------------------------------------------------------------------ kmeans

def _two_blobs(n=30, sep=20.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 0.5, size=(n, 3))
    b = rng.normal(0, 0.5, size=(n, 3)) + sep
    return np.vstack([a, b])


def test_kmeans_separates_two_blobs():
    X = _two_blobs()
    assignments, centroids = kmeans(X, 2, seed=0)
    first, second = assignments[:30], assignments[30:]
    assert len(set(first.tolist())) == 1
    assert len(set(second.tolist())) == 1
    assert first[0] != second[0]
    assert silhouette(X, assignments) > 0.9


def test_kmeans_preconditions():
    X = _two_blobs(n=5)
    with pytest.raises(ClusterError):
        kmeans(X, 1, seed=0)
    with pytest.raises(ClusterError):
        kmeans(X, 11, seed=0)


def test_silhouette_singleton_clusters_score_zero():
    X = _two_blobs(n=4)
    assignments = np.arange(8)  # every point its own cluster
    assert silhouette(X, assignments) == 0.0


def test_silhouette_matches_brute_force():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 4))
    assignments, _ = kmeans(X, 4, seed=1)

    def brute(X, labels):
        n = len(X)
        scores = []
        for i in range(n):
            same = [j for j in range(n) if labels[j] == labels[i] and j != i]
            if not same:
                scores.append(0.0)
                continue
            a = float(np.mean([np.linalg.norm(X[i] - X[j]) for j in same]))
            b = min(
                float(np.mean([np.linalg.norm(X[i] - X[j]) for j in range(n) if labels[j] == lab]))
                for lab in set(labels.tolist())
                if lab != labels[i]
            )
            scores.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
        return float(np.mean(scores))

    assert silhouette(X, assignments) == pytest.approx(brute(X, assignments), abs=1e-9)


def test_kmeans_matches_exhaustive_restarts_on_planted_set():
    # 12 points in 3 tight groups; every 3-subset of points as initial
    # centroids is tried by the oracle
    rng = np.random.default_rng(6)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    X = np.vstack([c + rng.normal(0, 0.2, size=(4, 2)) for c in centers])

    from itertools import combinations

    def lloyd(X, init):
        cent = X[list(init)].copy()
        for _ in range(100):
            d = ((X[:, None, :] - cent[None]) ** 2).sum(axis=2)
            lab = d.argmin(axis=1)
            new = np.array([
                X[lab == c].mean(axis=0) if (lab == c).any() else cent[c] for c in range(3)
            ])
            if np.allclose(new, cent):
                break
            cent = new
        inertia = ((X - cent[lab]) ** 2).sum()
        return lab, inertia

    best_lab, best_inertia = None, np.inf
    for init in combinations(range(12), 3):
        lab, inertia = lloyd(X, init)
        if inertia < best_inertia - 1e-12:
            best_lab, best_inertia = lab, inertia

    assignments, _ = kmeans(X, 3, seed=0)
    # same partition up to cluster relabeling
    mapping = {}
    for ours, oracle in zip(assignments.tolist(), best_lab.tolist()):
        mapping.setdefault(ours, oracle)
        assert mapping[ours] == oracle


def test_pairwise_distances_exact():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(20, 3))
    D = pairwise_distances(X)
    for i in range(20):
        assert D[i, i] == 0.0
        for j in range(20):
            assert D[i, j] == pytest.approx(np.linalg.norm(X[i] - X[j]), abs=1e-9)


# ------------------------------------------------------------------ select_k

def test_select_k_finds_planted_count():
    rng = np.random.default_rng(8)
    centers = rng.uniform(-50, 50, size=(60, 3))
    X = np.vstack([c + rng.normal(0, 0.05, size=(5, 3)) for c in centers])
    best, scores = select_k(X, range(50, 201, 5), seed=0)
    assert best == 60


def test_select_k_identical_rows_error():
    X = np.ones((30, 4))
    with pytest.raises(ClusterError):
        select_k(X, range(2, 10))


def test_select_k_collapsed_range():
    X = _two_blobs(n=20)
    best, scores = select_k(X, range(2, 3), seed=0)
    assert best == 2 and set(scores) == {2}


def test_select_k_shrinks_oversized_range(caplog):
    X = _two_blobs(n=10)  # 20 rows, range starts at 50
    best, scores = select_k(X, range(50, 201, 5), seed=0)
    assert best == 2
    assert max(scores) <= 19


# ------------------------------------------------------------------ filtering

def _report(cid, owners, dist=None):
    pids = tuple(f"c{cid}-p{i}" for i in range(len(owners)))
    from collections import Counter
    from playlistmine.features import simpson_diversity
    import warnings
    from playlistmine.features import DegenerateInputWarning

    counts = Counter(owners)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInputWarning)
        diversity = simpson_diversity([counts[o] for o in sorted(counts)])
    return ClusterReport(cid, pids, diversity, dist or {})


def test_filter_drops_single_owner_cluster():
    cluster = _report(0, ["u1"] * 10)
    assert cluster.owner_diversity == 0.0
    assert filter_clusters([cluster]) == []


def test_filter_drops_small_cluster():
    cluster = _report(0, ["u1", "u2", "u3", "u4"])
    assert cluster.owner_diversity == 1.0
    assert filter_clusters([cluster]) == []


def test_filter_keeps_hand_computed_case():
    # owner counts [2, 2, 1]: diversity 1 - (2+2+0)/(5*4) = 0.8, size 5
    cluster = _report(0, ["u1", "u1", "u2", "u2", "u3"])
    assert cluster.owner_diversity == pytest.approx(0.8)
    assert filter_clusters([cluster]) == [cluster]


# ------------------------------------------------------------------ thresholds

def test_threshold_worked_example():
    prior = {"female": 0.28, "male": 0.68, "other": 0.04}
    th = leading_threshold(prior, 0.5)
    assert th.values["female"] == pytest.approx(0.64, abs=1e-12)
    assert th.values["male"] == pytest.approx(0.84, abs=1e-12)
    assert th.values["other"] == pytest.approx(0.52, abs=1e-12)


def test_threshold_endpoints():
    prior = {"a": 0.3, "b": 0.7}
    assert leading_threshold(prior, 0.0).values == pytest.approx(prior)
    assert leading_threshold(prior, 1.0).values == {"a": 1.0, "b": 1.0}


def test_class_prior_levels():
    from playlistmine.cluster import class_prior

    corpus, _ = generate_corpus(GenerationSpec(seed=40, n_users=30))
    fc = featurize_corpus(corpus)
    task = get_task("smoke")
    playlist_prior = class_prior(fc, task, "playlist")
    user_prior = class_prior(fc, task, "user")
    assert sum(playlist_prior.values()) == pytest.approx(1.0)
    assert sum(user_prior.values()) == pytest.approx(1.0)
    labeled = [u for u in fc.users if "smoke" in u.attributes]
    expected_user = sum(u.attributes["smoke"] == "yes" for u in labeled) / len(labeled)
    assert user_prior["yes"] == pytest.approx(expected_user)
    with pytest.raises(ClusterError):
        class_prior(fc, task, "track")


def test_threshold_alpha_validation():
    with pytest.raises(ClusterError):
        leading_threshold({"a": 1.0}, -0.1)
    with pytest.raises(ClusterError):
        leading_threshold({"a": 1.0}, 1.0001)
    with pytest.raises(ClusterError):
        leading_threshold({"a": 0.7}, 0.5)  # prior does not sum to 1


def test_detect_leading_pure_cluster_and_strictness():
    task = get_task("smoke")
    prior = {"yes": 0.3, "no": 0.7}
    pure = _report(0, ["u1", "u2", "u3", "u4", "u5"], {"smoke": {"yes": 1.0, "no": 0.0}})
    at_prior = _report(1, ["u6", "u7", "u8", "u9", "u10"], {"smoke": {"yes": 0.3, "no": 0.7}})
    unlabeled = _report(2, ["u11", "u12"], {})
    leading = detect_leading([pure, at_prior, unlabeled], task, 0.9, prior)
    assert leading == [pure]
    # exactly at the prior with alpha = 0: strict inequality, not leading
    assert detect_leading([at_prior], task, 0.0, prior) == []
    assert pure.leading[("smoke", 0.9)] is True


def test_sweep_alpha_grid_and_monotonicity():
    task = get_task("smoke")
    prior = {"yes": 0.3, "no": 0.7}
    clusters = [
        _report(0, ["u1", "u2", "u3", "u4", "u5"], {"smoke": {"yes": 1.0, "no": 0.0}}),
        _report(1, ["u6", "u7", "u8", "u9", "u10"], {"smoke": {"yes": 0.5, "no": 0.5}}),
        _report(2, ["v1", "v2", "v3", "v4", "v5"], {"smoke": {"yes": 0.3, "no": 0.7}}),
    ]
    sweep = sweep_alpha(clusters, task, prior)
    assert list(sweep) == [round(0.1 * i, 1) for i in range(11)]
    values = list(sweep.values())
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert sweep[0.0] == pytest.approx(100 * 2 / 3)
    assert sweep[1.0] == 0.0


# ------------------------------------------------------------------ pipeline

def test_pipeline_finds_planted_cluster():
    corpus, truth = generate_corpus(
        GenerationSpec(
            seed=5,
            n_users=80,
            effects=(PureClusterEffect("gender", "female", n_playlists=40, n_owners=8),),
        )
    )
    fc = featurize_corpus(corpus)
    X, _, _ = fc.playlist_matrix()
    pca = pca_reduce(X, 0.8)
    task = get_task("gender")
    best_k, _ = select_k(pca.projected, range(50, 201, 5), seed=0)
    assignments, _ = kmeans(pca.projected, best_k, seed=0)
    reports = build_cluster_reports(fc, assignments, [task])
    kept = filter_clusters(reports)
    prior = playlist_level_prior(fc, task)
    injected = set(truth.injected_playlists["gender"])
    # the planted playlists survive filtering inside (near-)pure clusters
    for alpha in [round(0.1 * i, 1) for i in range(10)]:  # alpha <= 0.9
        leading = detect_leading(kept, task, alpha, prior)
        assert any(injected & set(c.playlist_ids) for c in leading), alpha
    previous = None
    for alpha in [round(0.1 * i, 1) for i in range(11)]:
        current = {c.cluster_id for c in detect_leading(kept, task, alpha, prior)}
        if previous is not None:
            assert current <= previous
        previous = current
