import collections

import numpy as np
import pytest

from playlistmine.core import corpus_summary, get_task
from playlistmine.features import build_schema, featurize_corpus, load_lexicon
from playlistmine.ingest import corpus_from_dict, corpus_to_dict
from playlistmine.stats import significance_matrix
from playlistmine.synth import (
    GenerationError,
    GenerationSpec,
    MaxRuleEffect,
    MeanShiftEffect,
    PureClusterEffect,
    UniformInt,
    generate_corpus,
)

SCHEMA = build_schema(load_lexicon())


def test_same_seed_bit_identical():
    spec = GenerationSpec(seed=42, n_users=30)
    c1, t1 = generate_corpus(spec)
    c2, t2 = generate_corpus(spec)
    assert c1 == c2
    assert t1.totals == t2.totals
    c3, _ = generate_corpus(GenerationSpec(seed=43, n_users=30))
    assert c1 != c3


def test_generated_corpus_round_trips_through_schema():
    corpus, _ = generate_corpus(GenerationSpec(seed=1, n_users=20))
    assert corpus_from_dict(corpus_to_dict(corpus)) == corpus


def test_totals_match_summary():
    corpus, truth = generate_corpus(GenerationSpec(seed=2, n_users=40))
    summary = corpus_summary(corpus)
    assert summary.n_users == truth.totals["users"]
    assert summary.n_playlists == truth.totals["playlists"]
    assert summary.n_unique_songs == truth.totals["unique_tracks"]
    assert summary.n_unique_artists == truth.totals["unique_artists"]


def test_playlist_and_track_count_ranges_respected():
    spec = GenerationSpec(
        seed=3, n_users=25,
        playlists_per_user=UniformInt(3, 5),
        tracks_per_playlist=UniformInt(12, 15),
    )
    corpus, _ = generate_corpus(spec)
    for user in corpus.users:
        assert 3 <= len(user.playlists) <= 5
        for playlist in user.playlists:
            assert 12 <= len(playlist.tracks) <= 15


def test_attribute_labels_come_from_priors():
    corpus, _ = generate_corpus(GenerationSpec(seed=4, n_users=300))
    labels = collections.Counter(u.attributes["smoke"] for u in corpus.users)
    assert labels["no"] / 300 == pytest.approx(0.8, abs=0.07)


def test_missing_rate_drops_labels():
    corpus, _ = generate_corpus(GenerationSpec(seed=5, n_users=100, missing_rate=0.3))
    missing = sum("smoke" not in u.attributes for u in corpus.users)
    assert 10 <= missing <= 55


def test_null_corpus_rejection_rate_near_alpha():
    corpus, _ = generate_corpus(GenerationSpec(seed=6, n_users=120))
    fc = featurize_corpus(corpus)
    matrix = significance_matrix(fc, [get_task("smoke")])
    testable = [t for t in matrix.tests if not t.degenerate]
    rate = sum(t.significant() for t in testable) / len(testable)
    assert rate <= 0.12  # no planted effect: near the 5% false-positive level


def test_mean_shift_moves_only_target_quantity():
    delta = {"songs_explicit_ratio": 0.3}
    corpus, truth = generate_corpus(
        GenerationSpec(seed=7, n_users=200, effects=(MeanShiftEffect("smoke", "yes", delta),))
    )
    assert truth.signal_pairs == [("smoke", "songs_explicit_ratio")]
    fc = featurize_corpus(corpus)
    col = SCHEMA.index("songs_explicit_ratio")
    groups = {"yes": [], "no": []}
    for user in fc.users:
        groups[user.attributes["smoke"]].append(user.mean_vector()[col])
    assert np.mean(groups["yes"]) - np.mean(groups["no"]) == pytest.approx(0.3, abs=0.05)


def test_mean_shift_on_quantity_includes_min_max_siblings():
    delta = {"songs_danceability_mean": 0.1}
    _, truth = generate_corpus(
        GenerationSpec(seed=8, n_users=20, effects=(MeanShiftEffect("smoke", "yes", delta),))
    )
    signal = {f for (_, f) in truth.signal_pairs}
    assert signal == {
        "songs_danceability_mean", "songs_danceability_min", "songs_danceability_max"
    }


def test_infeasible_shift_errors():
    # explicit probability would exceed 1
    with pytest.raises(GenerationError):
        generate_corpus(
            GenerationSpec(seed=0, n_users=5,
                           effects=(MeanShiftEffect("smoke", "yes", {"songs_explicit_ratio": 0.9}),))
        )
    # a min-statistic shift that pushes the audio window outside [0, 1]
    with pytest.raises(GenerationError):
        generate_corpus(
            GenerationSpec(seed=0, n_users=5,
                           effects=(MeanShiftEffect("smoke", "yes", {"songs_danceability_min": 0.5}),))
        )
    with pytest.raises(GenerationError, match="unknown feature"):
        generate_corpus(
            GenerationSpec(seed=0, n_users=5,
                           effects=(MeanShiftEffect("smoke", "yes", {"no_such_feature": 0.1}),))
        )
    with pytest.raises(GenerationError, match="derived bucket"):
        generate_corpus(
            GenerationSpec(seed=0, n_users=5,
                           effects=(MeanShiftEffect("smoke", "yes", {"genre_other": 0.1}),))
        )
    with pytest.raises(GenerationError, match="std"):
        generate_corpus(
            GenerationSpec(seed=0, n_users=5,
                           effects=(MeanShiftEffect("smoke", "yes", {"songs_danceability_std": 0.1}),))
        )


def test_one_effect_per_attribute():
    with pytest.raises(GenerationError, match="multiple effects"):
        generate_corpus(
            GenerationSpec(
                seed=0, n_users=5,
                effects=(
                    MeanShiftEffect("smoke", "yes", {"songs_explicit_ratio": 0.1}),
                    MaxRuleEffect("smoke", "songs_danceability_mean"),
                ),
            )
        )


def test_max_rule_balances_labels_at_quantile():
    corpus, truth = generate_corpus(
        GenerationSpec(seed=9, n_users=100,
                       effects=(MaxRuleEffect("alcohol", "songs_energy_mean", quantile=0.5),))
    )
    labels = collections.Counter(u.attributes["alcohol"] for u in corpus.users)
    assert labels["yes"] == pytest.approx(50, abs=2)
    rule = truth.max_rules["alcohol"]
    assert rule["feature"] == "songs_energy_mean"
    # the rule is consistent with the realized playlists
    fc = featurize_corpus(corpus)
    col = SCHEMA.index("songs_energy_mean")
    for user in fc.users:
        user_max = user.matrix()[:, col].max()
        expected = "yes" if user_max > rule["threshold"] else "no"
        assert user.attributes["alcohol"] == expected


def test_max_rule_needs_binary_attribute():
    with pytest.raises(GenerationError, match="binary"):
        generate_corpus(
            GenerationSpec(seed=0, n_users=5,
                           effects=(MaxRuleEffect("gender", "songs_energy_mean"),))
        )


def test_cluster_injection_owners_share_class():
    corpus, truth = generate_corpus(
        GenerationSpec(seed=10, n_users=40,
                       effects=(PureClusterEffect("premium", "yes", n_playlists=24, n_owners=6),))
    )
    injected = set(truth.injected_playlists["premium"])
    assert len(injected) == 24
    owners = set()
    for user in corpus.users:
        for playlist in user.playlists:
            if playlist.playlist_id in injected:
                owners.add(user.user_id)
                assert user.attributes["premium"] == "yes"
    assert len(owners) == 6


def test_generated_corpus_featurizes_cleanly():
    corpus, _ = generate_corpus(GenerationSpec(seed=11, n_users=15))
    fc = featurize_corpus(corpus)
    X, _, _ = fc.playlist_matrix()
    assert not np.isnan(X).any()
    ratios = X[:, list(SCHEMA.ratio_indices)]
    assert (ratios >= 0).all() and (ratios <= 1).all()
