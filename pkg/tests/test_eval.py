import numpy as np
import pytest

from playlistmine.core import get_task
from playlistmine.eval import (
    ExperimentError,
    SplitError,
    build_task_dataset,
    default_grids,
    grid_search,
    run_experiment,
    split_dataset,
    split_labeled_users,
    write_report_csv,
    write_report_json,
)
from playlistmine.features import FeatureVector, FeaturizedCorpus, FeaturizedUser, build_schema, load_lexicon
from playlistmine.metrics import expected_stratified_guess_f1, weighted_f1
from playlistmine.synth import GenerationSpec, generate_corpus
from playlistmine.features import featurize_corpus

SCHEMA = build_schema(load_lexicon())


def make_fc(user_vectors, attributes):
    users = []
    for i, (vectors, attrs) in enumerate(zip(user_vectors, attributes)):
        fvs = tuple(
            FeatureVector(f"u{i:03d}-p{j}", f"u{i:03d}", np.asarray(v, dtype=np.float64))
            for j, v in enumerate(vectors)
        )
        users.append(FeaturizedUser(f"u{i:03d}", attrs, fvs))
    return FeaturizedCorpus(tuple(users), SCHEMA, "synthetic")


# ----------------------------------------------------------------- weighted F1

def test_weighted_f1_perfect():
    assert weighted_f1([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0


def test_weighted_f1_all_wrong():
    assert weighted_f1([0, 0, 1, 1], [1, 1, 0, 0]) == 0.0


def test_weighted_f1_hand_computed():
    # class 0: P=1, R=2/3, F1=0.8 weight 0.75; class 1: P=0.5, R=1, F1=2/3 weight 0.25
    value = weighted_f1([0, 0, 0, 1], [0, 0, 1, 1])
    assert value == pytest.approx(0.7667, abs=1e-4)


def test_weighted_f1_matches_sklearn():
    from sklearn.metrics import f1_score

    rng = np.random.default_rng(0)
    for _ in range(30):
        y_true = rng.integers(0, 3, size=40)
        y_pred = rng.integers(0, 3, size=40)
        ours = weighted_f1(y_true, y_pred)
        ref = f1_score(y_true, y_pred, average="weighted")
        assert ours == pytest.approx(ref, abs=1e-12)


def test_majority_predictor_closed_form():
    y_true = np.array([0] * 70 + [1] * 30)
    y_pred = np.zeros(100, dtype=int)
    # class 0: P=0.7, R=1 -> F1 = 14/17; class 1: F1 = 0
    assert weighted_f1(y_true, y_pred) == pytest.approx(0.7 * (2 * 0.7 / 1.7))


# ----------------------------------------------------------------- splits

def _draw_labels(prior, n, seed):
    rng = np.random.default_rng(seed)
    names = sorted(prior)
    probs = np.array([prior[c] for c in names])
    probs = probs / probs.sum()
    return [names[i] for i in rng.choice(len(names), size=n, p=probs)]


def test_split_no_user_overlap_and_exhaustive():
    labels = _draw_labels({"yes": 0.6, "no": 0.4}, 150, 0)
    ids = [f"u{i}" for i in range(150)]
    plan = split_labeled_users(ids, labels, "smoke", 3)
    assert not plan.train & plan.val
    assert not plan.train & plan.test
    assert not plan.val & plan.test
    assert plan.train | plan.val | plan.test == set(ids)


def test_split_tolerances_on_balanced_binary():
    labels = ["a"] * 50 + ["b"] * 50
    ids = [f"u{i}" for i in range(100)]
    for seed in range(10):
        plan = split_labeled_users(ids, labels, "t", seed)
        sizes = (len(plan.train), len(plan.val), len(plan.test))
        assert abs(sizes[0] - 70) <= 2 and abs(sizes[1] - 10) <= 2 and abs(sizes[2] - 20) <= 2
        for part in (plan.train, plan.val, plan.test):
            share = sum(labels[int(u[1:])] == "a" for u in part) / len(part)
            assert abs(share - 0.5) <= 0.05


def test_split_deterministic():
    labels = _draw_labels({"x": 0.5, "y": 0.3, "z": 0.2}, 120, 1)
    ids = [f"u{i}" for i in range(120)]
    p1 = split_labeled_users(ids, labels, "t", 7)
    p2 = split_labeled_users(ids, labels, "t", 7)
    assert (p1.train, p1.val, p1.test) == (p2.train, p2.val, p2.test)


def test_split_small_class_errors():
    labels = ["a"] * 50 + ["b"] * 2
    ids = [f"u{i}" for i in range(52)]
    with pytest.raises(SplitError, match="b"):
        split_labeled_users(ids, labels, "t", 0)


def test_split_dataset_uses_labeled_users_only():
    vectors = [[np.zeros(111)] for _ in range(30)]
    attrs = [{"smoke": "yes"} if i < 12 else {"smoke": "no"} for i in range(28)]
    attrs += [{}, {}]  # two unlabeled users
    fc = make_fc(vectors, attrs)
    plan = split_dataset(fc, get_task("smoke"), 0)
    everyone = plan.train | plan.val | plan.test
    assert len(everyone) == 28
    assert "u028" not in everyone and "u029" not in everyone


# ----------------------------------------------------------------- grids

def test_default_grid_sizes_match_search_space():
    grids = default_grids(111)
    assert len(grids["LR"]) == 4 * 2 * 2
    assert len(grids["DT"]) == 2 * 4 * 2
    assert len(grids["RF"]) == 2 * 4 * 2 * 4
    assert len(grids["KNN"]) == 4 * 2
    assert len(grids["MLP"]) == 3 * 2 * 3 * 3
    assert len(grids["DS"]) == 3 * 3 * 2 * 3
    assert grids["RG"] == [{}]
    assert {"C": 0.01, "fit_intercept": True, "class_weight": None} in grids["LR"]
    hidden = {tuple(g["hidden_layer_sizes"]) for g in grids["MLP"]}
    assert hidden == {(111,), (111, 55), (55,)}


def _and_rule_fc(n=80, seed=0):
    """One playlist per user; label = AND of the first two binary features.

    A depth-1 tree cannot express the conjunction (75% ceiling); an
    unbounded tree separates it exactly and generalizes.
    """
    rng = np.random.default_rng(seed)
    vectors, attrs = [], []
    for i in range(n):
        bits = rng.integers(0, 2, size=2)
        v = np.zeros(111)
        v[0], v[1] = bits
        v[2:] = rng.normal(0, 0.01, size=109)
        vectors.append([v])
        attrs.append({"smoke": "yes" if bits[0] and bits[1] else "no"})
    return make_fc(vectors, attrs)


def test_grid_search_single_config():
    fc = _and_rule_fc()
    ds = build_task_dataset(fc, get_task("smoke"))
    plan = split_dataset(fc, get_task("smoke"), 0)
    grid = [{"criterion": "gini", "max_depth": 3, "class_weight": None}]
    result = grid_search("DT", grid, ds, plan, seed=0)
    assert result.best_config == grid[0]


def test_grid_search_picks_the_config_that_separates():
    fc = _and_rule_fc()
    ds = build_task_dataset(fc, get_task("smoke"))
    plan = split_dataset(fc, get_task("smoke"), 0)
    # depth 1 cannot express XOR; unbounded depth can
    grid = [
        {"criterion": "gini", "max_depth": 1, "class_weight": None},
        {"criterion": "gini", "max_depth": None, "class_weight": None},
    ]
    result = grid_search("DT", grid, ds, plan, seed=0)
    assert result.best_config["max_depth"] is None
    assert result.best_score > 0.9


def test_grid_search_tie_goes_to_first_config():
    fc = _and_rule_fc()
    ds = build_task_dataset(fc, get_task("smoke"))
    plan = split_dataset(fc, get_task("smoke"), 0)
    config = {"criterion": "gini", "max_depth": None, "class_weight": None}
    result = grid_search("DT", [dict(config, criterion="entropy"), config], ds, plan, seed=0)
    assert result.best_config["criterion"] == "entropy"


def test_grid_search_never_touches_test_users():
    fc = _and_rule_fc(seed=3)
    task = get_task("smoke")
    ds = build_task_dataset(fc, task)
    plan = split_dataset(fc, task, 0)
    grid = [
        {"criterion": "gini", "max_depth": d, "class_weight": None} for d in (1, 3, None)
    ]
    baseline = grid_search("DT", grid, ds, plan, seed=0)
    # corrupt every test user's playlists; selection must not change
    test_idx = set(ds.indices_for(plan.test).tolist())
    poisoned_sets = tuple(
        np.full_like(s, 1e6) if i in test_idx else s for i, s in enumerate(ds.sets)
    )
    import dataclasses

    poisoned = dataclasses.replace(ds, sets=poisoned_sets)
    again = grid_search("DT", grid, poisoned, plan, seed=0)
    assert again.best_config == baseline.best_config
    assert again.best_score == pytest.approx(baseline.best_score)


def test_grid_search_all_failures_raises():
    fc = _and_rule_fc()
    ds = build_task_dataset(fc, get_task("smoke"))
    plan = split_dataset(fc, get_task("smoke"), 0)
    # k far larger than the training split forces Training errors
    grid = [{"n_neighbors": 10_000, "weights": "uniform"}]
    with pytest.raises(ExperimentError):
        grid_search("KNN", grid, ds, plan, seed=0)


# ----------------------------------------------------------------- experiments

SMALL_GRIDS = {
    "RG": [{}],
    "DT": [{"criterion": "gini", "max_depth": 3, "class_weight": None}],
    "KNN": [{"n_neighbors": 5, "weights": "uniform"}],
}


@pytest.fixture(scope="module")
def synth_fc():
    corpus, _ = generate_corpus(GenerationSpec(seed=21, n_users=90))
    return featurize_corpus(corpus)


def test_run_experiment_random_guess_near_closed_form(synth_fc):
    task = get_task("premium")
    report = run_experiment(synth_fc, task, kinds=("RG",), n_repetitions=5, grids=SMALL_GRIDS)
    outcome = report.models["RG"]
    labels = [u.attributes["premium"] for u in synth_fc.users if "premium" in u.attributes]
    prior = np.array([labels.count(c) / len(labels) for c in task.classes])
    expected = expected_stratified_guess_f1(prior, prior)
    assert outcome.mean == pytest.approx(expected, abs=0.12)


def test_run_experiment_single_repetition_zero_std(synth_fc):
    report = run_experiment(
        synth_fc, get_task("smoke"), kinds=("RG", "DT"), n_repetitions=1, grids=SMALL_GRIDS
    )
    assert report.models["RG"].std == 0.0
    assert report.models["DT"].std == 0.0
    assert report.seeds == [0]


def test_run_experiment_deterministic(synth_fc):
    kw = dict(kinds=("RG", "DT", "KNN"), n_repetitions=2, grids=SMALL_GRIDS)
    r1 = run_experiment(synth_fc, get_task("smoke"), **kw)
    r2 = run_experiment(synth_fc, get_task("smoke"), **kw)
    assert r1.as_dict() == r2.as_dict()


def test_run_experiment_parallel_matches_serial(synth_fc):
    kw = dict(kinds=("RG", "DT"), n_repetitions=2, grids=SMALL_GRIDS)
    serial = run_experiment(synth_fc, get_task("smoke"), n_jobs=1, **kw)
    parallel = run_experiment(synth_fc, get_task("smoke"), n_jobs=2, **kw)
    assert serial.as_dict() == parallel.as_dict()


def test_run_experiment_records_failures_without_aborting(synth_fc):
    grids = dict(SMALL_GRIDS, KNN=[{"n_neighbors": 10_000, "weights": "uniform"}])
    report = run_experiment(
        synth_fc, get_task("smoke"), kinds=("RG", "KNN"), n_repetitions=2, grids=grids
    )
    assert report.models["RG"].scores
    assert not report.models["KNN"].scores
    assert report.models["KNN"].error


def test_report_writers(tmp_path, synth_fc):
    report = run_experiment(
        synth_fc, get_task("smoke"), kinds=("RG", "DT"), n_repetitions=2, grids=SMALL_GRIDS
    )
    write_report_csv([report], tmp_path / "report.csv")
    write_report_json([report], tmp_path / "report.json")
    import csv, json

    with open(tmp_path / "report.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["model", "smoke"]
    kinds = [r[0] for r in rows[1:]]
    assert kinds == ["RG", "LR", "DT", "RF", "KNN", "MLP", "DS"]
    rg_cell = rows[1][1]
    assert "±" in rg_cell  # mean-plus-minus-std format, 0-100 scale
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["reports"][0]["task"] == "smoke"
