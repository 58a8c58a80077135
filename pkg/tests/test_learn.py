import numpy as np
import pytest

from playlistmine.learn import (
    DecisionTree,
    DeepSetClassifier,
    KNearestNeighbors,
    LogisticRegression,
    MlpClassifier,
    RandomForest,
    RandomGuess,
    Scaler,
    TrainedModel,
    TrainingError,
    average_user_prediction,
    fit_scaler,
    load_checkpoint,
    save_checkpoint,
    train_baseline,
)
from playlistmine.learn.deepset import (
    DeepSetParameters,
    canonical_set_order,
    deepset_forward,
    deepset_loss_and_grads,
    init_deepset,
    phi_sizes_for,
    rho_sizes_for,
)
from playlistmine.learn.nn import (
    MlpParameters,
    cross_entropy,
    gradient_check,
    init_mlp,
    mlp_backward,
    mlp_forward,
    softmax,
)
from playlistmine.metrics import expected_stratified_guess_f1, weighted_f1


def _two_gaussians(n, d=6, sep=2.0, seed=0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 1, size=(n // 2, d)), rng.normal(sep, 1, size=(n // 2, d))])
    y = np.array([0] * (n // 2) + [1] * (n // 2))
    idx = rng.permutation(n)
    return X[idx], y[idx]


# ----------------------------------------------------------------- LR

def test_lr_separable_training_accuracy():
    X, y = _two_gaussians(60, sep=6.0)
    model = LogisticRegression(C=10).fit(X, y, 2)
    assert (model.predict(X) == y).mean() == 1.0


def test_lr_zero_weights_uniform_distribution():
    model = LogisticRegression()
    model.n_classes = 3
    model.coef = np.zeros((4, 3))
    model.intercept = np.zeros(3)
    probs = model.predict_proba(np.ones((2, 4)))
    assert probs == pytest.approx(np.full((2, 3), 1 / 3))


def test_lr_fixed_weights_hand_softmax():
    model = LogisticRegression()
    model.n_classes = 2
    model.coef = np.array([[1.0, -1.0], [0.5, 0.0]])
    model.intercept = np.array([0.1, -0.1])
    x = np.array([[2.0, 1.0]])
    logits = np.array([2 * 1 + 1 * 0.5 + 0.1, 2 * -1 + 0 - 0.1])
    expected = np.exp(logits - logits.max())
    expected /= expected.sum()
    assert model.predict_proba(x)[0] == pytest.approx(expected, rel=1e-12)


def test_lr_missing_class_is_training_error():
    X = np.ones((4, 3))
    y = np.zeros(4, dtype=int)
    with pytest.raises(TrainingError):
        LogisticRegression().fit(X, y, n_classes=2)


# ----------------------------------------------------------------- trees

def test_dt_memorizes_consistent_data():
    X, y = _two_gaussians(40, sep=0.5, seed=1)
    model = DecisionTree(max_depth=None).fit(X, y, 2)
    assert (model.predict(X) == y).mean() == 1.0


def test_dt_leaf_probabilities_are_frequencies():
    X = np.array([[0.0], [0.0], [0.0], [1.0]])
    y = np.array([0, 0, 1, 1])
    model = DecisionTree(max_depth=1).fit(X, y, 2)
    probs = model.predict_proba(np.array([[0.0]]))
    assert probs[0] == pytest.approx([2 / 3, 1 / 3])


def test_dt_scaling_leaves_split_structure_unchanged():
    X, y = _two_gaussians(60, sep=1.5, seed=2)
    scale = np.array([10.0, 0.1, 3.0, 1.0, 100.0, 0.5])
    t1 = DecisionTree(max_depth=4).fit(X, y, 2)
    t2 = DecisionTree(max_depth=4).fit(X * scale, y, 2)
    structure1 = [(n.feature, n.left, n.right) for n in t1.nodes]
    structure2 = [(n.feature, n.left, n.right) for n in t2.nodes]
    assert structure1 == structure2
    test_X, _ = _two_gaussians(30, sep=1.5, seed=3)
    assert (t1.predict(test_X) == t2.predict(test_X * scale)).all()


def test_rf_close_to_reference_implementation():
    from sklearn.ensemble import RandomForestClassifier

    X, y = _two_gaussians(200, sep=1.2, seed=4)
    X_test, y_test = _two_gaussians(400, sep=1.2, seed=5)
    ours = RandomForest(n_estimators=128, max_depth=None, seed=0).fit(X, y, 2)
    ours_acc = (ours.predict(X_test) == y_test).mean()
    ref = RandomForestClassifier(n_estimators=128, max_features="sqrt", random_state=0).fit(X, y)
    ref_acc = (ref.predict(X_test) == y_test).mean()
    assert abs(ours_acc - ref_acc) <= 0.03


def test_rf_scaling_invariance_at_argmax_level():
    X, y = _two_gaussians(80, sep=1.5, seed=6)
    scale = np.array([4.0, 0.25, 1.0, 50.0, 2.0, 0.1])
    f1 = RandomForest(n_estimators=16, seed=1).fit(X, y, 2)
    f2 = RandomForest(n_estimators=16, seed=1).fit(X * scale, y, 2)
    X_test, _ = _two_gaussians(40, sep=1.5, seed=7)
    assert (f1.predict(X_test) == f2.predict(X_test * scale)).all()


# ----------------------------------------------------------------- knn

def test_knn_unanimous_neighbors():
    X = np.array([[0.0], [0.1], [0.2], [5.0]])
    y = np.array([1, 1, 1, 0])
    model = KNearestNeighbors(n_neighbors=3).fit(X, y, 2)
    assert model.predict_proba(np.array([[0.05]]))[0] == pytest.approx([0.0, 1.0])


def test_knn_distance_weights_exact_match():
    X = np.array([[0.0], [1.0], [2.0]])
    y = np.array([0, 1, 1])
    model = KNearestNeighbors(n_neighbors=3, weights="distance").fit(X, y, 2)
    # query exactly on a training point: that neighbor takes all the mass
    assert model.predict_proba(np.array([[0.0]]))[0] == pytest.approx([1.0, 0.0])


def test_knn_standardized_scaling_invariance():
    X, y = _two_gaussians(60, sep=1.5, seed=8)
    scale = np.array([10.0, 0.2, 3.0, 1.0, 5.0, 0.5])
    X_test, _ = _two_gaussians(30, sep=1.5, seed=9)
    s1 = fit_scaler(X)
    s2 = fit_scaler(X * scale)
    m1 = KNearestNeighbors(5).fit(s1.transform(X), y, 2)
    m2 = KNearestNeighbors(5).fit(s2.transform(X * scale), y, 2)
    p1 = m1.predict(s1.transform(X_test))
    p2 = m2.predict(s2.transform(X_test * scale))
    assert (p1 == p2).all()


# ----------------------------------------------------------------- averaging

def test_average_user_prediction_fixtures():
    mean, cls = average_user_prediction(np.array([[0.2, 0.8], [0.6, 0.4]]))
    assert mean == pytest.approx([0.4, 0.6])
    assert cls == 1
    mean, cls = average_user_prediction(np.array([[0.5, 0.5]] * 3))
    assert cls == 0  # tie breaks toward the lowest class index
    single = np.array([[0.1, 0.9]])
    mean, cls = average_user_prediction(single)
    assert mean == pytest.approx(single[0])


# ----------------------------------------------------------------- deepset

def test_deepset_singleton_aggregation():
    rng = np.random.default_rng(0)
    params = init_deepset(4, 3, 1, 1, "relu", rng)
    x = rng.normal(size=(1, 4))
    from playlistmine.learn.nn import mlp_forward as fwd

    z, _ = fwd(params.phi, x, activate_last=True)
    embedding = np.concatenate([z[0], z[0], z[0]])
    logits, _ = fwd(params.rho, embedding[None, :])
    assert deepset_forward(params, x) == pytest.approx(softmax(logits)[0], rel=1e-12)


def test_deepset_permutation_invariance_bitwise():
    rng = np.random.default_rng(1)
    params = init_deepset(5, 2, 2, 2, "tanh", rng)
    X = rng.normal(size=(9, 5))
    base = deepset_forward(params, X)
    for _ in range(10):
        perm = X[rng.permutation(9)]
        assert deepset_forward(params, perm).tolist() == base.tolist()


def test_deepset_hand_computed_linear_case():
    # positive inputs and identity-like weights keep relu in its linear range
    phi = MlpParameters([np.eye(2)], [np.zeros(2)], "relu")
    rho_w = np.array(
        [[1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.0, 0.5], [0.25, 0.0], [0.0, 0.25]]
    )
    rho = MlpParameters([rho_w], [np.zeros(2)], "relu")
    params = DeepSetParameters(phi, rho)
    sets = np.array([[1.0, 2.0], [3.0, 1.0]])
    mean = np.array([2.0, 1.5])
    mx = np.array([3.0, 2.0])
    sm = np.array([4.0, 3.0])
    embedding = np.concatenate([mean, mx, sm])
    logits = embedding @ rho_w
    assert deepset_forward(params, sets) == pytest.approx(softmax(logits), rel=1e-12)


def test_deepset_distribution_is_valid():
    rng = np.random.default_rng(2)
    params = init_deepset(6, 4, 2, 1, "relu", rng)
    for _ in range(20):
        probs = deepset_forward(params, rng.normal(size=(rng.integers(1, 7), 6)))
        assert probs.min() >= 0
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_canonical_set_order_sorts_rows():
    X = np.array([[2.0, 1.0], [1.0, 5.0], [1.0, 2.0]])
    ordered = canonical_set_order(X)
    assert ordered.tolist() == [[1.0, 2.0], [1.0, 5.0], [2.0, 1.0]]


def test_shape_builders():
    assert phi_sizes_for(111, 1) == [111, 64]
    assert phi_sizes_for(111, 2) == [111, 64, 32]
    assert phi_sizes_for(111, 3) == [111, 64, 32, 16]
    assert rho_sizes_for(64, 1, 3) == [192, 3]
    assert rho_sizes_for(64, 2, 3) == [192, 96, 3]
    assert rho_sizes_for(64, 3, 3) == [192, 96, 48, 3]


def test_deepset_head_must_consume_three_pools():
    rng = np.random.default_rng(6)
    phi = init_mlp([4, 8], "relu", rng)
    bad_rho = init_mlp([8, 2], "relu", rng)  # needs 3 x 8 = 24 inputs
    with pytest.raises(ValueError, match="3 x phi"):
        DeepSetParameters(phi, bad_rho)


# ----------------------------------------------------------------- gradients

def test_gradient_check_linear_squared_loss():
    rng = np.random.default_rng(3)
    W = rng.normal(size=(4, 2))
    X = rng.normal(size=(10, 4))
    Y = rng.normal(size=(10, 2))

    def loss_fn():
        R = X @ W - Y
        return 0.5 * float((R * R).sum())

    grad = X.T @ (X @ W - Y)
    assert gradient_check([W], loss_fn, [grad]) < 1e-8


def test_gradient_check_two_layer_tanh_mlp():
    rng = np.random.default_rng(4)
    params = init_mlp([5, 7, 3], "tanh", rng)
    X = rng.normal(size=(8, 5))
    y = rng.integers(0, 3, size=8)

    def loss_fn():
        logits, _ = mlp_forward(params, X)
        return cross_entropy(softmax(logits), y)[0]

    logits, caches = mlp_forward(params, X)
    _, grad_logits = cross_entropy(softmax(logits), y)
    grads, _ = mlp_backward(params, caches, grad_logits)
    assert gradient_check(params.arrays(), loss_fn, grads.arrays()) < 1e-4


def test_gradient_check_deepset_max_away_from_ties():
    # tanh keeps the phi outputs generically distinct, so every max pool has
    # a unique per-coordinate maximizer (relu would clamp several rows to an
    # exactly tied 0, where finite differences are meaningless)
    rng = np.random.default_rng(5)
    params = init_deepset(3, 2, 2, 2, "tanh", rng, phi_hidden=(5, 4))
    sets = [rng.normal(size=(int(rng.integers(2, 5)), 3)) for _ in range(4)]
    y = rng.integers(0, 2, size=4)

    def loss_fn():
        return deepset_loss_and_grads(params, sets, y)[0]

    _, grads = deepset_loss_and_grads(params, sets, y)
    assert gradient_check(params.arrays(), loss_fn, grads) < 1e-4


# ----------------------------------------------------------------- training

def test_mlp_loss_non_increasing_moving_average():
    X, y = _two_gaussians(300, sep=1.5, seed=10)
    model = MlpClassifier(hidden=(16,), lr=0.001, max_epochs=80, seed=0).fit(X, y, 2)
    losses = np.array(model.loss_history_)
    window = 20
    if len(losses) > window:
        averaged = np.convolve(losses, np.ones(window) / window, mode="valid")
        assert (np.diff(averaged) <= 1e-4).all()


def test_mlp_adaptive_rate_decays_on_plateau():
    # a trivially separable problem converges early; the rate then steps
    # down by factors of 5 until training halts below 1e-6
    X, y = _two_gaussians(60, sep=8.0, seed=18)
    model = MlpClassifier(hidden=(8,), lr=0.01, max_epochs=200, seed=0).fit(X, y, 2)
    assert model.n_epochs_ < 200
    assert model.final_lr_ < model.lr
    assert model.final_lr_ < 1e-6


def test_deepset_learns_mean_rule():
    # label depends on the mean of a user's playlists: training F1 > 0.95
    rng = np.random.default_rng(11)
    sets, labels = [], []
    for _ in range(200):
        n = int(rng.integers(2, 8))
        center = rng.uniform(-1, 1)
        s = rng.normal(center, 0.3, size=(n, 5))
        sets.append(s)
        labels.append(int(center > 0))
    y = np.array(labels)
    model = DeepSetClassifier(
        phi_layers=1, rho_layers=1, lr=0.01, seed=0, phi_hidden=(16,), max_epochs=120
    ).fit(sets[:160], y[:160], sets[160:], y[160:], 2)
    train_pred = model.predict_sets(sets[:160])
    assert weighted_f1(y[:160], train_pred) > 0.95


def test_deepset_shuffled_labels_stay_near_chance():
    rng = np.random.default_rng(12)
    sets = [rng.normal(size=(int(rng.integers(2, 6)), 5)) for _ in range(120)]
    y = rng.integers(0, 2, size=120)
    model = DeepSetClassifier(
        phi_layers=1, rho_layers=1, lr=0.01, seed=0, phi_hidden=(8,), max_epochs=40
    ).fit(sets[:90], y[:90], sets[90:], y[90:], 2)
    test_pred = model.predict_sets(sets[90:])
    assert weighted_f1(y[90:], test_pred) < 0.75  # no signal to learn


# ----------------------------------------------------------------- random guess

def test_random_guess_degenerate_prior():
    model = RandomGuess(seed=0).fit(np.zeros(10, dtype=int), 2)
    assert (model.predict(50) == 0).all()


def test_random_guess_law_of_large_numbers():
    y = np.array([0] * 500 + [1] * 500)
    model = RandomGuess(seed=3).fit(y, 2)
    draws = model.predict(4000)
    assert abs((draws == 0).mean() - 0.5) < 0.03


def test_random_guess_deterministic_per_seed():
    y = np.array([0, 0, 1, 1, 1])
    a = RandomGuess(seed=9).fit(y, 2).predict(20)
    b = RandomGuess(seed=9).fit(y, 2).predict(20)
    assert (a == b).all()


def test_random_guess_matches_closed_form_expected_f1():
    prior = np.array([0.8, 0.2])
    expected = expected_stratified_guess_f1(prior, prior)
    rng = np.random.default_rng(13)
    scores = []
    for seed in range(1000):
        y_true = rng.choice(2, size=200, p=prior)
        model = RandomGuess(seed=seed)
        model.n_classes = 2
        model.prior = prior
        scores.append(weighted_f1(y_true, model.predict(200)))
    assert abs(np.mean(scores) - expected) < 0.02


# ----------------------------------------------------------------- wrappers

def test_train_baseline_dispatch_and_user_averaging():
    X, y = _two_gaussians(60, sep=4.0, seed=14)
    scaler = fit_scaler(X)
    estimator = train_baseline("LR", scaler.transform(X), y, 2, {"C": 1.0}, seed=0)
    model = TrainedModel("LR", "smoke", ("yes", "no"), estimator, scaler, {"C": 1.0})
    sets = [X[:3], X[3:5]]
    probs = model.predict_users(sets)
    assert probs.shape == (2, 2)
    assert probs.sum(axis=1) == pytest.approx([1.0, 1.0])
    direct = np.mean(model.predict_playlists(X[:3]), axis=0)
    assert probs[0] == pytest.approx(direct, rel=1e-12)
    single = model.predict_playlist(X[0])
    assert single.shape == (2,)
    assert single == pytest.approx(model.predict_playlists(X[:1])[0], rel=1e-12)
    with pytest.raises(ValueError):
        model.predict_playlist(X[:2])


def test_trained_model_rejects_playlist_calls_for_set_models():
    model = TrainedModel("RG", "smoke", ("yes", "no"), RandomGuess(0).fit(np.array([0, 1]), 2), None, {})
    with pytest.raises(TrainingError):
        model.predict_playlists(np.zeros((2, 3)))


@pytest.mark.parametrize("kind", ["LR", "DT", "RF", "KNN", "MLP"])
def test_checkpoint_round_trip_baselines(tmp_path, kind):
    X, y = _two_gaussians(40, sep=2.0, seed=15)
    hyper = {
        "LR": {"C": 1.0},
        "DT": {"max_depth": 3},
        "RF": {"n_estimators": 8, "max_depth": 3},
        "KNN": {"n_neighbors": 3},
        "MLP": {"hidden": (8,), "max_epochs": 10},
    }[kind]
    estimator = train_baseline(kind, X, y, 2, hyper, seed=0)
    model = TrainedModel(kind, "smoke", ("yes", "no"), estimator, fit_scaler(X), hyper)
    path = tmp_path / "model.json"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.kind == kind and loaded.classes == ("yes", "no")
    X_test, _ = _two_gaussians(20, sep=2.0, seed=16)
    original = estimator.predict_proba(X_test)
    restored = loaded.estimator.predict_proba(X_test)
    assert original == pytest.approx(restored, rel=1e-12)


def test_checkpoint_round_trip_deepset_and_rg(tmp_path):
    rng = np.random.default_rng(17)
    sets = [rng.normal(size=(3, 5)) for _ in range(30)]
    y = rng.integers(0, 2, size=30)
    ds = DeepSetClassifier(phi_layers=1, rho_layers=1, phi_hidden=(6,), max_epochs=5, seed=0)
    ds.fit(sets[:20], y[:20], sets[20:], y[20:], 2)
    model = TrainedModel("DS", "smoke", ("yes", "no"), ds, None, {})
    save_checkpoint(model, tmp_path / "ds.json")
    loaded = load_checkpoint(tmp_path / "ds.json")
    assert loaded.estimator.predict_proba_sets(sets[:4]) == pytest.approx(
        ds.predict_proba_sets(sets[:4]), rel=1e-12
    )
    rg = RandomGuess(seed=5).fit(y, 2)
    save_checkpoint(TrainedModel("RG", "smoke", ("yes", "no"), rg, None, {}), tmp_path / "rg.json")
    loaded_rg = load_checkpoint(tmp_path / "rg.json")
    assert (loaded_rg.estimator.predict(25) == rg.predict(25)).all()
