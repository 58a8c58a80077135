"""Experiment protocol: user-grouped stratified splits, grid-search model
selection, repeated runs, and weighted-F1 reporting.

All playlists of a user land in exactly one of train/validation/test (70/10/20
by user count), stratified so each partition's class mix stays close to the
corpus prior. Every model is evaluated at the user level: one prediction per
user, never per playlist. Test data never touches scaler fitting, model
selection, or early stopping.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import learn
from .core import AttributeTask
from .features import FeaturizedCorpus
from .learn import (
    DeepSetClassifier,
    RandomGuess,
    Scaler,
    TrainedModel,
    TrainingError,
    fit_scaler,
    train_baseline,
)
from .learn.nn import TrainingDivergedError
from .metrics import weighted_f1  # noqa: F401  (re-exported: this is the scoring metric)

logger = logging.getLogger(__name__)

RATIOS = (0.70, 0.10, 0.20)
SIZE_TOLERANCE = 0.02   # user-count share per partition
PROP_TOLERANCE = 0.05   # absolute class-proportion deviation per partition
PARTITIONS = ("train", "val", "test")


class SplitError(ValueError):
    """The task cannot be split (too few users in some class)."""


class ExperimentError(RuntimeError):
    """No configuration of a model kind could be trained."""


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/validation/test user-id sets for one task and seed."""

    task: str
    seed: int
    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]
    deviations: dict = field(default_factory=dict, compare=False)

    def partition_of(self, user_id: str) -> str:
        for name, ids in zip(PARTITIONS, (self.train, self.val, self.test)):
            if user_id in ids:
                return name
        raise KeyError(user_id)


def _violation(
    sizes: list[int], counts: dict[str, list[int]], priors: dict[str, float], n: int
) -> tuple[float, float]:
    """(shaped score, tolerance excess). Zero excess means invariants hold."""
    hard = 0.0
    soft = 0.0
    for p in range(3):
        size_dev = abs(sizes[p] - RATIOS[p] * n) / n
        hard += max(0.0, size_dev - SIZE_TOLERANCE)
        soft += size_dev
        if sizes[p] == 0:
            hard += 1.0
            continue
        for c, prior in priors.items():
            prop_dev = abs(counts[c][p] / sizes[p] - prior)
            hard += max(0.0, prop_dev - PROP_TOLERANCE)
            soft += prop_dev
    return hard + 1e-3 * soft, hard


def _size_excess(sizes: list[int], n: int) -> float:
    return sum(max(0.0, abs(sizes[p] - RATIOS[p] * n) / n - SIZE_TOLERANCE) for p in range(3))


def split_labeled_users(user_ids: list[str], labels: list[str], task: str, seed: int) -> SplitPlan:
    """Greedy seeded stratified assignment of users to train/val/test.

    Users are shuffled, then each is placed into the partition that most
    reduces the divergence from the target ratios and class proportions. A
    deterministic local-repair pass (single moves, swaps, and size-correcting
    kicks) then enforces the tolerances; some label multisets admit no exact
    solution, in which case the closest achievable plan is returned with a
    warning and the residual deviations recorded.
    """
    n = len(user_ids)
    totals = Counter(labels)
    too_small = sorted(c for c, k in totals.items() if k < 3)
    if too_small:
        raise SplitError(
            f"task {task!r}: classes with fewer than 3 users cannot be split: {too_small}"
        )
    rng = np.random.default_rng(seed)
    order = [int(i) for i in rng.permutation(n)]
    priors = {c: totals[c] / n for c in totals}
    sizes = [0, 0, 0]
    counts: dict[str, list[int]] = {c: [0, 0, 0] for c in totals}
    assign = [0] * n
    seen: Counter = Counter()
    for i in order:
        c = labels[i]
        seen[c] += 1
        best_p, best_cost = 0, None
        for p in range(3):
            # running-quota overshoot, in user counts: class term + size term
            cost = (counts[c][p] + 1 - RATIOS[p] * seen[c]) + (
                sizes[p] + 1 - RATIOS[p] * (sum(sizes) + 1)
            )
            if best_cost is None or cost < best_cost - 1e-12:
                best_p, best_cost = p, cost
        assign[i] = best_p
        sizes[best_p] += 1
        counts[c][best_p] += 1

    def apply(c: str, p: int, q: int) -> None:
        counts[c][p] -= 1
        counts[c][q] += 1
        sizes[p] -= 1
        sizes[q] += 1

    def move_user(c: str, p: int, q: int) -> None:
        for i in order:
            if labels[i] == c and assign[i] == p:
                assign[i] = q
                break
        apply(c, p, q)

    classes = sorted(totals)
    kicks = 0
    for _ in range(5 * n):
        score0, excess0 = _violation(sizes, counts, priors, n)
        if excess0 <= 0:
            break
        best: tuple[float, tuple[tuple[str, int, int], ...]] | None = None
        for c in classes:
            for p in range(3):
                if counts[c][p] == 0:
                    continue
                for q in range(3):
                    if q == p:
                        continue
                    apply(c, p, q)
                    score, _ = _violation(sizes, counts, priors, n)
                    apply(c, q, p)
                    if score < score0 - 1e-12 and (best is None or score < best[0] - 1e-12):
                        best = (score, ((c, p, q),))
        if best is None:
            for c in classes:
                for p in range(3):
                    if counts[c][p] == 0:
                        continue
                    for q in range(3):
                        if q == p:
                            continue
                        for c2 in classes:
                            if c2 == c or counts[c2][q] == 0:
                                continue
                            apply(c, p, q)
                            apply(c2, q, p)
                            score, _ = _violation(sizes, counts, priors, n)
                            apply(c, q, p)
                            apply(c2, p, q)
                            if score < score0 - 1e-12 and (
                                best is None or score < best[0] - 1e-12
                            ):
                                best = (score, ((c, p, q), (c2, q, p)))
        if best is None and kicks < 10 and _size_excess(sizes, n) > 0:
            # stalled with a size violation: take the size-correcting move
            # that hurts the proportions least, then resume normal repair
            kick: tuple[float, tuple[tuple[str, int, int], ...]] | None = None
            base_excess = _size_excess(sizes, n)
            for c in classes:
                for p in range(3):
                    if counts[c][p] == 0:
                        continue
                    for q in range(3):
                        if q == p:
                            continue
                        apply(c, p, q)
                        size_after = _size_excess(sizes, n)
                        score, _ = _violation(sizes, counts, priors, n)
                        apply(c, q, p)
                        if size_after < base_excess - 1e-12 and (
                            kick is None or score < kick[0] - 1e-12
                        ):
                            kick = (score, ((c, p, q),))
            best = kick
            kicks += 1
        if best is None:
            break
        for c, p, q in best[1]:
            move_user(c, p, q)

    _, excess = _violation(sizes, counts, priors, n)
    deviations = {
        "size": max(abs(sizes[p] - RATIOS[p] * n) / n for p in range(3)),
        "proportion": max(
            abs(counts[c][p] / sizes[p] - priors[c]) if sizes[p] else 1.0
            for p in range(3)
            for c in classes
        ),
        "within_tolerance": excess <= 0,
    }
    if excess > 0:
        logger.warning(
            "split for task %s seed %d could not fully meet tolerances "
            "(size dev %.4f, prop dev %.4f); label multiset likely infeasible",
            task, seed, deviations["size"], deviations["proportion"],
        )
    groups: list[set[str]] = [set(), set(), set()]
    for i, p in enumerate(assign):
        groups[p].add(user_ids[i])
    return SplitPlan(
        task, seed, frozenset(groups[0]), frozenset(groups[1]), frozenset(groups[2]), deviations
    )


def split_dataset(fc: FeaturizedCorpus, task: AttributeTask, seed: int) -> SplitPlan:
    """SplitPlan over the corpus users that carry a label for the task."""
    user_ids, labels = [], []
    for user in fc.users:
        label = user.attributes.get(task.name)
        if label is not None and label in task.classes:
            user_ids.append(user.user_id)
            labels.append(label)
    if not user_ids:
        raise SplitError(f"no users labeled for task {task.name}")
    return split_labeled_users(user_ids, labels, task.name, seed)


@dataclass(frozen=True, eq=False)
class TaskDataset:
    """Arrays for one task: user labels, per-user playlist sets, stacked rows."""

    task: AttributeTask
    user_ids: tuple[str, ...]
    y: np.ndarray                 # (U,) encoded user labels
    sets: tuple[np.ndarray, ...]  # per-user (n_i, d) playlist matrices

    def indices_for(self, ids: frozenset[str]) -> np.ndarray:
        return np.array([i for i, uid in enumerate(self.user_ids) if uid in ids], dtype=np.int64)

    def playlists_for(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(stacked playlist rows, playlist-level labels) for the given users."""
        X = np.concatenate([self.sets[i] for i in idx], axis=0)
        y = np.concatenate([np.full(len(self.sets[i]), self.y[i]) for i in idx])
        return X, y.astype(np.int64)

    def sets_for(self, idx: np.ndarray) -> list[np.ndarray]:
        return [self.sets[i] for i in idx]


def build_task_dataset(fc: FeaturizedCorpus, task: AttributeTask) -> TaskDataset:
    """Collect the labeled users (sorted by id) with their playlist matrices."""
    users = [
        u for u in fc.users
        if u.attributes.get(task.name) in task.classes
    ]
    users.sort(key=lambda u: u.user_id)
    if not users:
        raise SplitError(f"no users labeled for task {task.name}")
    return TaskDataset(
        task=task,
        user_ids=tuple(u.user_id for u in users),
        y=np.array([task.encode(u.attributes[task.name]) for u in users], dtype=np.int64),
        sets=tuple(u.matrix() for u in users),
    )


def default_grids(input_dim: int) -> dict[str, list[dict]]:
    """The hyperparameter grids searched for each model kind."""
    d = input_dim
    grids: dict[str, list[dict]] = {"RG": [{}]}
    grids["LR"] = [
        {"C": c, "fit_intercept": fi, "class_weight": cw}
        for c in (0.01, 0.1, 1, 10)
        for fi in (True, False)
        for cw in (None, "balanced")
    ]
    grids["DT"] = [
        {"criterion": cr, "max_depth": md, "class_weight": cw}
        for cr in ("gini", "entropy")
        for md in (None, 3, 5, 10)
        for cw in (None, "balanced")
    ]
    grids["RF"] = [
        {"criterion": cr, "max_depth": md, "class_weight": cw, "n_estimators": ne}
        for cr in ("gini", "entropy")
        for md in (None, 3, 5, 10)
        for cw in (None, "balanced")
        for ne in (16, 32, 64, 128)
    ]
    grids["KNN"] = [
        {"n_neighbors": k, "weights": w}
        for k in (3, 5, 7, 10)
        for w in ("uniform", "distance")
    ]
    grids["MLP"] = [
        {
            "hidden_layer_sizes": h,
            "activation": a,
            "solver": "adam",
            "learning_rate": "adaptive",
            "learning_rate_init": lr,
            "alpha": al,
        }
        for h in ((d,), (d, d // 2), (d // 2,))
        for a in ("relu", "tanh")
        for lr in (0.01, 0.001, 0.0001)
        for al in (0.01, 0.001, 0.0001)
    ]
    grids["DS"] = [
        {
            "phi_layers": pl,
            "rho_layers": rl,
            "activation": a,
            "solver": "adam",
            "learning_rate": lr,
        }
        for pl in (1, 2, 3)
        for rl in (1, 2, 3)
        for a in ("relu", "tanh")
        for lr in (0.01, 0.001, 0.0001)
    ]
    return grids


def _fit_model(
    kind: str,
    config: dict,
    ds: TaskDataset,
    plan: SplitPlan,
    scaler: Scaler | None,
    seed: int,
) -> TrainedModel:
    """Train one configuration on the plan's train users (val only for early
    stopping of the set model)."""
    train_idx = ds.indices_for(plan.train)
    val_idx = ds.indices_for(plan.val)
    n_classes = ds.task.n_classes
    if kind == "RG":
        estimator: object = RandomGuess(seed=seed).fit(ds.y[train_idx], n_classes)
    elif kind == "DS":
        model = DeepSetClassifier(
            phi_layers=config["phi_layers"],
            rho_layers=config["rho_layers"],
            activation=config["activation"],
            lr=config["learning_rate"],
            seed=seed,
            phi_hidden=config.get("phi_hidden"),
            max_epochs=config.get("max_epochs", 200),
        )
        train_sets = [scaler.transform(s) for s in ds.sets_for(train_idx)]
        val_sets = [scaler.transform(s) for s in ds.sets_for(val_idx)]
        estimator = model.fit(train_sets, ds.y[train_idx], val_sets, ds.y[val_idx], n_classes)
    else:
        X, y = ds.playlists_for(train_idx)
        if scaler is not None:
            X = scaler.transform(X)
        if kind == "MLP":
            hyper = {
                "hidden": tuple(config["hidden_layer_sizes"]),
                "activation": config["activation"],
                "lr": config["learning_rate_init"],
                "alpha": config["alpha"],
            }
            if "max_epochs" in config:
                hyper["max_epochs"] = config["max_epochs"]
        else:
            hyper = {k: v for k, v in config.items() if k not in ("solver", "learning_rate")}
        estimator = train_baseline(kind, X, y, n_classes, hyper, seed)
    return TrainedModel(
        kind=kind,
        task=ds.task.name,
        classes=ds.task.classes,
        estimator=estimator,
        scaler=scaler if kind in learn.SCALED_KINDS else None,
        hyperparameters=dict(config),
        metadata={"seed": seed, "split_seed": plan.seed},
    )


def _score_users(model: TrainedModel, ds: TaskDataset, idx: np.ndarray) -> float:
    predictions = model.predict_user_labels(ds.sets_for(idx))
    return weighted_f1(ds.y[idx], predictions)


@dataclass
class GridSearchResult:
    kind: str
    best_config: dict
    best_score: float
    best_model: TrainedModel
    failures: list[str] = field(default_factory=list)


def grid_search(
    kind: str,
    grid: list[dict],
    ds: TaskDataset,
    plan: SplitPlan,
    seed: int = 0,
) -> GridSearchResult:
    """Pick the configuration with the best validation weighted F1.

    Ties go to the first configuration in grid order; the test set is never
    touched. Individual configuration failures are recorded; only a fully
    failed grid raises.
    """
    if not grid:
        raise ExperimentError(f"empty grid for {kind}")
    train_idx = ds.indices_for(plan.train)
    val_idx = ds.indices_for(plan.val)
    scaler = None
    if kind in learn.SCALED_KINDS:
        X_train, _ = ds.playlists_for(train_idx)
        scaler = fit_scaler(X_train)
    best: GridSearchResult | None = None
    failures: list[str] = []
    for config in grid:
        try:
            model = _fit_model(kind, config, ds, plan, scaler, seed)
            score = _score_users(model, ds, val_idx)
        except (TrainingError, TrainingDivergedError) as exc:
            failures.append(f"{config}: {exc}")
            continue
        if best is None or score > best.best_score:
            best = GridSearchResult(kind, dict(config), score, model)
    if best is None:
        raise ExperimentError(f"all {len(grid)} configurations failed for {kind}: {failures[:3]}")
    best.failures = failures
    return best


@dataclass
class ModelOutcome:
    """Per-model experiment outcome across repetitions."""

    kind: str
    scores: list[float]
    mean: float
    std: float
    best_configs: list[dict]
    error: str | None = None


@dataclass
class ExperimentReport:
    """Per-task scores for every model kind, mean and std over repetitions."""

    task: str
    seeds: list[int]
    models: dict[str, ModelOutcome]
    metadata: dict

    def as_dict(self) -> dict:
        return {
            "task": self.task,
            "seeds": self.seeds,
            "metadata": self.metadata,
            "models": {
                kind: {
                    "scores": m.scores,
                    "mean": m.mean,
                    "std": m.std,
                    "best_configs": m.best_configs,
                    "error": m.error,
                }
                for kind, m in self.models.items()
            },
        }


def _summary(scores: list[float]) -> tuple[float, float]:
    arr = np.asarray(scores, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def _run_repetition(
    ds: TaskDataset, kinds: tuple[str, ...], grids: dict[str, list[dict]], rep_seed: int
) -> dict[str, tuple[float | None, dict | None, str | None]]:
    """One repetition: split, grid-search each kind, evaluate on test users."""
    out: dict[str, tuple[float | None, dict | None, str | None]] = {}
    user_ids = list(ds.user_ids)
    labels = [ds.task.decode(int(y)) for y in ds.y]
    fc_plan = split_labeled_users(user_ids, labels, ds.task.name, rep_seed)
    test_idx = ds.indices_for(fc_plan.test)
    for kind in kinds:
        try:
            result = grid_search(kind, grids[kind], ds, fc_plan, seed=rep_seed)
            score = _score_users(result.best_model, ds, test_idx)
            out[kind] = (score, result.best_config, None)
        except (ExperimentError, SplitError, TrainingError) as exc:
            logger.warning("repetition %d: %s failed: %s", rep_seed, kind, exc)
            out[kind] = (None, None, str(exc))
    return out


def run_experiment(
    fc: FeaturizedCorpus,
    task: AttributeTask,
    kinds: tuple[str, ...] = learn.MODEL_KINDS,
    n_repetitions: int = 5,
    grids: dict[str, list[dict]] | None = None,
    n_jobs: int = 1,
) -> ExperimentReport:
    """The full protocol: five seeded repetitions of split -> grid search ->
    test-set evaluation at the user level, reported as mean +/- std.

    Per-model failures are recorded in the report and never abort the run.
    """
    ds = build_task_dataset(fc, task)
    if grids is None:
        grids = default_grids(ds.sets[0].shape[1])
    rep_seeds = list(range(n_repetitions))
    if n_jobs > 1 and n_repetitions > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, n_repetitions)) as pool:
            rep_results = list(
                pool.map(_run_repetition, *zip(*[(ds, kinds, grids, s) for s in rep_seeds]))
            )
    else:
        rep_results = [_run_repetition(ds, kinds, grids, s) for s in rep_seeds]
    models: dict[str, ModelOutcome] = {}
    for kind in kinds:
        scores = [r[kind][0] for r in rep_results if r[kind][0] is not None]
        configs = [r[kind][1] for r in rep_results if r[kind][1] is not None]
        errors = [r[kind][2] for r in rep_results if r[kind][2] is not None]
        if scores:
            mean, std = _summary(scores)
            models[kind] = ModelOutcome(kind, scores, mean, std, configs, "; ".join(errors) or None)
        else:
            models[kind] = ModelOutcome(kind, [], float("nan"), float("nan"), [], "; ".join(errors))
    return ExperimentReport(
        task=task.name,
        seeds=rep_seeds,
        models=models,
        metadata={
            "n_users": len(ds.user_ids),
            "n_classes": task.n_classes,
            "grid_sizes": {k: len(grids[k]) for k in kinds},
            "split": "greedy stratified grouped (seeded, repaired)",
            "ratios": list(RATIOS),
        },
    )


def write_report_json(reports: list[ExperimentReport], path: str | Path) -> None:
    payload = {"reports": [r.as_dict() for r in reports]}
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def write_report_csv(reports: list[ExperimentReport], path: str | Path) -> None:
    """Table layout: rows = model kinds, columns = tasks, cells mean+-std on a
    0-100 scale with one decimal."""
    tasks = [r.task for r in reports]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model"] + tasks)
        for kind in learn.MODEL_KINDS:
            row = [kind]
            for report in reports:
                outcome = report.models.get(kind)
                if outcome is None or not outcome.scores:
                    row.append("")
                else:
                    row.append(f"{100 * outcome.mean:.1f}±{100 * outcome.std:.1f}")
            writer.writerow(row)
