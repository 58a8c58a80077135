"""Batch command-line front end for the full pipeline.

Subcommands map onto the library modules: synth, ingest, featurize,
analyze (rq1 | rq2 | rq3), train, evaluate, report. Every run writes its
outputs plus a run_metadata.json block (version, seeds, decision flags) into
the output directory; nothing mutates its inputs. Outputs are deterministic
given flags and seeds.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 missing input
file, 4 corpus schema violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, cluster, eval as evaluation, learn, stats, synth
from .core import TASKS, corpus_summary, get_task
from .features import featurize_corpus, load_lexicon, write_features_csv
from .ingest import (
    ApiCredentials,
    FixtureTransport,
    JsonCache,
    SchemaError,
    SpotifyClient,
    build_corpus,
    load_corpus,
    save_corpus,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_SCHEMA = 4

AGE_MIDPOINTS = {"13-17": 15.0, "18-24": 21.0, "25-30": 27.5, "31+": 35.0}


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_metadata(out: Path, command: str, args, extra: dict | None = None) -> None:
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    payload = {
        "tool_version": __version__,
        "command": command,
        "flags": {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()},
        "decisions": {
            "pca_standardized": True,
            "leading_prior_level": getattr(args, "prior_level", "playlist"),
            "fdr_correction": getattr(args, "fdr", False),
            "age_pearson_midpoints": AGE_MIDPOINTS,
            "std_estimator": "sample (n-1)",
        },
    }
    if extra:
        payload.update(extra)
    (out / "run_metadata.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")


def _load_featurized(args):
    corpus = load_corpus(args.corpus)
    lexicon = load_lexicon(getattr(args, "lexicon", None))
    return corpus, featurize_corpus(corpus, lexicon)


def _selected_tasks(args) -> list:
    if getattr(args, "task", None):
        return [get_task(args.task)]
    return list(TASKS.values())


def cmd_synth(args) -> int:
    out = _out_dir(args)
    effects: list = []
    if args.effects_json:
        raw = json.loads(Path(args.effects_json).read_text(encoding="utf-8"))
        for item in raw:
            kind = item.pop("kind")
            if kind == "mean_shift":
                effects.append(synth.MeanShiftEffect(**item))
            elif kind == "max_rule":
                effects.append(synth.MaxRuleEffect(**item))
            elif kind == "pure_cluster":
                effects.append(synth.PureClusterEffect(**item))
            else:
                raise ValueError(f"unknown effect kind {kind!r}")
    spec = synth.GenerationSpec(
        seed=args.seed,
        n_users=args.users,
        playlists_per_user=synth.UniformInt(args.playlists_min, args.playlists_max),
        tracks_per_playlist=synth.UniformInt(args.tracks_min, args.tracks_max),
        effects=tuple(effects),
    )
    corpus, truth = synth.generate_corpus(spec)
    save_corpus(corpus, out / "corpus.json")
    (out / "ground_truth.json").write_text(json.dumps(truth.as_dict(), indent=2), encoding="utf-8")
    _write_metadata(out, "synth", args, {"totals": truth.totals})
    print(f"wrote {out / 'corpus.json'} ({truth.totals['playlists']} playlists)")
    return EXIT_OK


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    user_attributes = json.loads(Path(args.users_file).read_text(encoding="utf-8"))
    cache = JsonCache(args.cache) if args.cache else None
    if args.fixture_mode:
        client = SpotifyClient(session=FixtureTransport(args.fixture_mode), cache=cache)
    else:
        client = SpotifyClient(
            credentials=ApiCredentials.from_env(),
            cache=cache,
            requests_per_second=args.rps,
        )
    corpus = build_corpus(client, user_attributes)
    save_corpus(corpus, out / "corpus.json")
    summary = corpus_summary(corpus).as_dict()
    _write_metadata(out, "ingest", args, {"summary": summary, "network_calls": client.network_calls})
    print(f"wrote {out / 'corpus.json'}: {summary}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    out = _out_dir(args)
    _, fc = _load_featurized(args)
    write_features_csv(fc, out / "features.csv")
    _write_metadata(
        out, "featurize", args,
        {"schema_version": fc.schema.version, "n_features": len(fc.schema.names),
         "n_users": len(fc.users)},
    )
    print(f"wrote {out / 'features.csv'} ({sum(u.n_playlists for u in fc.users)} rows)")
    return EXIT_OK


def cmd_analyze_rq1(args) -> int:
    out = _out_dir(args)
    _, fc = _load_featurized(args)
    matrix = stats.significance_matrix(
        fc, _selected_tasks(args), alpha=args.significance, fdr_correction=args.fdr
    )
    stats.write_significance_csv(matrix, out / "significance_matrix.csv")
    stats.write_tests_csv(list(matrix.tests), out / "feature_tests.csv")
    _write_metadata(out, "analyze rq1", args, {"skipped_tasks": list(matrix.skipped)})
    print(f"wrote {out / 'significance_matrix.csv'} ({len(matrix.attributes)} attributes)")
    return EXIT_OK


def cmd_analyze_rq2(args) -> int:
    out = _out_dir(args)
    _, fc = _load_featurized(args)
    import csv as _csv

    with open(out / "class_distributions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["attribute", "feature", "class", "n", "mean", "std", "q1", "median", "q3",
             "kind", "statistic", "p_value"]
        )
        for task in _selected_tasks(args):
            for feature in fc.schema.names:
                dist = stats.class_distributions(fc, task, feature)
                if dist is None:
                    break
                for cls in dist.classes:
                    writer.writerow(
                        [task.name, feature, cls.label, cls.n, repr(cls.mean), repr(cls.std),
                         repr(cls.q1), repr(cls.median), repr(cls.q3),
                         dist.test.kind, repr(dist.test.statistic), repr(dist.test.p_value)]
                    )
    # age correlations on bin midpoints (flagged in run metadata)
    age = TASKS["age"]
    rows = []
    ages, vectors = [], []
    for user in fc.users:
        label = user.attributes.get("age")
        if label in AGE_MIDPOINTS:
            ages.append(AGE_MIDPOINTS[label])
            vectors.append(user.mean_vector())
    if len(ages) >= 3 and len(set(ages)) > 1:
        matrix = np.stack(vectors)
        for i, feature in enumerate(fc.schema.names):
            column = matrix[:, i]
            if np.std(column) == 0:
                continue
            r, p = stats.pearson_r(ages, column.tolist())
            rows.append((feature, r, p))
    with open(out / "age_correlations.csv", "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["feature", "pearson_r", "p_value"])
        for feature, r, p in rows:
            writer.writerow([feature, repr(r), repr(p)])
    _write_metadata(out, "analyze rq2", args, {"age_task_classes": list(age.classes)})
    print(f"wrote {out / 'class_distributions.csv'} and {out / 'age_correlations.csv'}")
    return EXIT_OK


def cmd_analyze_rq3(args) -> int:
    out = _out_dir(args)
    _, fc = _load_featurized(args)
    X, _, _ = fc.playlist_matrix()
    pca = cluster.pca_reduce(X, variance_target=args.variance_target)
    k_range = range(args.k_min, args.k_max + 1, args.k_step)
    best_k, scores = cluster.select_k(pca.projected, k_range, seed=args.seed)
    assignments, _ = cluster.kmeans(pca.projected, best_k, seed=args.seed)
    tasks = _selected_tasks(args)
    reports = cluster.build_cluster_reports(fc, assignments, tasks)
    kept = cluster.filter_clusters(reports)
    alphas = [round(args.alpha_step * i, 10) for i in range(int(round(1.0 / args.alpha_step)) + 1)]
    sweeps = {}
    for task in tasks:
        try:
            prior = cluster.class_prior(fc, task, level=args.prior_level)
        except cluster.ClusterError:
            continue
        sweeps[task.name] = cluster.sweep_alpha(kept, task, prior, alphas)
    cluster.write_sweep_csv(sweeps, out / "alpha_sweep.csv")
    report_payload = cluster.cluster_report_json(
        kept,
        {
            "n_components": pca.n_components,
            "explained_variance": float(np.sum(pca.explained_ratios)),
            "selected_k": best_k,
            "silhouette_by_k": {str(k): v for k, v in scores.items()},
            "n_clusters_kept": len(kept),
            "seed": args.seed,
        },
    )
    (out / "cluster_report.json").write_text(json.dumps(report_payload, indent=2), encoding="utf-8")
    _write_metadata(out, "analyze rq3", args, {"selected_k": best_k})
    print(f"wrote {out / 'alpha_sweep.csv'} (k={best_k}, {len(kept)} clusters kept)")
    return EXIT_OK


def _parse_grids(args, input_dim: int) -> dict[str, list[dict]]:
    grids = evaluation.default_grids(input_dim)
    if getattr(args, "grid", None):
        overrides = json.loads(Path(args.grid).read_text(encoding="utf-8"))
        for kind, grid in overrides.items():
            if kind not in grids:
                raise ValueError(f"unknown model kind {kind!r} in grid override")
            grids[kind] = [dict(g) for g in grid]
    return grids


def _model_kinds(args) -> tuple[str, ...]:
    if args.models:
        kinds = tuple(k.strip().upper() for k in args.models.split(","))
        unknown = [k for k in kinds if k not in learn.MODEL_KINDS]
        if unknown:
            raise ValueError(f"unknown model kinds: {unknown}; valid: {learn.MODEL_KINDS}")
        return kinds
    return learn.MODEL_KINDS


def cmd_train(args) -> int:
    out = _out_dir(args)
    _, fc = _load_featurized(args)
    task = get_task(args.task)
    ds = evaluation.build_task_dataset(fc, task)
    plan = evaluation.split_dataset(fc, task, args.seed)
    grids = _parse_grids(args, ds.sets[0].shape[1])
    kinds = _model_kinds(args)
    summary = {}
    for kind in kinds:
        result = evaluation.grid_search(kind, grids[kind], ds, plan, seed=args.seed)
        path = out / f"model_{task.name}_{kind}.json"
        learn.save_checkpoint(result.best_model, path)
        summary[kind] = {
            "checkpoint": path.name,
            "val_weighted_f1": result.best_score,
            "config": result.best_config,
        }
        print(f"{kind}: val F1 {result.best_score:.4f} -> {path.name}")
    _write_metadata(out, "train", args, {"models": summary})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    _, fc = _load_featurized(args)
    task = get_task(args.task)
    if args.train:
        ds = evaluation.build_task_dataset(fc, task)
        grids = _parse_grids(args, ds.sets[0].shape[1])
        report = evaluation.run_experiment(
            fc, task, kinds=_model_kinds(args),
            n_repetitions=args.repetitions, grids=grids, n_jobs=args.jobs,
        )
        evaluation.write_report_json([report], out / "experiment.json")
        evaluation.write_report_csv([report], out / "experiment.csv")
        _write_metadata(out, "evaluate", args, {"task": task.name})
        for kind, outcome in report.models.items():
            cell = f"{100 * outcome.mean:.1f}±{100 * outcome.std:.1f}" if outcome.scores else "failed"
            print(f"{kind}: {cell}")
        return EXIT_OK
    if args.models_dir:
        ds = evaluation.build_task_dataset(fc, task)
        plan = evaluation.split_dataset(fc, task, args.seed)
        test_idx = ds.indices_for(plan.test)
        results = {}
        checkpoints = sorted(Path(args.models_dir).glob(f"model_{task.name}_*.json"))
        if not checkpoints:
            raise FileNotFoundError(f"no checkpoints for task {task.name} in {args.models_dir}")
        for path in checkpoints:
            model = learn.load_checkpoint(path)
            predictions = model.predict_user_labels(ds.sets_for(test_idx))
            score = evaluation.weighted_f1(ds.y[test_idx], predictions)
            results[model.kind] = score
            print(f"{model.kind}: test F1 {score:.4f}")
        (out / "evaluation.json").write_text(json.dumps(results, indent=2), encoding="utf-8")
        _write_metadata(out, "evaluate", args, {"task": task.name, "mode": "checkpoints"})
        return EXIT_OK
    print("evaluate needs --train or --models-dir (nothing to evaluate)", file=sys.stderr)
    return EXIT_FAILURE


def cmd_report(args) -> int:
    out = _out_dir(args)
    reports = []
    for path in args.experiments:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        for item in payload["reports"]:
            models = {
                kind: evaluation.ModelOutcome(
                    kind=kind,
                    scores=m["scores"],
                    mean=m["mean"],
                    std=m["std"],
                    best_configs=m["best_configs"],
                    error=m.get("error"),
                )
                for kind, m in item["models"].items()
            }
            reports.append(
                evaluation.ExperimentReport(
                    task=item["task"], seeds=item["seeds"], models=models,
                    metadata=item.get("metadata", {}),
                )
            )
    evaluation.write_report_csv(reports, out / "report.csv")
    evaluation.write_report_json(reports, out / "report.json")
    _write_metadata(out, "report", args, {"tasks": [r.task for r in reports]})
    print(f"wrote {out / 'report.csv'} ({len(reports)} tasks)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="playlistmine",
        description="Mine listener attributes from public playlists: featurize, analyze, classify.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, corpus=True):
        if corpus:
            p.add_argument("--corpus", required=True, help="corpus JSON file (default schema)")
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--lexicon", default=None, help="genre lexicon file (default: packaged)")

    p = sub.add_parser("synth", help="generate a synthetic corpus with planted effects")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--users", type=int, default=100, help="number of users (default 100)")
    p.add_argument("--playlists-min", type=int, default=2, help="min playlists per user (default 2)")
    p.add_argument("--playlists-max", type=int, default=8, help="max playlists per user (default 8)")
    p.add_argument("--tracks-min", type=int, default=10, help="min tracks per playlist (default 10)")
    p.add_argument("--tracks-max", type=int, default=30, help="max tracks per playlist (default 30)")
    p.add_argument("--effects-json", default=None, help="JSON file listing planted effects (default: none)")
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="fetch playlists from the API or fixtures into a corpus")
    p.add_argument("--users-file", required=True, help="JSON of user_id -> attribute labels")
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--cache", default=None, help="response cache directory (default: no cache)")
    p.add_argument("--fixture-mode", default=None, help="serve responses from this fixture directory (default: live API)")
    p.add_argument("--rps", type=float, default=4.0, help="max requests per second (default 4)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="compute the 111-entry playlist descriptors")
    add_common(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("analyze", help="statistical and cluster analyses")
    asub = p.add_subparsers(dest="analysis", required=True)

    p1 = asub.add_parser("rq1", help="per-feature significance tests and family ratios")
    add_common(p1)
    p1.add_argument("--task", default=None, help="restrict to one attribute task (default: all)")
    p1.add_argument("--significance", type=float, default=0.05,
                    help="significance level (default 0.05)")
    p1.add_argument("--fdr", action="store_true",
                    help="apply Benjamini-Hochberg correction per task (default: off)")
    p1.set_defaults(func=cmd_analyze_rq1)

    p2 = asub.add_parser("rq2", help="class-conditional distribution summaries")
    add_common(p2)
    p2.add_argument("--task", default=None, help="restrict to one attribute task (default: all)")
    p2.set_defaults(func=cmd_analyze_rq2)

    p3 = asub.add_parser("rq3", help="cluster pipeline and leading-cluster sweep")
    add_common(p3)
    p3.add_argument("--task", default=None, help="restrict to one attribute task (default: all)")
    p3.add_argument("--seed", type=int, default=0, help="clustering seed (default 0)")
    p3.add_argument("--alpha-step", type=float, default=0.1,
                    help="threshold sweep step in [0,1] (default 0.1)")
    p3.add_argument("--variance-target", type=float, default=0.8,
                    help="PCA explained-variance target (default 0.8)")
    p3.add_argument("--k-min", type=int, default=50, help="smallest cluster count (default 50)")
    p3.add_argument("--k-max", type=int, default=200, help="largest cluster count (default 200)")
    p3.add_argument("--k-step", type=int, default=5, help="cluster count step (default 5)")
    p3.add_argument("--prior-level", choices=("playlist", "user"), default="playlist",
                    help="prior level for the leading thresholds (default playlist)")
    p3.set_defaults(func=cmd_analyze_rq3)

    p = sub.add_parser("train", help="grid-search models for one task and save checkpoints")
    add_common(p)
    p.add_argument("--task", required=True, help="attribute task name")
    p.add_argument("--seed", type=int, default=0, help="split/training seed (default 0)")
    p.add_argument("--models", default=None, help="comma-separated kinds (default: all)")
    p.add_argument("--grid", default=None, help="JSON file overriding hyperparameter grids (default: built-in)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run the repeated-experiment protocol for a task")
    add_common(p)
    p.add_argument("--task", required=True, help="attribute task name")
    p.add_argument("--train", action="store_true", help="train models as part of the run")
    p.add_argument("--models-dir", default=None, help="evaluate existing checkpoints from here (default: none)")
    p.add_argument("--models", default=None, help="comma-separated kinds (default: all)")
    p.add_argument("--repetitions", type=int, default=5, help="number of repetitions (default 5)")
    p.add_argument("--seed", type=int, default=0, help="split seed for --models-dir mode (default 0)")
    p.add_argument("--grid", default=None, help="JSON file overriding hyperparameter grids (default: built-in)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel repetition workers (default: cores)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="merge experiment JSONs into the summary table")
    p.add_argument("--experiments", nargs="+", required=True, help="experiment JSON files")
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ValueError, RuntimeError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
