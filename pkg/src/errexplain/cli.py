"""Command-line entry point: simulate | annotate | train | evaluate | explain | metrics."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION, RunConfig, load_config
from .dataset import (
    annotate,
    assign_groups,
    build_vocab,
    make_folds,
    read_dataset,
    write_dataset,
)
from .errors import ConfigError, SchemaError, UsageError
from .features import FeatureScaler, extract, forward_fill, to_masked
from .model import greedy_decode, load_checkpoint, save_checkpoint
from .pipeline import (
    Fold,
    FoldResult,
    TrainRun,
    evaluate,
    read_responses,
    run_summary,
    study_metrics,
    train_all_folds,
    train_final,
)
from .world import (
    FAILING_SCENARIOS,
    OBJECTS,
    PLACES,
    EpisodeConfig,
    FailureScenario,
    read_episode,
    run_episode,
    write_episode,
)


def _episode_matrix(config: RunConfig) -> list[tuple[str, EpisodeConfig]]:
    """The seeded episode grid: objects and goal places cycle per scenario."""
    episodes = []
    scenarios = list(FAILING_SCENARIOS) + [FailureScenario.NO_FAILURE]
    for si, scenario in enumerate(scenarios):
        count = (
            config.sim.episodes_per_scenario
            if scenario is not FailureScenario.NO_FAILURE
            else config.sim.no_failure_episodes
        )
        for j in range(count):
            seed = int(np.random.SeedSequence([config.seed, si, j]).generate_state(1, np.uint64)[0])
            ep_config = EpisodeConfig(
                seed=seed,
                object=OBJECTS[j % len(OBJECTS)],
                goal_place=PLACES[j % len(PLACES)],
                scenario=scenario,
                layout=config.sim.layout,
                sample_hz=config.sim.sample_hz,
            )
            episodes.append((f"{scenario.value}-{j:02d}", ep_config))
    return episodes


def cmd_simulate(config: RunConfig) -> int:
    out = Path(config.out_dir) / "episodes"
    out.mkdir(parents=True, exist_ok=True)
    digest = config.digest()
    manifest_rows = []
    for episode_id, ep_config in _episode_matrix(config):
        episode = run_episode(ep_config, config.sim)
        path = out / f"{episode_id}.jsonl"
        write_episode(episode, path, episode_id, digest)
        manifest_rows.append(
            {
                "episode_id": episode_id,
                "file": path.name,
                "scenario": ep_config.scenario.value,
                "object": ep_config.object,
                "goal_place": ep_config.goal_place,
                "seed": ep_config.seed,
                "outcome": episode.outcome,
                "failed_action": episode.failed_action,
                "n_snapshots": len(episode.snapshots),
            }
        )
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": digest,
        "config": config.semantic_dict(),
        "episodes": manifest_rows,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, separators=(",", ":"))
    n_failing = sum(1 for r in manifest_rows if r["scenario"] != "no_failure")
    print(f"wrote {len(manifest_rows)} episodes ({n_failing} failing) to {out}")
    return 0


def cmd_annotate(config: RunConfig) -> int:
    out = Path(config.out_dir)
    manifest_path = out / "episodes" / "manifest.json"
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{manifest_path}: unsupported schema_version")

    per_episode = []
    for row in manifest["episodes"]:
        if row["scenario"] == "no_failure" and not config.dataset.include_no_failure:
            continue
        episode, episode_id = read_episode(out / "episodes" / row["file"])
        labeled = annotate(
            episode,
            config.dataset.style,
            config.sim.geometry.goal_radius,
            config.dataset.annotate_every_tick,
            episode_id,
        )
        per_episode.append((episode_id, row["scenario"], labeled))

    examples = assign_groups(per_episode, config.dataset.grouping, config.dataset.n_folds)
    path = out / "dataset.jsonl"
    write_dataset(examples, path, config.dataset.style, config.dataset.grouping, config.digest())
    print(f"wrote {len(examples)} labeled examples to {path}")
    return 0


def cmd_train(config: RunConfig, final: bool = False) -> int:
    out = Path(config.out_dir)
    examples, _ = read_dataset(out / "dataset.jsonl")
    vocab = build_vocab(examples)
    plan = make_folds(examples)
    results = train_all_folds(plan, examples, vocab, config)

    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    digest = config.digest()
    with open(out / "folds.jsonl", "w") as fh:
        fh.write(json.dumps({"schema_version": SCHEMA_VERSION, "config_digest": digest}) + "\n")
        for fold in plan.folds:
            fh.write(
                json.dumps(
                    {
                        "fold_id": fold.fold_id,
                        "test_group": fold.test_group,
                        "val_group": fold.val_group,
                        "train_groups": list(fold.train_groups),
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )
    for r in results:
        save_checkpoint(
            ckpt_dir / f"fold_{r.fold.fold_id}.json",
            r.params,
            vocab.tokens,
            r.scaler.mean,
            r.scaler.std,
            extra={
                "fold_id": r.fold.fold_id,
                "test_group": r.fold.test_group,
                "val_group": r.fold.val_group,
                "best_epoch": r.run.best_epoch,
                "learning_rate": config.train.learning_rate,
                "batch_size": config.train.batch_size,
                "master_seed": config.seed,
            },
            config_digest=digest,
        )
    summary = run_summary(results)
    summary["schema_version"] = SCHEMA_VERSION
    summary["config_digest"] = digest
    with open(out / "train_runs.json", "w") as fh:
        json.dump(summary, fh, separators=(",", ":"))

    if final:
        params, scaler = train_final(examples, vocab, config, summary["median_best_epoch"])
        save_checkpoint(
            ckpt_dir / "final.json",
            params,
            vocab.tokens,
            scaler.mean,
            scaler.std,
            extra={
                "fold_id": -1,
                "test_group": "",
                "val_group": "",
                "best_epoch": summary["median_best_epoch"],
                "learning_rate": config.train.learning_rate,
                "batch_size": config.train.batch_size,
                "master_seed": config.seed,
            },
            config_digest=digest,
        )
    for r in results:
        print(
            f"fold {r.fold.fold_id} (test={r.fold.test_group}): "
            f"best epoch {r.run.best_epoch}, {r.run.stop_reason} at {r.run.stopped_epoch}"
        )
    print(f"wrote checkpoints to {ckpt_dir}")
    return 0


def _load_fold_results(config: RunConfig, vocab_tokens: tuple[str, ...]) -> list[FoldResult]:
    ckpt_dir = Path(config.out_dir) / "checkpoints"
    paths = sorted(ckpt_dir.glob("fold_*.json"))
    if not paths:
        raise UsageError(f"no fold checkpoints under {ckpt_dir}; run train first")
    results = []
    for path in paths:
        params, tokens, mean, std, extra = load_checkpoint(path)
        if tokens != vocab_tokens:
            raise SchemaError(f"{path}: checkpoint vocabulary does not match the dataset")
        fold = Fold(
            fold_id=extra["fold_id"],
            test_group=extra["test_group"],
            val_group=extra["val_group"],
            train_groups=(),
        )
        run = TrainRun(extra["fold_id"], [], [], extra.get("best_epoch", 0), 0, "loaded")
        results.append(
            FoldResult(fold=fold, run=run, params=params, scaler=FeatureScaler(mean, std))
        )
    return results


def cmd_evaluate(config: RunConfig) -> int:
    out = Path(config.out_dir)
    examples, header = read_dataset(out / "dataset.jsonl")
    if header.get("style") != "cb":
        raise ConfigError(
            "evaluation requires a context-based dataset: action-based phrases "
            "collide across scenarios, so the 7-class matrix is undefined"
        )
    vocab = build_vocab(examples)
    results = _load_fold_results(config, vocab.tokens)
    report = evaluate(results, examples, vocab, config.model)
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_json(config.digest()), fh, separators=(",", ":"))
    print(report.render())
    print(f"wrote {out / 'report.json'}")
    return 0


def cmd_explain(config: RunConfig, checkpoint: str, episode_path: str, t: int) -> int:
    params, tokens, mean, std, _ = load_checkpoint(checkpoint)
    scaler = FeatureScaler(np.asarray(mean), np.asarray(std))
    episode, _ = read_episode(episode_path)
    filled = forward_fill(episode)
    snap = next((s for s in filled.snapshots if s.t == t), None)
    if snap is None:
        raise UsageError(f"episode has no snapshot at t={t}")
    fv = extract(snap, episode.config.object, episode.config.goal_place,
                 config.sim.geometry.goal_radius)
    inputs = scaler.transform(to_masked(fv))
    phrase = greedy_decode(inputs, params, tokens, config.model.max_decode_len)
    print(phrase)
    return 0


def cmd_metrics(responses_path: str, out_path: str | None = None) -> int:
    records = read_responses(responses_path)
    report = study_metrics(records)
    rendered = json.dumps(report, indent=2, sort_keys=True)
    print(rendered)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(rendered + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML config file")
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument("--out", default=None, help="output directory override")
    common.add_argument("--threads", type=int, default=None, help="worker processes for fold training")

    parser = argparse.ArgumentParser(
        prog="errexplain",
        description="Simulate pick-and-place failures and train a failure-explanation model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate the episode matrix")
    sub.add_parser("annotate", parents=[common], help="label episodes with target phrases")
    p_train = sub.add_parser("train", parents=[common], help="train the grouped-CV folds")
    p_train.add_argument("--final", action="store_true", help="also retrain one model on all data")
    sub.add_parser("evaluate", parents=[common], help="confusion matrix over held-out folds")
    p_explain = sub.add_parser("explain", parents=[common], help="explain one snapshot")
    p_explain.add_argument("--checkpoint", required=True)
    p_explain.add_argument("--episode", required=True)
    p_explain.add_argument("--t", type=int, required=True)
    p_metrics = sub.add_parser("metrics", parents=[common], help="study metrics from response records")
    p_metrics.add_argument("--responses", required=True)
    p_metrics.add_argument("--report-out", default=None)
    return parser


def _resolve(args: argparse.Namespace) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "train.threads": args.threads,
    }
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(_resolve(args))
        if args.command == "annotate":
            return cmd_annotate(_resolve(args))
        if args.command == "train":
            return cmd_train(_resolve(args), final=args.final)
        if args.command == "evaluate":
            return cmd_evaluate(_resolve(args))
        if args.command == "explain":
            return cmd_explain(_resolve(args), args.checkpoint, args.episode, args.t)
        if args.command == "metrics":
            return cmd_metrics(args.responses, args.report_out)
        raise UsageError(f"unknown command {args.command}")
    except (ConfigError, UsageError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except SchemaError as exc:
        print(json.dumps({"error": "SchemaError", "message": str(exc)}), file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(
            json.dumps({"error": "FileNotFoundError", "message": str(exc), "path": exc.filename}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
