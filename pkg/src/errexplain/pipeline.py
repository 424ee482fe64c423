"""Grouped-CV training, exact-match evaluation, and study metrics.

Each fold trains on its training groups with early stopping on the
held-out validation group, keeping the parameters from the best-validation
epoch. Evaluation predicts every example with the model of the fold that
held its group out as test, classifies the generated phrase by exact match
against the canonical phrase set, and aggregates a 7-class confusion
matrix.
"""

from __future__ import annotations

import csv
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, RunConfig, TrainConfig
from .dataset import Fold, FoldPlan, LabeledExample, Vocab
from .errors import UsageError
from .features import ENTITY_TOKENS, FeatureScaler, MaskedInput, to_masked
from .model import (
    Adam,
    ModelDims,
    ModelParams,
    backward,
    copy_params,
    forward_loss,
    greedy_decode,
    init_params,
    pack,
    zero_grads,
)
from .phrases import CLASSES, canonical_classes, phrase_class
from .world import OBJECTS, PLACES

SIBLING = {
    "too_far": "close_together",
    "close_together": "too_far",
    "not_present": "occluded",
    "occluded": "not_present",
}


@dataclass
class TrainRun:
    fold_id: int
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    stopped_epoch: int
    stop_reason: str


@dataclass
class FoldResult:
    fold: Fold
    run: TrainRun
    params: ModelParams
    scaler: FeatureScaler


def model_dims(cfg: ModelConfig, vocab_size: int) -> ModelDims:
    return ModelDims(
        n_entities=len(ENTITY_TOKENS),
        n_objects=len(OBJECTS),
        vocab_size=vocab_size,
        entity_embed=cfg.entity_embed,
        encoder_hidden=cfg.encoder_hidden,
        object_embed=cfg.object_embed,
        word_embed=cfg.word_embed,
        attention_dim=cfg.attention_dim,
        attend_to_init=cfg.attend_to_init,
    )


def encode_example(ex: LabeledExample, vocab: Vocab) -> tuple[MaskedInput, np.ndarray]:
    return to_masked(ex.features), np.array(vocab.encode(ex.label), dtype=np.int64)


def _mean_loss(
    encoded: list[tuple[MaskedInput, np.ndarray]], params: ModelParams
) -> float:
    packed = pack(params)
    total = 0.0
    for inputs, targets in encoded:
        loss, _ = forward_loss(inputs, targets, params, packed)
        total += loss
    return total / len(encoded)


def train_fold(
    fold: Fold,
    examples: list[LabeledExample],
    vocab: Vocab,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    master_seed: int,
) -> FoldResult:
    """Train one fold; deterministic given (fold, examples, config, seed)."""
    train_ex = [ex for ex in examples if ex.group in fold.train_groups]
    val_ex = [ex for ex in examples if ex.group == fold.val_group]
    if not train_ex:
        raise UsageError(f"fold {fold.fold_id} has an empty training set")

    raw_train = [encode_example(ex, vocab) for ex in train_ex]
    raw_val = [encode_example(ex, vocab) for ex in val_ex]
    scaler = FeatureScaler.fit([m for m, _ in raw_train])
    train = [(scaler.transform(m), t) for m, t in raw_train]
    val = [(scaler.transform(m), t) for m, t in raw_val]

    dims = model_dims(model_cfg, len(vocab.tokens))
    params = init_params(
        dims, np.random.SeedSequence([master_seed, 101, fold.fold_id]), model_cfg.init_scale
    )
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 202, fold.fold_id]))
    adam = Adam(
        params,
        lr=train_cfg.learning_rate,
        beta1=train_cfg.beta1,
        beta2=train_cfg.beta2,
        eps=train_cfg.eps,
    )

    train_losses: list[float] = []
    val_losses: list[float] = []
    best_val = float("inf")
    best_epoch = 0
    best_params = copy_params(params)
    bad = 0
    stop_reason = "max_epochs"
    epoch = 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            packed = pack(params)
            grads = zero_grads(params)
            for idx in batch:
                inputs, targets = train[idx]
                loss, cache = forward_loss(inputs, targets, params, packed)
                backward(cache, params, packed, grads)
                epoch_loss += loss
            for g in grads.values():
                g /= len(batch)
            adam.step(params, grads)
        train_losses.append(epoch_loss / len(train))

        val_loss = _mean_loss(val, params) if val else train_losses[-1]
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = copy_params(params)
            bad = 0
        else:
            bad += 1
            if bad >= max(train_cfg.patience, 1):
                stop_reason = "early_stop"
                break

    run = TrainRun(
        fold_id=fold.fold_id,
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=best_epoch,
        stopped_epoch=epoch,
        stop_reason=stop_reason,
    )
    return FoldResult(fold=fold, run=run, params=best_params, scaler=scaler)


def _train_fold_task(args) -> FoldResult:
    return train_fold(*args)


def train_all_folds(
    plan: FoldPlan,
    examples: list[LabeledExample],
    vocab: Vocab,
    config: RunConfig,
) -> list[FoldResult]:
    """Train every fold, optionally in parallel; aggregation order is fixed."""
    tasks = [
        (fold, examples, vocab, config.model, config.train, config.seed)
        for fold in plan.folds
    ]
    if config.train.threads > 1:
        with ProcessPoolExecutor(max_workers=config.train.threads) as pool:
            return list(pool.map(_train_fold_task, tasks))
    return [_train_fold_task(t) for t in tasks]


def train_final(
    examples: list[LabeledExample],
    vocab: Vocab,
    config: RunConfig,
    epochs: int,
) -> tuple[ModelParams, FeatureScaler]:
    """Retrain on all data for a fixed epoch budget (deployment model)."""
    raw = [encode_example(ex, vocab) for ex in examples]
    scaler = FeatureScaler.fit([m for m, _ in raw])
    data = [(scaler.transform(m), t) for m, t in raw]
    dims = model_dims(config.model, len(vocab.tokens))
    params = init_params(dims, np.random.SeedSequence([config.seed, 101, 999]), config.model.init_scale)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 202, 999]))
    adam = Adam(
        params,
        lr=config.train.learning_rate,
        beta1=config.train.beta1,
        beta2=config.train.beta2,
        eps=config.train.eps,
    )
    for _ in range(epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), config.train.batch_size):
            batch = order[start : start + config.train.batch_size]
            packed = pack(params)
            grads = zero_grads(params)
            for idx in batch:
                inputs, targets = data[idx]
                _, cache = forward_loss(inputs, targets, params, packed)
                backward(cache, params, packed, grads)
            for g in grads.values():
                g /= len(batch)
            adam.step(params, grads)
    return params, scaler


# ---------------------------------------------------------------------------
# evaluation


def predict_class(phrase: str, table: dict[str, str] | None = None) -> str:
    """Exact-match the phrase against the canonical set; else 'malformed'."""
    if table is None:
        table = canonical_classes(PLACES)
    return phrase_class(phrase, table)


@dataclass
class EvalReport:
    accuracy: float
    exact_match_accuracy: float
    matrix: list[list[int]]
    per_class: dict[str, dict]
    malformed_count: int
    n_examples: int
    n_failing: int
    n_failing_misclassified: int
    within_type_misclassified: int
    within_type_sibling: int

    def to_json(self, config_digest: str = "") -> dict:
        from .config import SCHEMA_VERSION

        return {
            "schema_version": SCHEMA_VERSION,
            "config_digest": config_digest,
            "accuracy": self.accuracy,
            "exact_match_accuracy": self.exact_match_accuracy,
            "matrix": self.matrix,
            "per_class": self.per_class,
            "malformed_count": self.malformed_count,
            "n_examples": self.n_examples,
            "n_failing": self.n_failing,
            "n_failing_misclassified": self.n_failing_misclassified,
            "within_type_misclassified": self.within_type_misclassified,
            "within_type_sibling": self.within_type_sibling,
        }

    def render(self) -> str:
        width = max(len(c) for c in CLASSES) + 2
        lines = ["confusion matrix (rows = true, cols = predicted)"]
        header = " " * width + "".join(f"{c:>{width}}" for c in CLASSES)
        lines.append(header)
        for i, c in enumerate(CLASSES):
            row = f"{c:>{width}}" + "".join(f"{n:>{width}}" for n in self.matrix[i])
            lines.append(row)
        lines.append("")
        lines.append(f"{'class':>{width}}{'precision':>12}{'recall':>12}{'support':>12}")
        for c in CLASSES:
            pc = self.per_class[c]
            prec = "-" if pc["precision"] is None else f"{pc['precision']:.3f}"
            rec = "-" if pc["recall"] is None else f"{pc['recall']:.3f}"
            lines.append(f"{c:>{width}}{prec:>12}{rec:>12}{pc['support']:>12}")
        lines.append("")
        lines.append(f"accuracy (class-level): {self.accuracy:.4f}")
        lines.append(f"exact-match accuracy:   {self.exact_match_accuracy:.4f}")
        lines.append(f"malformed predictions:  {self.malformed_count}")
        return "\n".join(lines)


@dataclass(frozen=True)
class Prediction:
    true_class: str
    pred_class: str  # a class name or "malformed"
    exact: bool


def collect_predictions(
    results: list[FoldResult],
    examples: list[LabeledExample],
    vocab: Vocab,
    model_cfg: ModelConfig,
) -> list[Prediction]:
    """Predict each example with the fold whose test group held it out."""
    by_test_group = {r.fold.test_group: r for r in results}
    missing = {ex.group for ex in examples} - set(by_test_group)
    if missing:
        raise UsageError(f"no trained fold tests group(s) {sorted(missing)}")
    table = canonical_classes(PLACES)
    predictions = []
    for group, result in sorted(by_test_group.items()):
        packed = pack(result.params)
        for ex in examples:
            if ex.group != group:
                continue
            inputs, _ = encode_example(ex, vocab)
            inputs = result.scaler.transform(inputs)
            phrase = greedy_decode(
                inputs, result.params, vocab.tokens, model_cfg.max_decode_len, packed
            )
            predictions.append(
                Prediction(
                    true_class=ex.class_,
                    pred_class=phrase_class(phrase, table),
                    exact=phrase == ex.label,
                )
            )
    return predictions


def build_report(predictions: list[Prediction]) -> EvalReport:
    """Aggregate predictions into the 7-class confusion matrix and counts.

    Malformed predictions count as errors against their true class but are
    excluded from the matrix grid itself.
    """
    if not predictions:
        raise UsageError("no examples fell into any trained fold's test group")
    class_index = {c: i for i, c in enumerate(CLASSES)}
    matrix = [[0] * len(CLASSES) for _ in CLASSES]
    malformed = 0
    exact = 0
    n_failing = 0
    n_failing_mis = 0
    within_type_mis = 0
    within_type_sib = 0
    support = {c: 0 for c in CLASSES}

    for pr in predictions:
        support[pr.true_class] += 1
        if pr.exact:
            exact += 1
        if pr.pred_class == "malformed":
            malformed += 1
        else:
            matrix[class_index[pr.true_class]][class_index[pr.pred_class]] += 1
        if pr.true_class != "correct":
            n_failing += 1
            if pr.pred_class != pr.true_class:
                n_failing_mis += 1
                if pr.true_class in SIBLING:
                    within_type_mis += 1
                    if pr.pred_class == SIBLING[pr.true_class]:
                        within_type_sib += 1

    trace = sum(matrix[i][i] for i in range(len(CLASSES)))
    per_class: dict[str, dict] = {}
    for i, c in enumerate(CLASSES):
        col = sum(matrix[j][i] for j in range(len(CLASSES)))
        per_class[c] = {
            "precision": (matrix[i][i] / col) if col else None,
            "recall": (matrix[i][i] / support[c]) if support[c] else None,
            "support": support[c],
        }

    n = len(predictions)
    return EvalReport(
        accuracy=trace / n,
        exact_match_accuracy=exact / n,
        matrix=matrix,
        per_class=per_class,
        malformed_count=malformed,
        n_examples=n,
        n_failing=n_failing,
        n_failing_misclassified=n_failing_mis,
        within_type_misclassified=within_type_mis,
        within_type_sibling=within_type_sib,
    )


def evaluate(
    results: list[FoldResult],
    examples: list[LabeledExample],
    vocab: Vocab,
    model_cfg: ModelConfig,
) -> EvalReport:
    return build_report(collect_predictions(results, examples, vocab, model_cfg))


# ---------------------------------------------------------------------------
# study metrics over externally supplied human-response records


@dataclass(frozen=True)
class ResponseRecord:
    participant: str
    trial: str
    action_correct: bool
    solution_correct: bool


_TRUTHY = {"1", "true", "yes", "y"}
_FALSY = {"0", "false", "no", "n"}


def _parse_bool(raw: str, path: str, row: int) -> bool:
    val = raw.strip().lower()
    if val in _TRUTHY:
        return True
    if val in _FALSY:
        return False
    raise UsageError(f"{path}:{row}: cannot parse boolean '{raw}'")


def read_responses(path: str) -> list[ResponseRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"participant", "trial", "action_correct", "solution_correct"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise UsageError(
                f"{path}: expected header participant,trial,action_correct,solution_correct"
            )
        records = []
        for i, row in enumerate(reader, start=2):
            records.append(
                ResponseRecord(
                    participant=row["participant"].strip(),
                    trial=row["trial"].strip(),
                    action_correct=_parse_bool(row["action_correct"], path, i),
                    solution_correct=_parse_bool(row["solution_correct"], path, i),
                )
            )
    return records


def study_metrics(records: list[ResponseRecord]) -> dict:
    """Solution and action-identification percentages, per participant and pooled.

    Sol% = correctSolution / (correctSolution + incorrectSolution);
    AId% = correctAction / (correctAction + incorrectAction).
    Zero-denominator ratios are reported as absent (None), not 0.
    """
    if not records:
        raise UsageError("no response records")

    def ratios(subset: list[ResponseRecord]) -> dict:
        n = len(subset)
        if n == 0:
            return {"sol_pct": None, "aid_pct": None, "n": 0}
        return {
            "sol_pct": sum(r.solution_correct for r in subset) / n,
            "aid_pct": sum(r.action_correct for r in subset) / n,
            "n": n,
        }

    participants = sorted({r.participant for r in records})
    return {
        "per_participant": {
            pid: ratios([r for r in records if r.participant == pid]) for pid in participants
        },
        "pooled": ratios(records),
    }


def run_summary(results: list[FoldResult]) -> dict:
    return {
        "folds": [
            {
                "fold_id": r.run.fold_id,
                "test_group": r.fold.test_group,
                "val_group": r.fold.val_group,
                "train_groups": list(r.fold.train_groups),
                "best_epoch": r.run.best_epoch,
                "stopped_epoch": r.run.stopped_epoch,
                "stop_reason": r.run.stop_reason,
                "best_val_loss": min(r.run.val_losses) if r.run.val_losses else None,
                "train_losses": r.run.train_losses,
                "val_losses": r.run.val_losses,
            }
            for r in results
        ],
        "median_best_epoch": int(statistics.median([r.run.best_epoch for r in results])),
    }
