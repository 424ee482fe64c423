"""Labeled examples from episodes: annotation, vocabulary, CV folds.

Annotation emits one example per plan milestone (an action that just
completed) plus one for the failure tick, each labeled with its target
phrase. Cross-validation groups keep all examples of an episode together;
the default policy stratifies episodes round-robin into `n_folds` groups so
every group holds episodes of every scenario, while the "scenario" policy
makes each failure scenario its own group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .config import SCHEMA_VERSION
from .errors import ConfigError, SchemaError, UsageError
from .features import FeatureVector, extract, feature_slots, forward_fill
from .phrases import failure_phrase, success_phrase, tokenize
from .world import COMPLETED, TASK_KEYS, Episode

PAD, SOS, EOS, EMPTY = 0, 1, 2, 3
_RESERVED = ("<pad>", "<sos>", "<eos>", "<empty>")


@dataclass(frozen=True)
class LabeledExample:
    episode_id: str
    t: int
    features: FeatureVector
    label: str
    class_: str
    scenario: str
    group: str


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    id_of: dict[str, int]

    def encode(self, phrase: str) -> list[int]:
        return [self.id_of[tok] for tok in tokenize(phrase)] + [EOS]

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.tokens[i] for i in ids if i not in (PAD, SOS, EOS))


@dataclass(frozen=True)
class Fold:
    fold_id: int
    test_group: str
    val_group: str
    train_groups: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]


def _milestones(episode: Episode) -> list[tuple[int, str]]:
    """(tick, task key) pairs where a key newly became Completed."""
    hits = []
    prev = {key: None for key in TASK_KEYS}
    for snap in episode.snapshots:
        for key in TASK_KEYS:
            value = snap.task_states[key]
            if value == COMPLETED and prev[key] != COMPLETED:
                hits.append((snap.t, key))
            prev[key] = value
    return hits


def _active_or_latest(snapshot) -> str | None:
    """Key of the active action, else the most recently completed one."""
    for key in TASK_KEYS:
        if snapshot.task_states[key] == 0:
            return key
    completed = [key for key in TASK_KEYS if snapshot.task_states[key] == COMPLETED]
    return completed[-1] if completed else None


def annotate(
    episode: Episode,
    style: str,
    goal_radius: float = 1.0,
    every_tick: bool = False,
    episode_id: str = "",
) -> list[LabeledExample]:
    """Label a forward-filled episode with target phrases.

    Milestone snapshots get the matching success phrase, the failure
    snapshot gets the scenario's template in the requested style. With
    `every_tick`, non-milestone snapshots are also emitted, labeled with the
    phrase of the currently active (or latest completed) action.
    """
    if style not in ("cb", "ab"):
        raise UsageError(f"style '{style}' is not annotatable")
    filled = forward_fill(episode)
    config = episode.config
    scenario = config.scenario
    labeled: list[LabeledExample] = []

    def emit(t: int, label: str, class_: str) -> None:
        fv = extract(filled.snapshots[t], config.object, config.goal_place, goal_radius)
        labeled.append(
            LabeledExample(
                episode_id=episode_id,
                t=t,
                features=fv,
                label=label,
                class_=class_,
                scenario=scenario.value,
                group=scenario.value,
            )
        )

    milestone_at = {t: key for t, key in _milestones(filled)}
    failure_t = None
    if episode.outcome == "failed":
        failure_t = filled.snapshots[-1].t

    for snap in filled.snapshots:
        if snap.t == failure_t:
            emit(snap.t, failure_phrase(scenario, style), scenario.value)
        elif snap.t in milestone_at:
            key = milestone_at[snap.t]
            emit(snap.t, success_phrase(key, config.goal_place), "correct")
        elif every_tick:
            key = _active_or_latest(snap)
            if key is not None:
                emit(snap.t, success_phrase(key, config.goal_place), "correct")
    return labeled


def build_vocab(examples: list[LabeledExample]) -> Vocab:
    """Reserved ids 0..3, then all target-phrase words in lexicographic order."""
    if not examples:
        raise UsageError("cannot build a vocabulary from an empty example set")
    words = sorted({tok for ex in examples for tok in tokenize(ex.label)})
    tokens = _RESERVED + tuple(words)
    return Vocab(tokens=tokens, id_of={tok: i for i, tok in enumerate(tokens)})


def assign_groups(
    examples_per_episode: list[tuple[str, str, list[LabeledExample]]],
    grouping: str,
    n_folds: int,
) -> list[LabeledExample]:
    """Attach CV group names. `examples_per_episode` holds
    (episode_id, scenario, examples) in generation order."""
    out: list[LabeledExample] = []
    for idx, (_, scenario, examples) in enumerate(examples_per_episode):
        if grouping == "scenario":
            group = scenario
        elif grouping == "episode":
            group = f"g{idx % n_folds}"
        else:
            raise ConfigError(f"unknown grouping policy '{grouping}'")
        for ex in examples:
            out.append(
                LabeledExample(
                    episode_id=ex.episode_id,
                    t=ex.t,
                    features=ex.features,
                    label=ex.label,
                    class_=ex.class_,
                    scenario=ex.scenario,
                    group=group,
                )
            )
    return out


def make_folds(examples: list[LabeledExample], n_outer: int | None = None) -> FoldPlan:
    """Nested leave-one-group-out: fold i tests group i and validates group
    (i+1) mod n; the rest train."""
    groups = sorted({ex.group for ex in examples})
    if len(groups) < 3:
        raise UsageError("need at least 3 distinct groups for nested folds")
    if n_outer is None:
        n_outer = len(groups)
    if n_outer > len(groups):
        raise ConfigError(f"n_outer={n_outer} exceeds the {len(groups)} available groups")
    folds = []
    for i in range(n_outer):
        test = groups[i]
        val = groups[(i + 1) % len(groups)]
        train = tuple(g for g in groups if g not in (test, val))
        assert test != val and test not in train and val not in train
        folds.append(Fold(fold_id=i, test_group=test, val_group=val, train_groups=train))
    return FoldPlan(folds=tuple(folds))


# ---------------------------------------------------------------------------
# serialization


def example_to_json(ex: LabeledExample) -> dict:
    slots = feature_slots(ex.features)
    return {
        "episode_id": ex.episode_id,
        "t": ex.t,
        "X": list(ex.features.x_entities),
        "N": [None if s is None else float(f"{s:.9g}") for s in slots],
        "o": ex.features.o,
        "label": ex.label,
        "scenario": ex.scenario,
        "class": ex.class_,
        "group": ex.group,
    }


def example_from_json(rec: dict) -> LabeledExample:
    n = rec["N"]
    s_k = tuple(None if v is None else int(v) for v in n[5:11])
    fv = FeatureVector(
        x_entities=tuple(rec["X"]),
        rel_a_goal=n[0],
        rel_o_objg=n[1],
        rel_a_o=n[2],
        v_ang=n[3],
        v_lin=n[4],
        s_k=s_k,
        o_p=bool(n[11]),
        o=rec["o"],
    )
    return LabeledExample(
        episode_id=rec["episode_id"],
        t=rec["t"],
        features=fv,
        label=rec["label"],
        class_=rec["class"],
        scenario=rec["scenario"],
        group=rec["group"],
    )


def write_dataset(
    examples: list[LabeledExample], path: str | Path, style: str, grouping: str, config_digest: str = ""
) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": config_digest,
        "style": style,
        "grouping": grouping,
        "n_examples": len(examples),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for ex in examples:
            fh.write(json.dumps(example_to_json(ex), separators=(",", ":")) + "\n")


def read_dataset(path: str | Path) -> tuple[list[LabeledExample], dict]:
    with open(path) as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema_version {header.get('schema_version')}")
    return [example_from_json(json.loads(line)) for line in lines[1:]], header
