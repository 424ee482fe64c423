"""Turns snapshots into model inputs.

The model input has three parts: the ordered list of entities at the goal
area (the encoder sequence), a 12-slot numeric block (relative distances,
velocity magnitudes, forward-filled task states, object-present bit), and
the identity of the desired object. Slots whose value does not exist yet
carry an Empty marker realised as None, which downstream code converts to a
masked 0 sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import N_RAW_FEATURES
from .errors import UsageError
from .world import DISTRACTORS, OBJECTS, PLACES, TASK_KEYS, Episode, Snapshot, Vec3

# Slot order of the numeric block; fixed for serialization and for the
# decoder-init concatenation.
N_FIELDS = ("rel_a_goal", "rel_o_objg", "rel_a_o", "v_ang", "v_lin") + TASK_KEYS + ("o_p",)

EMPTY_TOKEN = "<empty>"
ENTITY_TOKENS = (EMPTY_TOKEN,) + tuple(sorted(OBJECTS + PLACES + DISTRACTORS))
ENTITY_INDEX = {name: i for i, name in enumerate(ENTITY_TOKENS)}
OBJECT_INDEX = {name: i for i, name in enumerate(OBJECTS)}


@dataclass(frozen=True)
class FeatureVector:
    """One snapshot's worth of model input; None encodes Empty."""

    x_entities: tuple[str, ...]
    rel_a_goal: float
    rel_o_objg: float | None
    rel_a_o: float | None
    v_ang: float
    v_lin: float
    s_k: tuple[int | None, ...]
    o_p: bool
    o: str


@dataclass(frozen=True)
class MaskedInput:
    """Numeric block with its mask, plus token ids for the entity sequence
    and the desired object. Masked slots hold a 0 sentinel that must only be
    read through the mask."""

    n_values: np.ndarray   # (12,) float64
    n_mask: np.ndarray     # (12,) bool, True = real value
    x_ids: np.ndarray      # (k,) int, k >= 1 (<empty> when no goal objects)
    o_id: int


def _dist(a: Vec3, b: Vec3) -> float:
    return math.dist(a, b)


def objects_at_goal(snapshot: Snapshot, goal_place: str, radius: float) -> list[str]:
    """Entities (not places, not the agent) within `radius` of the goal place,
    sorted by name for determinism."""
    if goal_place not in snapshot.entity_locations or goal_place not in PLACES:
        raise UsageError(f"unknown goal place '{goal_place}'")
    goal_pose = snapshot.entity_locations[goal_place]
    found = [
        name
        for name, pose in snapshot.entity_locations.items()
        if name not in PLACES and _dist(pose, goal_pose) <= radius
    ]
    return sorted(found)


def relative_features(
    snapshot: Snapshot, o: str, goal_place: str, obj_g: list[str]
) -> tuple[float, float | None, float | None]:
    """(rel_a_goal, rel_o_objg, rel_a_o) Euclidean distances.

    Distances from the agent use its believed position, so a localization
    bias shows up as an inflated rel_a_goal on arrival. rel_o_objg is the
    minimum distance from the desired object to the other goal-area objects,
    Empty when there are none or when the object is not at the goal area.
    """
    agent = snapshot.believed_pos
    goal_pose = snapshot.entity_locations[goal_place]
    rel_a_goal = _dist(agent, goal_pose)

    o_pose = snapshot.entity_locations.get(o)
    rel_a_o = _dist(agent, o_pose) if o_pose is not None else None

    rel_o_objg: float | None = None
    if o_pose is not None and o in obj_g:
        others = [snapshot.entity_locations[name] for name in obj_g if name != o]
        if others:
            rel_o_objg = min(_dist(o_pose, p) for p in others)
    return rel_a_goal, rel_o_objg, rel_a_o


def forward_fill(episode: Episode) -> Episode:
    """Propagate the last defined task-state value over later undefined ticks.

    Leading undefined runs are kept (they become Empty features downstream).
    """
    last: dict[str, int | None] = {key: None for key in TASK_KEYS}
    filled = []
    for snap in episode.snapshots:
        states = {}
        for key in TASK_KEYS:
            value = snap.task_states.get(key)
            if value is None:
                value = last[key]
            else:
                last[key] = value
            states[key] = value
        filled.append(replace(snap, task_states=states))
    return replace(episode, snapshots=tuple(filled))


def extract(snapshot: Snapshot, o: str, goal_place: str, radius: float = 1.0) -> FeatureVector:
    """Assemble the feature vector for one (forward-filled) snapshot."""
    obj_g = objects_at_goal(snapshot, goal_place, radius)
    rel_a_goal, rel_o_objg, rel_a_o = relative_features(snapshot, o, goal_place, obj_g)
    return FeatureVector(
        x_entities=tuple(obj_g),
        rel_a_goal=rel_a_goal,
        rel_o_objg=rel_o_objg,
        rel_a_o=rel_a_o,
        v_ang=math.hypot(*snapshot.vel_ang),
        v_lin=math.hypot(*snapshot.vel_lin),
        s_k=tuple(snapshot.task_states[key] for key in TASK_KEYS),
        o_p=o in obj_g,
        o=o,
    )


def feature_slots(fv: FeatureVector) -> list[float | None]:
    """The 12 numeric slots in N_FIELDS order; None = Empty."""
    slots: list[float | None] = [fv.rel_a_goal, fv.rel_o_objg, fv.rel_a_o, fv.v_ang, fv.v_lin]
    slots.extend(float(s) if s is not None else None for s in fv.s_k)
    slots.append(1.0 if fv.o_p else 0.0)
    return slots


def to_masked(fv: FeatureVector) -> MaskedInput:
    slots = feature_slots(fv)
    values = np.array([0.0 if s is None else s for s in slots], dtype=np.float64)
    mask = np.array([s is not None for s in slots], dtype=bool)
    names = fv.x_entities if fv.x_entities else (EMPTY_TOKEN,)
    x_ids = np.array([ENTITY_INDEX[name] for name in names], dtype=np.int64)
    return MaskedInput(n_values=values, n_mask=mask, x_ids=x_ids, o_id=OBJECT_INDEX[fv.o])


@dataclass
class FeatureScaler:
    """Per-slot standardization fitted on training data; Empty slots are
    excluded from the statistics and stay at the 0 sentinel."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, inputs: list[MaskedInput]) -> "FeatureScaler":
        mean = np.zeros(N_RAW_FEATURES)
        std = np.ones(N_RAW_FEATURES)
        values = np.stack([m.n_values for m in inputs])
        masks = np.stack([m.n_mask for m in inputs])
        for j in range(N_RAW_FEATURES):
            col = values[masks[:, j], j]
            if col.size == 0:
                continue
            mean[j] = col.mean()
            s = col.std()
            std[j] = s if s > 1e-9 else 1.0
        return cls(mean=mean, std=std)

    def transform(self, m: MaskedInput) -> MaskedInput:
        values = np.where(m.n_mask, (m.n_values - self.mean) / self.std, 0.0)
        return MaskedInput(n_values=values, n_mask=m.n_mask, x_ids=m.x_ids, o_id=m.o_id)
