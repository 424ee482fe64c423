"""Kinematic pick-and-place simulator with scripted fault injection.

The world is a small household scene: an agent starting at the origin, two
support surfaces it can navigate to, five graspable objects, and a few
distractor entities. An episode executes the fixed seven-action plan

    move, segment, detect, findgrasp, grasp, lift, place

at 1 Hz. The failure scenario decides which plan action (if any) errors out
and mutates the scene so that the cause of the error is visible in the
state trace: the object is out of reach, cluttered, missing, occluded, the
pose estimate is biased, or the motors are dead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION, SimConfig
from .errors import ConfigError, SchemaError, UsageError

Vec3 = tuple[float, float, float]

OBJECTS = ("milk", "coke can", "ice cream", "bottle", "cup")
PLACES = ("dining table", "left kitchen counter")
DISTRACTORS = ("box", "plate", "book")

ACTIONS = ("move", "segment", "detect", "findgrasp", "grasp", "lift", "place")
TASK_KEYS = ("k_grasp", "k_findgrasp", "k_move", "k_pick", "k_detect", "k_seg")
ACTION_KEY = {
    "move": "k_move",
    "segment": "k_seg",
    "detect": "k_detect",
    "findgrasp": "k_findgrasp",
    "grasp": "k_grasp",
    "lift": "k_pick",
    "place": "k_pick",
}

ACTIVE, COMPLETED, ERRORED = 0, 1, -1

# Residual actuation under a controller fault: commanded motion produces
# near-zero (but measurable) velocities.
MOTOR_FAULT_GAIN = 1e-4
OBJECT_LIFT = 0.03  # objects rest slightly above their support surface


class FailureScenario(str, Enum):
    NO_FAILURE = "no_failure"
    TOO_FAR = "too_far"
    CLOSE_TOGETHER = "close_together"
    NOT_PRESENT = "not_present"
    OCCLUDED = "occluded"
    MISLOCALIZED = "mislocalized"
    CONTROLLER = "controller"


FAILING_SCENARIOS = (
    FailureScenario.TOO_FAR,
    FailureScenario.CLOSE_TOGETHER,
    FailureScenario.NOT_PRESENT,
    FailureScenario.OCCLUDED,
    FailureScenario.MISLOCALIZED,
    FailureScenario.CONTROLLER,
)

FAILED_ACTION = {
    FailureScenario.TOO_FAR: "grasp",
    FailureScenario.CLOSE_TOGETHER: "grasp",
    FailureScenario.NOT_PRESENT: "detect",
    FailureScenario.OCCLUDED: "detect",
    FailureScenario.MISLOCALIZED: "segment",
    FailureScenario.CONTROLLER: "move",
}

FAILURE_TYPE = {
    FailureScenario.TOO_FAR: "motion-planning",
    FailureScenario.CLOSE_TOGETHER: "motion-planning",
    FailureScenario.NOT_PRESENT: "detection",
    FailureScenario.OCCLUDED: "detection",
    FailureScenario.MISLOCALIZED: "navigation",
    FailureScenario.CONTROLLER: "navigation",
}

_LAYOUT_PRESETS = {
    "default": {
        "places": {
            "dining table": (3.0, 4.0, 0.75),
            "left kitchen counter": (-4.0, 3.0, 0.9),
        },
        # parking spot for distractors not used by the current scenario
        "park": (0.0, -5.0, 0.4),
    }
}


@dataclass(frozen=True)
class EpisodeConfig:
    seed: int
    object: str
    goal_place: str
    scenario: FailureScenario
    layout: str = "default"
    sample_hz: int = 1


@dataclass(frozen=True)
class Flags:
    occluded: bool = False
    motor_fault: bool = False


@dataclass(frozen=True)
class Snapshot:
    """Full agent state at one 1 Hz tick. Treated as an immutable value."""

    t: int
    entity_locations: dict[str, Vec3]
    vel_ang: Vec3
    vel_lin: Vec3
    pos: Vec3
    believed_pos: Vec3
    task_states: dict[str, int | None]
    flags: Flags


@dataclass(frozen=True)
class Episode:
    config: EpisodeConfig
    snapshots: tuple[Snapshot, ...]
    outcome: str  # "success" | "failed"
    failed_action: str | None


@dataclass
class WorldLayout:
    """Scene poses plus the fault bookkeeping recorded by injection."""

    target: str
    goal_place: str
    places: dict[str, Vec3]
    objects: dict[str, Vec3]
    misloc_offset: Vec3 = (0.0, 0.0, 0.0)
    motor_fault: bool = False
    occluded: bool = False


def _dist(a: Vec3, b: Vec3) -> float:
    return math.dist(a, b)


def standpoint(place_pose: Vec3) -> Vec3:
    """Where the agent stands to manipulate at a place: the floor point below it."""
    return (place_pose[0], place_pose[1], 0.0)


def _on_surface(place_pose: Vec3, rng: np.random.Generator, r_lo: float, r_hi: float) -> Vec3:
    ang = rng.uniform(0.0, 2.0 * math.pi)
    r = rng.uniform(r_lo, r_hi)
    return (
        place_pose[0] + r * math.cos(ang),
        place_pose[1] + r * math.sin(ang),
        place_pose[2] + OBJECT_LIFT,
    )


def _place_separated(
    place_pose: Vec3,
    rng: np.random.Generator,
    r_lo: float,
    r_hi: float,
    keep_away: list[Vec3],
    min_sep: float,
) -> Vec3:
    for _ in range(200):
        pose = _on_surface(place_pose, rng, r_lo, r_hi)
        if all(_dist(pose, other) >= min_sep for other in keep_away):
            return pose
    raise ConfigError("could not place an object with the required separation")


def build_base_layout(config: EpisodeConfig, sim: SimConfig, rng: np.random.Generator) -> WorldLayout:
    """Assemble the pre-fault scene for one episode.

    The desired object sits on the goal surface within reach; two of the
    remaining objects share the goal surface at a comfortable separation and
    the other two sit on the second surface. Distractors are parked away
    from both goal areas until a fault needs them.
    """
    preset = _LAYOUT_PRESETS.get(config.layout)
    if preset is None:
        raise ConfigError(f"unknown world layout '{config.layout}'")
    if config.object not in OBJECTS:
        raise ConfigError(f"'{config.object}' is not a graspable object")
    if config.goal_place not in PLACES:
        raise ConfigError(f"'{config.goal_place}' is not a known place")

    places = dict(preset["places"])
    goal_pose = places[config.goal_place]
    other_place = next(p for p in PLACES if p != config.goal_place)
    other_pose = places[other_place]
    sep = 2.0 * sim.geometry.clutter_dist

    objects: dict[str, Vec3] = {}
    objects[config.object] = _on_surface(goal_pose, rng, 0.12, 0.30)
    rest = [o for o in OBJECTS if o != config.object]
    for name in rest[:2]:
        objects[name] = _place_separated(
            goal_pose, rng, 0.45, 0.70, list(objects.values()), sep
        )
    for name in rest[2:]:
        objects[name] = _place_separated(
            other_pose, rng, 0.15, 0.60,
            [objects[n] for n in rest[2:] if n in objects], sep,
        )
    park = preset["park"]
    for name in DISTRACTORS:
        objects[name] = _on_surface(park, rng, 0.0, 0.30)
    return WorldLayout(
        target=config.object, goal_place=config.goal_place, places=places, objects=objects
    )


def inject_fault(
    layout: WorldLayout,
    scenario: FailureScenario,
    rng: np.random.Generator,
    sim: SimConfig,
) -> WorldLayout:
    """Mutate the scene so `scenario` has a visible cause. Identity for NO_FAILURE."""
    geom = sim.geometry
    goal_pose = layout.places[layout.goal_place]
    stand = standpoint(goal_pose)
    target_pose = layout.objects[layout.target]
    others_at_goal = [
        pose
        for name, pose in layout.objects.items()
        if name != layout.target and _dist(pose, goal_pose) <= geom.goal_radius
    ]

    if scenario is FailureScenario.NO_FAILURE:
        return layout

    if scenario is FailureScenario.TOO_FAR:
        # Push the target to the rim of the goal area: still visible, but
        # farther from the standpoint than the manipulator can reach.
        for _ in range(200):
            pose = _on_surface(goal_pose, rng, 0.72, 0.95)
            if _dist(pose, stand) > geom.reach and all(
                _dist(pose, o) >= 2.0 * geom.clutter_dist for o in others_at_goal
            ):
                layout.objects[layout.target] = pose
                return layout
        raise ConfigError("could not displace target beyond reach")

    if scenario is FailureScenario.CLOSE_TOGETHER:
        count = int(rng.integers(1, 4))
        for name in DISTRACTORS[:count]:
            ang = rng.uniform(0.0, 2.0 * math.pi)
            r = rng.uniform(0.015, 0.045)
            layout.objects[name] = (
                target_pose[0] + r * math.cos(ang),
                target_pose[1] + r * math.sin(ang),
                target_pose[2],
            )
        return layout

    if scenario is FailureScenario.NOT_PRESENT:
        other_place = next(p for p in PLACES if p != layout.goal_place)
        away = [
            pose
            for name, pose in layout.objects.items()
            if name != layout.target
            and _dist(pose, layout.places[other_place]) <= geom.goal_radius
        ]
        layout.objects[layout.target] = _place_separated(
            layout.places[other_place], rng, 0.15, 0.30, away, 2.0 * geom.clutter_dist
        )
        return layout

    if scenario is FailureScenario.OCCLUDED:
        head = (stand[0], stand[1], geom.head_height)
        f = rng.uniform(0.55, 0.75)
        layout.objects[DISTRACTORS[0]] = (
            head[0] + f * (target_pose[0] - head[0]),
            head[1] + f * (target_pose[1] - head[1]),
            head[2] + f * (target_pose[2] - head[2]),
        )
        layout.occluded = True
        return layout

    if scenario is FailureScenario.MISLOCALIZED:
        ang = rng.uniform(0.0, 2.0 * math.pi)
        mag = rng.uniform(geom.misloc_dist, 2.0 * geom.misloc_dist)
        layout.misloc_offset = (mag * math.cos(ang), mag * math.sin(ang), 0.0)
        return layout

    if scenario is FailureScenario.CONTROLLER:
        layout.motor_fault = True
        return layout

    raise ConfigError(f"unknown scenario '{scenario}'")


def _entity_locations(layout: WorldLayout) -> dict[str, Vec3]:
    # Fixed catalog order keeps serialized snapshots byte-stable.
    locations: dict[str, Vec3] = {}
    for name in PLACES:
        locations[name] = layout.places[name]
    for name in OBJECTS + DISTRACTORS:
        locations[name] = layout.objects[name]
    return locations


def init_state(config: EpisodeConfig, sim: SimConfig | None = None) -> Snapshot:
    """Initial snapshot: agent at rest at the origin, all task states undefined,
    scene already mutated by the scenario's fault injection."""
    sim = sim or SimConfig()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    layout = build_base_layout(config, sim, rng)
    layout = inject_fault(layout, config.scenario, rng, sim)
    offset = layout.misloc_offset
    return Snapshot(
        t=0,
        entity_locations=_entity_locations(layout),
        vel_ang=(0.0, 0.0, 0.0),
        vel_lin=(0.0, 0.0, 0.0),
        pos=(0.0, 0.0, 0.0),
        believed_pos=offset,
        task_states={key: None for key in TASK_KEYS},
        flags=Flags(occluded=layout.occluded, motor_fault=layout.motor_fault),
    )


def plan_schedule(sim: SimConfig, scenario: FailureScenario) -> list[tuple[str, int, int]]:
    """(action, start, end) intervals; truncated after the scenario's failed action."""
    durations = sim.durations
    schedule = []
    t = 0
    failed = FAILED_ACTION.get(scenario)
    for action in ACTIONS:
        d = getattr(durations, action)
        schedule.append((action, t, t + d))
        t += d
        if action == failed:
            break
    return schedule


def _key_intervals(schedule: list[tuple[str, int, int]]) -> dict[str, tuple[int, int]]:
    intervals: dict[str, tuple[int, int]] = {}
    for action, start, end in schedule:
        key = ACTION_KEY[action]
        if key in intervals:
            intervals[key] = (intervals[key][0], end)  # lift+place share k_pick
        else:
            intervals[key] = (start, end)
    return intervals


def is_terminal(snapshot: Snapshot) -> bool:
    states = snapshot.task_states.values()
    return any(s == ERRORED for s in states) or all(s == COMPLETED for s in states)


def is_failure(snapshot: Snapshot) -> bool:
    return any(s == ERRORED for s in snapshot.task_states.values())


def step(
    snapshot: Snapshot,
    plan: list[tuple[str, int, int]],
    config: EpisodeConfig,
    sim: SimConfig | None = None,
) -> Snapshot:
    """Advance one second of abstract execution.

    Task-state statuses are sticky: a key is Active while its action's
    interval covers t, Completed once the interval has passed, and the
    scenario's failed action ends Errored instead, terminating the episode.
    """
    sim = sim or SimConfig()
    if is_terminal(snapshot):
        raise UsageError("cannot step a terminal snapshot")
    t = snapshot.t + 1
    geom = sim.geometry

    failed = FAILED_ACTION.get(config.scenario)
    fail_end = next(end for action, _, end in plan if action == failed) if failed else None

    intervals = _key_intervals(plan)
    states: dict[str, int | None] = {}
    for key in TASK_KEYS:
        interval = intervals.get(key)
        if interval is None:
            states[key] = None
            continue
        start, end = interval
        if t >= end:
            states[key] = COMPLETED
        elif t >= start:
            states[key] = ACTIVE
        else:
            states[key] = None
    if failed is not None and fail_end is not None and t >= fail_end:
        states[ACTION_KEY[failed]] = ERRORED
    terminal_now = any(s == ERRORED for s in states.values()) or all(
        s == COMPLETED for s in states.values()
    )

    gain = MOTOR_FAULT_GAIN if snapshot.flags.motor_fault else 1.0
    move_start, move_end = next((s, e) for a, s, e in plan if a == "move")
    goal_pose = snapshot.entity_locations[config.goal_place]
    dest = standpoint(goal_pose)
    duration = move_end - move_start
    travelled = gain * min(t, move_end) / duration
    pos = (dest[0] * travelled, dest[1] * travelled, dest[2] * travelled)
    heading = math.atan2(dest[1], dest[0])

    moving = move_start <= t < move_end and not terminal_now
    if moving:
        vel_lin = (gain * dest[0] / duration, gain * dest[1] / duration, gain * dest[2] / duration)
        vel_ang = (0.0, 0.0, gain * heading / duration)
    else:
        vel_lin = (0.0, 0.0, 0.0)
        vel_ang = (0.0, 0.0, 0.0)
    for v in (vel_lin, vel_ang):
        if math.hypot(*v) > geom.max_speed:
            raise ConfigError("configured motion exceeds max_speed")

    # The constant localization offset is recoverable from any snapshot.
    offset = (
        snapshot.believed_pos[0] - snapshot.pos[0],
        snapshot.believed_pos[1] - snapshot.pos[1],
        snapshot.believed_pos[2] - snapshot.pos[2],
    )
    believed = (pos[0] + offset[0], pos[1] + offset[1], pos[2] + offset[2])

    return Snapshot(
        t=t,
        entity_locations=snapshot.entity_locations,
        vel_ang=vel_ang,
        vel_lin=vel_lin,
        pos=pos,
        believed_pos=believed,
        task_states=states,
        flags=snapshot.flags,
    )


def run_episode(config: EpisodeConfig, sim: SimConfig | None = None) -> Episode:
    """Run a full seeded episode; same config (incl. seed) gives identical output."""
    sim = sim or SimConfig()
    plan = plan_schedule(sim, config.scenario)
    snapshots = [init_state(config, sim)]
    while not is_terminal(snapshots[-1]):
        snapshots.append(step(snapshots[-1], plan, config, sim))
    last = snapshots[-1]
    if is_failure(last):
        failed = FAILED_ACTION[config.scenario]
        return Episode(config, tuple(snapshots), "failed", failed)
    return Episode(config, tuple(snapshots), "success", None)


# ---------------------------------------------------------------------------
# serialization: one header line, then one line per snapshot


def _r9(x: float) -> float:
    """Round to at most 9 significant digits (stable on-disk representation)."""
    return float(f"{x:.9g}")


def _vec(v: Vec3) -> list[float]:
    return [_r9(c) for c in v]


def snapshot_to_json(snapshot: Snapshot) -> dict:
    return {
        "t": snapshot.t,
        "entities": {name: _vec(pose) for name, pose in snapshot.entity_locations.items()},
        "vel_ang": _vec(snapshot.vel_ang),
        "vel_lin": _vec(snapshot.vel_lin),
        "pos": _vec(snapshot.pos),
        "task_states": dict(snapshot.task_states),
        "believed_pos": _vec(snapshot.believed_pos),
        "flags": {"occluded": snapshot.flags.occluded, "motor_fault": snapshot.flags.motor_fault},
    }


def write_episode(episode: Episode, path: str | Path, episode_id: str, config_digest: str = "") -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": config_digest,
        "episode_id": episode_id,
        "config": {
            "seed": episode.config.seed,
            "object": episode.config.object,
            "goal_place": episode.config.goal_place,
            "scenario": episode.config.scenario.value,
            "layout": episode.config.layout,
            "sample_hz": episode.config.sample_hz,
        },
        "outcome": episode.outcome,
        "failed_action": episode.failed_action,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for snap in episode.snapshots:
            fh.write(json.dumps(snapshot_to_json(snap), separators=(",", ":")) + "\n")


def read_episode(path: str | Path) -> tuple[Episode, str]:
    """Load an episode file; returns (episode, episode_id)."""
    with open(path) as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty episode file")
    header = json.loads(lines[0])
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema_version {header.get('schema_version')}")
    cfg = header["config"]
    config = EpisodeConfig(
        seed=cfg["seed"],
        object=cfg["object"],
        goal_place=cfg["goal_place"],
        scenario=FailureScenario(cfg["scenario"]),
        layout=cfg["layout"],
        sample_hz=cfg["sample_hz"],
    )
    snapshots = []
    for line in lines[1:]:
        rec = json.loads(line)
        snapshots.append(
            Snapshot(
                t=rec["t"],
                entity_locations={k: tuple(v) for k, v in rec["entities"].items()},
                vel_ang=tuple(rec["vel_ang"]),
                vel_lin=tuple(rec["vel_lin"]),
                pos=tuple(rec["pos"]),
                believed_pos=tuple(rec["believed_pos"]),
                task_states={k: v for k, v in rec["task_states"].items()},
                flags=Flags(**rec["flags"]),
            )
        )
    episode = Episode(config, tuple(snapshots), header["outcome"], header.get("failed_action"))
    return episode, header["episode_id"]
