"""Canonical explanation phrases and their class bookkeeping.

Failure phrases come in two styles: action-based (failed action only) and
context-based (failed action plus the environmental reason). Success
phrases describe completed plan milestones; these are a closed set so that
exact-match evaluation is well defined.
"""

from __future__ import annotations

from .errors import UsageError
from .world import FailureScenario

CLASSES = (
    "too_far",
    "close_together",
    "not_present",
    "occluded",
    "mislocalized",
    "controller",
    "correct",
)

CONTEXT_BASED = {
    FailureScenario.TOO_FAR: (
        "could not move its arm to the desired object "
        "because the desired object is too far away"
    ),
    FailureScenario.CLOSE_TOGETHER: (
        "could not move its arm to the desired object "
        "because the desired object is too close to other objects"
    ),
    FailureScenario.NOT_PRESENT: (
        "could not detect the desired object "
        "because the desired object is not present where the robot is looking"
    ),
    FailureScenario.OCCLUDED: (
        "could not detect the desired object because the desired object is occluded"
    ),
    FailureScenario.MISLOCALIZED: (
        "could not navigate to the desired object because the robot is lost"
    ),
    FailureScenario.CONTROLLER: (
        "could not navigate to the desired object "
        "because the robot’s motors are malfunctioning"
    ),
}

ACTION_BASED = {
    FailureScenario.TOO_FAR: "could not move its arm to the desired object",
    FailureScenario.CLOSE_TOGETHER: "could not move its arm to the desired object",
    FailureScenario.NOT_PRESENT: "could not detect the desired object",
    FailureScenario.OCCLUDED: "could not detect the object",
    FailureScenario.MISLOCALIZED: "could not navigate to the desired object",
    FailureScenario.CONTROLLER: "could not navigate to the desired object",
}

# One phrase per completed-action milestone. The move phrase names the goal
# place; object identity stays abstract ("the desired object") and flows
# through the o feature instead.
_SUCCESS = {
    "k_move": "robot moving to the {place}",
    "k_seg": "robot has segmented objects in the scene",
    "k_detect": "robot has detected the desired object",
    "k_findgrasp": "robot has found grasps for the desired object",
    "k_grasp": "robot has grasped the desired object",
    "k_pick": "robot has picked and placed the desired object",
}


def failure_phrase(scenario: FailureScenario, style: str) -> str:
    if scenario is FailureScenario.NO_FAILURE:
        raise UsageError("no failure phrase for a non-failing scenario")
    if style == "cb":
        return CONTEXT_BASED[scenario]
    if style == "ab":
        return ACTION_BASED[scenario]
    raise UsageError(f"unknown explanation style '{style}'")


def success_phrase(key: str, goal_place: str) -> str:
    return _SUCCESS[key].format(place=goal_place)


def tokenize(phrase: str) -> list[str]:
    return phrase.lower().split()


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


def canonical_classes(goal_places: tuple[str, ...]) -> dict[str, str]:
    """Exact phrase -> class over the context-based failure phrases plus the
    success phrases (one move variant per known place)."""
    table = {CONTEXT_BASED[sc]: sc.value for sc in CONTEXT_BASED}
    for key in _SUCCESS:
        if key == "k_move":
            for place in goal_places:
                table[success_phrase(key, place)] = "correct"
        else:
            table[success_phrase(key, "")] = "correct"
    return table


def phrase_class(phrase: str, table: dict[str, str]) -> str:
    """Class of an exactly-matching canonical phrase, else 'malformed'."""
    return table.get(phrase, "malformed")
