"""Turn navigable neighbors into labeled textual action options."""

from __future__ import annotations

import string
from dataclasses import dataclass

from .env import CaptionTable, NavGraph, Pose, relative_pose
from .errors import EmptyCaption

GO_FORWARD = "go forward"
TURN_LEFT = "turn left"
TURN_RIGHT = "turn right"
TURN_AROUND = "turn around"
GO_UP = "go up"
GO_DOWN = "go down"
DIRECTION_PHRASES = (GO_FORWARD, TURN_LEFT, TURN_RIGHT, TURN_AROUND, GO_UP, GO_DOWN)

STOP = "stop"
STOP_LABEL = "A"
OPTION_LETTERS = string.ascii_uppercase


@dataclass(frozen=True)
class DirectionBins:
    """Bin edges in degrees. Boundary angles go to the clockwise-earlier bin."""

    forward: float = 45.0
    side: float = 135.0
    elevation: float = 30.0
    fine: bool = False


DEFAULT_BINS = DirectionBins()


def map_direction(dpsi: float, dtheta: float, bins: DirectionBins = DEFAULT_BINS) -> str:
    if dtheta > bins.elevation:
        return GO_UP
    if dtheta < -bins.elevation:
        return GO_DOWN
    if -bins.forward <= dpsi <= bins.forward:
        return GO_FORWARD
    if bins.forward < dpsi <= bins.side:
        return TURN_RIGHT
    if -bins.side <= dpsi < -bins.forward:
        return TURN_LEFT
    return TURN_AROUND


def describe_observation(direction: str, caption: str) -> str:
    if not caption or not caption.strip():
        raise EmptyCaption("caption must be non-empty")
    return f"{direction} to <{caption}>"


@dataclass(frozen=True)
class ObservationDescription:
    option_label: str
    direction: str  # one of DIRECTION_PHRASES, or STOP
    caption: str = ""
    text: str = STOP

    def render(self) -> str:
        return f"{self.option_label}. {self.text}"


@dataclass(frozen=True)
class ObservationSet:
    options: tuple[ObservationDescription, ...]
    targets: dict  # option letter -> neighbor viewpoint id (no entry for stop)

    @property
    def labels(self) -> list[str]:
        return [o.option_label for o in self.options]

    def option(self, label: str) -> ObservationDescription:
        for o in self.options:
            if o.option_label == label:
                return o
        raise KeyError(label)

    def label_for(self, viewpoint_id: str) -> str:
        for label, vid in self.targets.items():
            if vid == viewpoint_id:
                return label
        raise KeyError(viewpoint_id)

    def render(self) -> str:
        return ", ".join(o.render() for o in self.options)


def _direction_text(dpsi: float, dtheta: float, bins: DirectionBins) -> tuple[str, str]:
    phrase = map_direction(dpsi, dtheta, bins)
    if bins.fine:
        return phrase, f"{phrase} ({dpsi:.0f} deg heading, {dtheta:.0f} deg elevation)"
    return phrase, phrase


def build_observation_set(g: NavGraph, captions: CaptionTable, current: str, agent_pose: Pose,
                          bins: DirectionBins = DEFAULT_BINS) -> ObservationSet:
    """Option A is stop; neighbors follow sorted by heading change, ties by id.

    Raises MissingCaption naming the edge when a neighbor has no caption.
    """
    here = g.viewpoint(current)
    cands = []
    for nb in g.neighbors(current):
        dpsi, dtheta = relative_pose(here, agent_pose, g.viewpoint(nb))
        cands.append((dpsi, nb, dtheta))
    cands.sort(key=lambda c: (c[0], c[1]))
    if len(cands) + 1 > len(OPTION_LETTERS):
        raise ValueError(f"{current!r} has {len(cands)} neighbors; at most 25 can be labeled")

    options = [ObservationDescription(STOP_LABEL, STOP)]
    targets = {}
    for letter, (dpsi, nb, dtheta) in zip(OPTION_LETTERS[1:], cands):
        caption = captions.get(g.scan, current, nb)
        phrase, dtext = _direction_text(dpsi, dtheta, bins)
        options.append(ObservationDescription(letter, phrase, caption, describe_observation(dtext, caption)))
        targets[letter] = nb
    return ObservationSet(tuple(options), targets)
