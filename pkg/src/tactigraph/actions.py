"""Gesture to robot-command mapping used by the streaming demo."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RobotActionState:
    running: bool = True
    gripper_closed: bool = False
    waypoint_index: int = 0

    def __post_init__(self):
        if self.waypoint_index < 0:
            raise ValueError("waypoint_index must be non-negative")


def apply_gesture(state: RobotActionState, gesture: str) -> RobotActionState:
    """poke pauses/resumes, grab closes/releases the gripper, double_pat
    advances to the next waypoint (only while running), stroke is reserved."""
    if gesture == "poke":
        return replace(state, running=not state.running)
    if gesture == "grab":
        return replace(state, gripper_closed=not state.gripper_closed)
    if gesture == "double_pat":
        if not state.running:
            log.info("double_pat ignored while paused")
            return state
        return replace(state, waypoint_index=state.waypoint_index + 1)
    if gesture == "stroke":
        log.info("stroke received (no command bound)")
        return state
    raise ValueError(f"unknown gesture {gesture!r}")
