"""Core domain types for the toy tabletop simulator."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

BLOCK_COLORS = ("red", "green", "blue")
LIGHT_COLORS = ("red", "green", "blue")

# Location tags a block can carry. Stacked blocks use "stacked-on:<color>".
LOC_TABLE = "table"
LOC_DRAWER = "drawer"
LOC_SLIDER = "slider"
LOC_CONTAINER = "container"


def stacked_on(color: str) -> str:
    return f"stacked-on:{color}"


class Gripper(enum.Enum):
    OPEN = 0
    CLOSED = 1


class GripperCmd(enum.Enum):
    OPEN = 0
    CLOSE = 1


@dataclass(frozen=True)
class Action:
    """Delta-position command plus a gripper command.

    Each delta component is clamped to +-max_step by the simulator.
    """

    delta_pos: np.ndarray  # shape (3,)
    gripper_cmd: GripperCmd

    def __post_init__(self):
        object.__setattr__(self, "delta_pos", np.asarray(self.delta_pos, dtype=np.float64))


@dataclass
class Block:
    color: str
    pose: np.ndarray  # shape (3,), meters, world frame
    location: str  # one of the LOC_* tags or stacked-on:<color>

    def copy(self) -> "Block":
        return Block(self.color, self.pose.copy(), self.location)


@dataclass
class WorldState:
    """Full simulator state.

    Invariants: drawer_ext and slider_pos in [0, 1]; at most one held object;
    a held block's pose equals ee_pos.
    """

    ee_pos: np.ndarray  # shape (3,)
    gripper: Gripper
    held_object: Optional[str]  # block color or None
    blocks: list  # list[Block]
    drawer_ext: float
    slider_pos: float
    lights: dict  # color -> bool
    t: int = 0

    def copy(self) -> "WorldState":
        return WorldState(
            ee_pos=self.ee_pos.copy(),
            gripper=self.gripper,
            held_object=self.held_object,
            blocks=[b.copy() for b in self.blocks],
            drawer_ext=self.drawer_ext,
            slider_pos=self.slider_pos,
            lights=dict(self.lights),
            t=self.t,
        )

    def block(self, color: str) -> Block:
        for b in self.blocks:
            if b.color == color:
                return b
        raise KeyError(color)


@dataclass(frozen=True)
class RenderedObs:
    """RGB observations from the static and gripper cameras, values in [0, 1]."""

    static_rgb: np.ndarray  # (H, W, 3) float32
    gripper_rgb: np.ndarray  # (h, w, 3) float32


class TaskId(enum.Enum):
    OPEN_DRAWER = "open_drawer"
    CLOSE_DRAWER = "close_drawer"
    MOVE_SLIDER_LEFT = "move_slider_left"
    MOVE_SLIDER_RIGHT = "move_slider_right"
    LIFT_RED_BLOCK = "lift_red_block"
    LIFT_GREEN_BLOCK = "lift_green_block"
    LIFT_BLUE_BLOCK = "lift_blue_block"
    PLACE_BLOCK_DRAWER = "place_block_drawer"
    PLACE_BLOCK_CONTAINER = "place_block_container"
    PLACE_BLOCK_SLIDER = "place_block_slider"
    PLACE_BLOCK_TABLE = "place_block_table"
    STACK_BLOCKS = "stack_blocks"
    UNSTACK_BLOCKS = "unstack_blocks"
    PUSH_BLOCK_LEFT = "push_block_left"
    PUSH_BLOCK_RIGHT = "push_block_right"
    TURN_RED_LIGHT_ON = "turn_red_light_on"
    TURN_RED_LIGHT_OFF = "turn_red_light_off"
    TURN_GREEN_LIGHT_ON = "turn_green_light_on"
    TURN_GREEN_LIGHT_OFF = "turn_green_light_off"
    TURN_BLUE_LIGHT_ON = "turn_blue_light_on"
    TURN_BLUE_LIGHT_OFF = "turn_blue_light_off"


class UnknownTask(Exception):
    pass
