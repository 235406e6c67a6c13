"""Instruction templates: at least two paraphrases per task."""

from __future__ import annotations

import numpy as np

from .types import TaskId

TASK_TEMPLATES = {
    TaskId.OPEN_DRAWER: ["open the drawer", "pull the drawer open"],
    TaskId.CLOSE_DRAWER: ["close the drawer", "push the drawer shut"],
    TaskId.MOVE_SLIDER_LEFT: ["move the slider to the left", "push the slider left"],
    TaskId.MOVE_SLIDER_RIGHT: ["move the slider to the right", "push the slider right"],
    TaskId.LIFT_RED_BLOCK: ["lift the red block", "pick up the red block"],
    TaskId.LIFT_GREEN_BLOCK: ["lift the green block", "pick up the green block"],
    TaskId.LIFT_BLUE_BLOCK: ["lift the blue block", "pick up the blue block"],
    TaskId.PLACE_BLOCK_DRAWER: [
        "place the block in the drawer",
        "pick up the block and place it in the drawer",
    ],
    TaskId.PLACE_BLOCK_CONTAINER: [
        "place the block in the container",
        "pick up the block and place it in the container",
    ],
    TaskId.PLACE_BLOCK_SLIDER: [
        "place the block in the slider",
        "pick up the block and place it in the slider",
    ],
    TaskId.PLACE_BLOCK_TABLE: [
        "place the block in the table",
        "pick up the block and place it in the table",
    ],
    TaskId.STACK_BLOCKS: ["stack the blocks", "put one block on top of another"],
    TaskId.UNSTACK_BLOCKS: ["unstack the blocks", "take the top block off the stack"],
    TaskId.PUSH_BLOCK_LEFT: ["push the block to the left", "slide the block left"],
    TaskId.PUSH_BLOCK_RIGHT: ["push the block to the right", "slide the block right"],
    TaskId.TURN_RED_LIGHT_ON: ["turn on the red light", "switch the red light on"],
    TaskId.TURN_RED_LIGHT_OFF: ["turn off the red light", "switch the red light off"],
    TaskId.TURN_GREEN_LIGHT_ON: ["turn on the green light", "switch the green light on"],
    TaskId.TURN_GREEN_LIGHT_OFF: ["turn off the green light", "switch the green light off"],
    TaskId.TURN_BLUE_LIGHT_ON: ["turn on the blue light", "switch the blue light on"],
    TaskId.TURN_BLUE_LIGHT_OFF: ["turn off the blue light", "switch the blue light off"],
}


def instruction_for(task: TaskId, rng: np.random.Generator) -> str:
    templates = TASK_TEMPLATES[task]
    return templates[int(rng.integers(len(templates)))]
