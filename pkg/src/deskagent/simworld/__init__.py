"""Toy tabletop simulator: state, dynamics, cameras, rendering, scripted play."""

from .camera import (
    BehindCamera,
    CameraModel,
    NonPositiveDepth,
    deproject_pixel,
    look_at,
    project_point,
    top_down,
)
from .env import SimEnv
from .language import TASK_TEMPLATES, instruction_for
from .render import render, render_obs
from .scene import SceneConfig, load_scene_config
from .scripted import PlayEpisode, Segment, plan_skill, run_skill, scripted_play
from .types import (
    BLOCK_COLORS,
    LOC_TABLE,
    Action,
    Block,
    Gripper,
    GripperCmd,
    RenderedObs,
    TaskId,
    UnknownTask,
    WorldState,
)
from .world import check_success, feasible, make_feasible, reset_neutral, step

__all__ = [
    "Action", "BehindCamera", "Block", "BLOCK_COLORS", "CameraModel", "Gripper",
    "GripperCmd", "LOC_TABLE", "NonPositiveDepth", "PlayEpisode", "RenderedObs", "SceneConfig",
    "Segment", "SimEnv", "TaskId", "TASK_TEMPLATES", "UnknownTask", "WorldState",
    "check_success", "deproject_pixel", "feasible", "instruction_for",
    "load_scene_config", "look_at", "make_feasible", "plan_skill", "project_point",
    "render", "render_obs", "reset_neutral", "run_skill", "scripted_play", "step",
    "top_down",
]
