"""Deterministic tabletop dynamics, neutral resets and task success predicates."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .scene import SceneConfig
from .types import (
    BLOCK_COLORS,
    LOC_CONTAINER,
    LOC_DRAWER,
    LOC_SLIDER,
    LOC_TABLE,
    Action,
    Block,
    Gripper,
    GripperCmd,
    TaskId,
    UnknownTask,
    WorldState,
    stacked_on,
)


def _dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def _is_stacked_base(state: WorldState, color: str) -> bool:
    return any(b.location == stacked_on(color) for b in state.blocks)


def _settle_release(cfg: SceneConfig, state: WorldState, color: str) -> None:
    """Retag and drop a just-released block based on the release position."""
    blk = state.block(color)
    p = blk.pose
    for other in state.blocks:
        if other.color == color or other.color == state.held_object:
            continue
        if other.location.startswith("stacked-on:"):
            continue
        if _dist(p[:2], other.pose[:2]) <= 0.03:
            blk.location = stacked_on(other.color)
            blk.pose = np.array([other.pose[0], other.pose[1],
                                 other.pose[2] + 2 * cfg.block_half])
            return
    if state.drawer_ext >= 0.5 and cfg.in_drawer_region(p, state.drawer_ext):
        blk.location = LOC_DRAWER
        blk.pose = np.array([p[0], p[1], cfg.drawer_floor_z + cfg.block_half])
    elif cfg.in_container_region(p):
        blk.location = LOC_CONTAINER
        blk.pose = np.array([p[0], p[1], cfg.block_half])
    elif cfg.in_slider_region(p):
        blk.location = LOC_SLIDER
        blk.pose = np.array([p[0], p[1], cfg.slider_z + cfg.block_half])
    else:
        blk.location = LOC_TABLE
        blk.pose = np.array([p[0], p[1], cfg.block_half])


def step(state: WorldState, action: Action, cfg: SceneConfig) -> WorldState:
    """Advance the world one tick. Pure: returns a new state."""
    s = state.copy()
    prev_gripper = state.gripper
    prev_ee = state.ee_pos

    # Gripper command first; grasp/press happens at the OPEN -> CLOSE edge.
    if action.gripper_cmd is GripperCmd.CLOSE:
        if prev_gripper is Gripper.OPEN:
            nearest: Optional[Block] = None
            nearest_d = math.inf
            for b in s.blocks:
                d = _dist(prev_ee, b.pose)
                if d <= cfg.grasp_radius and d < nearest_d:
                    nearest, nearest_d = b, d
            if nearest is not None:
                # A block stacked on top of the grasped one drops back to the table.
                for other in s.blocks:
                    if other.location == stacked_on(nearest.color):
                        other.location = LOC_TABLE
                        other.pose = np.array([other.pose[0], other.pose[1], cfg.block_half])
                s.held_object = nearest.color
                nearest.pose = prev_ee.copy()
            else:
                for color in cfg.button_x:
                    if _dist(prev_ee, cfg.button_pos(color)) <= cfg.press_radius:
                        s.lights[color] = not s.lights[color]
                        break
        s.gripper = Gripper.CLOSED
    else:
        if prev_gripper is Gripper.CLOSED and s.held_object is not None:
            released = s.held_object
            s.held_object = None
            _settle_release(cfg, s, released)
        s.gripper = Gripper.OPEN

    # Handle engagement is evaluated at the pre-motion pose.
    engaged_drawer = (
        s.gripper is Gripper.CLOSED
        and s.held_object is None
        and _dist(prev_ee, cfg.drawer_handle_pos(state.drawer_ext)) <= cfg.handle_radius
    )
    engaged_slider = (
        s.gripper is Gripper.CLOSED
        and s.held_object is None
        and not engaged_drawer
        and _dist(prev_ee, cfg.slider_handle_pos(state.slider_pos)) <= cfg.handle_radius
    )

    delta = np.clip(action.delta_pos, -cfg.max_step, cfg.max_step)
    new_ee = cfg.clamp_to_workspace(prev_ee + delta)
    applied = new_ee - prev_ee
    s.ee_pos = new_ee

    if engaged_drawer:
        new_ext = float(np.clip(s.drawer_ext - applied[1] / cfg.drawer_travel, 0.0, 1.0))
        dy = -(new_ext - s.drawer_ext) * cfg.drawer_travel
        for b in s.blocks:
            if b.location == LOC_DRAWER:
                b.pose = b.pose + np.array([0.0, dy, 0.0])
        s.drawer_ext = new_ext
    if engaged_slider:
        span = cfg.slider_x_right - cfg.slider_x_left
        s.slider_pos = float(np.clip(s.slider_pos + applied[0] / span, 0.0, 1.0))

    if s.held_object is not None:
        s.block(s.held_object).pose = s.ee_pos.copy()

    s.t = state.t + 1
    return s


def reset_neutral(seed: int, cfg: SceneConfig) -> WorldState:
    """Neutral start: end effector at home, gripper open, seeded block layout."""
    rng = np.random.default_rng(seed)
    placed = []
    while len(placed) < len(BLOCK_COLORS):
        p = np.array([
            rng.uniform(*cfg.spawn_x),
            rng.uniform(*cfg.spawn_y),
            cfg.block_half,
        ])
        if all(_dist(p[:2], q[:2]) >= cfg.spawn_min_separation for q in placed):
            placed.append(p)
    blocks = [Block(c, placed[i], LOC_TABLE) for i, c in enumerate(BLOCK_COLORS)]
    return WorldState(
        ee_pos=cfg.home.copy(),
        gripper=Gripper.OPEN,
        held_object=None,
        blocks=blocks,
        drawer_ext=0.0,
        slider_pos=0.0,
        lights={c: False for c in cfg.button_x},
        t=0,
    )


def _count_stacked(state: WorldState) -> int:
    return sum(1 for b in state.blocks if b.location.startswith("stacked-on:"))


def check_success(task: TaskId, state_at_issue: WorldState, state_now: WorldState,
                  cfg: SceneConfig) -> bool:
    """Task predicate relative to the state when the instruction was issued."""
    issue, now = state_at_issue, state_now
    name = task.value
    if task is TaskId.OPEN_DRAWER:
        return now.drawer_ext >= 0.8 and issue.drawer_ext < 0.8
    if task is TaskId.CLOSE_DRAWER:
        return now.drawer_ext <= 0.2 and issue.drawer_ext > 0.2
    if task is TaskId.MOVE_SLIDER_LEFT:
        return now.slider_pos <= 0.2 and issue.slider_pos > 0.2
    if task is TaskId.MOVE_SLIDER_RIGHT:
        return now.slider_pos >= 0.8 and issue.slider_pos < 0.8
    if name.startswith("lift_"):
        color = name.split("_")[1]
        return (
            now.held_object == color
            and now.block(color).pose[2] >= cfg.lift_height
            and issue.held_object != color
        )
    if name.startswith("place_block_"):
        dest = name[len("place_block_"):]
        for b in now.blocks:
            if b.color == now.held_object:
                continue
            if b.location == dest and issue.block(b.color).location != dest:
                return True
        return False
    if task is TaskId.STACK_BLOCKS:
        return _count_stacked(now) > _count_stacked(issue)
    if task is TaskId.UNSTACK_BLOCKS:
        return _count_stacked(now) < _count_stacked(issue)
    if name.startswith("push_block_"):
        direction = -1.0 if name.endswith("left") else 1.0
        for b in now.blocks:
            if b.color == now.held_object or b.location != LOC_TABLE:
                continue
            dx = b.pose[0] - issue.block(b.color).pose[0]
            if direction * dx >= 0.05:
                return True
        return False
    if name.startswith("turn_"):
        color = name.split("_")[1]
        want_on = name.endswith("_on")
        return now.lights[color] == want_on and issue.lights[color] != want_on
    raise UnknownTask(task)


def reachable(state: WorldState, color: str, cfg: SceneConfig) -> bool:
    """A block can be grasped if it's not buried in a closed drawer or under a stack."""
    b = state.block(color)
    if b.location == LOC_DRAWER and state.drawer_ext < 0.5:
        return False
    if _is_stacked_base(state, color):
        return False
    return True


def feasible(task: TaskId, state: WorldState, cfg: SceneConfig) -> bool:
    """Whether a scripted skill for `task` can succeed from `state`."""
    name = task.value
    if state.held_object is not None:
        return False
    if task is TaskId.OPEN_DRAWER:
        return state.drawer_ext < 0.5
    if task is TaskId.CLOSE_DRAWER:
        return state.drawer_ext > 0.5
    if task is TaskId.MOVE_SLIDER_LEFT:
        return state.slider_pos > 0.5
    if task is TaskId.MOVE_SLIDER_RIGHT:
        return state.slider_pos < 0.5
    if name.startswith("lift_"):
        return reachable(state, name.split("_")[1], cfg)
    if name.startswith("place_block_"):
        dest = name[len("place_block_"):]
        if dest == LOC_DRAWER and state.drawer_ext < 0.5:
            return False
        return any(
            reachable(state, b.color, cfg) and b.location != dest
            for b in state.blocks
        )
    if task is TaskId.STACK_BLOCKS:
        free = [b for b in state.blocks
                if reachable(state, b.color, cfg) and not b.location.startswith("stacked-on:")]
        return len(free) >= 2
    if task is TaskId.UNSTACK_BLOCKS:
        return _count_stacked(state) > 0
    if name.startswith("push_block_"):
        direction = -1.0 if name.endswith("left") else 1.0
        for b in state.blocks:
            if b.location != LOC_TABLE or not reachable(state, b.color, cfg):
                continue
            nx = b.pose[0] + direction * 0.08
            if cfg.spawn_x[0] <= nx <= cfg.spawn_x[1]:
                return True
        return False
    if name.startswith("turn_"):
        color = name.split("_")[1]
        return state.lights[color] != name.endswith("_on")
    raise UnknownTask(task)


def make_feasible(state: WorldState, task: TaskId, rng: np.random.Generator,
                  cfg: SceneConfig) -> WorldState:
    """Minimally adjust a neutral state so `task` is feasible (used by eval setups)."""
    s = state.copy()
    name = task.value
    if task is TaskId.CLOSE_DRAWER or name == "place_block_drawer":
        s.drawer_ext = 1.0
    elif task is TaskId.MOVE_SLIDER_LEFT:
        s.slider_pos = 1.0
    elif task is TaskId.UNSTACK_BLOCKS:
        top, base = s.blocks[0], s.blocks[1]
        top.location = stacked_on(base.color)
        top.pose = np.array([base.pose[0], base.pose[1], base.pose[2] + 2 * cfg.block_half])
    elif name == "place_block_table":
        b = s.blocks[int(rng.integers(len(s.blocks)))]
        c = cfg.container_center()
        b.location = LOC_CONTAINER
        b.pose = np.array([c[0], c[1], cfg.block_half])
    elif name.startswith("turn_") and name.endswith("_off"):
        s.lights[name.split("_")[1]] = True
    if not feasible(task, s, cfg):
        raise UnknownTask(f"could not make {task} feasible")
    return s
