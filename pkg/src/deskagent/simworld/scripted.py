"""Scripted skills and the teleoperated play generator.

Skills are closed-loop waypoint programs; the play generator chains them with
action noise, idle wander and occasional aborts, emulating undirected human
teleoperation. The same skill programs double as the oracle policy used to
validate the evaluation rig.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .render import render_obs
from .scene import SceneConfig
from .types import (
    LOC_DRAWER,
    LOC_TABLE,
    Action,
    Gripper,
    GripperCmd,
    RenderedObs,
    TaskId,
    UnknownTask,
    WorldState,
)
from .world import check_success, feasible, reachable, reset_neutral, step


@dataclass(frozen=True)
class Move:
    target: np.ndarray
    grip: GripperCmd
    tol: float = 0.012


@dataclass(frozen=True)
class Grip:
    cmd: GripperCmd


@dataclass
class Segment:
    """A contiguous span of steps during which one scripted skill ran."""

    task: TaskId
    start: int
    end: int  # inclusive; the snapshot at `end` reflects skill completion


@dataclass
class PlayEpisode:
    """In-memory play episode: aligned (state, action, obs) plus the skill log."""

    states: List[WorldState] = field(default_factory=list)
    actions: List[Action] = field(default_factory=list)
    obs: List[RenderedObs] = field(default_factory=list)
    segments: List[Segment] = field(default_factory=list)

    def __len__(self):
        return len(self.actions)


def _above(p, h=0.07):
    return np.asarray(p, dtype=np.float64) + np.array([0.0, 0.0, h])


def _free_table_spot(state: WorldState, cfg: SceneConfig, rng: np.random.Generator,
                     exclude: Optional[str] = None) -> np.ndarray:
    for _ in range(50):
        p = np.array([rng.uniform(*cfg.spawn_x), rng.uniform(*cfg.spawn_y), 0.0])
        if all(np.linalg.norm(p[:2] - b.pose[:2]) >= cfg.spawn_min_separation
               for b in state.blocks if b.color != exclude):
            return p
    return np.array([cfg.spawn_x[0], cfg.spawn_y[0], 0.0])


def _region_spot(center: np.ndarray, state: WorldState, exclude: str) -> np.ndarray:
    offsets = [(0.0, 0.0), (0.045, 0.0), (-0.045, 0.0), (0.0, 0.035), (0.0, -0.035)]
    for ox, oy in offsets:
        p = np.array([center[0] + ox, center[1] + oy])
        if all(np.linalg.norm(p - b.pose[:2]) >= 0.05
               for b in state.blocks if b.color != exclude):
            return p
    return center[:2].copy()


def _grasp_block(state: WorldState, cfg: SceneConfig, color: str) -> List:
    b = state.block(color)
    return [
        Move(_above(b.pose), GripperCmd.OPEN),
        Move(b.pose.copy(), GripperCmd.OPEN, tol=0.008),
        Grip(GripperCmd.CLOSE),
    ]


def _place_point(dest: str, color: str, state: WorldState, cfg: SceneConfig,
                 rng: np.random.Generator) -> Tuple[np.ndarray, float]:
    """Place xy point and release height for putting `color` at `dest`."""
    if dest == "drawer":
        center = cfg.drawer_region_center(state.drawer_ext)
        xy = _region_spot(center, state, color)
        z = cfg.drawer_floor_z + cfg.block_half + 0.012
    elif dest == "container":
        xy = _region_spot(cfg.container_center(), state, color)
        z = cfg.block_half + 0.012
    elif dest == "slider":
        center = np.array([
            (cfg.slider_platform_x[0] + cfg.slider_platform_x[1]) / 2.0,
            (cfg.slider_platform_y[0] + cfg.slider_platform_y[1]) / 2.0,
        ])
        xy = _region_spot(center, state, color)
        z = cfg.slider_z + cfg.block_half + 0.012
    else:  # table
        xy = _free_table_spot(state, cfg, rng, exclude=color)[:2]
        z = cfg.block_half + 0.012
    return xy, z


def plan_skill(task: TaskId, state: WorldState, cfg: SceneConfig,
               rng: np.random.Generator) -> List:
    """Waypoint program achieving `task` from `state`. Assumes feasibility."""
    name = task.value
    if task is TaskId.OPEN_DRAWER or task is TaskId.CLOSE_DRAWER:
        handle = cfg.drawer_handle_pos(state.drawer_ext)
        goal_ext = 1.0 if task is TaskId.OPEN_DRAWER else 0.0
        end = cfg.drawer_handle_pos(goal_ext)
        return [
            Move(_above(handle), GripperCmd.OPEN),
            Move(handle, GripperCmd.OPEN, tol=0.008),
            Grip(GripperCmd.CLOSE),
            Move(end, GripperCmd.CLOSE, tol=0.006),
            Grip(GripperCmd.OPEN),
            Move(_above(end), GripperCmd.OPEN),
        ]
    if task in (TaskId.MOVE_SLIDER_LEFT, TaskId.MOVE_SLIDER_RIGHT):
        handle = cfg.slider_handle_pos(state.slider_pos)
        goal = 0.0 if task is TaskId.MOVE_SLIDER_LEFT else 1.0
        end = cfg.slider_handle_pos(goal)
        return [
            Move(_above(handle), GripperCmd.OPEN),
            Move(handle, GripperCmd.OPEN, tol=0.008),
            Grip(GripperCmd.CLOSE),
            Move(end, GripperCmd.CLOSE, tol=0.006),
            Grip(GripperCmd.OPEN),
            Move(_above(end), GripperCmd.OPEN),
        ]
    if name.startswith("turn_"):
        btn = cfg.button_pos(name.split("_")[1])
        touch = btn + np.array([0.0, 0.0, 0.006])
        return [
            Move(_above(btn), GripperCmd.OPEN),
            Move(touch, GripperCmd.OPEN, tol=0.008),
            Grip(GripperCmd.CLOSE),
            Grip(GripperCmd.OPEN),
            Move(_above(btn), GripperCmd.OPEN),
        ]
    if name.startswith("lift_"):
        color = name.split("_")[1]
        b = state.block(color)
        hoist = np.array([b.pose[0], b.pose[1], cfg.lift_height + 0.05])
        return _grasp_block(state, cfg, color) + [Move(hoist, GripperCmd.CLOSE)]
    if name.startswith("place_block_"):
        dest = name[len("place_block_"):]
        if state.held_object is not None:
            color = state.held_object
            grasp = []
        else:
            candidates = [b for b in state.blocks
                          if reachable(state, b.color, cfg) and b.location != dest]
            color = candidates[int(rng.integers(len(candidates)))].color
            grasp = _grasp_block(state, cfg, color)
        xy, z = _place_point(dest, color, state, cfg, rng)
        place = np.array([xy[0], xy[1], z])
        return (
            grasp
            + [
                Move(_above(place, 0.08), GripperCmd.CLOSE),
                Move(place, GripperCmd.CLOSE, tol=0.008),
                Grip(GripperCmd.OPEN),
                Move(_above(place, 0.08), GripperCmd.OPEN),
            ]
        )
    if task is TaskId.STACK_BLOCKS:
        free = [b for b in state.blocks
                if reachable(state, b.color, cfg) and not b.location.startswith("stacked-on:")]
        mover = free[int(rng.integers(len(free)))]
        base = [b for b in free if b.color != mover.color][0]
        drop = np.array([base.pose[0], base.pose[1], base.pose[2] + 2 * cfg.block_half + 0.012])
        return (
            _grasp_block(state, cfg, mover.color)
            + [
                Move(_above(drop, 0.08), GripperCmd.CLOSE),
                Move(drop, GripperCmd.CLOSE, tol=0.006),
                Grip(GripperCmd.OPEN),
                Move(_above(drop, 0.08), GripperCmd.OPEN),
            ]
        )
    if task is TaskId.UNSTACK_BLOCKS:
        top = next(b for b in state.blocks if b.location.startswith("stacked-on:"))
        spot = _free_table_spot(state, cfg, rng, exclude=top.color)
        place = np.array([spot[0], spot[1], cfg.block_half + 0.012])
        return (
            _grasp_block(state, cfg, top.color)
            + [
                Move(_above(place, 0.08), GripperCmd.CLOSE),
                Move(place, GripperCmd.CLOSE, tol=0.008),
                Grip(GripperCmd.OPEN),
                Move(_above(place, 0.08), GripperCmd.OPEN),
            ]
        )
    if name.startswith("push_block_"):
        direction = -1.0 if name.endswith("left") else 1.0
        cands = [b for b in state.blocks
                 if b.location == LOC_TABLE and reachable(state, b.color, cfg)
                 and cfg.spawn_x[0] <= b.pose[0] + direction * 0.08 <= cfg.spawn_x[1]]
        b = cands[int(rng.integers(len(cands)))]
        end = b.pose + np.array([direction * 0.08, 0.0, 0.008])
        return (
            _grasp_block(state, cfg, b.color)
            + [
                Move(end, GripperCmd.CLOSE, tol=0.008),
                Grip(GripperCmd.OPEN),
                Move(_above(end, 0.08), GripperCmd.OPEN),
            ]
        )
    raise UnknownTask(task)


class SkillRunner:
    """Steps a waypoint program closed-loop, one action per call."""

    def __init__(self, prims: List, cfg: SceneConfig,
                 rng: Optional[np.random.Generator] = None, noise_sigma: float = 0.0):
        self.prims = prims
        self.cfg = cfg
        self.rng = rng
        self.noise_sigma = noise_sigma
        self.i = 0

    def done(self, state: WorldState) -> bool:
        self._skip_reached(state)
        return self.i >= len(self.prims)

    def _skip_reached(self, state: WorldState):
        while self.i < len(self.prims):
            prim = self.prims[self.i]
            if isinstance(prim, Move) and \
                    np.linalg.norm(prim.target - state.ee_pos) <= prim.tol:
                self.i += 1
            else:
                break

    def next_action(self, state: WorldState) -> Action:
        self._skip_reached(state)
        prim = self.prims[self.i]
        if isinstance(prim, Grip):
            self.i += 1
            return Action(np.zeros(3), prim.cmd)
        delta = prim.target - state.ee_pos
        dist = np.linalg.norm(delta)
        stride = self.cfg.max_step * 0.95
        if dist > stride:
            delta = delta / dist * stride
        if self.noise_sigma > 0.0 and self.rng is not None:
            delta = delta + self.rng.normal(0.0, self.noise_sigma, 3)
        return Action(delta, prim.grip)


MAX_SKILL_STEPS = 150


def run_skill(task: TaskId, state: WorldState, cfg: SceneConfig,
              rng: np.random.Generator, noise_sigma: float = 0.0,
              collect=None) -> WorldState:
    """Execute one skill to completion (or the step cap). Returns the final state.

    `collect(state, action)` is invoked per step before the state advances.
    A terminal hold step is always emitted so the post-skill state is observable
    as the snapshot of the segment's final step.
    """
    runner = SkillRunner(plan_skill(task, state, cfg, rng), cfg, rng, noise_sigma)
    for _ in range(MAX_SKILL_STEPS):
        if runner.done(state):
            break
        action = runner.next_action(state)
        if collect is not None:
            collect(state, action)
        state = step(state, action, cfg)
    hold_cmd = GripperCmd.CLOSE if state.gripper is Gripper.CLOSED else GripperCmd.OPEN
    hold = Action(np.zeros(3), hold_cmd)
    if collect is not None:
        collect(state, hold)
    return step(state, hold, cfg)


def scripted_play(seed: int, n_steps: int, cfg: SceneConfig,
                  noise_sigma: float = 0.0025, abort_p: float = 0.08,
                  idle_p: float = 0.15, render: bool = True) -> PlayEpisode:
    """Generate one reset-free play episode of exactly `n_steps` steps."""
    assert n_steps >= 1
    rng = np.random.default_rng(seed)
    state = reset_neutral(seed, cfg)
    ep = PlayEpisode()
    counts = {t: 0 for t in TaskId}

    def emit(s: WorldState, a: Action):
        ep.states.append(s.copy())
        ep.actions.append(a)
        ep.obs.append(render_obs(s, cfg) if render else None)

    def run_logged(task: TaskId, cur: WorldState, abort: bool) -> WorldState:
        start = len(ep)
        runner = SkillRunner(plan_skill(task, cur, cfg, rng), cfg, rng, noise_sigma)
        cutoff = MAX_SKILL_STEPS
        if abort:
            cutoff = int(rng.integers(3, 20))
        taken = 0
        while taken < cutoff and not runner.done(cur):
            a = runner.next_action(cur)
            emit(cur, a)
            cur = step(cur, a, cfg)
            taken += 1
        hold_cmd = GripperCmd.CLOSE if cur.gripper is Gripper.CLOSED else GripperCmd.OPEN
        emit(cur, Action(np.zeros(3), hold_cmd))
        cur = step(cur, Action(np.zeros(3), hold_cmd), cfg)
        end = len(ep) - 1
        if not abort and check_success(task, ep.states[start], ep.states[end], cfg):
            ep.segments.append(Segment(task, start, end))
            counts[task] += 1
        return cur

    while len(ep) < n_steps:
        if rng.random() < idle_p:
            target = np.array([
                rng.uniform(*cfg.spawn_x), rng.uniform(-0.3, 0.3), rng.uniform(0.12, 0.3),
            ])
            runner = SkillRunner([Move(target, GripperCmd.OPEN, tol=0.02)], cfg, rng, noise_sigma)
            for _ in range(int(rng.integers(5, 16))):
                if runner.done(state):
                    break
                a = runner.next_action(state)
                emit(state, a)
                state = step(state, a, cfg)
            continue
        feas = [t for t in TaskId if feasible(t, state, cfg)]
        if not feas:
            break
        weights = np.array([1.0 / (1.0 + counts[t]) for t in feas])
        task = feas[int(rng.choice(len(feas), p=weights / weights.sum()))]
        abort = rng.random() < abort_p
        state = run_logged(task, state, abort)
        # A held block left over from an abort (or a lift) is parked on the table.
        if state.held_object is not None:
            state = run_logged(TaskId.PLACE_BLOCK_TABLE, state, abort=False)

    ep.states = ep.states[:n_steps]
    ep.actions = ep.actions[:n_steps]
    ep.obs = ep.obs[:n_steps]
    ep.segments = [s for s in ep.segments if s.end < n_steps]
    return ep
