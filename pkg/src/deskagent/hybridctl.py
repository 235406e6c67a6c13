"""Hybrid control: gate between an analytic mover toward the affordance point
and the learned local policy, based on pixel distance between the projected
tool center point and the predicted affordance pixel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .affnet import AffNet, predict_pixel
from .langenc import LangEncoder
from .playdata import DatasetStats
from .simworld import (
    Action,
    GripperCmd,
    SceneConfig,
    SimEnv,
    WorldState,
    deproject_pixel,
    project_point,
)
from .skillpolicy import SkillPolicy

MODEL_BASED = "MODEL_BASED"
MODEL_FREE = "MODEL_FREE"


class TargetOutOfWorkspace(Exception):
    pass


@dataclass
class GateConfig:
    epsilon_frac: float = 0.1  # of the image diagonal
    approach_offset: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.03]))
    max_mb_step: float = 0.02
    subtask_horizon: int = 120
    depth_mode: str = "SAMPLE"
    force_model_free: bool = False  # flat baseline: alpha held at 1

    def epsilon_px(self, cam) -> float:
        return self.epsilon_frac * math.hypot(cam.image_w, cam.image_h)


@dataclass
class StepRecord:
    phase: str
    alpha: int
    i_tcp: tuple
    mb_action: Optional[Action]
    mf_action: Action
    executed: Action


@dataclass
class InstructionExecution:
    instruction: str
    i_aff: Optional[tuple]
    target_world: Optional[np.ndarray]
    steps: List[StepRecord] = field(default_factory=list)

    def phases(self) -> List[str]:
        return [s.phase for s in self.steps]

    def n_phase_flips(self) -> int:
        ph = self.phases()
        return sum(1 for a, b in zip(ph, ph[1:]) if a != b)


def alpha_gate(i_aff, i_tcp, epsilon: float) -> int:
    """1 selects the learned policy; 0 the model-based mover. Distance equal
    to epsilon selects the learned policy (the model-based case is a strict
    inequality)."""
    dist = math.hypot(i_aff[0] - i_tcp[0], i_aff[1] - i_tcp[1])
    return 0 if dist > epsilon else 1


def model_based_step(state: WorldState, target_world: np.ndarray,
                     cfg: GateConfig, scene: SceneConfig) -> Action:
    """Straight-line step toward target + approach offset, gripper held open."""
    goal = np.asarray(target_world, dtype=np.float64) + cfg.approach_offset
    if not scene.in_workspace(goal, tol=1e-6):
        raise TargetOutOfWorkspace(str(goal))
    delta = goal - state.ee_pos
    dist = np.linalg.norm(delta)
    if dist > cfg.max_mb_step:
        delta = delta / dist * cfg.max_mb_step
    return Action(delta, GripperCmd.OPEN)


def execute_instruction(instruction: str, env: SimEnv, aff_model: Optional[AffNet],
                        stats: Optional[DatasetStats], policy: SkillPolicy,
                        encoder: LangEncoder, cfg: GateConfig,
                        seed: int = 0) -> InstructionExecution:
    """Run one instruction for a fixed horizon under the alpha-gated mixture.

    The affordance is computed once on the current static image; the gate is
    re-evaluated every step from the live TCP projection and latches to the
    learned policy once it fires. Task failure is recorded, never raised.
    """
    scene = env.cfg
    cam = scene.static_camera
    emb = encoder.encode(instruction)
    z = policy.lang_goal(emb)

    i_aff = None
    target = None
    if not cfg.force_model_free:
        obs0 = env.obs()
        out = aff_model.predict(obs0.static_rgb, emb)
        i_aff = predict_pixel(out.dist)
        from .affnet import predict_point3d

        target = predict_point3d(aff_model, obs0.static_rgb, emb, cam, stats,
                                 mode=cfg.depth_mode, seed=seed)
        target = scene.clamp_to_workspace(target)
        # keep the offset goal inside the workspace too
        target = scene.clamp_to_workspace(target + cfg.approach_offset) - cfg.approach_offset

    execution = InstructionExecution(instruction, i_aff, target)
    epsilon = cfg.epsilon_px(cam)
    latched = cfg.force_model_free
    for _ in range(cfg.subtask_horizon):
        state = env.state
        (u, v), _ = project_point(state.ee_pos, cam)
        if not latched:
            latched = alpha_gate(i_aff, (u, v), epsilon) == 1
        alpha = 1 if latched else 0
        obs = env.obs()
        mf_action = policy.act(obs, state, z)
        mb_action = None
        if not cfg.force_model_free and alpha == 0:
            mb_action = model_based_step(state, target, cfg, scene)
        executed = mf_action if alpha == 1 else mb_action
        execution.steps.append(StepRecord(
            phase=MODEL_FREE if alpha == 1 else MODEL_BASED,
            alpha=alpha, i_tcp=(u, v),
            mb_action=mb_action, mf_action=mf_action, executed=executed))
        env.step(executed)
    return execution
