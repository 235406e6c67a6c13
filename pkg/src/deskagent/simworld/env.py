"""Stateful environment wrapper around the pure-functional simulator core."""

from __future__ import annotations

from typing import Optional

from .render import render_obs
from .scene import SceneConfig, load_scene_config
from .types import Action, RenderedObs, WorldState
from .world import reset_neutral, step


class SimEnv:
    """Owns one WorldState and renders observations on demand."""

    def __init__(self, cfg: Optional[SceneConfig] = None):
        self.cfg = cfg or load_scene_config()
        self.state: Optional[WorldState] = None

    def reset(self, seed: int) -> WorldState:
        self.state = reset_neutral(seed, self.cfg)
        return self.state

    def set_state(self, state: WorldState) -> None:
        self.state = state

    def step(self, action: Action) -> WorldState:
        self.state = step(self.state, action, self.cfg)
        return self.state

    def obs(self) -> RenderedObs:
        return render_obs(self.state, self.cfg)
