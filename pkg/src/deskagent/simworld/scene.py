"""Scene configuration: loads the checked-in workspace/camera description."""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import yaml

from .camera import CameraModel, look_at
from .types import WorldState


@dataclass(frozen=True)
class SceneConfig:
    workspace_x: Tuple[float, float]
    workspace_y: Tuple[float, float]
    workspace_z: Tuple[float, float]
    home: np.ndarray
    max_step: float
    grasp_radius: float
    press_radius: float
    handle_radius: float
    block_half: float
    lift_height: float
    drawer_x_range: Tuple[float, float]
    drawer_handle_x: float
    drawer_handle_y_closed: float
    drawer_travel: float
    drawer_handle_z: float
    drawer_floor_z: float
    slider_y: float
    slider_z: float
    slider_x_left: float
    slider_x_right: float
    slider_platform_x: Tuple[float, float]
    slider_platform_y: Tuple[float, float]
    button_y: float
    button_z: float
    button_x: Dict[str, float]
    container_x: Tuple[float, float]
    container_y: Tuple[float, float]
    spawn_x: Tuple[float, float]
    spawn_y: Tuple[float, float]
    spawn_min_separation: float
    static_camera: CameraModel
    gripper_cam_offset_z: float
    gripper_cam_fx: float
    gripper_cam_fy: float
    gripper_cam_w: int
    gripper_cam_h: int

    def drawer_handle_pos(self, ext: float) -> np.ndarray:
        return np.array([
            self.drawer_handle_x,
            self.drawer_handle_y_closed - self.drawer_travel * ext,
            self.drawer_handle_z,
        ])

    def slider_handle_pos(self, pos: float) -> np.ndarray:
        x = self.slider_x_left + (self.slider_x_right - self.slider_x_left) * pos
        return np.array([x, self.slider_y, self.slider_z])

    def button_pos(self, color: str) -> np.ndarray:
        return np.array([self.button_x[color], self.button_y, self.button_z])

    def container_center(self) -> np.ndarray:
        return np.array([
            (self.container_x[0] + self.container_x[1]) / 2.0,
            (self.container_y[0] + self.container_y[1]) / 2.0,
            0.0,
        ])

    def drawer_region_center(self, ext: float) -> np.ndarray:
        # Center of the pull-out tray opening; only meaningful when ext is large.
        y = self.drawer_handle_y_closed - self.drawer_travel * ext + 0.05
        return np.array([self.drawer_handle_x, y, self.drawer_floor_z])

    def in_drawer_region(self, p: np.ndarray, ext: float) -> bool:
        center = self.drawer_region_center(ext)
        return (
            abs(p[0] - center[0]) <= 0.08
            and abs(p[1] - center[1]) <= 0.06
        )

    def in_container_region(self, p: np.ndarray) -> bool:
        return (
            self.container_x[0] <= p[0] <= self.container_x[1]
            and self.container_y[0] <= p[1] <= self.container_y[1]
        )

    def in_slider_region(self, p: np.ndarray) -> bool:
        return (
            self.slider_platform_x[0] <= p[0] <= self.slider_platform_x[1]
            and self.slider_platform_y[0] <= p[1] <= self.slider_platform_y[1]
        )

    def clamp_to_workspace(self, p: np.ndarray) -> np.ndarray:
        lo = np.array([self.workspace_x[0], self.workspace_y[0], self.workspace_z[0]])
        hi = np.array([self.workspace_x[1], self.workspace_y[1], self.workspace_z[1]])
        return np.clip(p, lo, hi)

    def in_workspace(self, p: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.clamp_to_workspace(p) - p) <= tol))

    def gripper_camera(self, state: WorldState) -> CameraModel:
        from .camera import top_down

        eye = state.ee_pos + np.array([0.0, 0.0, self.gripper_cam_offset_z])
        return top_down(eye, self.gripper_cam_fx, self.gripper_cam_fy,
                        self.gripper_cam_w, self.gripper_cam_h)


def load_scene_config(path=None) -> SceneConfig:
    """Load the scene config from `path`, or the packaged default."""
    if path is None:
        text = importlib.resources.files("deskagent.configs").joinpath("scene.yaml").read_text()
    else:
        with open(path) as f:
            text = f.read()
    raw = yaml.safe_load(text)
    if raw.get("version") != 1:
        raise ValueError(f"unsupported scene config version: {raw.get('version')}")
    cam = raw["static_camera"]
    static = look_at(cam["eye"], cam["target"], cam["fx"], cam["fy"], cam["width"], cam["height"])
    grip = raw["gripper_camera"]
    return SceneConfig(
        workspace_x=tuple(raw["workspace"]["x"]),
        workspace_y=tuple(raw["workspace"]["y"]),
        workspace_z=tuple(raw["workspace"]["z"]),
        home=np.asarray(raw["home"], dtype=np.float64),
        max_step=raw["max_step"],
        grasp_radius=raw["grasp_radius"],
        press_radius=raw["press_radius"],
        handle_radius=raw["handle_radius"],
        block_half=raw["block_half"],
        lift_height=raw["lift_height"],
        drawer_x_range=tuple(raw["drawer"]["x_range"]),
        drawer_handle_x=raw["drawer"]["handle_x"],
        drawer_handle_y_closed=raw["drawer"]["handle_y_closed"],
        drawer_travel=raw["drawer"]["travel"],
        drawer_handle_z=raw["drawer"]["handle_z"],
        drawer_floor_z=raw["drawer"]["floor_z"],
        slider_y=raw["slider"]["y"],
        slider_z=raw["slider"]["z"],
        slider_x_left=raw["slider"]["x_left"],
        slider_x_right=raw["slider"]["x_right"],
        slider_platform_x=tuple(raw["slider"]["platform_x"]),
        slider_platform_y=tuple(raw["slider"]["platform_y"]),
        button_y=raw["buttons"]["y"],
        button_z=raw["buttons"]["z"],
        button_x=dict(raw["buttons"]["x"]),
        container_x=tuple(raw["container"]["x"]),
        container_y=tuple(raw["container"]["y"]),
        spawn_x=tuple(raw["block_spawn"]["x"]),
        spawn_y=tuple(raw["block_spawn"]["y"]),
        spawn_min_separation=raw["block_spawn"]["min_separation"],
        static_camera=static,
        gripper_cam_offset_z=grip["offset_z"],
        gripper_cam_fx=grip["fx"],
        gripper_cam_fy=grip["fy"],
        gripper_cam_w=grip["width"],
        gripper_cam_h=grip["height"],
    )
