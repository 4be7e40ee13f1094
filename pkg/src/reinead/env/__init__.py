from .geometry import (
    Action,
    Bounds,
    CameraState,
    Intrinsics,
    extrinsic,
    project,
    projection_matrix,
    rotation_pitch,
    rotation_yaw,
    transition,
)
from .render import CardEnv, Observation, compose_texture, write_png
from .scene import Anchor, Scene, load_scenes, make_scene_dataset, save_scenes

__all__ = [
    "Action", "Bounds", "CameraState", "Intrinsics", "extrinsic", "project", "projection_matrix",
    "rotation_pitch", "rotation_yaw", "transition", "CardEnv", "Observation", "compose_texture",
    "write_png", "Anchor", "Scene", "load_scenes", "make_scene_dataset", "save_scenes",
]
