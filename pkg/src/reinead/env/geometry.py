"""Camera state, rotations, extrinsics and pinhole projection."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class Bounds:
    h_min: float = -0.35
    h_max: float = 0.35
    v_min: float = -0.25
    v_max: float = 0.25

    def __post_init__(self):
        if not (self.h_min <= self.h_max and self.v_min <= self.v_max):
            raise ValueError(f"empty bounds {self}")

    def sample(self, rng: np.random.Generator) -> "CameraState":
        return CameraState(float(rng.uniform(self.h_min, self.h_max)), float(rng.uniform(self.v_min, self.v_max)))

    def contains(self, s: "CameraState") -> bool:
        return self.h_min <= s.h <= self.h_max and self.v_min <= s.v <= self.v_max

    def default_caps(self, fraction: float = 0.25) -> tuple[float, float]:
        """Per-step action caps: ``fraction`` of each axis' total range."""
        return fraction * (self.h_max - self.h_min), fraction * (self.v_max - self.v_min)


@dataclass(frozen=True)
class CameraState:
    """Yaw ``h`` and pitch ``v`` in radians."""

    h: float = 0.0
    v: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.h, self.v])


@dataclass(frozen=True)
class Action:
    dh: float = 0.0
    dv: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.dh, self.dv])


def transition(s: CameraState, a: Action, bounds: Bounds) -> CameraState:
    """``s + a`` clamped componentwise to ``bounds``."""
    h = min(max(s.h + a.dh, bounds.h_min), bounds.h_max)
    v = min(max(s.v + a.dv, bounds.v_min), bounds.v_max)
    return replace(s, h=h, v=v)


def rotation_yaw(h: float) -> np.ndarray:
    c, s = np.cos(h), np.sin(h)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_pitch(v: float) -> np.ndarray:
    c, s = np.cos(v), np.sin(v)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def extrinsic(state: CameraState, translation) -> np.ndarray:
    """World-to-camera matrix ``[[Ry(h) Rx(v), T], [0, 1]]``."""
    E = np.eye(4)
    E[:3, :3] = rotation_yaw(state.h) @ rotation_pitch(state.v)
    E[:3, 3] = np.asarray(translation, dtype=np.float64)
    return E


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    resolution: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.resolution < 1:
            raise ValueError(f"invalid intrinsics {self}")

    @classmethod
    def square(cls, resolution: int, focal: float) -> "Intrinsics":
        c = (resolution - 1) / 2.0
        return cls(focal, focal, c, c, resolution)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def projection_matrix(E: np.ndarray, K: np.ndarray) -> np.ndarray:
    """``[[K, 0], [0, 1]] @ E``."""
    M = np.eye(4)
    M[:3, :3] = K
    return M @ E


def project(points, E: np.ndarray, K: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates ``(N, 2)`` and a visibility mask for world ``points`` ``(N, 3)``.

    Points with nonpositive camera depth are flagged not visible; their
    coordinates are NaN.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    homo = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    cam = (projection_matrix(E, K) @ homo.T).T
    depth = cam[:, 2]
    visible = depth > 0
    uv = np.full((len(pts), 2), np.nan)
    uv[visible] = cam[visible, :2] / depth[visible, None]
    return uv, visible
