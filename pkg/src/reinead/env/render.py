"""Inverse-mapping renderer for a planar card and the patch applying function.

For every output pixel (with ``supersample``² sub-pixel rays) the pixel is
mapped back onto the card plane through the inverse of the card-plane
homography ``H = K [R e_u, R e_v, R c_0 + T]``; rays that land on the card
bilinearly sample the (optionally patched) texture, the rest see the
background colour. The result is a fixed sparse linear map of the texture,
so gradients reach texture and patch pixels exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, ops
from ..autodiff.ops import SampleGrid
from .geometry import Action, Bounds, CameraState, Intrinsics, extrinsic, project, transition
from .scene import Scene


@dataclass
class Observation:
    image: Tensor  # (R, R, 3)
    state: CameraState
    degenerate: bool = False


@dataclass(frozen=True)
class RenderPlan:
    grid: SampleGrid
    background_weight: np.ndarray  # (R, R, 1) fraction of sub-samples missing the card
    degenerate: bool


@dataclass(frozen=True)
class CardEnv:
    """The camera-on-a-sphere POMDP around a single card.

    The camera always faces the world origin from a fixed distance; the fixed
    translation ``(0, 0, distance)`` is applied after the yaw/pitch rotation.
    """

    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics.square(32, 35.0))
    bounds: Bounds = field(default_factory=Bounds)
    distance: float = 3.0
    action_caps: tuple[float, float] | None = None
    supersample: int = 2

    @property
    def translation(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.distance])

    @property
    def caps(self) -> tuple[float, float]:
        return self.action_caps if self.action_caps is not None else self.bounds.default_caps()

    @property
    def resolution(self) -> int:
        return self.intrinsics.resolution

    def initial_state(self, rng: np.random.Generator) -> CameraState:
        return self.bounds.sample(rng)

    def step(self, s: CameraState, a: Action) -> CameraState:
        ch, cv = self.caps
        if abs(a.dh) > ch + 1e-12 or abs(a.dv) > cv + 1e-12:
            raise ValueError(f"action {a} exceeds per-step caps {self.caps}")
        return transition(s, a, self.bounds)

    def extrinsic(self, s: CameraState) -> np.ndarray:
        return extrinsic(s, self.translation)

    def homography(self, scene: Scene, s: CameraState) -> np.ndarray:
        """Maps card coordinates ``(alpha, beta, 1)`` in ``[0,1]^2`` to homogeneous pixels."""
        E = self.extrinsic(s)
        R, T = E[:3, :3], E[:3, 3]
        c = scene.corners
        return self.intrinsics.K @ np.column_stack([R @ (c[1] - c[0]), R @ (c[3] - c[0]), R @ c[0] + T])

    def project_corners(self, scene: Scene, s: CameraState):
        return project(scene.corners, self.extrinsic(s), self.intrinsics.K)

    def plan(self, scene: Scene, s: CameraState) -> RenderPlan:
        res, ss, size = self.resolution, self.supersample, scene.size
        H = self.homography(scene, s)
        try:
            Hinv = np.linalg.inv(H)
        except np.linalg.LinAlgError:
            Hinv = None
        offs = (np.arange(ss) + 0.5) / ss - 0.5
        oy, ox = np.meshgrid(offs, offs, indexing="ij")
        pix = np.arange(res, dtype=np.float64)
        v = np.broadcast_to(pix[:, None, None] + oy.ravel(), (res, res, ss * ss))
        u = np.broadcast_to(pix[None, :, None] + ox.ravel(), (res, res, ss * ss))
        if Hinv is None:
            mask = np.zeros(u.shape)
            alpha = beta = np.zeros(u.shape)
        else:
            q = np.einsum("ij,...j->...i", Hinv, np.stack([u, v, np.ones_like(u)], axis=-1))
            w = q[..., 2]
            front = w > 0
            safe = np.where(front, w, 1.0)
            alpha, beta = q[..., 0] / safe, q[..., 1] / safe
            mask = (front & (alpha >= 0) & (alpha <= 1) & (beta >= 0) & (beta <= 1)).astype(np.float64)
        grid = SampleGrid(beta * size - 0.5, alpha * size - 0.5, (size, size), mask=mask, pool=ss * ss)
        bgw = (1.0 - mask.mean(axis=-1))[..., None]
        return RenderPlan(grid, bgw, degenerate=not mask.any())

    def render(self, scene: Scene, s: CameraState, patch: Tensor | np.ndarray | None = None,
               plan: RenderPlan | None = None) -> Observation:
        plan = plan or self.plan(scene, s)
        texture = compose_texture(scene, patch)
        img = ops.bilinear_sample(texture, plan.grid)
        img = ops.add(img, Tensor(plan.background_weight * scene.background, dtype=img.dtype))
        return Observation(ops.clamp(img, 0.0, 1.0), s, plan.degenerate)


def compose_texture(scene: Scene, patch: Tensor | np.ndarray | None) -> Tensor:
    """The applying function on the card texture: write ``patch`` into the anchor."""
    base = Tensor(scene.texture, dtype=patch.dtype if isinstance(patch, Tensor) else None)
    if patch is None:
        return base
    a = scene.anchor
    if tuple(np.shape(patch.data if isinstance(patch, Tensor) else patch)) != scene.patch_shape:
        raise ValueError(f"patch shape {np.shape(patch)} does not match anchor {scene.patch_shape}")
    return ops.place(base, patch, a.row, a.col)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, image: np.ndarray) -> None:
    """Lossless 8-bit RGB PNG, row-major."""
    from PIL import Image

    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")
