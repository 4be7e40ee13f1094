"""Scenes (textured planar cards), patches and the procedural dataset."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import archive


def card_corners(half: float = 1.0) -> np.ndarray:
    """Top-left, top-right, bottom-right, bottom-left corners of a card in the z=0 plane."""
    return np.array([[-half, -half, 0.0], [half, -half, 0.0], [half, half, 0.0], [-half, half, 0.0]])


@dataclass(frozen=True)
class Anchor:
    """Patch rectangle in texel coordinates: rows ``[row, row+height)``, cols ``[col, col+width)``."""

    row: int
    col: int
    height: int
    width: int

    def as_array(self) -> np.ndarray:
        return np.array([self.row, self.col, self.height, self.width])


@dataclass
class Scene:
    texture: np.ndarray  # (S, S, 3) in [0, 1]
    label: int
    anchor: Anchor
    corners: np.ndarray = field(default_factory=card_corners)
    background: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.5]))

    def __post_init__(self):
        tex = np.asarray(self.texture, dtype=np.float32)
        if tex.ndim != 3 or tex.shape[2] != 3 or tex.shape[0] != tex.shape[1]:
            raise ValueError(f"texture must be (S, S, 3), got {tex.shape}")
        if tex.min() < 0 or tex.max() > 1:
            raise ValueError("texture values must lie in [0, 1]")
        self.texture = tex
        a, s = self.anchor, tex.shape[0]
        if not (0 < a.row and 0 < a.col and a.row + a.height < s and a.col + a.width < s):
            raise ValueError(f"patch anchor {a} not strictly inside a {s}x{s} card")
        c = np.asarray(self.corners, dtype=np.float64)
        normal = np.cross(c[1] - c[0], c[3] - c[0])
        if abs(np.dot(c[2] - c[0], normal)) > 1e-9 * max(1.0, np.linalg.norm(normal)):
            raise ValueError("card corners are not coplanar")
        self.corners = c
        self.background = np.asarray(self.background, dtype=np.float32)

    @property
    def size(self) -> int:
        return self.texture.shape[0]

    @property
    def patch_shape(self) -> tuple[int, int, int]:
        return (self.anchor.height, self.anchor.width, 3)

    def region(self) -> np.ndarray:
        a = self.anchor
        return self.texture[a.row:a.row + a.height, a.col:a.col + a.width].copy()


def patch_side(texture_size: int, area_fraction: float) -> int:
    return max(1, int(round(texture_size * np.sqrt(area_fraction))))


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    return np.array(table[int(i)])


def _class_style(c: int, n_classes: int, seed: int) -> dict:
    rng = np.random.default_rng([seed, 7919, c])
    return {
        "hue": (c / n_classes + rng.uniform(-0.03, 0.03)) % 1.0,
        "angle": np.pi * c / n_classes,
        "freq": 2.0 + 1.5 * (c % 3),
        "blobs": 1 + c % 4,
    }


def make_texture(label: int, n_classes: int, size: int, seed: int, rng: np.random.Generator) -> np.ndarray:
    """Class-specific stripes and blobs; hue jitter overlaps neighbouring classes."""
    style = _class_style(label, n_classes, seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    hue = (style["hue"] + rng.uniform(-1.0, 1.0) / n_classes) % 1.0
    fg = _hsv_to_rgb(hue, rng.uniform(0.5, 0.9), rng.uniform(0.75, 0.95))
    bg = _hsv_to_rgb((hue + 0.5) % 1.0, rng.uniform(0.2, 0.5), rng.uniform(0.25, 0.45))
    angle = style["angle"] + rng.uniform(-0.08, 0.08)
    proj = np.cos(angle) * xx + np.sin(angle) * yy
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * style["freq"] * proj + rng.uniform(0, 2 * np.pi))
    coarse = 0.5 + 0.5 * np.sin(2 * np.pi * (xx + yy) * 0.75 + rng.uniform(0, 2 * np.pi))
    mix = (0.75 * stripes + 0.25 * coarse)[..., None]
    tex = mix * fg + (1 - mix) * bg
    for _ in range(style["blobs"]):
        cy, cx = rng.uniform(0.2, 0.8, 2)
        r = rng.uniform(0.08, 0.14)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))[..., None]
        tex = tex * (1 - 0.6 * blob) + 0.6 * blob * (1.0 - fg)
    tex = tex + rng.normal(0, 0.02, tex.shape)
    return np.clip(tex, 0.0, 1.0).astype(np.float32)


def make_scene_dataset(
    n_classes: int,
    per_class: int,
    seed: int,
    texture_size: int = 32,
    patch_area: float = 0.10,
    split: int = 0,
) -> list[Scene]:
    """Procedural scenes, ``per_class`` per label, deterministic in ``(seed, split)``.

    Class styles depend on ``seed`` only, so different ``split`` values give
    disjoint instances of the same classes (train / held-out).
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng([seed, split, 104729])
    side = patch_side(texture_size, patch_area)
    scenes = []
    for c in range(n_classes):
        for _ in range(per_class):
            tex = make_texture(c, n_classes, texture_size, seed, rng)
            row = int(rng.integers(1, texture_size - side))
            col = int(rng.integers(1, texture_size - side))
            scenes.append(Scene(tex, c, Anchor(row, col, side, side)))
    return scenes


def save_scenes(path, scenes: list[Scene], meta: dict | None = None) -> None:
    arrays = {
        "textures": np.stack([s.texture for s in scenes]),
        "labels": np.array([s.label for s in scenes], dtype=np.int32),
        "anchors": np.stack([s.anchor.as_array() for s in scenes]).astype(np.int32),
        "corners": np.stack([s.corners for s in scenes]).astype(np.float32),
        "backgrounds": np.stack([s.background for s in scenes]),
    }
    archive.save(path, arrays, {"kind": "scenes", **(meta or {})})


def load_scenes(path) -> list[Scene]:
    arrays, meta = archive.load(path)
    if meta.get("kind") != "scenes":
        raise archive.ArchiveError(f"{path} is not a scene archive (kind={meta.get('kind')!r})")
    return [
        Scene(t, int(y), Anchor(*map(int, a)), c.astype(np.float64), b)
        for t, y, a, c, b in zip(
            arrays["textures"], arrays["labels"], arrays["anchors"], arrays["corners"], arrays["backgrounds"]
        )
    ]
