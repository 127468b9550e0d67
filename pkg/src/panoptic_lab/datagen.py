"""Deterministic synthetic street-like scenes with ground-truth labels.

A scene is a sky/ground split at a random horizon row with discs and
rectangles painted on top (later shapes occlude earlier ones).  Class
indices are: 0 sky, 1 ground, then one thing class per recipe.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .core import ClassTable, ConfigurationError, DimensionError, canonicalize_instances

SKY, GROUND = 0, 1


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThingRecipe:
    name: str
    shape: str = "disc"                     # "disc" or "rect"
    count: tuple[int, int] = (1, 3)         # inclusive range
    size: tuple[int, int] = (8, 14)         # disc diameter / rect side, pixels
    palette: tuple[tuple[float, float, float], ...] = ((0.85, 0.15, 0.1),)
    jitter: float = 0.0                     # per-instance uniform color shift


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    horizon: tuple[float, float] = (0.3, 0.5)   # fraction of height
    sky_color: tuple[float, float, float] = (0.55, 0.75, 0.95)
    ground_color: tuple[float, float, float] = (0.35, 0.32, 0.28)
    things: tuple[ThingRecipe, ...] = ()
    noise: float = 0.0                          # per-pixel gaussian sigma
    x_range: tuple[float, float] = (0.0, 1.0)   # horizontal placement window

    def class_table(self) -> ClassTable:
        pairs = [("sky", "stuff"), ("ground", "stuff")]
        pairs += [(t.name, "thing") for t in self.things]
        return ClassTable.from_pairs(pairs)


class Scene(NamedTuple):
    image: np.ndarray   # (H, W, 3) float in [0, 1]
    sem: np.ndarray     # (H, W) int
    inst: np.ndarray    # (H, W) int, 0 = no instance


def toy_spec(**overrides) -> SceneSpec:
    """Default desk-scale scene family: two thing classes, fixed palettes."""
    things = (
        ThingRecipe("car", "disc", (1, 3), (9, 15), ((0.85, 0.15, 0.1),)),
        ThingRecipe("box", "rect", (0, 2), (8, 14), ((0.95, 0.8, 0.1),)),
    )
    base = dict(things=things, noise=0.03)
    base.update(overrides)
    return SceneSpec(**base)


def _shape_mask(recipe, size, rng, h, w, x_range):
    """Boolean mask of one shape placed fully inside the canvas and x window."""
    if recipe.shape == "disc":
        dh = dw = size
    elif recipe.shape == "rect":
        dh = size
        dw = int(rng.integers(max(2, size // 2), size + 1))
    else:
        raise GenerationError(f"unknown shape {recipe.shape!r}")
    x_lo = int(np.ceil(x_range[0] * w))
    x_hi = int(np.floor(x_range[1] * w)) - dw
    if dh > h or x_hi < x_lo:
        raise GenerationError(f"{recipe.name} of size {size} does not fit the canvas")
    top = int(rng.integers(0, h - dh + 1))
    left = int(rng.integers(x_lo, x_hi + 1))
    mask = np.zeros((h, w), dtype=bool)
    if recipe.shape == "rect":
        mask[top:top + dh, left:left + dw] = True
    else:
        r = size / 2.0
        yy, xx = np.mgrid[0:dh, 0:dw]
        disc = (yy + 0.5 - r) ** 2 + (xx + 0.5 - r) ** 2 <= r * r
        mask[top:top + dh, left:left + dw] = disc
    return mask


def generate_scene(spec: SceneSpec, seed: int) -> Scene:
    """Draw one scene; identical ``(spec, seed)`` gives identical arrays."""
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    lo, hi = spec.horizon
    horizon = int(rng.integers(int(lo * h), max(int(lo * h), int(hi * h)) + 1))
    image = np.empty((h, w, 3))
    image[:horizon] = spec.sky_color
    image[horizon:] = spec.ground_color
    sem = np.full((h, w), GROUND, dtype=np.int64)
    sem[:horizon] = SKY
    inst = np.zeros((h, w), dtype=np.int64)

    next_id = 1
    for k, recipe in enumerate(spec.things):
        if recipe.count[0] < 0 or recipe.count[1] < recipe.count[0]:
            raise GenerationError(f"bad count range for {recipe.name}")
        n = int(rng.integers(recipe.count[0], recipe.count[1] + 1))
        for _ in range(n):
            size = int(rng.integers(recipe.size[0], recipe.size[1] + 1))
            mask = _shape_mask(recipe, size, rng, h, w, spec.x_range)
            color = np.array(recipe.palette[int(rng.integers(len(recipe.palette)))], float)
            if recipe.jitter:
                color = color + rng.uniform(-recipe.jitter, recipe.jitter, 3)
            image[mask] = np.clip(color, 0.0, 1.0)
            sem[mask] = 2 + k
            inst[mask] = next_id
            next_id += 1
    if spec.noise:
        image = image + rng.normal(0.0, spec.noise, image.shape)
    image = np.clip(image, 0.0, 1.0)
    return Scene(image, sem, canonicalize_instances(inst))


def generate_scenes(spec: SceneSpec, n: int, seed: int) -> list[Scene]:
    """``n`` scenes with per-scene seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [generate_scene(spec, int(s)) for s in seeds]


def mirror_scene(scene: Scene) -> Scene:
    """Replace the right half by the reflection of the left half.

    Reflected instances get fresh ids, so every left-half object gains an
    appearance-identical twin.
    """
    w = scene.image.shape[1]
    if w % 2:
        raise DimensionError(f"mirroring needs an even width, got {w}")
    half = w // 2
    image = scene.image.copy()
    sem = scene.sem.copy()
    image[:, half:] = scene.image[:, :half][:, ::-1]
    sem[:, half:] = scene.sem[:, :half][:, ::-1]
    left = scene.inst[:, :half]
    right = left[:, ::-1].copy()
    offset = int(left.max()) if left.size else 0
    right[right > 0] += offset
    inst = np.concatenate([left, right], axis=1)
    return Scene(image, sem, canonicalize_instances(inst))


def spec_to_dict(spec: SceneSpec) -> dict:
    return asdict(spec)


def spec_from_dict(d: dict) -> SceneSpec:
    d = dict(d)
    things = tuple(
        ThingRecipe(
            name=t["name"], shape=t.get("shape", "disc"),
            count=tuple(t.get("count", (1, 3))), size=tuple(t.get("size", (8, 14))),
            palette=tuple(tuple(c) for c in t.get("palette", ((0.85, 0.15, 0.1),))),
            jitter=float(t.get("jitter", 0.0)))
        for t in d.pop("things", ()))
    for key in ("horizon", "sky_color", "ground_color", "x_range"):
        if key in d:
            d[key] = tuple(d[key])
    return SceneSpec(things=things, **d)


def load_spec(path) -> SceneSpec:
    """Read a scene spec from a JSON file."""
    with open(path) as f:
        text = f.read()
    try:
        return spec_from_dict(json.loads(text))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"{path}: invalid scene spec: {e}") from None


def save_spec(spec: SceneSpec, path) -> None:
    with open(path, "w") as f:
        json.dump(spec_to_dict(spec), f, indent=2)
        f.write("\n")
