"""Shared data model: label maps, embeddings, coordinate grids, class metadata.

Maps are plain numpy arrays in row-major (height, width[, channels]) layout:

* image: float ``(H, W, 3)`` with values in [0, 1]
* semantic map: integer ``(H, W)`` class indices, :data:`IGNORE` for void
* instance map: integer ``(H, W)``, 0 means "no instance"
* embedding map: float ``(H, W, D)``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ._kernels import rank_by_first_appearance

IGNORE = 65535


class DimensionError(ValueError):
    """Array shapes or sizes do not fit together."""


class ConfigurationError(ValueError):
    """A configuration value is missing or inconsistent."""


class CoordinateGrid(NamedTuple):
    xchan: np.ndarray
    ychan: np.ndarray

    def stack(self) -> np.ndarray:
        """Channels-last ``(H, W, 2)`` array, x first."""
        return np.stack([self.xchan, self.ychan], axis=-1)


def _unit_ramp(n: int) -> np.ndarray:
    """``k / (n - 1)`` for ``k < n`` with ``ramp[::-1] == 1 - ramp`` bit-exactly.

    Values in the lower half are rounded to multiples of 2**-53 (an error of
    at most 2**-54) so that ``1 - v`` is exact; the upper half is mirrored.
    """
    if n == 1:
        return np.zeros(1)
    v = np.round(np.arange(n, dtype=np.float64) / (n - 1) * 2.0**53) / 2.0**53
    k = np.arange(n)
    upper = 2 * k > n - 1
    v[upper] = 1.0 - v[n - 1 - k[upper]]
    return v


def make_coordinate_grid(height: int, width: int) -> CoordinateGrid:
    """Normalized column and row coordinates in [0, 1].

    A single row or column maps to 0.  Mirroring either channel maps ``v``
    to ``1 - v`` exactly.
    """
    if height < 1 or width < 1:
        raise DimensionError(f"grid needs positive dimensions, got {height}x{width}")
    xs = _unit_ramp(width)
    ys = _unit_ramp(height)
    xchan = np.broadcast_to(xs[None, :], (height, width)).copy()
    ychan = np.broadcast_to(ys[:, None], (height, width)).copy()
    return CoordinateGrid(xchan, ychan)


def append_coordinates(image: np.ndarray) -> np.ndarray:
    """Image with the x and y coordinate channels appended last."""
    grid = make_coordinate_grid(*image.shape[:2])
    return np.concatenate([image, grid.stack().astype(image.dtype)], axis=-1)


def canonicalize_instances(ids: np.ndarray) -> np.ndarray:
    """Relabel nonzero ids to 1..M by order of first appearance (row-major)."""
    ids = np.asarray(ids)
    flat = ids.ravel()
    out = np.zeros(flat.shape, dtype=np.int64)
    if flat.size == 0:
        return out.reshape(ids.shape)
    lo, hi = int(flat.min()), int(flat.max())
    if lo >= 0 and hi <= 4 * flat.size + 1024:
        return rank_by_first_appearance(flat.astype(np.int64), hi).reshape(ids.shape)
    nz = flat != 0
    if not nz.any():
        return out.reshape(ids.shape)
    values, first, inverse = np.unique(flat[nz], return_index=True, return_inverse=True)
    rank = np.empty(len(values), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(1, len(values) + 1)
    out[nz] = rank[inverse]
    return out.reshape(ids.shape)


def downsample_labels(labels: np.ndarray, factor: int) -> np.ndarray:
    """Nearest downsampling that keeps the top-left sample of every block."""
    labels = np.asarray(labels)
    if factor < 1:
        raise DimensionError(f"factor must be positive, got {factor}")
    h, w = labels.shape[:2]
    if h % factor or w % factor:
        raise DimensionError(f"factor {factor} does not divide {h}x{w}")
    return labels[::factor, ::factor].copy()


@dataclass(frozen=True)
class ClassInfo:
    name: str
    kind: str  # "thing" or "stuff"

    @property
    def is_thing(self) -> bool:
        return self.kind == "thing"


@dataclass(frozen=True)
class ClassTable:
    classes: tuple[ClassInfo, ...]

    def __post_init__(self):
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate class names in {names}")
        for c in self.classes:
            if c.kind not in ("thing", "stuff"):
                raise ConfigurationError(f"class {c.name!r} has unknown kind {c.kind!r}")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, str]]) -> "ClassTable":
        return cls(tuple(ClassInfo(n, k) for n, k in pairs))

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def thing_ids(self) -> list[int]:
        return [i for i, c in enumerate(self.classes) if c.is_thing]

    @property
    def stuff_ids(self) -> list[int]:
        return [i for i, c in enumerate(self.classes) if not c.is_thing]

    def is_thing(self, k: int) -> bool:
        return self.classes[k].is_thing

    def index(self, name: str) -> int:
        for i, c in enumerate(self.classes):
            if c.name == name:
                return i
        raise KeyError(name)

    def names(self) -> list[str]:
        return [c.name for c in self.classes]


@dataclass(frozen=True)
class LossHyperParams:
    """Margins and weights of the discriminative loss.

    Defaults are the published Cityscapes settings.
    """

    delta_v: float = 0.25
    delta_d: float = 1.0
    delta_r: float = 6.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.1
    scale_weights: tuple[float, ...] = field(default=(1.0, 0.4, 0.16))

    def __post_init__(self):
        if not self.delta_d > self.delta_v:
            raise ConfigurationError("delta_d must exceed delta_v")
        if len(self.scale_weights) < 1:
            raise ConfigurationError("need at least one scale weight")
        if min(self.alpha, self.beta, self.gamma) < 0 or min(self.scale_weights) < 0:
            raise ConfigurationError("loss weights must be nonnegative")


def check_semantic(labels: np.ndarray, num_classes: int) -> None:
    valid = labels != IGNORE
    if valid.any() and (labels[valid].min() < 0 or labels[valid].max() >= num_classes):
        raise ValueError(f"semantic labels outside [0, {num_classes})")


def check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape[:2] for a in arrays}
    if len(shapes) != 1:
        raise DimensionError(f"spatial shapes differ: {sorted(shapes)}")
