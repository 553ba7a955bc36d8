"""Core point-cloud and mesh value types plus the geometric helpers built on them.

All types are immutable after construction (arrays are marked read-only), so
every operation here is a pure function returning fresh values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInputError,
    InvalidParameterError,
    InvalidTransformError,
    ShapeError,
)

BACKGROUND = 0  # class index reserved for background everywhere


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PointCloud:
    """N points with per-point features, class labels and source tags.

    positions: (N, 3) float, meters. features: (N, F) float, F >= 1 (defaults
    to a constant 1.0 column since color is discarded). labels: (N,) int class
    indices with 0 = background. source: (N,) string tags, "scene" or a model
    identifier.
    """

    positions: np.ndarray
    features: np.ndarray = None
    labels: np.ndarray = None
    source: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pos)):
            raise InvalidParameterError("point positions must be finite")
        n = pos.shape[0]
        feats = self.features
        if feats is None:
            feats = np.ones((n, 1), dtype=np.float64)
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        if feats.shape[0] != n:
            raise ShapeError(f"features rows {feats.shape[0]} != positions rows {n}")
        labels = self.labels
        if labels is None:
            labels = np.zeros(n, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != n:
            raise ShapeError(f"labels length {labels.shape[0]} != positions rows {n}")
        if n and labels.min() < 0:
            raise InvalidParameterError("labels must be non-negative")
        source = self.source
        if source is None:
            source = np.full(n, "scene", dtype="<U32")
        source = np.asarray(source, dtype="<U32").reshape(-1)
        if source.shape[0] != n:
            raise ShapeError(f"source length {source.shape[0]} != positions rows {n}")
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "source", _readonly(source))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.count

    def with_positions(self, positions: np.ndarray) -> "PointCloud":
        return PointCloud(positions, self.features, self.labels, self.source)

    def select(self, index) -> "PointCloud":
        """Subset by boolean mask or integer index array."""
        return PointCloud(
            self.positions[index],
            self.features[index],
            self.labels[index],
            self.source[index],
        )

    def relabel(self, label: int, source: str | None = None) -> "PointCloud":
        """Uniformly relabel (and optionally retag) every point."""
        labels = np.full(self.count, label, dtype=np.int64)
        src = self.source if source is None else np.full(self.count, source, dtype="<U32")
        return PointCloud(self.positions, self.features, labels, src)


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh: (V, 3) float vertices and (F, 3) int vertex indices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if faces.size:
            if faces.min() < 0 or faces.max() >= verts.shape[0]:
                raise InvalidParameterError("face index out of vertex range")
            degenerate = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if degenerate.any():
                raise InvalidParameterError("face with repeated vertices")
        object.__setattr__(self, "vertices", _readonly(verts))
        object.__setattr__(self, "faces", _readonly(faces))

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def surface_area(self) -> float:
        return float(self.face_areas().sum())


@dataclass(frozen=True)
class ClassTaxonomy:
    """Class names indexed 0..C-1; index 0 is reserved for background."""

    names: tuple

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if len(names) < 2:
            raise InvalidParameterError("taxonomy needs background plus >=1 class")
        if len(set(names)) != len(names):
            raise InvalidParameterError("class names must be distinct")
        object.__setattr__(self, "names", names)

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @property
    def foreground(self) -> tuple:
        return tuple(range(1, len(self.names)))

    def index_of(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class RigidScaleTransform:
    """Yaw about z (radians), uniform scale > 0, then translation (meters).

    Applied as: x' = R_z(yaw) @ (scale * x) + translation.
    """

    yaw: float = 0.0
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.scale > 0):
            raise InvalidTransformError(f"scale must be > 0, got {self.scale}")
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "translation", _readonly(t))

    @staticmethod
    def identity() -> "RigidScaleTransform":
        return RigidScaleTransform()

    def rotation_matrix(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class VoxelGrid:
    """Partition of a cloud into cubic voxels of edge `size`.

    Voxel index of a point is floor(coordinate / size) per component.  `cells`
    maps each occupied index triple to the array of point indices inside it;
    `point_voxels` gives the (N, 3) voxel triple of every point.
    """

    size: float
    point_voxels: np.ndarray
    cells: dict
    # per-radius neighbor-pair cache filled by encoder.neighbor_pairs
    _pair_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def flatten_indices(self) -> np.ndarray:
        """All point indices across cells, sorted."""
        if not self.cells:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(list(self.cells.values())))


def transform_points(pc: PointCloud, tr: RigidScaleTransform) -> PointCloud:
    """Apply x' = R_z(yaw) @ (scale * x) + t; features/labels/source unchanged."""
    pos = (tr.scale * pc.positions) @ tr.rotation_matrix().T + tr.translation
    return pc.with_positions(pos)


def voxel_indices(positions: np.ndarray, size: float) -> np.ndarray:
    return np.floor(np.asarray(positions) / float(size)).astype(np.int64)


def voxelize(pc: PointCloud, size: float) -> VoxelGrid:
    """Group point indices by voxel; deterministic for a given cloud."""
    if not (size > 0):
        raise InvalidParameterError(f"voxel size must be > 0, got {size}")
    vox = voxel_indices(pc.positions, size)
    cells = {}
    if pc.count:
        order = np.lexsort((vox[:, 2], vox[:, 1], vox[:, 0]))
        sorted_vox = vox[order]
        change = np.ones(len(order), dtype=bool)
        change[1:] = np.any(sorted_vox[1:] != sorted_vox[:-1], axis=1)
        starts = np.flatnonzero(change)
        bounds = np.append(starts, len(order))
        for a, b in zip(bounds[:-1], bounds[1:]):
            key = tuple(int(v) for v in sorted_vox[a])
            cells[key] = np.sort(order[a:b])
    return VoxelGrid(size=float(size), point_voxels=_readonly(vox), cells=cells)


def estimate_floor_z(pc: PointCloud) -> float:
    """Robust floor height: nearest-rank 1st percentile of z coordinates."""
    if pc.count == 0:
        raise EmptyInputError("cannot estimate floor of an empty cloud")
    return float(np.percentile(pc.positions[:, 2], 1.0, method="nearest"))


def bounding_box(pc: PointCloud) -> tuple:
    """Componentwise (min, max) corners of the cloud."""
    if pc.count == 0:
        raise EmptyInputError("bounding box of an empty cloud is undefined")
    return pc.positions.min(axis=0), pc.positions.max(axis=0)


def concatenate(clouds: list) -> PointCloud:
    """Stack clouds; feature widths must agree."""
    if not clouds:
        raise EmptyInputError("nothing to concatenate")
    widths = {c.features.shape[1] for c in clouds}
    if len(widths) != 1:
        raise ShapeError(f"feature widths differ: {sorted(widths)}")
    return PointCloud(
        np.vstack([c.positions for c in clouds]),
        np.vstack([c.features for c in clouds]),
        np.concatenate([c.labels for c in clouds]),
        np.concatenate([c.source for c in clouds]),
    )
