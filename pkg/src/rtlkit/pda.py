"""Physical alignment of synthetic models to scene statistics.

Covers prior-height scaling, random z-rotation and scaling, anchor-cluster
cropping (simulating partial scans), floor placement, and mixing models into
a scene with voxel-level overlap filtering.  All functions are pure; RNG
state is passed explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DatasetError,
    DegenerateModelError,
    EmptyInputError,
    PlacementError,
)
from .pointcloud import (
    BACKGROUND,
    PointCloud,
    RigidScaleTransform,
    bounding_box,
    concatenate,
    transform_points,
    voxelize,
)


@dataclass(frozen=True)
class PdaConfig:
    """Alignment parameters.

    class_prior_heights maps class index -> target bounding-box height in
    meters (user data, not constants).  overlap filtering draws one Bernoulli
    per mixed sample by default; set per_voxel_overlap for per-voxel draws.
    filter_overlap_side selects which side loses points in an overlap voxel.
    """

    scale_range: tuple = (0.9, 1.1)
    crop_anchor_range: tuple = (2, 5)
    crop_probability: float = 0.5
    overlap_keep_probability: float = 0.5
    class_prior_heights: dict = field(default_factory=dict)
    mix_mode: str = "scene"
    voxel_size: float = 0.05
    per_voxel_overlap: bool = False
    filter_overlap_side: str = "scene"
    plane_half_extent: float = 1.5

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ConfigError(f"pda.scale_range must be positive, got {self.scale_range}")
        a, b = self.crop_anchor_range
        if not (2 <= a <= b <= 5):
            raise ConfigError(
                f"pda.crop_anchor_range must lie within [2, 5], got {self.crop_anchor_range}"
            )
        for name in ("crop_probability", "overlap_keep_probability"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"pda.{name} must be in [0, 1], got {p}")
        if self.mix_mode not in ("scene", "models_only"):
            raise ConfigError(f"pda.mix_mode must be scene|models_only, got {self.mix_mode!r}")
        if self.filter_overlap_side not in ("scene", "model"):
            raise ConfigError(
                f"pda.filter_overlap_side must be scene|model, got {self.filter_overlap_side!r}"
            )
        if not (self.voxel_size > 0):
            raise ConfigError(f"pda.voxel_size must be > 0, got {self.voxel_size}")


def _centroid(pc: PointCloud) -> np.ndarray:
    return pc.positions.mean(axis=0)


def _about_centroid(pc: PointCloud, yaw: float, scale: float) -> PointCloud:
    """Rotate/scale keeping the centroid fixed."""
    c = _centroid(pc)
    tr = RigidScaleTransform(yaw=yaw, scale=scale)
    t = c - tr.rotation_matrix() @ (scale * c)
    return transform_points(pc, RigidScaleTransform(yaw=yaw, scale=scale, translation=t))


def class_prior_scale(pc: PointCloud, class_index: int, priors: dict) -> PointCloud:
    """Scale uniformly so the bounding-box z extent matches the class prior height."""
    if pc.count == 0:
        raise EmptyInputError("cannot scale an empty cloud")
    if class_index not in priors:
        raise ConfigError(f"no prior height configured for class {class_index}")
    lo, hi = bounding_box(pc)
    extent = float(hi[2] - lo[2])
    if extent <= 0:
        raise DegenerateModelError("model has zero z extent")
    return _about_centroid(pc, yaw=0.0, scale=float(priors[class_index]) / extent)


def random_rotate_z(pc: PointCloud, rng) -> PointCloud:
    """Yaw by Uniform[0, 2*pi) about the model centroid."""
    if pc.count == 0:
        raise EmptyInputError("cannot rotate an empty cloud")
    return _about_centroid(pc, yaw=rng.uniform(0.0, 2.0 * math.pi), scale=1.0)


def random_scale(pc: PointCloud, rng, scale_range=(0.9, 1.1)) -> PointCloud:
    """Scale by Uniform[lo, hi] about the model centroid."""
    if pc.count == 0:
        raise EmptyInputError("cannot scale an empty cloud")
    return _about_centroid(pc, yaw=0.0, scale=rng.uniform(*scale_range))


def nearest_anchor_partition(positions: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Assign each point to its nearest anchor point; ties go to the lowest anchor."""
    d2 = ((positions[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def anchor_crop(pc: PointCloud, rng, cfg: PdaConfig) -> PointCloud:
    """Drop one nearest-anchor cluster with probability crop_probability.

    Clouds of five or fewer points are returned unchanged, as is any draw
    whose removal would empty the cloud.
    """
    if pc.count <= 5:
        return pc
    if rng.random() >= cfg.crop_probability:
        return pc
    a_lo, a_hi = cfg.crop_anchor_range
    n_anchors = int(rng.integers(a_lo, a_hi + 1))
    anchor_idx = rng.choice(pc.count, size=n_anchors, replace=False)
    cluster = nearest_anchor_partition(pc.positions, pc.positions[anchor_idx])
    drop = int(rng.integers(0, n_anchors))
    keep = cluster != drop
    if not keep.any():
        return pc
    return pc.select(keep)


def place_on_floor(model: PointCloud, scene_box, floor_z: float, rng) -> RigidScaleTransform:
    """Translation putting the model inside the scene footprint, base on the floor.

    The (x, y) center is uniform over the scene box inset by half the model
    footprint; z aligns the model's minimum to floor_z.  No rotation/scale.
    """
    lo, hi = bounding_box(model)
    box_lo, box_hi = np.asarray(scene_box[0], float), np.asarray(scene_box[1], float)
    half = (hi[:2] - lo[:2]) / 2.0
    span_lo = box_lo[:2] + half
    span_hi = box_hi[:2] - half
    if not np.all(span_hi > span_lo):
        raise PlacementError(
            f"model footprint {2 * half} exceeds scene box {box_hi[:2] - box_lo[:2]}"
        )
    center_xy = rng.uniform(span_lo, span_hi)
    model_center_xy = (lo[:2] + hi[:2]) / 2.0
    t = np.array(
        [
            center_xy[0] - model_center_xy[0],
            center_xy[1] - model_center_xy[1],
            floor_z - lo[2],
        ]
    )
    return RigidScaleTransform(translation=t)


def mix(
    scene: PointCloud | None,
    models: list,
    rng,
    cfg: PdaConfig,
) -> PointCloud:
    """Concatenate placed models (label = class) onto a scene (label = background).

    Where scene and model points share a voxel, a Bernoulli draw with
    overlap_keep_probability decides whether they coexist or the configured
    side's points are removed — one draw per call, or per voxel when
    per_voxel_overlap is set.  `models` is a list of (cloud, class_index).
    """
    if not models:
        raise DatasetError("mix requires at least one model")
    if cfg.mix_mode == "scene" and scene is None:
        raise DatasetError("mix_mode=scene requires a scene cloud")
    if cfg.mix_mode == "models_only" and scene is not None:
        raise DatasetError("mix_mode=models_only forbids a scene cloud")

    parts = []
    if scene is not None:
        parts.append(scene.relabel(BACKGROUND, source="scene"))
    for k, (cloud, class_index) in enumerate(models):
        parts.append(cloud.relabel(int(class_index), source=f"model-{k}"))
    mixed = concatenate(parts)

    # one keep/filter draw happens regardless of whether an overlap exists,
    # so downstream rng consumption does not depend on geometry
    keep_sample = rng.random() < cfg.overlap_keep_probability
    if scene is None:
        return mixed

    grid = voxelize(mixed, cfg.voxel_size)
    scene_mask = mixed.source == "scene"
    remove = np.zeros(mixed.count, dtype=bool)
    for indices in grid.cells.values():
        in_scene = scene_mask[indices]
        if in_scene.any() and not in_scene.all():
            keep = rng.random() < cfg.overlap_keep_probability if cfg.per_voxel_overlap else keep_sample
            if not keep:
                side = in_scene if cfg.filter_overlap_side == "scene" else ~in_scene
                remove[indices[side]] = True
    if remove.any():
        mixed = mixed.select(~remove)
    return mixed
