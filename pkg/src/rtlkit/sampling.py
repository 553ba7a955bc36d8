"""Mesh-to-point-cloud conversion with an approximately even point spacing.

Two stages: area-weighted random sampling of the surface produces an
oversized candidate pool, then greedy weighted sample elimination thins it
to the target count while maximizing spacing (blue-noise-like).
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateMeshError,
    InsufficientCandidatesError,
    InvalidParameterError,
)
from .pointcloud import Mesh, PointCloud, bounding_box


@dataclass(frozen=True)
class SamplingConfig:
    """Knobs for mesh sampling.

    target_count: points kept after elimination.  candidate_multiplier: pool
    size is multiplier * target_count.  weight_exponent: falloff of the
    elimination weight kernel.  neighborhood_factor: neighbor radius as a
    multiple of r_max.
    """

    target_count: int = 8196
    candidate_multiplier: int = 5
    weight_exponent: float = 8.0
    neighborhood_factor: float = 2.0

    def __post_init__(self):
        if self.target_count < 1:
            raise InvalidParameterError("target_count must be >= 1")
        if self.candidate_multiplier < 2:
            raise InvalidParameterError("candidate_multiplier must be >= 2")
        if not (self.weight_exponent > 0):
            raise InvalidParameterError("weight_exponent must be > 0")


def area_weighted_surface_sample(mesh: Mesh, count: int, rng) -> PointCloud:
    """Sample `count` points uniformly by area over the mesh surface.

    Faces are chosen with probability proportional to area; the position
    within a face uses the square-root barycentric trick so the density is
    uniform over each triangle.
    """
    if count < 1:
        raise InvalidParameterError("sample count must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if not (total > 0):
        raise DegenerateMeshError("mesh has zero total surface area")
    cum = np.cumsum(areas)
    face_idx = np.searchsorted(cum, rng.random(count) * total)
    face_idx = np.minimum(face_idx, len(areas) - 1)
    tri = mesh.vertices[mesh.faces[face_idx]]
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    a = 1.0 - r1
    b = r1 * (1.0 - r2)
    c = r1 * r2
    points = a[:, None] * tri[:, 0] + b[:, None] * tri[:, 1] + c[:, None] * tri[:, 2]
    return PointCloud(points)


def elimination_radius(surface_area: float, target_count: int) -> float:
    """Spacing bound r_max for a target count on a given surface area."""
    return math.sqrt(surface_area / (2.0 * math.sqrt(3.0) * target_count))


def elimination_weights(
    positions: np.ndarray, r_max: float, alpha: float, neighborhood_factor: float = 2.0
):
    """Per-point crowding weights and the contributing neighbor pairs.

    w_i = sum over neighbors j within nf*r_max of (1 - d_ij / (nf*r_max))^alpha.
    Returns (weights, pairs, pair_contributions).
    """
    reach = neighborhood_factor * r_max
    n = positions.shape[0]
    weights = np.zeros(n)
    if reach <= 0 or n < 2:
        return weights, np.empty((0, 2), dtype=np.int64), np.empty(0)
    tree = cKDTree(positions)
    pairs = tree.query_pairs(reach, output_type="ndarray")
    if len(pairs):
        d = np.linalg.norm(positions[pairs[:, 0]] - positions[pairs[:, 1]], axis=1)
        contrib = (1.0 - np.minimum(d, reach) / reach) ** alpha
        np.add.at(weights, pairs[:, 0], contrib)
        np.add.at(weights, pairs[:, 1], contrib)
    else:
        contrib = np.empty(0)
    return weights, pairs, contrib


def poisson_disk_eliminate(
    pc: PointCloud, cfg: SamplingConfig, surface_area: float | None = None
) -> PointCloud:
    """Greedily remove the most crowded points until target_count remain.

    The output is always an exact-size subset of the input; with equal
    weights the lowest point index survives last (deterministic ordering).
    `surface_area` defaults to the bounding-box top-face area, which is only
    an approximation for bare point sets; pass the true mesh area when known.
    """
    n = pc.count
    target = cfg.target_count
    if n < target:
        raise InsufficientCandidatesError(f"{n} candidates for target {target}")
    if n == target:
        return pc

    if surface_area is None:
        lo, hi = bounding_box(pc)
        surface_area = float((hi[0] - lo[0]) * (hi[1] - lo[1]))
    r_max = elimination_radius(surface_area, target)
    if not (r_max > 0):
        raise InvalidParameterError(
            "elimination radius is zero; pass an explicit positive surface_area"
        )

    positions = pc.positions
    weights, pairs, contrib = elimination_weights(
        positions, r_max, cfg.weight_exponent, cfg.neighborhood_factor
    )
    # adjacency as CSR over the symmetric pair list
    sym_src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    sym_dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    sym_c = np.concatenate([contrib, contrib])
    order = np.argsort(sym_src, kind="stable")
    sym_src, sym_dst, sym_c = sym_src[order], sym_dst[order], sym_c[order]
    starts = np.searchsorted(sym_src, np.arange(n + 1))

    alive = np.ones(n, dtype=bool)
    remaining = n
    # max-heap with lazy invalidation; ties break toward the lowest index
    heap = [(-weights[i], i) for i in range(n)]
    heapq.heapify(heap)
    while remaining > target:
        w_neg, i = heapq.heappop(heap)
        if not alive[i] or -w_neg != weights[i]:
            continue
        alive[i] = False
        remaining -= 1
        for k in range(starts[i], starts[i + 1]):
            j = sym_dst[k]
            if alive[j]:
                weights[j] -= sym_c[k]
                heapq.heappush(heap, (-weights[j], j))
    return pc.select(np.flatnonzero(alive))


def sample_mesh_points(mesh: Mesh, cfg: SamplingConfig, rng) -> PointCloud:
    """Full pipeline: oversample the surface, then eliminate down to target."""
    pool = area_weighted_surface_sample(
        mesh, cfg.candidate_multiplier * cfg.target_count, rng
    )
    return poisson_disk_eliminate(pool, cfg, surface_area=mesh.surface_area())
