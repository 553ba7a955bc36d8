"""Local point encoder: two neighborhood stages of offset MLPs with max pooling.

Each point gathers the points in voxels within a Chebyshev radius of its own
voxel, embeds the relative offsets with a small shared MLP, and max-pools.
The second stage widens the radius and concatenates first-stage features, so
the receptive field grows without any dense convolution.  Only relative
offsets enter the network, so features are invariant to translations that
preserve the voxel partition (integer multiples of the voxel size).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .errors import ConfigError, EmptyInputError
from .optim import ParamStore
from .pointcloud import PointCloud, VoxelGrid, voxelize


@dataclass(frozen=True)
class EncoderConfig:
    """Neighborhood radii are in voxel units; widths are the two MLP sizes."""

    radius1: int = 2
    radius2: int = 4
    width1: int = 32
    width2: int = 64
    out_dim: int = 96
    voxel_size: float = 0.05

    def __post_init__(self):
        if not (self.radius2 > self.radius1 >= 1):
            raise ConfigError(
                f"encoder radii must satisfy radius2 > radius1 >= 1, got "
                f"{self.radius1}, {self.radius2}"
            )
        if self.out_dim < 8:
            raise ConfigError(f"encoder.out_dim must be >= 8, got {self.out_dim}")
        if not (self.voxel_size > 0):
            raise ConfigError(f"encoder.voxel_size must be > 0, got {self.voxel_size}")


def _multi_arange(starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Concatenation of arange(s, s + l) for every (s, l) pair, vectorized."""
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    steps = np.ones(total, dtype=np.int64)
    steps[0] = starts[0]
    bounds = np.cumsum(lengths)[:-1]
    steps[bounds] = starts[1:] - (starts[:-1] + lengths[:-1] - 1)
    return np.cumsum(steps)


def neighbor_pairs(grid: VoxelGrid, radius: int):
    """(targets, sources, segment_starts) for all point pairs within `radius` voxels.

    Pairs are grouped by target point in index order and every point is its
    own neighbor, so segments are non-empty and aligned with point indices.
    Results are cached on the grid per radius.
    """
    cached = grid._pair_cache.get(radius)
    if cached is not None:
        return cached
    if not grid.cells:
        raise EmptyInputError("neighbor_pairs on an empty grid")
    coords = np.array(list(grid.cells.keys()), dtype=np.float64)
    # points concatenated in cell order, with per-cell offsets
    members = np.concatenate(list(grid.cells.values()))
    counts = np.array([len(v) for v in grid.cells.values()], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    n_cells = len(counts)

    tree = cKDTree(coords)
    # voxel-index distances are integers, so any slack below 1 keeps the
    # query equivalent to Chebyshev distance <= radius
    cell_pairs = tree.query_pairs(radius + 0.5, p=np.inf, output_type="ndarray")
    self_pairs = np.arange(n_cells, dtype=np.int64)
    tgt_cells = np.concatenate([cell_pairs[:, 0], cell_pairs[:, 1], self_pairs])
    src_cells = np.concatenate([cell_pairs[:, 1], cell_pairs[:, 0], self_pairs])
    order = np.argsort(tgt_cells, kind="stable")
    tgt_cells, src_cells = tgt_cells[order], src_cells[order]
    nbr_lens = np.bincount(tgt_cells, minlength=n_cells)
    nbr_cells = src_cells

    # expand each target cell's neighbor-cell list into a neighbor-point list
    nbr_points = members[_multi_arange(offsets[nbr_cells], counts[nbr_cells])]
    # neighbor-point count per target cell (cells always neighbor themselves,
    # so every segment is non-empty)
    seg_bounds = np.concatenate([[0], np.cumsum(nbr_lens)])
    pts_per_cell = np.add.reduceat(counts[nbr_cells], seg_bounds[:-1])
    block_offsets = np.concatenate([[0], np.cumsum(pts_per_cell)])

    # each point in cell u pairs with the same nbr_points block of cell u
    targets = np.repeat(members, np.repeat(pts_per_cell, counts))
    pair_blocks = pts_per_cell * counts
    pos = np.arange(int(pair_blocks.sum())) - np.repeat(
        np.cumsum(pair_blocks) - pair_blocks, pair_blocks
    )
    within = pos % np.repeat(np.maximum(pts_per_cell, 1), pair_blocks)
    sources = nbr_points[np.repeat(block_offsets[:-1], pair_blocks) + within]

    order = np.argsort(targets, kind="stable")
    targets, sources = targets[order], sources[order]
    n_points = grid.point_voxels.shape[0]
    starts = np.searchsorted(targets, np.arange(n_points))
    result = (targets, sources, starts)
    grid._pair_cache[radius] = result
    return result


def neighborhood_max_pool(features: ad.Tensor, grid: VoxelGrid, radius: int) -> ad.Tensor:
    """Column-wise max of each point's neighborhood features (N x W -> N x W)."""
    _, sources, starts = neighbor_pairs(grid, radius)
    return ad.segment_max(ad.gather_rows(features, sources), starts)


def register_encoder_params(store: ParamStore, cfg: EncoderConfig, seed: int):
    """Create all encoder weights in the store.

    Weights are He-uniform.  Biases start slightly off zero: self-neighbor
    offsets are exactly (0,0,0), and zero biases would park those rows
    precisely on the relu kink where the subgradient is ill-defined.
    """
    w1, w2 = cfg.width1, cfg.width2
    store.add_he_uniform("enc1_w1", 3, w1, seed)
    store.add_small_uniform("enc1_b1", w1, seed)
    store.add_he_uniform("enc1_w2", w1, w1, seed)
    store.add_small_uniform("enc1_b2", w1, seed)
    store.add_he_uniform("enc2_w1", 3 + w1, w2, seed)
    store.add_small_uniform("enc2_b1", w2, seed)
    store.add_he_uniform("enc2_w2", w2, w2, seed)
    store.add_small_uniform("enc2_b2", w2, seed)
    store.add_he_uniform("enc_out_w", w1 + w2, cfg.out_dim, seed)
    store.add_zeros("enc_out_b", cfg.out_dim)


def _stage(pair_feats, leaves, prefix, starts):
    h = ad.relu(ad.linear(pair_feats, leaves[f"{prefix}_w1"], leaves[f"{prefix}_b1"]))
    h = ad.relu(ad.linear(h, leaves[f"{prefix}_w2"], leaves[f"{prefix}_b2"]))
    return ad.segment_max(h, starts)


def encode(
    pc: PointCloud,
    leaves: dict,
    cfg: EncoderConfig,
    grid: VoxelGrid | None = None,
) -> ad.Tensor:
    """Per-point feature matrix (N x out_dim) from geometry alone.

    Input features are ignored by design: with color discarded, the constant
    feature column carries no information and relative offsets are the only
    signal.
    """
    if pc.count == 0:
        raise EmptyInputError("cannot encode an empty cloud")
    if grid is None:
        grid = voxelize(pc, cfg.voxel_size)
    dtype = leaves["enc1_w1"].data.dtype
    pos = pc.positions.astype(dtype)

    tgt1, src1, starts1 = neighbor_pairs(grid, cfg.radius1)
    off1 = ad.constant(pos[src1] - pos[tgt1])
    g1 = _stage(off1, leaves, "enc1", starts1)

    tgt2, src2, starts2 = neighbor_pairs(grid, cfg.radius2)
    off2 = ad.constant(pos[src2] - pos[tgt2])
    pair2 = ad.concat_cols([off2, ad.gather_rows(g1, src2)])
    g2 = _stage(pair2, leaves, "enc2", starts2)

    return ad.linear(
        ad.concat_cols([g1, g2]), leaves["enc_out_w"], leaves["enc_out_b"]
    )
