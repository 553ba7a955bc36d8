"""Procedural desk-scale benchmark: parametric shape families and cluttered scenes.

Models are sampled from parametric meshes (box, cylinder, sphere, cone, plus
lumpy "blob" distractors used as negatives).  Scenes are a floor plane with
rotated/scaled/partially-cut, noised instances of the same families and blob
clutter, all labeled for evaluation only.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import config_hash
from .errors import ConfigError
from .io_formats import DatasetManifest, ManifestEntry, save_manifest, write_ply
from .pda import place_on_floor, random_rotate_z, random_scale
from .pointcloud import BACKGROUND, ClassTaxonomy, Mesh, PointCloud, transform_points
from .sampling import SamplingConfig, sample_mesh_points

# canonical object dimensions in meters; heights feed the scale priors.
# sizes are chosen so that every surface point has an edge or strong
# curvature inside the encoder's receptive field
CANONICAL_DIMS = {
    "box": {"width": 0.18, "depth": 0.13, "height": 0.20},
    "cylinder": {"radius": 0.085, "height": 0.26},
    "sphere": {"radius": 0.105},
    "cone": {"radius": 0.115, "height": 0.24},
}
BLOB_RADIUS = 0.09


@dataclass(frozen=True)
class ToyBenchmarkConfig:
    classes: tuple = ("box", "cylinder", "sphere", "cone")
    points_per_model: int = 88
    models_per_class: int = 4
    negative_models: int = 6
    train_scenes: int = 10
    eval_scenes: int = 6
    instances_per_scene: tuple = (2, 3)
    clutter_per_scene: tuple = (1, 2)
    noise_sigma: float = 0.002
    partiality: float = 0.25
    scene_scale_range: tuple = (0.85, 1.15)
    floor_extent: float = 1.3
    floor_points: int = 600

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ConfigError("toy benchmark needs >= 2 shape classes")
        unknown = [c for c in self.classes if c not in CANONICAL_DIMS]
        if unknown:
            raise ConfigError(f"unknown toy shape classes {unknown}")
        if self.noise_sigma < 0:
            raise ConfigError("toy.noise_sigma must be >= 0")
        if not (0 <= self.partiality < 1):
            raise ConfigError("toy.partiality must be in [0, 1)")
        lo, hi = self.instances_per_scene
        if not (1 <= lo <= hi <= len(self.classes)):
            raise ConfigError(
                "toy.instances_per_scene must fit within the class count "
                "(instances carry distinct classes)"
            )


# ---------------------------------------------------------------------------
# parametric meshes
# ---------------------------------------------------------------------------

def box_mesh(width=0.26, depth=0.18, height=0.24) -> Mesh:
    x, y, z = width / 2, depth / 2, height / 2
    v = np.array(
        [
            [-x, -y, -z], [x, -y, -z], [x, y, -z], [-x, y, -z],
            [-x, -y, z], [x, -y, z], [x, y, z], [-x, y, z],
        ]
    )
    quads = [
        (0, 1, 2, 3), (4, 7, 6, 5),
        (0, 4, 5, 1), (1, 5, 6, 2),
        (2, 6, 7, 3), (3, 7, 4, 0),
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return Mesh(v, np.array(faces))


def cylinder_mesh(radius=0.10, height=0.30, segments=32) -> Mesh:
    angles = 2 * np.pi * np.arange(segments) / segments
    ring = np.column_stack([radius * np.cos(angles), radius * np.sin(angles)])
    bottom = np.column_stack([ring, np.full(segments, -height / 2)])
    top = np.column_stack([ring, np.full(segments, height / 2)])
    centers = np.array([[0, 0, -height / 2], [0, 0, height / 2]])
    v = np.vstack([bottom, top, centers])
    c_bot, c_top = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [(i, j, segments + j), (i, segments + j, segments + i)]
        faces.append((c_bot, j, i))
        faces.append((c_top, segments + i, segments + j))
    return Mesh(v, np.array(faces))


def sphere_mesh(radius=0.12, rings=12, segments=24) -> Mesh:
    verts = [[0.0, 0.0, radius]]
    for r in range(1, rings):
        polar = math.pi * r / rings
        z = radius * math.cos(polar)
        rho = radius * math.sin(polar)
        for s in range(segments):
            az = 2 * math.pi * s / segments
            verts.append([rho * math.cos(az), rho * math.sin(az), z])
    verts.append([0.0, 0.0, -radius])
    v = np.array(verts)
    south = len(verts) - 1
    faces = []
    for s in range(segments):
        t = (s + 1) % segments
        faces.append((0, 1 + s, 1 + t))
    for r in range(rings - 2):
        a = 1 + r * segments
        b = 1 + (r + 1) * segments
        for s in range(segments):
            t = (s + 1) % segments
            faces += [(a + s, b + s, b + t), (a + s, b + t, a + t)]
    last = 1 + (rings - 2) * segments
    for s in range(segments):
        t = (s + 1) % segments
        faces.append((south, last + t, last + s))
    return Mesh(v, np.array(faces))


def cone_mesh(radius=0.13, height=0.28, segments=32) -> Mesh:
    angles = 2 * np.pi * np.arange(segments) / segments
    base = np.column_stack(
        [radius * np.cos(angles), radius * np.sin(angles), np.full(segments, -height / 2)]
    )
    apex = np.array([[0, 0, height / 2]])
    center = np.array([[0, 0, -height / 2]])
    v = np.vstack([base, apex, center])
    i_apex, i_center = segments, segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append((i, j, i_apex))
        faces.append((i_center, j, i))
    return Mesh(v, np.array(faces))


def blob_mesh(rng, base_radius=BLOB_RADIUS, bumps=4) -> Mesh:
    """Sphere deformed by smooth random radial bumps: lumpy background clutter."""
    base = sphere_mesh(radius=1.0, rings=10, segments=20)
    verts = np.array(base.vertices)
    dirs = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    factor = np.ones(len(verts))
    for _ in range(bumps):
        k = rng.uniform(1.5, 4.0) * _unit(rng)
        phase = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.10, 0.28)
        factor += amp * np.cos(dirs @ k * 2 * math.pi + phase)
    factor = np.clip(factor, 0.45, None)
    return Mesh(verts * (base_radius * factor)[:, None], base.faces)


def plate_mesh(rng) -> Mesh:
    """Thin flat slab: planar two-sided background clutter (board analogue)."""
    return box_mesh(
        width=rng.uniform(0.22, 0.34),
        depth=rng.uniform(0.18, 0.30),
        height=rng.uniform(0.015, 0.03),
    )


def patch_mesh(rng) -> Mesh:
    """One-sided flat rectangle: floor-patch analogue.

    Without single-sided flat negatives the background anchor never sees
    open planar geometry and floor regions leak into the flat-faced classes.
    """
    w = rng.uniform(0.45, 0.65)
    d = rng.uniform(0.45, 0.65)
    verts = np.array(
        [[-w / 2, -d / 2, 0.0], [w / 2, -d / 2, 0.0], [w / 2, d / 2, 0.0], [-w / 2, d / 2, 0.0]]
    )
    return Mesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))


def _unit(rng) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def class_mesh(name: str, rng) -> Mesh:
    """A mesh of the named family with mildly jittered proportions."""
    dims = CANONICAL_DIMS[name]
    jitter = {k: v * rng.uniform(0.9, 1.1) for k, v in dims.items()}
    if name == "box":
        return box_mesh(**jitter)
    if name == "cylinder":
        return cylinder_mesh(**jitter)
    if name == "sphere":
        return sphere_mesh(radius=jitter["radius"])
    if name == "cone":
        return cone_mesh(**jitter)
    raise ConfigError(f"unknown shape class {name!r}")


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def toy_taxonomy(cfg: ToyBenchmarkConfig) -> ClassTaxonomy:
    return ClassTaxonomy(("background", *cfg.classes))


def toy_prior_heights(cfg: ToyBenchmarkConfig) -> dict:
    """Foreground class index -> canonical bounding-box height (meters).

    Background/negative models carry no prior: nothing in the scene defines
    their target size, so composition places them at their native scale.
    """
    heights = {}
    for index, name in enumerate(cfg.classes, start=1):
        dims = CANONICAL_DIMS[name]
        heights[index] = dims["height"] if "height" in dims else 2 * dims["radius"]
    return heights


def generate_toy_models(cfg: ToyBenchmarkConfig, rng) -> list:
    """Library of (cloud, class_index); class 0 entries are blob negatives."""
    sampling = SamplingConfig(target_count=cfg.points_per_model)
    library = []
    for index, name in enumerate(cfg.classes, start=1):
        for _ in range(cfg.models_per_class):
            cloud = sample_mesh_points(class_mesh(name, rng), sampling, rng)
            library.append((cloud, index))
    # negatives cycle lumpy, open-planar, and slab geometry so the
    # background anchor covers every clutter/floor regime
    builders = (blob_mesh, patch_mesh, plate_mesh)
    for k in range(cfg.negative_models):
        mesh = builders[k % len(builders)](rng)
        library.append((sample_mesh_points(mesh, sampling, rng), BACKGROUND))
    return library


def _half_space_cut(positions: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Keep-mask removing up to `fraction` of points beyond a random plane."""
    keep = np.ones(len(positions), dtype=bool)
    f = rng.uniform(0.0, fraction)
    direction = _unit(rng)
    if f <= 0:
        return keep
    dots = positions @ direction
    threshold = np.quantile(dots, 1.0 - f)
    return dots <= threshold


def _scene_instance(cloud: PointCloud, label: int, floor_box, cfg, rng) -> PointCloud:
    inst = random_rotate_z(cloud, rng)
    inst = random_scale(inst, rng, cfg.scene_scale_range)
    keep = _half_space_cut(inst.positions, cfg.partiality, rng)
    inst = inst.select(keep)
    inst = transform_points(inst, place_on_floor(inst, floor_box, 0.0, rng))
    pos = inst.positions
    if cfg.noise_sigma > 0:
        pos = pos + rng.normal(0.0, cfg.noise_sigma, size=pos.shape)
    return PointCloud(pos, labels=np.full(len(pos), label), source=np.full(len(pos), "scene"))


def generate_toy_scenes(cfg: ToyBenchmarkConfig, library, count: int, rng) -> list:
    """Labeled scenes; labels are ground truth for evaluation, never training."""
    half = cfg.floor_extent / 2
    floor_box = (np.array([-half, -half, 0.0]), np.array([half, half, 0.0]))
    foreground = list(range(1, len(cfg.classes) + 1))
    by_class = {}
    for cloud, index in library:
        by_class.setdefault(index, []).append(cloud)

    scenes = []
    for _ in range(count):
        floor_xy = rng.uniform(-half, half, size=(cfg.floor_points, 2))
        floor = PointCloud(
            np.column_stack([floor_xy, np.zeros(cfg.floor_points)]),
            labels=np.zeros(cfg.floor_points, dtype=np.int64),
        )
        parts = [floor]
        lo, hi = cfg.instances_per_scene
        k = int(rng.integers(lo, hi + 1))
        for index in rng.choice(foreground, size=k, replace=False):
            pool = by_class[int(index)]
            cloud = pool[int(rng.integers(len(pool)))]
            parts.append(_scene_instance(cloud, int(index), floor_box, cfg, rng))
        c_lo, c_hi = cfg.clutter_per_scene
        for _ in range(int(rng.integers(c_lo, c_hi + 1))):
            pool = by_class.get(BACKGROUND, [])
            if not pool:
                break
            cloud = pool[int(rng.integers(len(pool)))]
            parts.append(_scene_instance(cloud, BACKGROUND, floor_box, cfg, rng))
        scene = parts[0]
        for extra in parts[1:]:
            scene = PointCloud(
                np.vstack([scene.positions, extra.positions]),
                labels=np.concatenate([scene.labels, extra.labels]),
            )
        scenes.append(scene)
    return scenes


def toy_run_config(cfg: ToyBenchmarkConfig, seed: int) -> dict:
    """Recommended run settings for training on a generated toy dataset."""
    priors = toy_prior_heights(cfg)
    return {
        "train": {
            "epochs": 250,
            "learning_rate": 5e-3,
            "seed": seed,
            "feature_dim": 32,
            "num_prototypes": 48,
            "key_dim": 16,
            "inverse_temperature": 0.5,
            "voxel_size": 0.02,
            "max_steps": 2200,
        },
        "encoder": {
            "radius1": 2,
            "radius2": 4,
            "width1": 24,
            "width2": 48,
            "out_dim": 32,
            "voxel_size": 0.02,
        },
        "pda": {
            "scale_range": [0.9, 1.1],
            "crop_probability": 0.5,
            "overlap_keep_probability": 0.5,
            "class_prior_heights": {str(k): v for k, v in priors.items()},
            "voxel_size": 0.02,
            "plane_half_extent": 0.65,
        },
        "toy": {
            "classes": list(cfg.classes),
            "points_per_model": cfg.points_per_model,
            "train_scenes": cfg.train_scenes,
            "eval_scenes": cfg.eval_scenes,
            "noise_sigma": cfg.noise_sigma,
            "partiality": cfg.partiality,
        },
    }


def write_toy_dataset(cfg: ToyBenchmarkConfig, seed: int, out_dir) -> dict:
    """Generate and persist the full benchmark; byte-deterministic per seed.

    Returns paths of the train/eval manifests and the suggested run config.
    """
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    taxonomy = toy_taxonomy(cfg)
    digest = config_hash({"toy": toy_run_config(cfg, seed)["toy"], "seed": seed})
    comments = [f"config_hash={digest}", f"seed={seed}"]

    library = generate_toy_models(cfg, np.random.default_rng(np.random.SeedSequence([seed, 1])))
    train_scenes = generate_toy_scenes(
        cfg, library, cfg.train_scenes, np.random.default_rng(np.random.SeedSequence([seed, 2]))
    )
    eval_scenes = generate_toy_scenes(
        cfg, library, cfg.eval_scenes, np.random.default_rng(np.random.SeedSequence([seed, 3]))
    )

    entries_train = []
    counters = {}
    for cloud, index in library:
        name = taxonomy.names[index]
        counters[name] = counters.get(name, 0)
        rel = f"models/{name}_{counters[name]:02d}.ply"
        counters[name] += 1
        (out / rel).write_bytes(write_ply(cloud, comments=comments))
        entries_train.append(ManifestEntry(rel, "model", index))
    for i, scene in enumerate(train_scenes):
        rel = f"scenes/train_{i:03d}.ply"
        (out / rel).write_bytes(write_ply(scene, comments=comments))
        entries_train.append(ManifestEntry(rel, "scene"))
    entries_eval = []
    for i, scene in enumerate(eval_scenes):
        rel = f"scenes/eval_{i:03d}.ply"
        (out / rel).write_bytes(write_ply(scene, comments=comments))
        entries_eval.append(ManifestEntry(rel, "scene"))

    train_manifest = out / "manifest_train.json"
    eval_manifest = out / "manifest_eval.json"
    save_manifest(DatasetManifest(taxonomy, tuple(entries_train)), train_manifest)
    save_manifest(DatasetManifest(taxonomy, tuple(entries_eval)), eval_manifest)

    run_cfg = toy_run_config(cfg, seed)
    (out / "config.json").write_text(
        json.dumps(run_cfg, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return {
        "train_manifest": train_manifest,
        "eval_manifest": eval_manifest,
        "config": out / "config.json",
    }
