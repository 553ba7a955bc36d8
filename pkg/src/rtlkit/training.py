"""Sample composition, the training loop, scene inference, and evaluation.

One training step composes a mixed sample (one model per target class plus
one negative model, aligned and placed into an unlabeled scene), runs the
encoder and hull projection, and minimizes anchor cross-entropy on the
model-source points.  Scenes enter training with their labels stripped;
ground truth is touched only by `evaluate`.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import config_hash
from .encoder import EncoderConfig, encode, register_encoder_params
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    PlacementError,
    TrainingDivergedError,
)
from .evaluation import EvalResult, average_precision, make_eval_result
from .hull import PrototypeBank, ProjectionHead, coefficients, project
from .io_formats import DatasetManifest, parse_ply, resolve_data_path
from .metric import AnchorBank, class_similarities, classification_loss, possibilities
from .optim import ParamStore, adam_step
from .pda import PdaConfig, anchor_crop, class_prior_scale, mix, random_rotate_z, random_scale, place_on_floor
from .pointcloud import (
    BACKGROUND,
    ClassTaxonomy,
    PointCloud,
    bounding_box,
    estimate_floor_z,
    transform_points,
    voxelize,
)


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters and ablation switches."""

    epochs: int = 200
    learning_rate: float = 1e-3
    seed: int = 0
    feature_dim: int = 96
    num_prototypes: int = 128
    key_dim: int = 16
    inverse_temperature: float = 0.5
    voxel_size: float = 0.05
    max_steps: int | None = None
    grad_accum: int = 1
    precision: str = "single"
    anchors_learnable: bool = True
    strict_hull: bool = True
    no_da: bool = False
    nega_sc: bool = False
    nega_mo: bool = False
    no_crop: bool = False
    no_fa: bool = False
    identity_head: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if not (self.learning_rate > 0):
            raise ConfigError(f"train.learning_rate must be > 0, got {self.learning_rate}")
        if self.grad_accum < 1:
            raise ConfigError(f"train.grad_accum must be >= 1, got {self.grad_accum}")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"train.precision must be single|double, got {self.precision!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"train.max_steps must be >= 1, got {self.max_steps}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


class Pipeline:
    """Encoder -> (optional hull projection) -> anchor similarities."""

    def __init__(
        self,
        encoder_cfg: EncoderConfig,
        anchors: AnchorBank,
        bank: PrototypeBank | None = None,
        head: ProjectionHead | None = None,
    ):
        if (bank is None) != (head is None):
            raise ConfigError("prototype bank and projection head come as a pair")
        self.encoder_cfg = encoder_cfg
        self.anchors = anchors
        self.bank = bank
        self.head = head

    @classmethod
    def from_train_config(
        cls, cfg: TrainConfig, num_classes: int, encoder_cfg: EncoderConfig | None = None
    ) -> "Pipeline":
        enc = encoder_cfg or EncoderConfig(out_dim=cfg.feature_dim, voxel_size=cfg.voxel_size)
        if enc.out_dim != cfg.feature_dim:
            raise ConfigError(
                f"encoder.out_dim {enc.out_dim} != train.feature_dim {cfg.feature_dim}"
            )
        anchors = AnchorBank(num_classes, cfg.feature_dim, learnable=cfg.anchors_learnable)
        bank = head = None
        if not cfg.no_fa:
            bank = PrototypeBank(cfg.num_prototypes, cfg.feature_dim, strict=cfg.strict_hull)
            head = ProjectionHead(
                in_dim=cfg.feature_dim,
                key_dim=cfg.key_dim,
                inverse_temperature=cfg.inverse_temperature,
                mode="identity" if cfg.identity_head else "learned",
            )
        return cls(enc, anchors, bank, head)

    def register(self, store: ParamStore, seed: int):
        register_encoder_params(store, self.encoder_cfg, seed)
        if self.bank is not None:
            self.bank.register(store, seed)
            self.head.register(store, seed)
        self.anchors.register(store, seed)

    def scores(self, pc: PointCloud, leaves: dict, grid=None) -> ad.Tensor:
        feats = encode(pc, leaves, self.encoder_cfg, grid)
        if self.bank is not None:
            protos = leaves[self.bank.param_name]
            coeff = coefficients(feats, protos, self.head, leaves)
            feats = project(coeff, protos)
        return class_similarities(feats, leaves[self.anchors.param_name])

    def possibilities(self, pc: PointCloud, store: ParamStore) -> np.ndarray:
        return possibilities(self.scores(pc, store.leaves()).data)

    def coefficient_matrix(self, pc: PointCloud, store: ParamStore) -> np.ndarray:
        if self.bank is None:
            raise ConfigError("pipeline has no prototype bank (trained with no_fa)")
        leaves = store.leaves()
        feats = encode(pc, leaves, self.encoder_cfg)
        return coefficients(feats, leaves[self.bank.param_name], self.head, leaves).data


# ---------------------------------------------------------------------------
# sample composition
# ---------------------------------------------------------------------------

def _models_by_class(library) -> dict:
    by_class = {}
    for cloud, index in library:
        by_class.setdefault(int(index), []).append(cloud)
    return by_class


def compose_training_sample(
    scene: PointCloud | None,
    library: list,
    taxonomy: ClassTaxonomy,
    rng,
    cfg: TrainConfig,
    pda_cfg: PdaConfig,
) -> PointCloud:
    """One mixed sample: a model per target class plus one background model.

    Alignment order per model: prior scale, random rotation+scale (skipped
    under no_da), anchor crop (skipped under no_crop), floor placement.
    The scene is omitted entirely when scene is None (models-only mode).
    """
    by_class = _models_by_class(library)
    for index in taxonomy.foreground:
        if not by_class.get(index):
            raise DatasetError(f"no model for target class {taxonomy.names[index]!r}")
    if not by_class.get(BACKGROUND):
        raise DatasetError("no negative (background-class) models in library")

    if scene is not None:
        scene_box = bounding_box(scene)
        floor_z = estimate_floor_z(scene)
    else:
        half = pda_cfg.plane_half_extent
        scene_box = (np.array([-half, -half, 0.0]), np.array([half, half, 0.0]))
        floor_z = 0.0

    def _prior_scaled(cloud, index):
        # negatives have no scene counterpart that would define a target
        # size, so they keep their native scale
        if index == BACKGROUND:
            return cloud
        return class_prior_scale(cloud, index, pda_cfg.class_prior_heights)

    placed = []
    for index in (*taxonomy.foreground, BACKGROUND):
        pool = by_class[index]
        model = _prior_scaled(pool[int(rng.integers(len(pool)))], index)
        if not cfg.no_da:
            model = random_rotate_z(model, rng)
            model = random_scale(model, rng, pda_cfg.scale_range)
        if not cfg.no_crop:
            model = anchor_crop(model, rng, pda_cfg)
        attempts = 0
        while True:
            try:
                tr = place_on_floor(model, scene_box, floor_z, rng)
                break
            except PlacementError:
                attempts += 1
                if attempts >= len(pool):
                    raise
                model = _prior_scaled(pool[int(rng.integers(len(pool)))], index)
        placed.append((transform_points(model, tr), index))

    mode = "models_only" if scene is None else "scene"
    mix_cfg = dataclasses.replace(pda_cfg, mix_mode=mode)
    return mix(scene, placed, rng, mix_cfg)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Trained parameters plus everything needed to rebuild the pipeline."""

    arrays: dict
    config: dict
    taxonomy: ClassTaxonomy
    config_hash: str
    seed: int

    def save(self, path) -> None:
        save_checkpoint(
            path,
            self.arrays,
            {
                "kind": "rtlkit-run",
                "config": self.config,
                "config_hash": self.config_hash,
                "seed": self.seed,
                "taxonomy": list(self.taxonomy.names),
            },
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        arrays, meta = load_checkpoint(path)
        for key in ("config", "config_hash", "seed", "taxonomy"):
            if key not in meta:
                raise CheckpointError(f"{path}: checkpoint header missing {key!r}")
        return cls(
            arrays=arrays,
            config=meta["config"],
            taxonomy=ClassTaxonomy(tuple(meta["taxonomy"])),
            config_hash=meta["config_hash"],
            seed=meta["seed"],
        )

    def build(self):
        """Reconstruct (pipeline, store); fails closed on any dim mismatch."""
        cfg = TrainConfig(**self.config["train"])
        enc = EncoderConfig(**self.config["encoder"])
        pipeline = Pipeline.from_train_config(cfg, self.taxonomy.num_classes, enc)
        store = ParamStore(cfg.dtype)
        pipeline.register(store, cfg.seed)
        expected = set(store.names())
        if expected != set(self.arrays):
            raise CheckpointError(
                f"checkpoint arrays {sorted(self.arrays)} do not match the "
                f"configured pipeline {sorted(expected)}"
            )
        for name in expected:
            if store.values[name].shape != self.arrays[name].shape:
                raise CheckpointError(
                    f"array {name!r} has shape {self.arrays[name].shape}, "
                    f"config implies {store.values[name].shape}"
                )
            store.values[name][...] = self.arrays[name].astype(store.dtype)
        return pipeline, store


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    epoch_losses: list
    steps: int


def run_config_dict(cfg: TrainConfig, enc: EncoderConfig, pda_cfg: PdaConfig, taxonomy) -> dict:
    pda_dict = dataclasses.asdict(pda_cfg)
    pda_dict["class_prior_heights"] = {
        str(k): v for k, v in pda_cfg.class_prior_heights.items()
    }
    return {
        "train": dataclasses.asdict(cfg),
        "encoder": dataclasses.asdict(enc),
        "pda": pda_dict,
        "taxonomy": list(taxonomy.names),
    }


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _step_rng(seed: int, step: int):
    return np.random.default_rng(np.random.SeedSequence([seed, 10_000 + step]))


def train_on_data(
    cfg: TrainConfig,
    library: list,
    scenes: list,
    taxonomy: ClassTaxonomy,
    pda_cfg: PdaConfig,
    encoder_cfg: EncoderConfig | None = None,
    out_dir=None,
) -> TrainResult:
    """Train on in-memory data; scenes are stripped of labels on entry."""
    if not scenes:
        raise DatasetError("training needs at least one scene (epochs iterate scenes)")
    scenes = [s.relabel(BACKGROUND, source="scene") for s in scenes]

    pipeline = Pipeline.from_train_config(cfg, taxonomy.num_classes, encoder_cfg)
    store = ParamStore(cfg.dtype)
    pipeline.register(store, cfg.seed)
    cfg_dict = run_config_dict(cfg, pipeline.encoder_cfg, pda_cfg, taxonomy)
    digest = config_hash(cfg_dict)

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    total_cap = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * len(scenes)
    step = 0
    epoch_losses = []
    last_good = store.snapshot()

    def _checkpoint(arrays) -> Checkpoint:
        return Checkpoint(
            arrays=arrays,
            config={k: cfg_dict[k] for k in ("train", "encoder", "pda")},
            taxonomy=taxonomy,
            config_hash=digest,
            seed=cfg.seed,
        )

    for epoch in range(cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 20_000 + epoch])
        ).permutation(len(scenes))
        losses = []
        for scene_idx in order:
            rng = _step_rng(cfg.seed, step)
            scene = None if cfg.nega_mo else scenes[scene_idx]
            sample = compose_training_sample(scene, library, taxonomy, rng, cfg, pda_cfg)
            grid = voxelize(sample, cfg.voxel_size)
            leaves = store.leaves()
            scores = pipeline.scores(sample, leaves, grid)
            if cfg.nega_sc:
                rows = np.arange(sample.count)
            else:
                rows = np.flatnonzero(sample.source != "scene")
            loss = classification_loss(ad.gather_rows(scores, rows), sample.labels[rows])
            loss_value = float(loss.data)
            if np.isnan(loss_value):
                if out_path is not None:
                    _checkpoint(last_good).save(out_path / "last_good.ckpt")
                raise TrainingDivergedError(
                    f"NaN loss at step {step}; last good parameters "
                    + (f"saved to {out_path / 'last_good.ckpt'}" if out_path else "kept in memory")
                )
            loss.backward()
            store.accumulate(leaves)
            if (step + 1) % cfg.grad_accum == 0:
                adam_step(store, lr=cfg.learning_rate)
            losses.append(loss_value)
            step += 1
            if step >= total_cap:
                break
        epoch_losses.append(float(np.mean(losses)))
        last_good = store.snapshot()
        if step >= total_cap:
            break

    result = TrainResult(_checkpoint(store.snapshot()), epoch_losses, step)
    if out_path is not None:
        result.checkpoint.save(out_path / "checkpoint.ckpt")
        lines = [f"# config_hash={digest} seed={cfg.seed}", "epoch,mean_loss"]
        lines += [f"{i},{v:.6f}" for i, v in enumerate(epoch_losses)]
        (out_path / "loss_log.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return result


def load_manifest_data(manifest: DatasetManifest, manifest_path, data_root=None):
    """Read model and scene clouds referenced by a manifest."""
    library = []
    scenes = []
    for entry in manifest.entries:
        path = resolve_data_path(manifest_path, entry.path, data_root)
        parsed = parse_ply(path.read_bytes())
        if not isinstance(parsed, PointCloud):
            raise DatasetError(f"{path} holds a mesh; manifests reference point clouds")
        if entry.kind == "model":
            library.append((parsed, entry.class_index))
        else:
            scenes.append(parsed)
    return library, scenes


def train(
    cfg: TrainConfig,
    manifest: DatasetManifest,
    manifest_path,
    data_root=None,
    pda_cfg: PdaConfig | None = None,
    encoder_cfg: EncoderConfig | None = None,
    out_dir=None,
) -> TrainResult:
    library, scenes = load_manifest_data(manifest, manifest_path, data_root)
    if pda_cfg is None:
        pda_cfg = PdaConfig()
    return train_on_data(cfg, library, scenes, manifest.taxonomy, pda_cfg, encoder_cfg, out_dir)


# ---------------------------------------------------------------------------
# inference and evaluation
# ---------------------------------------------------------------------------

def infer_scene(scene: PointCloud, checkpoint: Checkpoint) -> np.ndarray:
    """Per-point class possibilities (N x C) for a scene, deterministic."""
    pipeline, store = checkpoint.build()
    return pipeline.possibilities(scene, store)


def evaluate(scenes: list, checkpoint: Checkpoint) -> EvalResult:
    """Pool every scene's points per foreground class and compute AP/AmAP.

    Classes absent from all ground truth are skipped with a warning and
    excluded from the mean.
    """
    if not scenes:
        raise DatasetError("evaluation needs at least one scene")
    pipeline, store = checkpoint.build()
    all_labels = []
    all_scores = []
    for scene in scenes:
        all_labels.append(scene.labels)
        all_scores.append(pipeline.possibilities(scene, store))
    labels = np.concatenate(all_labels)
    scores = np.vstack(all_scores)

    taxonomy = checkpoint.taxonomy
    ap = {}
    skipped = []
    relevant_counts = {}
    for index in taxonomy.foreground:
        name = taxonomy.names[index]
        relevance = labels == index
        relevant_counts[name] = int(relevance.sum())
        if not relevance.any():
            warnings.warn(f"class {name!r} absent from ground truth; skipped", stacklevel=2)
            skipped.append(name)
            continue
        ap[name] = average_precision(scores[:, index], relevance)
    counts = {"points": int(labels.size), "relevant": relevant_counts}
    return make_eval_result(ap, counts, checkpoint.config_hash, checkpoint.seed, skipped)
