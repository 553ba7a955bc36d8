"""Command-line entry points binding configs, manifests and pipelines together.

Subcommands: toygen, sample, mix, train, infer, eval, gradcheck,
inspect-prototypes.  Every produced artifact embeds the run's config hash
and seed.  Relative manifest entries resolve against RTLKIT_DATA_ROOT when
that variable is set.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import build_section, config_hash, load_run_config
from .encoder import EncoderConfig
from .errors import CheckpointError, ConfigError, RtlkitError
from .hull import hull_slack
from .io_formats import load_manifest, parse_off, parse_ply, write_metrics, write_ply
from .metric import classification_loss
from .optim import ParamStore, grad_check
from .pda import PdaConfig
from .pointcloud import Mesh, PointCloud
from .sampling import SamplingConfig, poisson_disk_eliminate, sample_mesh_points
from .toydata import ToyBenchmarkConfig, write_toy_dataset
from .training import (
    Checkpoint,
    Pipeline,
    TrainConfig,
    compose_training_sample,
    evaluate,
    infer_scene,
    load_manifest_data,
    train_on_data,
)


def _data_root():
    return os.environ.get("RTLKIT_DATA_ROOT") or None


def _pda_transform(raw: dict) -> dict:
    if "class_prior_heights" in raw:
        raw["class_prior_heights"] = {
            int(k): float(v) for k, v in raw["class_prior_heights"].items()
        }
    for key in ("scale_range", "crop_anchor_range"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return raw


def _toy_transform(raw: dict) -> dict:
    for key in ("classes", "instances_per_scene", "clutter_per_scene", "scene_scale_range"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return raw


def _load_sections(args, seed_override=None):
    overrides = {}
    if seed_override is not None:
        overrides["train"] = {"seed": seed_override}
    doc = load_run_config(getattr(args, "config", None), overrides)
    train_cfg = build_section(TrainConfig, doc, "train")
    enc_raw = dict(doc.get("encoder", {}))
    enc_raw.setdefault("out_dim", train_cfg.feature_dim)
    enc_raw.setdefault("voxel_size", train_cfg.voxel_size)
    enc_cfg = build_section(EncoderConfig, {"encoder": enc_raw}, "encoder")
    pda_cfg = build_section(PdaConfig, doc, "pda", transform=_pda_transform)
    return doc, train_cfg, enc_cfg, pda_cfg


def _comments(digest, seed):
    return [f"config_hash={digest}", f"seed={seed}"]


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_toygen(args) -> int:
    doc = load_run_config(args.config)
    toy_cfg = build_section(ToyBenchmarkConfig, doc, "toy", transform=_toy_transform)
    paths = write_toy_dataset(toy_cfg, args.seed, args.out_dir)
    print(f"wrote toy dataset under {args.out_dir}")
    for key, value in paths.items():
        print(f"  {key}: {value}")
    return 0


def _cmd_sample(args) -> int:
    data = Path(args.input).read_bytes()
    if args.input.endswith(".off"):
        mesh = parse_off(data)
    else:
        parsed = parse_ply(data)
        mesh = parsed if isinstance(parsed, Mesh) else None
        if mesh is None:
            cfg = SamplingConfig(target_count=args.count)
            cloud = poisson_disk_eliminate(parsed, cfg)
            digest = config_hash({"sample": {"count": args.count, "seed": args.seed}})
            Path(args.output).write_bytes(write_ply(cloud, comments=_comments(digest, args.seed)))
            print(f"eliminated to {cloud.count} points -> {args.output}")
            return 0
    cfg = SamplingConfig(target_count=args.count)
    rng = np.random.default_rng(args.seed)
    cloud = sample_mesh_points(mesh, cfg, rng)
    digest = config_hash({"sample": {"count": args.count, "seed": args.seed}})
    Path(args.output).write_bytes(write_ply(cloud, comments=_comments(digest, args.seed)))
    print(f"sampled {cloud.count} points -> {args.output}")
    return 0


def _cmd_mix(args) -> int:
    doc, train_cfg, _, pda_cfg = _load_sections(args, args.seed)
    manifest = load_manifest(args.manifest)
    library, scenes = load_manifest_data(manifest, args.manifest, _data_root())
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 10_000]))
    scene = None if train_cfg.nega_mo else scenes[0].relabel(0, source="scene") if scenes else None
    if scene is None and not train_cfg.nega_mo:
        raise ConfigError("manifest has no scenes; use a models-only (nega_mo) config")
    sample = compose_training_sample(
        scene, library, manifest.taxonomy, rng, train_cfg, pda_cfg
    )
    digest = config_hash(doc)
    Path(args.output).write_bytes(write_ply(sample, comments=_comments(digest, train_cfg.seed)))
    print(f"mixed sample with {sample.count} points -> {args.output}")
    return 0


def _cmd_train(args) -> int:
    doc, train_cfg, enc_cfg, pda_cfg = _load_sections(args, args.seed)
    manifest = load_manifest(args.manifest)
    library, scenes = load_manifest_data(manifest, args.manifest, _data_root())
    result = train_on_data(
        train_cfg, library, scenes, manifest.taxonomy, pda_cfg, enc_cfg, out_dir=args.out_dir
    )
    print(
        f"trained {result.steps} steps; final epoch loss {result.epoch_losses[-1]:.4f}; "
        f"checkpoint at {Path(args.out_dir) / 'checkpoint.ckpt'}"
    )
    return 0


def _cmd_infer(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    scene = parse_ply(Path(args.scene).read_bytes())
    poss = infer_scene(scene, ckpt)
    labels = poss.argmax(axis=1)
    names = [f"p_{name}" for name in ckpt.taxonomy.names]
    out_cloud = PointCloud(scene.positions, features=poss, labels=labels)
    Path(args.output).write_bytes(
        write_ply(out_cloud, feature_names=names, comments=_comments(ckpt.config_hash, ckpt.seed))
    )
    print(f"wrote possibilities for {scene.count} points -> {args.output}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    if args.config is not None:
        doc, train_cfg, enc_cfg, _ = _load_sections(args)
        stored = ckpt.config.get("train", {})
        for field in ("feature_dim", "num_prototypes", "key_dim", "no_fa"):
            if stored.get(field) != getattr(train_cfg, field):
                raise CheckpointError(
                    f"checkpoint train.{field}={stored.get(field)} contradicts "
                    f"config value {getattr(train_cfg, field)}"
                )
    manifest = load_manifest(args.manifest)
    _, scenes = load_manifest_data(manifest, args.manifest, _data_root())
    result = evaluate(scenes, ckpt)
    payload = write_metrics(result)
    Path(args.output).write_bytes(payload)
    print(f"AmAP {result.amap:.4f} over {len(result.ap)} classes -> {args.output}")
    return 0


def _cmd_inspect_prototypes(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    pipeline, store = ckpt.build()
    scene = parse_ply(Path(args.scene).read_bytes())
    coeff = pipeline.coefficient_matrix(scene, store)
    winners = coeff.argmax(axis=1)
    out_cloud = PointCloud(scene.positions, labels=winners)
    Path(args.output).write_bytes(
        write_ply(out_cloud, comments=_comments(ckpt.config_hash, ckpt.seed))
    )
    occupied = len(np.unique(winners))
    print(
        f"argmax prototype per point -> {args.output} "
        f"({occupied}/{coeff.shape[1]} prototypes activated)"
    )
    return 0


def _cmd_gradcheck(args) -> int:
    """Finite-difference check of a small composed pipeline in double precision."""
    rng = np.random.default_rng(args.seed)
    cloud = PointCloud(rng.uniform(0, 0.2, size=(30, 3)), labels=rng.integers(0, 3, 30))
    cfg = TrainConfig(
        feature_dim=12,
        num_prototypes=16,
        key_dim=6,
        voxel_size=0.05,
        precision="double",
        strict_hull=True,
    )
    enc = EncoderConfig(width1=8, width2=12, out_dim=12, voxel_size=0.05)
    pipeline = Pipeline.from_train_config(cfg, num_classes=3, encoder_cfg=enc)
    store = ParamStore(np.float64)
    pipeline.register(store, args.seed)

    def closure(leaves):
        return classification_loss(pipeline.scores(cloud, leaves), cloud.labels)

    err = grad_check(closure, store, max_coords=1500)
    print(f"composed pipeline max relative gradient error: {err:.3e}")
    # simplex sanity on one random batch
    leaves = store.leaves()
    from .hull import coefficients as _coeff

    feats = ad.constant(rng.standard_normal((40, cfg.feature_dim)))
    coeff = _coeff(feats, leaves["prototypes"], pipeline.head, leaves).data
    row_err = np.abs(coeff.sum(axis=1) - 1).max()
    slack = hull_slack(coeff @ store.values["prototypes"], store.values["prototypes"], 200)
    print(f"coefficient row-sum error: {row_err:.3e}; hull slack: {slack:.3e}")
    ok = err <= 1e-4 and row_err <= 1e-6 and slack <= 1e-5
    print("gradcheck PASS" if ok else "gradcheck FAIL")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# dispatcher
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtlkit",
        description="Train point classifiers on synthetic models mixed into unlabeled scenes.",
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="single-threaded reproducible mode (execution is serial by construction; "
        "the flag is recorded for provenance)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toygen", help="generate the procedural toy benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_toygen)

    p = sub.add_parser("sample", help="mesh (OFF/PLY) to evenly spaced point cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--count", type=int, default=8196)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("mix", help="dump one composed training sample as labeled PLY")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_mix)

    p = sub.add_parser("train", help="train a checkpoint from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="per-point class possibilities for one scene")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="AP/AmAP over a manifest's labeled scenes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the pipeline")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser(
        "inspect-prototypes", help="label scene points by their argmax prototype"
    )
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_inspect_prototypes)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except RtlkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
