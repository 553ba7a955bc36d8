"""Point-wise category recognition in real scans, trained only on labeled
synthetic models mixed into unlabeled scenes.

The pipeline: meshes become evenly spaced point clouds, physical alignment
(scaling, rotation, cropping, scene mixing) closes the model-to-scene gap,
and a convex-hull projection over learnable prototypes plus anchor-based
contrastive classification closes the feature-space gap.
"""

from .encoder import EncoderConfig, encode, neighborhood_max_pool
from .errors import RtlkitError
from .evaluation import EvalResult, average_precision
from .hull import PrototypeBank, ProjectionHead, coefficients, hull_contains, project
from .io_formats import (
    DatasetManifest,
    ManifestEntry,
    load_manifest,
    parse_off,
    parse_ply,
    read_labels,
    save_manifest,
    write_metrics,
    write_ply,
)
from .metric import AnchorBank, class_similarities, classification_loss, possibilities
from .optim import ParamStore, adam_step, grad_check
from .pda import (
    PdaConfig,
    anchor_crop,
    class_prior_scale,
    mix,
    place_on_floor,
    random_rotate_z,
    random_scale,
)
from .pointcloud import (
    BACKGROUND,
    ClassTaxonomy,
    Mesh,
    PointCloud,
    RigidScaleTransform,
    VoxelGrid,
    bounding_box,
    estimate_floor_z,
    transform_points,
    voxelize,
)
from .sampling import (
    SamplingConfig,
    area_weighted_surface_sample,
    poisson_disk_eliminate,
    sample_mesh_points,
)
from .toydata import ToyBenchmarkConfig, generate_toy_models, generate_toy_scenes, write_toy_dataset
from .training import (
    Checkpoint,
    Pipeline,
    TrainConfig,
    TrainResult,
    compose_training_sample,
    evaluate,
    infer_scene,
    train,
    train_on_data,
)

__version__ = "0.1.0"
