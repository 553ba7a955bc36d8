"""Class-anchor similarities, the training loss, and point-wise possibilities.

Each class owns a learnable anchor vector; classification pulls a point's
projected feature toward its class anchor and pushes it from the rest via
softmax cross-entropy over the anchor dot products.  Inference turns the
same similarities into a row-stochastic possibility matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, LabelError
from .optim import ParamStore


@dataclass(frozen=True)
class AnchorBank:
    """One anchor row per class; row 0 is the background anchor.

    Initialized as rows of a random orthonormal frame so classes start
    maximally separated; learnable by default.
    """

    num_classes: int
    dim: int
    learnable: bool = True
    param_name: str = "anchors"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("anchor bank needs >= 2 classes (background + 1)")

    def register(self, store: ParamStore, seed: int):
        store.add_orthonormal_rows(
            self.param_name, self.num_classes, self.dim, seed, trainable=self.learnable
        )


def class_similarities(x: ad.Tensor, anchors: ad.Tensor) -> ad.Tensor:
    """Dot products against every class anchor: (N x D) -> (N x C)."""
    return ad.matmul(x, anchors, transpose_b=True)


def classification_loss(scores: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    """Mean per-point cross-entropy of anchor similarities against labels.

    Per point: -scores[t, label_t] + logsumexp_c(scores[t, c]), which is
    nonnegative by construction; the mean keeps the gradient scale
    independent of how many points a batch holds.
    """
    labels = np.asarray(labels, dtype=np.int64)
    c = scores.data.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"label outside [0, {c})")
    return ad.cross_entropy_mean(scores, labels)


def possibilities(scores: np.ndarray) -> np.ndarray:
    """Row softmax of similarity scores: per-point class possibilities."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ConfigError(f"possibilities expects an N x C matrix, got {scores.shape}")
    return ad.softmax_np(scores)
