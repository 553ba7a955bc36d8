"""Feature projection into the convex hull of learnable prototype vectors.

Point features and prototypes are compared through learned key/query maps;
a temperature-scaled softmax over the similarities yields nonnegative
coefficients summing to one, so the reconstructed feature is a convex
combination of prototypes.  That confines features from every domain to one
compact region of feature space.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .optim import ParamStore


@dataclass(frozen=True)
class PrototypeBank:
    """K learnable dim-sized vectors acting as hull support points.

    Strict mode requires count > dim so the hull can have interior volume;
    relaxed mode only warns (useful for tiny experiments).
    """

    count: int = 128
    dim: int = 96
    strict: bool = True
    param_name: str = "prototypes"

    def __post_init__(self):
        if self.count < 1 or self.dim < 1:
            raise ConfigError("prototype bank needs positive count and dim")
        if self.count <= self.dim:
            if self.strict:
                raise ConfigError(
                    f"prototype count {self.count} must exceed feature dim {self.dim}"
                )
            warnings.warn(
                f"prototype count {self.count} <= feature dim {self.dim}: "
                "the hull spans a lower-dimensional slice of feature space",
                stacklevel=2,
            )

    def register(self, store: ParamStore, seed: int):
        store.add_scaled_normal(
            self.param_name, (self.count, self.dim), 1.0 / np.sqrt(self.dim), seed
        )


@dataclass(frozen=True)
class ProjectionHead:
    """Key/query linear maps and the inverse temperature for the coefficient softmax.

    In identity mode both maps are the identity (key_dim is forced to in_dim),
    leaving raw feature/prototype dot products.
    """

    in_dim: int
    key_dim: int = 16
    inverse_temperature: float = 0.5
    mode: str = "learned"
    key_name: str = "head_key"
    query_name: str = "head_query"

    def __post_init__(self):
        if not (self.inverse_temperature > 0):
            raise ConfigError(
                f"inverse_temperature must be > 0, got {self.inverse_temperature}"
            )
        if self.mode not in ("learned", "identity"):
            raise ConfigError(f"projection head mode must be learned|identity, got {self.mode!r}")
        if self.mode == "identity":
            object.__setattr__(self, "key_dim", self.in_dim)

    def register(self, store: ParamStore, seed: int):
        if self.mode == "learned":
            # the gain keeps early key/query dot products wide enough that
            # the coefficient softmax does not start out uniform, which
            # would collapse every projected feature onto the prototype mean
            store.add_he_uniform(self.key_name, self.in_dim, self.key_dim, seed, gain=4.0)
            store.add_he_uniform(self.query_name, self.in_dim, self.key_dim, seed, gain=4.0)


def coefficients(
    x: ad.Tensor,
    prototypes: ad.Tensor,
    head: ProjectionHead,
    leaves: dict | None = None,
) -> ad.Tensor:
    """Row-stochastic coefficient matrix (N x K) over the prototypes.

    a[t, k] = softmax_k(lambda * <key(x_t), query(p_k)>), computed with max
    subtraction, differentiable with respect to features, prototypes and the
    head maps.
    """
    if x.data.shape[1] != prototypes.data.shape[1]:
        raise ShapeError(
            f"coefficients: feature dim {x.data.shape[1]} != prototype dim "
            f"{prototypes.data.shape[1]}"
        )
    if head.mode == "learned":
        keys = ad.matmul(x, leaves[head.key_name])
        queries = ad.matmul(prototypes, leaves[head.query_name])
    else:
        keys, queries = x, prototypes
    sims = ad.matmul(keys, queries, transpose_b=True)
    return ad.softmax_rows(ad.scale(sims, head.inverse_temperature))


def project(coeffs: ad.Tensor, prototypes: ad.Tensor) -> ad.Tensor:
    """Convex combinations of prototype rows: (N x K) @ (K x D)."""
    return ad.matmul(coeffs, prototypes)


def hull_slack(
    points: np.ndarray, vertices: np.ndarray, trials: int = 1000, rng=None
) -> float:
    """Worst support-function violation over sampled directions.

    For a direction v, every hull member satisfies <v, x> <= max_k <v, p_k>.
    Directions include `trials` random units plus each point's own offset
    from the vertex centroid, which reliably exposes points that stick out.
    """
    if trials < 1:
        raise ConfigError("hull check needs trials >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    dirs = rng.standard_normal((trials, vertices.shape[1]))
    offsets = np.atleast_2d(points) - vertices.mean(axis=0)
    dirs = np.vstack([dirs, offsets])
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    nonzero = norms[:, 0] > 0
    dirs = dirs[nonzero] / norms[nonzero]
    support = (dirs @ vertices.T).max(axis=1)
    projections = dirs @ np.atleast_2d(points).T
    return float((projections - support[:, None]).max())


def hull_contains(
    points: np.ndarray,
    vertices: np.ndarray,
    trials: int = 1000,
    rng=None,
    tol: float = 1e-5,
) -> bool:
    """Probabilistic certificate that every point lies in the vertex hull."""
    return hull_slack(points, vertices, trials=trials, rng=rng) <= tol


def coefficient_entropy(coeffs: np.ndarray) -> np.ndarray:
    """Per-row Shannon entropy of a coefficient matrix (nats)."""
    p = np.clip(coeffs, 1e-300, None)
    return -(p * np.log(p)).sum(axis=1)
