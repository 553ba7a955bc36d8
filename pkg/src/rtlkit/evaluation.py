"""Ranking-based evaluation: per-class average precision and its class mean."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError


def average_precision(scores: np.ndarray, relevance: np.ndarray) -> float:
    """Uninterpolated average precision of a scored binary ranking.

    Points are ranked by descending score with ties broken toward the lower
    index; AP is the mean of precision-at-rank over the relevant ranks.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    relevance = np.asarray(relevance).reshape(-1).astype(bool)
    if scores.shape != relevance.shape:
        raise EvaluationError(
            f"scores ({scores.shape}) and relevance ({relevance.shape}) differ"
        )
    n_relevant = int(relevance.sum())
    if n_relevant == 0:
        raise EvaluationError("average precision undefined: no relevant points")
    order = np.argsort(-scores, kind="stable")
    hits = relevance[order]
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, scores.size + 1)
    return float((cum_hits[hits] / ranks[hits]).mean())


@dataclass(frozen=True)
class EvalResult:
    """Per-class AP, their mean, and the run identity that produced them."""

    ap: dict
    amap: float
    counts: dict
    config_hash: str
    seed: int
    skipped_classes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.ap:
            mean = float(np.mean(list(self.ap.values())))
            if abs(mean - self.amap) > 1e-9:
                raise EvaluationError(
                    f"amap {self.amap} is not the mean of per-class APs ({mean})"
                )
        for name, value in self.ap.items():
            if not (0.0 <= value <= 1.0):
                raise EvaluationError(f"AP for {name!r} outside [0, 1]: {value}")


def make_eval_result(ap: dict, counts: dict, config_hash: str, seed: int, skipped=()) -> EvalResult:
    amap = float(np.mean(list(ap.values()))) if ap else 0.0
    return EvalResult(
        ap=dict(ap),
        amap=amap,
        counts=dict(counts),
        config_hash=config_hash,
        seed=seed,
        skipped_classes=tuple(skipped),
    )
