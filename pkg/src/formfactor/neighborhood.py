"""Spatial neighborhood features for a candidate: nearby tokens and their
positions relative to the candidate, deliberately excluding the candidate's
own value tokens so the model cannot memorize value distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .candgen import Candidate
from .docmodel import Document


class Neighbor(NamedTuple):
    token_text: str
    rel_x: float  # neighbor center minus candidate center, page-normalized
    rel_y: float
    distance: float  # Euclidean norm of (rel_x, rel_y)
    token_index: int


@dataclass(frozen=True)
class NeighborSet:
    """Up to n_max neighbors in nondecreasing zone-weighted distance order.

    ``len(neighbors) + pad_count == n_max``; pad slots carry no token and
    are masked out of the model input.
    """

    candidate_id: str
    neighbors: tuple[Neighbor, ...]
    pad_count: int


@dataclass(frozen=True)
class FeatureConfig:
    """Neighborhood selection rule.

    Distances to candidates on the right of / below the candidate are
    inflated by the corresponding weight before the radius cutoff and
    ranking, since form keys overwhelmingly sit left of or above values.
    """

    n_max: int = 16
    radius: float = 0.35
    weight_left: float = 1.0
    weight_above: float = 1.0
    weight_right: float = 1.5
    weight_below: float = 1.5

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")
        if not (0.0 < self.radius <= math.sqrt(2.0)):
            raise ValueError(f"radius {self.radius} outside (0, sqrt(2)]")

    def to_json(self) -> dict:
        return {
            "n_max": self.n_max,
            "radius": self.radius,
            "weight_left": self.weight_left,
            "weight_above": self.weight_above,
            "weight_right": self.weight_right,
            "weight_below": self.weight_below,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FeatureConfig":
        return cls(**data)


def weighted_distance(rel_x: float, rel_y: float, cfg: FeatureConfig) -> float:
    """Euclidean distance inflated by the zone weights for the neighbor's
    quadrant (x == 0 counts as left, y == 0 as above)."""
    d = math.hypot(rel_x, rel_y)
    wx = cfg.weight_right if rel_x > 0 else cfg.weight_left
    wy = cfg.weight_below if rel_y > 0 else cfg.weight_above
    return d * wx * wy


def extract_neighbors(doc: Document, cand: Candidate, cfg: FeatureConfig) -> NeighborSet:
    """Select the candidate's neighborhood.

    Same-page tokens within the (zone-weighted) radius, excluding the
    candidate's own span, ranked by ascending zone-weighted distance with
    reading-order ties, truncated to n_max. Offsets are center-to-center.
    """
    start, end = cand.token_span
    if start < 0 or end > len(doc.tokens) or start >= end:
        raise ValueError(
            f"candidate {cand.candidate_id!r} span {cand.token_span} outside document "
            f"with {len(doc.tokens)} tokens"
        )
    span = set(range(start, end))
    cx, cy = cand.bbox.center
    ranked: list[tuple[float, int, Neighbor]] = []
    for idx, tok in enumerate(doc.tokens):
        if idx in span or tok.page_index != cand.page_index:
            continue
        tx, ty = tok.bbox.center
        rel_x, rel_y = tx - cx, ty - cy
        wd = weighted_distance(rel_x, rel_y, cfg)
        if wd > cfg.radius:
            continue
        ranked.append(
            (wd, idx, Neighbor(tok.text, rel_x, rel_y, math.hypot(rel_x, rel_y), idx))
        )
    ranked.sort(key=lambda item: (item[0], item[1]))
    kept = tuple(n for _, _, n in ranked[: cfg.n_max])
    return NeighborSet(
        candidate_id=cand.candidate_id,
        neighbors=kept,
        pad_count=cfg.n_max - len(kept),
    )
