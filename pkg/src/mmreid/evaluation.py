"""Retrieval protocol: modality fusion, gallery ranking, mAP and CMC.

Ranking follows the standard cross-camera protocol: gallery entries sharing
both the query's identity and camera are treated as junk and removed before
scoring, and the query itself never appears in its own ranking. Ties are
broken by ascending gallery id so results are reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGalleryAfterFilter, NoRelevant, NotNormalized
from .numerics import l2_normalize

_UNIT_TOL = 1e-6


@dataclass(frozen=True)
class GalleryItem:
    """One retrievable item: opaque id, identity label, camera, embedding."""

    id: str
    identity: int
    camera: str
    embedding: np.ndarray

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > _UNIT_TOL:
            raise NotNormalized(f"item {self.id!r} embedding norm {norm!r}")


@dataclass(frozen=True)
class RankingResult:
    """Gallery ids with similarity scores, best match first."""

    query_id: str
    ranking: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class EvalMetrics:
    mean_ap: float
    cmc: dict[int, float]


def fuse(visual: np.ndarray, text: np.ndarray, weight: float = 0.5) -> np.ndarray:
    """Weighted concatenation of the two modality embeddings, renormalized.

    weight=1 reproduces the visual-only ranking order and weight=0 the
    text-only order, which makes the endpoints directly testable.
    """
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"fusion weight must lie in [0, 1], got {weight}")
    visual = np.asarray(visual, dtype=np.float64)
    text = np.asarray(text, dtype=np.float64)
    for name, vec in (("visual", visual), ("text", text)):
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > _UNIT_TOL:
            raise NotNormalized(f"{name} embedding norm {norm!r}")
    return l2_normalize(np.concatenate([weight * visual, (1.0 - weight) * text]))


def _candidates(query: GalleryItem, gallery, filter_same_camera: bool):
    out = []
    for item in gallery:
        if item.id == query.id:
            continue
        if (
            filter_same_camera
            and item.identity == query.identity
            and item.camera == query.camera
        ):
            continue
        out.append(item)
    return out


def rank(query: GalleryItem, gallery, filter_same_camera: bool = True) -> RankingResult:
    """Order the gallery by dot-product similarity to the query."""
    candidates = _candidates(query, gallery, filter_same_camera)
    if not candidates:
        raise EmptyGalleryAfterFilter(f"nothing left to rank for query {query.id!r}")
    scored = [(float(item.embedding @ query.embedding), item.id) for item in candidates]
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return RankingResult(query.id, tuple((gid, score) for score, gid in scored))


def average_precision(result: RankingResult, relevant) -> float:
    """Mean of precision-at-hit over the relevant items in the ranking."""
    relevant = set(relevant)
    hits = 0
    precisions = []
    for position, (gallery_id, _) in enumerate(result.ranking, start=1):
        if gallery_id in relevant:
            hits += 1
            precisions.append(hits / position)
    if not precisions:
        raise NoRelevant(f"no relevant item ranked for query {result.query_id!r}")
    return sum(precisions) / len(precisions)


def evaluate(queries, gallery, ranks=(1, 5, 10), filter_same_camera: bool = True) -> EvalMetrics:
    """mAP plus CMC@r over the query set.

    Every query must retain at least one same-identity gallery item after
    protocol filtering.
    """
    identity_of = {item.id: item.identity for item in gallery}
    aps = []
    first_hits = []
    for query in queries:
        result = rank(query, gallery, filter_same_camera)
        relevant = {
            gid for gid, _ in result.ranking if identity_of[gid] == query.identity
        }
        if not relevant:
            raise NoRelevant(f"query {query.id!r} has no relevant gallery item")
        aps.append(average_precision(result, relevant))
        first_hits.append(
            next(pos for pos, (gid, _) in enumerate(result.ranking, 1) if gid in relevant)
        )
    if not aps:
        raise NoRelevant("no queries given")
    cmc = {r: sum(1 for hit in first_hits if hit <= r) / len(first_hits) for r in ranks}
    return EvalMetrics(mean_ap=sum(aps) / len(aps), cmc=cmc)


def format_ranking(result: RankingResult, top: int | None = None) -> str:
    """One-line textual ranking list: 'query: id1(score) id2(score) ...'."""
    shown = result.ranking if top is None else result.ranking[:top]
    body = " ".join(f"{gid}({score:.4f})" for gid, score in shown)
    return f"{result.query_id}: {body}"
