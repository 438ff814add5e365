"""Two-stage recommendation: catalog index, coarse top-M retrieval by dot
product, and user-conditioned fine ranking of the retrieved candidates."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import fusion
from .interest import StaticProfile
from .model import Features, Model, Variant, modality_mask
from .numerics import DimensionError, sigmoid


class CatalogError(ValueError):
    pass


class StaleCatalogError(RuntimeError):
    """The catalog was built with different fusion parameters."""


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    features: fusion.ModalityFeatures
    topics: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class Candidate:
    video_id: str
    score: float


@dataclass(frozen=True)
class Recommendation:
    video_id: str
    score: float
    probability: float
    weights: fusion.AttentionWeights


def params_fingerprint(params: fusion.FusionParams, variant: Variant = Variant.FULL) -> str:
    h = hashlib.sha256(variant.value.encode())
    for a in (params.w_v, params.w_t, params.w_a, params.u):
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()


def features_from_records(videos) -> tuple[list[str], Features]:
    """Stack records (sorted by id) into model-visible arrays."""
    videos = sorted(videos, key=lambda r: r.video_id)
    seen = set()
    for r in videos:
        if r.video_id in seen:
            raise CatalogError(f"duplicate video id {r.video_id!r}")
        seen.add(r.video_id)
    if not videos:
        return [], Features(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 3), bool))
    dims = [max(len(np.atleast_1d(r.features.vectors()[m])) for r in videos) for m in range(3)]
    cols = []
    for m in range(3):
        arr = np.zeros((len(videos), dims[m]))
        for i, r in enumerate(videos):
            if r.features.present[m]:
                arr[i] = r.features.vectors()[m]
        cols.append(arr)
    present = np.array([r.features.present for r in videos], dtype=bool)
    return [r.video_id for r in videos], Features(cols[0], cols[1], cols[2], present)


@dataclass
class Catalog:
    ids: list[str]
    row: dict[str, int]
    features: Features
    projected: np.ndarray  # (N, 3, d)
    present: np.ndarray  # (N, 3) after variant masking
    index: np.ndarray  # (N, d) uniform-weight fused vectors
    fingerprint: str
    variant: Variant = Variant.FULL

    def __len__(self):
        return len(self.ids)

    def rows(self, video_ids) -> np.ndarray:
        return np.array([self.row[v] for v in video_ids], dtype=np.int64)


def build_catalog(videos, params: fusion.FusionParams, variant: Variant = Variant.FULL,
                  features: tuple[list[str], Features] | None = None) -> Catalog:
    """Project every video once and build uniform-weight index vectors."""
    ids, feats = features if features is not None else features_from_records(videos)
    d = params.d
    if not ids:
        return Catalog([], {}, feats, np.zeros((0, 3, d)), np.zeros((0, 3), bool), np.zeros((0, d)),
                       params_fingerprint(params, variant), variant)
    for name, w, x in zip(fusion.MODALITIES, params.projections(), (feats.visual, feats.text, feats.audio)):
        if w.shape[1] != x.shape[1]:
            raise DimensionError(f"{name} features have width {x.shape[1]}, projection expects {w.shape[1]}")
    E = fusion.project_batch((feats.visual, feats.text, feats.audio), params.projections())
    present = modality_mask(feats.present, variant)
    E = E * present[:, :, None]
    weights = present / present.sum(axis=1, keepdims=True)
    index = np.einsum("nm,nmd->nd", weights, E)
    return Catalog(ids, {v: i for i, v in enumerate(ids)}, feats, E, present, index,
                   params_fingerprint(params, variant), variant)


def catalog_for_model(videos_or_features, model: Model) -> Catalog:
    if isinstance(videos_or_features, tuple):
        return build_catalog(None, model.fusion_params(), model.variant, features=videos_or_features)
    return build_catalog(videos_or_features, model.fusion_params(), model.variant)


def _check_fresh(catalog: Catalog, params: fusion.FusionParams | None, variant: Variant | None):
    if params is None:
        return
    if params_fingerprint(params, variant or catalog.variant) != catalog.fingerprint:
        raise StaleCatalogError("catalog was built with different fusion parameters; rebuild it")


def coarse_rank(z: np.ndarray, catalog: Catalog, M: int, exclude_rows=()) -> tuple[np.ndarray, np.ndarray]:
    """Rows and scores of the top-``M`` index vectors, ties by ascending id."""
    if M < 1:
        raise ValueError("M must be >= 1")
    scores = catalog.index @ np.asarray(z, dtype=np.float64)
    keep = np.ones(len(catalog), dtype=bool)
    keep[np.asarray(list(exclude_rows), dtype=np.int64)] = False
    rows = np.flatnonzero(keep)
    order = np.argsort(-scores[rows], kind="stable")[:M]
    return rows[order], scores[rows[order]]


def retrieve(z, catalog: Catalog, M: int, exclude=(), params: fusion.FusionParams | None = None,
             variant: Variant | None = None) -> list[Candidate]:
    _check_fresh(catalog, params, variant)
    ex = [catalog.row[v] for v in exclude if v in catalog.row]
    rows, scores = coarse_rank(z, catalog, M, ex)
    return [Candidate(catalog.ids[r], float(s)) for r, s in zip(rows, scores)]


def fine_scores(z: np.ndarray, u: np.ndarray, catalog: Catalog, rows) -> tuple[np.ndarray, np.ndarray]:
    """Fine scores ``z . f`` and modality weights for catalog ``rows``, the
    weights coming from the query ``u + z``."""
    rows = np.asarray(rows, dtype=np.int64)
    alpha, f = fusion.attend(u + z, catalog.projected[rows], catalog.present[rows])
    return f @ z, alpha


def score_pair(z, video: VideoRecord, params: fusion.FusionParams, present=None):
    """Fine score and modality weights of one video for user vector ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (params.d,):
        raise DimensionError(f"user vector of length {z.shape[-1]} does not match width {params.d}")
    present = video.features.present if present is None else present
    projected = fusion.project_modalities(video.features, params)
    weights = fusion.attention_weights(params.u + z, projected, present)
    f = fusion.fuse(weights, projected)
    return float(z @ f.vector), weights


def predict_click(score):
    return sigmoid(score)


def rank_rows(scores: np.ndarray, rows: np.ndarray, K: int) -> np.ndarray:
    """Positions of the top-``K`` scores, ties broken by ascending row (= id)."""
    order = np.lexsort((rows, -scores))
    return order[:K]


def recommend_for_vector(z, model: Model, catalog: Catalog, K: int = 10, M: int = 200, exclude_rows=()):
    if K > M:
        raise ValueError(f"K={K} exceeds candidate count M={M}")
    rows, _ = coarse_rank(z, catalog, M, exclude_rows)
    scores, alpha = fine_scores(z, model.params["u"], catalog, rows)
    top = rank_rows(scores, rows, K)
    return rows[top], scores[top], alpha[top]


def history_rows(catalog: Catalog, history, max_len: int):
    """Recency-slot rows for a chronological list of video ids."""
    rows = [catalog.row[v] for v in history if v in catalog.row][-max_len:]
    return np.array(rows[::-1], dtype=np.int64)


def user_vectors(model: Model, catalog: Catalog, histories, profiles, chunk: int = 256) -> np.ndarray:
    """``z`` for many users.  ``histories`` are recency-slot row arrays and
    ``profiles`` encoded profile index triples."""
    out = np.zeros((len(histories), model.config.d))
    for start in range(0, len(histories), chunk):
        hs = histories[start:start + chunk]
        L = max([len(h) for h in hs] + [1])
        hist = np.zeros((len(hs), L), dtype=np.int64)
        mask = np.zeros((len(hs), L), dtype=bool)
        for i, h in enumerate(hs):
            hist[i, :len(h)] = h
            mask[i, :len(h)] = True
        prof = np.asarray(profiles[start:start + chunk], dtype=np.int64).reshape(len(hs), 3)
        out[start:start + len(hs)] = model.user_vectors(catalog.features, hist, mask, prof)
    return out


def recommend(history, profile: StaticProfile, model: Model, catalog: Catalog, K: int = 10, M: int = 200):
    """Top-``K`` recommendations for a user given chronological video ids and
    a static profile.  Consumed videos are excluded from both stages."""
    if K > M:
        raise ValueError(f"K={K} exceeds candidate count M={M}")
    _check_fresh(catalog, model.fusion_params(), model.variant)
    hist = history_rows(catalog, history, model.config.max_len)
    z = user_vectors(model, catalog, [hist], [model.config.vocab.encode(profile)])[0]
    consumed = {catalog.row[v] for v in history if v in catalog.row}
    rows, scores, alpha = recommend_for_vector(z, model, catalog, K, M, consumed)
    probs = predict_click(scores)
    return [
        Recommendation(catalog.ids[r], float(s), float(p), fusion.AttentionWeights(*a.tolist()))
        for r, s, p, a in zip(rows, scores, np.atleast_1d(probs), alpha)
    ]
