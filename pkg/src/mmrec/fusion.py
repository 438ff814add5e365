"""Attention-weighted intermediate fusion of visual, text and audio features.

Each modality is projected into a shared width-``d`` space, scored against a
query vector with a dot product, and the projections are mixed with the
softmax of those scores.  Absent modalities are dropped from the softmax, so
their weight is exactly zero and the remaining weights renormalize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, linear_map, softmax

MODALITIES = ("visual", "text", "audio")


@dataclass(frozen=True)
class ModalityFeatures:
    visual: np.ndarray
    text: np.ndarray
    audio: np.ndarray
    present: tuple[bool, bool, bool] = (True, True, True)

    def __post_init__(self):
        if not any(self.present):
            raise ValueError("at least one modality must be present")

    @classmethod
    def from_optional(cls, visual, text, audio, d_a: int | None = None) -> "ModalityFeatures":
        """Build features where ``audio`` may be ``None`` (missing track)."""
        present = (visual is not None, text is not None, audio is not None)
        vecs = []
        for x in (visual, text, audio):
            vecs.append(None if x is None else np.asarray(x, dtype=np.float64))
        if vecs[2] is None:
            vecs[2] = np.zeros(d_a or 0)
        return cls(vecs[0], vecs[1], vecs[2], present)

    def vectors(self):
        return (self.visual, self.text, self.audio)


@dataclass(frozen=True)
class FusionParams:
    w_v: np.ndarray
    w_t: np.ndarray
    w_a: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        d = self.u.shape[0]
        for name, w in zip(("w_v", "w_t", "w_a"), self.projections()):
            if w.ndim != 2 or w.shape[0] != d:
                raise DimensionError(f"{name} has shape {w.shape}, expected {d} rows")

    @property
    def d(self) -> int:
        return self.u.shape[0]

    def projections(self):
        return (self.w_v, self.w_t, self.w_a)


@dataclass(frozen=True)
class AttentionWeights:
    visual: float
    text: float
    audio: float

    def as_array(self) -> np.ndarray:
        return np.array([self.visual, self.text, self.audio])

    @property
    def dominant(self) -> str:
        return MODALITIES[int(np.argmax(self.as_array()))]


@dataclass(frozen=True)
class FusedEmbedding:
    vector: np.ndarray
    weights: AttentionWeights


def project_modalities(feats: ModalityFeatures, params: FusionParams):
    """Map each present modality into the shared space; absent ones give zeros."""
    out = []
    for name, x, w, on in zip(MODALITIES, feats.vectors(), params.projections(), feats.present):
        if not on:
            out.append(np.zeros(params.d))
            continue
        try:
            out.append(linear_map(w, x))
        except DimensionError as err:
            raise DimensionError(f"{name} modality: {err}") from None
    return tuple(out)


def attention_weights(u: np.ndarray, projected, present) -> AttentionWeights:
    present = np.asarray(present, dtype=bool)
    if not present.any():
        raise ValueError("attention weights need at least one present modality")
    u = np.asarray(u, dtype=np.float64)
    E = np.stack(projected)
    if E.shape[1] != u.shape[0]:
        raise DimensionError(f"query length {u.shape[0]} does not match embedding width {E.shape[1]}")
    logits = np.where(present, E @ u, -np.inf)
    return AttentionWeights(*softmax(logits).tolist())


def fuse(weights: AttentionWeights, projected) -> FusedEmbedding:
    E = np.stack(projected)
    return FusedEmbedding(weights.as_array() @ E, weights)


# -- batched forms used by the trainer and the ranking pipeline --------------


def project_batch(xs, projections) -> np.ndarray:
    """Stack projected modalities: inputs ``(..., d_m)`` -> ``(..., 3, d)``."""
    out = [(x.reshape(-1, x.shape[-1]) @ w.T).reshape(x.shape[:-1] + (w.shape[0],)) for x, w in zip(xs, projections)]
    return np.stack(out, axis=-2)


def project_batch_backward(dE, xs):
    """Gradients of the three projection matrices for :func:`project_batch`."""
    grads = []
    for m, x in enumerate(xs):
        g = dE[..., m, :]
        grads.append(g.reshape(-1, g.shape[-1]).T @ x.reshape(-1, x.shape[-1]))
    return grads


def attend(q: np.ndarray, E: np.ndarray, present: np.ndarray):
    """Query-conditioned modality mixing.

    ``q`` is ``(..., d)``, ``E`` is ``(..., 3, d)`` and ``present`` is
    ``(..., 3)`` bool.  Returns ``(alpha, f)`` of shapes ``(..., 3)`` and
    ``(..., d)``.
    """
    logits = (E @ q[..., None])[..., 0]
    alpha = softmax(np.where(present, logits, -np.inf), axis=-1)
    f = (alpha[..., None, :] @ E)[..., 0, :]
    return alpha, f


def attend_backward(df, q, E, alpha):
    """Returns ``(dq, dE)`` for :func:`attend` given upstream ``df``."""
    dalpha = (E @ df[..., None])[..., 0]
    dlogit = alpha * (dalpha - (dalpha * alpha).sum(axis=-1, keepdims=True))
    dq = (dlogit[..., None, :] @ E)[..., 0, :]
    dE = alpha[..., None] * df[..., None, :] + dlogit[..., None] * q[..., None, :]
    return dq, dE
