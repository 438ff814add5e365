"""User interest representation: a transformer summary of the recent behavior
sequence (dynamic interest) combined with embedded static profile fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import BlockParams, DimensionError, block_backward, block_forward, relu, sinusoidal_positions

PROFILE_FIELDS = ("gender", "region", "registration_bucket")
UNK = "<unk>"
MAX_LEN = 50


@dataclass(frozen=True)
class StaticProfile:
    gender: str
    region: str
    registration_bucket: str

    def values(self):
        return (self.gender, self.region, self.registration_bucket)


@dataclass(frozen=True)
class ProfileVocab:
    """Per-field vocabularies; index 0 of every field is the UNK token."""

    gender: tuple[str, ...]
    region: tuple[str, ...]
    registration_bucket: tuple[str, ...]

    @classmethod
    def from_profiles(cls, profiles) -> "ProfileVocab":
        cols = [sorted({str(p.values()[i]) for p in profiles} - {UNK}) for i in range(3)]
        return cls(*(tuple([UNK, *c]) for c in cols))

    def fields(self):
        return (self.gender, self.region, self.registration_bucket)

    def sizes(self):
        return tuple(len(v) for v in self.fields())

    def encode(self, profile: StaticProfile) -> np.ndarray:
        out = []
        for vocab, value in zip(self.fields(), profile.values()):
            try:
                out.append(vocab.index(str(value)))
            except ValueError:
                out.append(0)
        return np.array(out, dtype=np.int64)

    def to_json(self):
        return {name: list(v) for name, v in zip(PROFILE_FIELDS, self.fields())}

    @classmethod
    def from_json(cls, obj) -> "ProfileVocab":
        return cls(*(tuple(obj[name]) for name in PROFILE_FIELDS))


@dataclass(frozen=True)
class InterestFusionParams:
    W_c: np.ndarray  # (d, 2d)
    b: np.ndarray
    h0: np.ndarray
    tables: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self):
        d = self.b.shape[0]
        if self.W_c.shape != (d, 2 * d):
            raise DimensionError(f"W_c has shape {self.W_c.shape}, expected ({d}, {2 * d})")
        if self.h0.shape != (d,):
            raise DimensionError("h0 must have the model width")
        for t in self.tables:
            if t.ndim != 2 or t.shape[1] != d:
                raise DimensionError(f"profile table of shape {t.shape} does not have width {d}")


@dataclass
class DynamicInterestVector:
    vector: np.ndarray
    # (heads, n, n) attention over the retained items in chronological order
    attention_trace: np.ndarray | None = field(default=None, repr=False)


def embed_profile(profile_idx: np.ndarray, params: InterestFusionParams) -> np.ndarray:
    """Sum of the three field embeddings for encoded profile indices."""
    profile_idx = np.asarray(profile_idx)
    return sum(t[profile_idx[..., i]] for i, t in enumerate(params.tables))


def recency_slots(embeddings: np.ndarray, max_len: int = MAX_LEN) -> np.ndarray:
    """Keep the most recent ``max_len`` rows of a chronological sequence and
    reverse them so slot 0 is the latest item."""
    return np.asarray(embeddings, dtype=np.float64)[-max_len:][::-1] if len(embeddings) else np.zeros((0, 0))


def encode_batch(F, mask, block: BlockParams | None, h0, pooling: str = "mean"):
    """Encode a padded batch of sequences.

    ``F`` is ``(B, L, d)`` in recency-slot order (slot 0 most recent) and
    ``mask`` marks valid slots.  With ``block=None`` the fused embeddings are
    mean-pooled directly (no positions, no attention).  Rows without any
    valid slot return ``h0``.  Returns ``(h, cache)``.
    """
    B, L, d = F.shape
    n = mask.sum(axis=1)
    live = np.flatnonzero(n > 0)
    h = np.tile(h0, (B, 1))
    cache = dict(live=live, n=n, mask=mask, pooling=pooling, B=B, L=L)
    if live.size == 0:
        return h, cache
    Fl, ml = F[live], mask[live]
    nl = n[live][:, None].astype(np.float64)
    if block is None:
        h[live] = (Fl * ml[:, :, None]).sum(axis=1) / nl
        return h, cache
    X = (Fl + sinusoidal_positions(L, d)) * ml[:, :, None]
    Y, bcache = block_forward(X, ml, block)
    if pooling == "mean":
        h[live] = Y.sum(axis=1) / nl
    elif pooling == "last":
        h[live] = Y[:, 0]
    else:
        raise ValueError(f"unknown pooling {pooling!r}")
    cache["block"] = bcache
    return h, cache


def encode_batch_backward(dh, cache, block: BlockParams | None):
    """Returns ``(dF, dh0, block_grads)``."""
    live, n, mask = cache["live"], cache["n"], cache["mask"]
    B, L = cache["B"], cache["L"]
    d = dh.shape[1]
    dF = np.zeros((B, L, d))
    dead = np.ones(B, dtype=bool)
    dead[live] = False
    dh0 = dh[dead].sum(axis=0)
    if live.size == 0:
        return dF, dh0, None
    ml = mask[live][:, :, None]
    dl = dh[live]
    if block is None:
        dF[live] = ml * (dl / n[live][:, None])[:, None, :]
        return dF, dh0, None
    if cache["pooling"] == "mean":
        dY = ml * (dl / n[live][:, None])[:, None, :]
    else:
        dY = np.zeros((live.size, L, d))
        dY[:, 0] = dl
    dX, grads = block_backward(dY, cache["block"], block)
    dF[live] = dX * ml
    return dF, dh0, grads


def encode_sequence(
    embeddings,
    block: BlockParams | None,
    h0: np.ndarray,
    max_len: int = MAX_LEN,
    pooling: str = "mean",
    trace: bool = False,
) -> DynamicInterestVector:
    """Dynamic interest vector for one chronological sequence of fused
    embeddings (``(n, d)``, oldest first)."""
    embeddings = np.asarray(embeddings, dtype=np.float64).reshape(-1, h0.shape[0])
    if len(embeddings) == 0:
        return DynamicInterestVector(np.array(h0, dtype=np.float64))
    slots = recency_slots(embeddings, max_len)
    mask = np.ones((1, len(slots)), dtype=bool)
    h, cache = encode_batch(slots[None], mask, block, h0, pooling)
    att = None
    if trace and block is not None:
        # back to chronological order on both axes
        att = cache["block"]["att"]["probs"][0][:, ::-1, ::-1].copy()
    return DynamicInterestVector(h[0], att)


def user_representation(h: np.ndarray, s: np.ndarray, params: InterestFusionParams) -> np.ndarray:
    """``ReLU(W_c [h; s] + b)`` with ``h`` placed before ``s``."""
    h = np.asarray(h, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    d = params.b.shape[-1]
    if h.shape[-1] != d or s.shape[-1] != d:
        raise DimensionError(f"interest vectors of width {h.shape[-1]} and {s.shape[-1]} do not match model width {d}")
    return relu(np.concatenate([h, s], axis=-1) @ params.W_c.T + params.b)
