"""The composed click model: fusion -> sequence encoder -> profile fusion ->
user-conditioned fine score, with its batched loss and analytic gradient."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import fusion, interest
from .numerics import BlockParams, glorot, sigmoid

FUSION_KEYS = ("w_v", "w_t", "w_a", "u")
BLOCK_KEYS = tuple(k for k in BlockParams.__dataclass_fields__ if k != "n_heads")
TABLE_KEYS = ("emb_gender", "emb_region", "emb_registration_bucket")
INTEREST_KEYS = ("W_c", "b", "h0")


class Variant(str, enum.Enum):
    FULL = "FULL"
    NO_AUDIO = "NO_AUDIO"
    NO_SEQ = "NO_SEQ"
    NO_STATIC = "NO_STATIC"
    TEXT_ONLY = "TEXT_ONLY"

    @property
    def label(self) -> str:
        return VARIANT_LABELS[self]


VARIANT_LABELS = {
    Variant.FULL: "MMT (Full Model)",
    Variant.NO_AUDIO: "w/o Audio",
    Variant.NO_SEQ: "w/o Sequence Modeling",
    Variant.NO_STATIC: "w/o Static Profile",
    Variant.TEXT_ONLY: "Text-Only (No Fusion)",
}


@dataclass(frozen=True)
class ModelConfig:
    d: int
    d_v: int
    d_t: int
    d_a: int
    vocab: interest.ProfileVocab
    variant: Variant = Variant.FULL
    n_heads: int = 2
    ffn: int | None = None
    max_len: int = interest.MAX_LEN
    pooling: str = "mean"

    @property
    def ffn_width(self) -> int:
        return 4 * self.d if self.ffn is None else self.ffn

    def to_json(self):
        return dict(
            d=self.d, d_v=self.d_v, d_t=self.d_t, d_a=self.d_a, vocab=self.vocab.to_json(),
            variant=self.variant.value, n_heads=self.n_heads, ffn=self.ffn_width,
            max_len=self.max_len, pooling=self.pooling,
        )

    @classmethod
    def from_json(cls, obj) -> "ModelConfig":
        obj = dict(obj)
        obj["vocab"] = interest.ProfileVocab.from_json(obj["vocab"])
        obj["variant"] = Variant(obj["variant"])
        return cls(**obj)


def modality_mask(present: np.ndarray, variant: Variant) -> np.ndarray:
    """Apply the variant's modality restrictions to a presence mask."""
    present = np.array(present, dtype=bool)
    if variant is Variant.NO_AUDIO:
        present[..., 2] = False
    elif variant is Variant.TEXT_ONLY:
        present[..., 0] = False
        present[..., 2] = False
    return present


@dataclass
class Features:
    """Model-visible per-video arrays, rows aligned with a catalog order."""

    visual: np.ndarray
    text: np.ndarray
    audio: np.ndarray
    present: np.ndarray  # (N, 3) bool

    def rows(self, idx):
        return (self.visual[idx], self.text[idx], self.audio[idx]), self.present[idx]


@dataclass
class Batch:
    hist: np.ndarray  # (B, L) catalog rows, slot 0 = most recent
    hist_mask: np.ndarray
    profile: np.ndarray  # (B, 3)
    targets: np.ndarray  # (B, T)
    target_mask: np.ndarray
    labels: np.ndarray


@dataclass
class Model:
    config: ModelConfig
    params: dict = field(repr=False)

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "Model":
        rng = np.random.default_rng(seed)
        d = config.d
        p = {
            "w_v": glorot(rng, d, config.d_v),
            "w_t": glorot(rng, d, config.d_t),
            "w_a": glorot(rng, d, config.d_a),
            "u": glorot(rng, d, 1)[:, 0],
        }
        block = BlockParams.init(rng, d, config.n_heads, config.ffn_width)
        p.update({f"block.{k}": v for k, v in block.arrays().items()})
        for key, size in zip(TABLE_KEYS, config.vocab.sizes()):
            p[key] = glorot(rng, size, d)
        p["W_c"] = glorot(rng, d, 2 * d)
        p["b"] = np.zeros(d)
        p["h0"] = glorot(rng, d, 1)[:, 0]
        return cls(config, p)

    @property
    def variant(self) -> Variant:
        return self.config.variant

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})

    # -- parameter views -------------------------------------------------

    def fusion_params(self) -> fusion.FusionParams:
        p = self.params
        return fusion.FusionParams(p["w_v"], p["w_t"], p["w_a"], p["u"])

    def block_params(self) -> BlockParams | None:
        if self.variant is Variant.NO_SEQ:
            return None
        arrays = {k: self.params[f"block.{k}"] for k in BLOCK_KEYS}
        return BlockParams.from_arrays(arrays, self.config.n_heads)

    def interest_params(self) -> interest.InterestFusionParams:
        p = self.params
        return interest.InterestFusionParams(p["W_c"], p["b"], p["h0"], tuple(p[k] for k in TABLE_KEYS))

    def trainable(self) -> list[str]:
        frozen = set(TABLE_KEYS) if self.variant is Variant.NO_STATIC else set()
        return [k for k in self.params if k not in frozen]

    def to_vector(self, names=None) -> np.ndarray:
        names = list(self.params) if names is None else names
        return np.concatenate([self.params[k].ravel() for k in names])

    def set_vector(self, vec, names=None) -> None:
        names = list(self.params) if names is None else names
        pos = 0
        for k in names:
            size = self.params[k].size
            self.params[k] = np.asarray(vec[pos:pos + size], dtype=np.float64).reshape(self.params[k].shape).copy()
            pos += size

    # -- forward pieces --------------------------------------------------

    def project(self, feats: Features, idx):
        xs, present = feats.rows(idx)
        E = fusion.project_batch(xs, (self.params["w_v"], self.params["w_t"], self.params["w_a"]))
        return xs, E, modality_mask(present, self.variant)

    def static_vectors(self, profile_idx) -> np.ndarray:
        profile_idx = np.asarray(profile_idx)
        if self.variant is Variant.NO_STATIC:
            return np.zeros(profile_idx.shape[:-1] + (self.config.d,))
        return interest.embed_profile(profile_idx, self.interest_params())

    def user_vectors(self, feats: Features, hist, hist_mask, profile_idx, trace: bool = False):
        """``z`` for a padded batch of recency-ordered histories."""
        z, cache = self._user_forward(feats, hist, hist_mask, profile_idx)
        return (z, cache) if trace else z

    def _user_forward(self, feats, hist, hist_mask, profile_idx):
        p = self.params
        xs_h, E_h, pres_h = self.project(feats, hist)
        alpha_h, F = fusion.attend(p["u"], E_h, pres_h)
        h, enc = interest.encode_batch(F, hist_mask, self.block_params(), p["h0"], self.config.pooling)
        s = self.static_vectors(profile_idx)
        c = np.concatenate([h, s], axis=-1)
        pre = c @ p["W_c"].T + p["b"]
        z = np.maximum(pre, 0.0)
        cache = dict(xs_h=xs_h, E_h=E_h, alpha_h=alpha_h, enc=enc, c=c, pre=pre, h=h, s=s)
        return z, cache

    def fine_scores(self, z, feats: Features, targets):
        """Fine scores and attention weights of ``targets`` (``(B, T)`` rows)
        for users ``z`` (``(B, d)``)."""
        _, E_t, pres_t = self.project(feats, targets)
        alpha, f = fusion.attend(self.params["u"] + z[:, None, :], E_t, pres_t)
        return np.einsum("bd,btd->bt", z, f), alpha

    # -- training objective ------------------------------------------------

    def loss(self, feats: Features, batch: Batch) -> float:
        z, _ = self._user_forward(feats, batch.hist, batch.hist_mask, batch.profile)
        score, _ = self.fine_scores(z, feats, batch.targets)
        return _bce_logits(score, batch.labels, batch.target_mask)

    def loss_and_grad(self, feats: Features, batch: Batch):
        p = self.params
        d = self.config.d
        z, uc = self._user_forward(feats, batch.hist, batch.hist_mask, batch.profile)
        xs_t, E_t, pres_t = self.project(feats, batch.targets)
        q = p["u"] + z[:, None, :]
        alpha_t, f_t = fusion.attend(q, E_t, pres_t)
        score = np.einsum("bd,btd->bt", z, f_t)
        loss = _bce_logits(score, batch.labels, batch.target_mask)

        g = {k: np.zeros_like(v) for k, v in p.items()}
        tm = batch.target_mask
        dscore = tm * (sigmoid(score) - batch.labels) / tm.sum()
        dz = np.einsum("bt,btd->bd", dscore, f_t)
        df_t = dscore[:, :, None] * z[:, None, :]
        dq, dE_t = fusion.attend_backward(df_t, q, E_t, alpha_t)
        dz += dq.sum(axis=1)
        du = dq.sum(axis=(0, 1))

        dpre = dz * (uc["pre"] > 0)
        g["W_c"] = dpre.T @ uc["c"]
        g["b"] = dpre.sum(axis=0)
        dc = dpre @ p["W_c"]
        dh, ds = dc[:, :d], dc[:, d:]
        if self.variant is not Variant.NO_STATIC:
            for i, key in enumerate(TABLE_KEYS):
                np.add.at(g[key], batch.profile[:, i], ds)

        block = self.block_params()
        dF, g["h0"], gblock = interest.encode_batch_backward(dh, uc["enc"], block)
        if gblock is not None:
            for k, v in gblock.items():
                g[f"block.{k}"] = v
        dq_h, dE_h = fusion.attend_backward(dF, p["u"], uc["E_h"], uc["alpha_h"])
        du += dq_h.reshape(-1, d).sum(axis=0)
        g["u"] = du
        for key, gh, gt in zip(
            ("w_v", "w_t", "w_a"),
            fusion.project_batch_backward(dE_h, uc["xs_h"]),
            fusion.project_batch_backward(dE_t, xs_t),
        ):
            g[key] = gh + gt
        return loss, g


def _bce_logits(score, labels, mask) -> float:
    per = np.logaddexp(0.0, score) - labels * score
    return float((per * mask).sum() / mask.sum())
