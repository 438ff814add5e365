"""Dense numerical primitives: affine maps, activations, attention, and a
post-norm transformer block with a hand-written reverse pass.

Vectors and matrices are plain float64 ``numpy`` arrays.  Matrices follow the
``(out, in)`` convention, so ``linear_map(W, x) == W @ x`` and a batch of row
vectors is mapped with ``X @ W.T``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

LN_EPS = 1e-6


class DimensionError(ValueError):
    """Raised when array shapes are incompatible."""


def _shape(a) -> str:
    return "x".join(str(s) for s in np.shape(a))


def linear_map(W: np.ndarray, x: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot apply matrix {_shape(W)} to vector {_shape(x)}")
    y = W @ x
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (W.shape[0],):
            raise DimensionError(f"bias {_shape(b)} does not match matrix {_shape(W)}")
        y = y + b
    return y


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``.

    Entries equal to ``-inf`` receive probability exactly zero.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of an empty vector is undefined")
    m = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Sine/cosine position table of shape ``(n, d)``.

    Column ``2i`` holds ``sin(p / 10000**(2i/d))`` and column ``2i+1`` the
    matching cosine, so row 0 is ``(0, 1, 0, 1, ...)``.
    """
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    if d < 2 or d % 2:
        raise ValueError(f"model width must be a positive even number, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((n, d))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# -- layer norm -------------------------------------------------------------


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dy, cache, gain):
    xhat, inv = cache
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    lead = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=lead), dy.sum(axis=lead)


# -- transformer block ------------------------------------------------------


@dataclass(frozen=True)
class BlockParams:
    """Weights of one post-norm encoder block of width ``d``."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray  # (ffn, d)
    b1: np.ndarray
    w2: np.ndarray  # (d, ffn)
    b2: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    n_heads: int = 2

    def __post_init__(self):
        d = self.wq.shape[0]
        if self.n_heads < 1 or d % self.n_heads:
            raise DimensionError(f"{self.n_heads} heads do not divide width {d}")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise DimensionError(f"{name} has shape {_shape(getattr(self, name))}, expected {d}x{d}")
        ffn = self.w1.shape[0]
        if self.w1.shape != (ffn, d) or self.w2.shape != (d, ffn):
            raise DimensionError(f"feed-forward shapes {_shape(self.w1)}, {_shape(self.w2)} inconsistent with width {d}")
        if self.b1.shape != (ffn,) or self.b2.shape != (d,):
            raise DimensionError("feed-forward bias shapes inconsistent")
        for name in ("ln1_g", "ln1_b", "ln2_g", "ln2_b"):
            if getattr(self, name).shape != (d,):
                raise DimensionError(f"{name} must have length {d}")

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, n_heads: int = 2, ffn: int | None = None) -> "BlockParams":
        ffn = 4 * d if ffn is None else ffn
        return cls(
            wq=glorot(rng, d, d),
            wk=glorot(rng, d, d),
            wv=glorot(rng, d, d),
            wo=glorot(rng, d, d),
            w1=glorot(rng, ffn, d),
            b1=np.zeros(ffn),
            w2=glorot(rng, d, ffn),
            b2=np.zeros(d),
            ln1_g=np.ones(d),
            ln1_b=np.zeros(d),
            ln2_g=np.ones(d),
            ln2_b=np.zeros(d),
            n_heads=n_heads,
        )

    @classmethod
    def from_arrays(cls, arrays: dict, n_heads: int) -> "BlockParams":
        return cls(n_heads=n_heads, **{f.name: arrays[f.name] for f in fields(cls) if f.name != "n_heads"})

    def arrays(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "n_heads"}


def _wgrad(dy, x):
    """Sum over leading axes of outer products ``dy_i x_j``."""
    return dy.reshape(-1, dy.shape[-1]).T @ x.reshape(-1, x.shape[-1])


def _lin(X, W):
    """``X @ W.T`` over the last axis of a stacked array."""
    return (X.reshape(-1, X.shape[-1]) @ W.T).reshape(X.shape[:-1] + (W.shape[0],))


def _check_block_input(X, mask, params: BlockParams):
    if X.ndim != 3 or X.shape[2] != params.d:
        raise DimensionError(f"input {_shape(X)} does not match block width {params.d}")
    if mask.shape != X.shape[:2]:
        raise DimensionError(f"mask {_shape(mask)} does not match input {_shape(X)}")
    if not np.all(mask.any(axis=1)):
        raise ValueError("every sequence needs at least one valid position")


def attention_forward(X: np.ndarray, mask: np.ndarray, params: BlockParams):
    """Batched multi-head self-attention.

    ``X`` is ``(B, n, d)``, ``mask`` is ``(B, n)`` bool.  Masked keys get
    ``-inf`` logits and masked output rows are zero.  Returns the output and
    a cache for :func:`attention_backward`; ``cache["probs"]`` holds the
    ``(B, heads, n, n)`` attention matrices.
    """
    B, n, d = X.shape
    H = params.n_heads
    dh = d // H
    m = mask[:, :, None]
    q = _lin(X, params.wq)
    k = _lin(X, params.wk)
    v = _lin(X, params.wv) * m
    qh = q.reshape(B, n, H, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(B, n, H, dh).transpose(0, 2, 1, 3)
    vh = v.reshape(B, n, H, dh).transpose(0, 2, 1, 3)
    scale = 1.0 / np.sqrt(dh)
    logits = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    logits = np.where(mask[:, None, None, :], logits, -np.inf)
    probs = softmax(logits, axis=-1)
    ctx = (probs @ vh).transpose(0, 2, 1, 3).reshape(B, n, d)
    out = _lin(ctx, params.wo) * m
    cache = dict(X=X, m=m, qh=qh, kh=kh, vh=vh, probs=probs, ctx=ctx, scale=scale)
    return out, cache


def attention_backward(dout, cache, params: BlockParams):
    X, m = cache["X"], cache["m"]
    qh, kh, vh, probs, ctx = cache["qh"], cache["kh"], cache["vh"], cache["probs"], cache["ctx"]
    B, n, d = X.shape
    H = params.n_heads
    dh = d // H
    dout = dout * m
    g = {"wo": _wgrad(dout, ctx)}
    dctx = (dout @ params.wo).reshape(B, n, H, dh).transpose(0, 2, 1, 3)
    dprobs = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = probs.transpose(0, 1, 3, 2) @ dctx
    dlogits = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dlogits *= cache["scale"]
    dqh = dlogits @ kh
    dkh = dlogits.transpose(0, 1, 3, 2) @ qh
    dq = dqh.transpose(0, 2, 1, 3).reshape(B, n, d)
    dk = dkh.transpose(0, 2, 1, 3).reshape(B, n, d)
    dv = dvh.transpose(0, 2, 1, 3).reshape(B, n, d) * m
    g["wq"] = _wgrad(dq, X)
    g["wk"] = _wgrad(dk, X)
    g["wv"] = _wgrad(dv, X)
    dX = dq @ params.wq + dk @ params.wk + dv @ params.wv
    return dX, g


def block_forward(X: np.ndarray, mask: np.ndarray, params: BlockParams):
    """Batched encoder block: attention, residual, layer norm, then a ReLU
    feed-forward layer, residual, layer norm.  Masked rows of the output are
    zero."""
    _check_block_input(X, mask, params)
    att, att_cache = attention_forward(X, mask, params)
    y1, ln1 = layer_norm(X + att, params.ln1_g, params.ln1_b)
    pre = _lin(y1, params.w1) + params.b1
    hid = np.maximum(pre, 0.0)
    y2, ln2 = layer_norm(y1 + _lin(hid, params.w2) + params.b2, params.ln2_g, params.ln2_b)
    m = att_cache["m"]
    cache = dict(att=att_cache, ln1=ln1, y1=y1, pre=pre, hid=hid, ln2=ln2, m=m)
    return y2 * m, cache


def block_backward(dout, cache, params: BlockParams):
    """Reverse pass of :func:`block_forward`; returns ``(dX, grads)`` with
    ``grads`` keyed like :meth:`BlockParams.arrays`."""
    m = cache["m"]
    dy2 = dout * m
    dr2, g_ln2g, g_ln2b = layer_norm_backward(dy2, cache["ln2"], params.ln2_g)
    hid, y1 = cache["hid"], cache["y1"]
    g = {
        "w2": _wgrad(dr2, hid),
        "b2": dr2.sum(axis=(0, 1)),
        "ln2_g": g_ln2g,
        "ln2_b": g_ln2b,
    }
    dpre = (dr2 @ params.w2) * (cache["pre"] > 0)
    g["w1"] = _wgrad(dpre, y1)
    g["b1"] = dpre.sum(axis=(0, 1))
    dy1 = dr2 + dpre @ params.w1
    dr1, g["ln1_g"], g["ln1_b"] = layer_norm_backward(dy1, cache["ln1"], params.ln1_g)
    dX_att, g_att = attention_backward(dr1, cache["att"], params)
    g.update(g_att)
    return dr1 + dX_att, g


def self_attention(X: np.ndarray, params: BlockParams, valid_mask) -> np.ndarray:
    """Single-sequence multi-head self-attention, ``(n, d) -> (n, d)``."""
    X = np.asarray(X, dtype=np.float64)
    mask = np.asarray(valid_mask, dtype=bool)
    _check_block_input(X[None], mask[None], params)
    out, _ = attention_forward(X[None], mask[None], params)
    return out[0]


def transformer_block(X: np.ndarray, params: BlockParams, valid_mask) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out, _ = block_forward(X[None], np.asarray(valid_mask, dtype=bool)[None], params)
    return out[0]


# -- gradient verification ---------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst_index: int
    rel_errors: np.ndarray
    numeric: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4


def gradient_check(
    loss_fn: Callable[[np.ndarray], float],
    params: np.ndarray,
    analytic_grad: np.ndarray,
    eps: float = 1e-5,
    indices=None,
) -> GradCheckReport:
    """Compare ``analytic_grad`` with central differences of ``loss_fn``.

    The relative error at coordinate ``i`` is
    ``|g_i - n_i| / max(|g_i|, |n_i|, 1e-8)``.  ``indices`` restricts the check
    to a subset of coordinates.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.array(params, dtype=np.float64)
    analytic_grad = np.asarray(analytic_grad, dtype=np.float64)
    if analytic_grad.shape != theta.shape:
        raise DimensionError(f"gradient {_shape(analytic_grad)} does not match parameters {_shape(theta)}")
    idx = np.arange(theta.size) if indices is None else np.asarray(indices)
    numeric = np.full(theta.size, np.nan)
    rel = np.zeros(theta.size)
    for i in idx:
        orig = theta[i]
        theta[i] = orig + eps
        fp = loss_fn(theta)
        theta[i] = orig - eps
        fm = loss_fn(theta)
        theta[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite loss while perturbing coordinate {i}")
        numeric[i] = (fp - fm) / (2 * eps)
        a = analytic_grad[i]
        rel[i] = abs(a - numeric[i]) / max(abs(a), abs(numeric[i]), 1e-8)
    worst = int(np.argmax(rel)) if idx.size else -1
    return GradCheckReport(float(rel.max()) if idx.size else 0.0, int(idx.size), worst, rel, numeric)
