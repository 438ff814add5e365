import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrec.fusion import (
    AttentionWeights,
    FusionParams,
    ModalityFeatures,
    attend,
    attention_weights,
    fuse,
    project_modalities,
)
from mmrec.numerics import DimensionError, linear_map


def params(rng, d=4, dims=(3, 2, 5)):
    return FusionParams(*(rng.normal(size=(d, k)) for k in dims), rng.normal(size=d))


def feats(rng, dims=(3, 2, 5), present=(True, True, True)):
    vecs = [rng.normal(size=k) if on else np.zeros(k) for k, on in zip(dims, present)]
    return ModalityFeatures(*vecs, present=present)


def test_identity_projection_returns_inputs():
    d = 3
    p = FusionParams(np.eye(d), np.eye(d), np.eye(d), np.zeros(d))
    v, t, a = np.array([1.0, 2, 3]), np.array([0.0, -1, 4]), np.array([5.0, 5, 5])
    out = project_modalities(ModalityFeatures(v, t, a), p)
    for got, want in zip(out, (v, t, a)):
        assert np.array_equal(got, want)


def test_absent_audio_projects_to_zero():
    rng = np.random.default_rng(0)
    f = ModalityFeatures.from_optional(rng.normal(size=3), rng.normal(size=2), None, d_a=5)
    e = project_modalities(f, params(rng))
    assert np.array_equal(e[2], np.zeros(4))


def test_projection_matches_linear_map():
    rng = np.random.default_rng(1)
    p = FusionParams(*(rng.normal(size=(3, 2)) for _ in range(3)), rng.normal(size=3))
    f = ModalityFeatures(*(rng.normal(size=2) for _ in range(3)))
    for e, w, x in zip(project_modalities(f, p), p.projections(), f.vectors()):
        assert np.array_equal(e, linear_map(w, x))


def test_projection_shape_error_names_modality():
    rng = np.random.default_rng(2)
    f = ModalityFeatures(rng.normal(size=3), rng.normal(size=7), rng.normal(size=5))
    with pytest.raises(DimensionError, match="text"):
        project_modalities(f, params(rng))


def test_no_modality_present_rejected():
    with pytest.raises(ValueError):
        ModalityFeatures(np.zeros(1), np.zeros(1), np.zeros(1), (False, False, False))
    with pytest.raises(ValueError):
        attention_weights(np.zeros(2), [np.zeros(2)] * 3, [False] * 3)


def test_attention_examples():
    u = np.array([1.0, 0.0])
    w = attention_weights(u, [np.array([0.0, 1.0]), np.array([0.0, 2.0]), np.array([0.0, -3.0])], [True] * 3)
    assert np.allclose(w.as_array(), [1 / 3] * 3, atol=1e-15)
    w = attention_weights(u, [np.array([0.0, 1.0]), np.array([0.0, 2.0]), np.array([9.0, 0.0])], [True, True, False])
    assert w.as_array().tolist() == pytest.approx([0.5, 0.5, 0.0], abs=1e-15)
    assert w.audio == 0.0
    w = attention_weights(u, [np.array([math.log(2), 0.0]), np.array([0.0, 5.0]), np.zeros(2)], [True] * 3)
    assert w.as_array() == pytest.approx([0.5, 0.25, 0.25], abs=1e-15)


def test_fuse_examples():
    e = [np.array([2.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
    assert np.array_equal(fuse(AttentionWeights(1.0, 0.0, 0.0), e).vector, e[0])
    c = np.array([0.3, -2.0])
    assert np.allclose(fuse(AttentionWeights(0.2, 0.5, 0.3), [c, c, c]).vector, c, atol=1e-15)
    f = fuse(AttentionWeights(0.5, 0.3, 0.2), e)
    assert f.vector == pytest.approx([1.2, 0.5], abs=1e-15)
    assert f.weights == AttentionWeights(0.5, 0.3, 0.2)


def _in_hull(f, points, tol=1e-9):
    """Convex-hull membership: solve ``sum w_i p_i = f, sum w_i = 1`` by
    least squares and require an exact fit with nonnegative weights."""
    P = np.stack(points)
    A = np.vstack([P.T, np.ones(len(P))])
    rhs = np.r_[f, 1.0]
    w, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return np.allclose(A @ w, rhs, atol=tol) and np.all(w >= -tol)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(1, 1, 1), (1, 1, 0), (0, 1, 0), (1, 0, 1)]))
def test_weights_on_simplex_and_fused_inside_hull(seed, mask):
    rng = np.random.default_rng(seed)
    present = tuple(bool(m) for m in mask)
    p = params(rng)
    e = project_modalities(feats(rng, present=present), p)
    w = attention_weights(p.u, e, present)
    arr = w.as_array()
    assert abs(arr.sum() - 1) <= 1e-12
    assert np.all((arr >= 0) & (arr <= 1))
    assert all(arr[i] == 0.0 for i in range(3) if not present[i])
    f = fuse(w, e).vector
    pts = [e[i] for i in range(3) if present[i]]
    assert np.linalg.norm(f) <= max(np.linalg.norm(x) for x in pts) + 1e-12
    assert _in_hull(f, pts)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_scaling_query_keeps_argmax(seed, c):
    rng = np.random.default_rng(seed)
    p = params(rng)
    e = project_modalities(feats(rng), p)
    logits = np.array([p.u @ x for x in e])
    if np.sort(logits)[-1] - np.sort(logits)[-2] < 1e-9:
        return
    assert attention_weights(p.u, e, [True] * 3).dominant == attention_weights(c * p.u, e, [True] * 3).dominant


def test_absent_equals_two_modality_reference():
    rng = np.random.default_rng(7)
    for _ in range(100):
        p = params(rng)
        f = feats(rng, present=(True, True, False))
        e = project_modalities(f, p)
        w = attention_weights(p.u, e, f.present)
        # reference: softmax over the two remaining logits only
        lv, lt = p.u @ e[0], p.u @ e[1]
        av = 1 / (1 + math.exp(lt - lv))
        ref = av * e[0] + (1 - av) * e[1]
        assert w.visual == pytest.approx(av, abs=1e-14)
        assert np.allclose(fuse(w, e).vector, ref, atol=1e-13)


def test_batched_attend_matches_single():
    rng = np.random.default_rng(8)
    p = params(rng)
    E, Q, P = [], [], []
    for i in range(20):
        present = tuple(bool(x) for x in rng.integers(0, 2, size=3))
        if not any(present):
            present = (False, True, False)
        f = feats(rng, present=present)
        E.append(np.stack(project_modalities(f, p)))
        Q.append(rng.normal(size=4))
        P.append(present)
    alpha, fused = attend(np.array(Q), np.array(E), np.array(P))
    for i in range(20):
        w = attention_weights(Q[i], list(E[i]), P[i])
        assert np.allclose(alpha[i], w.as_array(), atol=1e-14)
        assert np.allclose(fused[i], fuse(w, list(E[i])).vector, atol=1e-14)
