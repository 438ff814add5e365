import math
from itertools import permutations

import numpy as np
import pytest

from mmrec import metrics
from mmrec.fusion import AttentionWeights


# -- brute-force oracles --------------------------------------------------------------


def hits_oracle(ranked, relevant, k):
    count = 0
    for pos in range(min(k, len(ranked))):
        if ranked[pos] in relevant:
            count += 1
    return count


def ndcg_oracle(ranked, relevant, k):
    dcg = 0.0
    for i in range(1, min(k, len(ranked)) + 1):
        if ranked[i - 1] in relevant:
            dcg += 1 / math.log2(i + 1)
    idcg = sum(1 / math.log2(i + 1) for i in range(1, min(k, len(relevant)) + 1))
    return dcg / idcg


def auc_oracle(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def random_instance(rng, n_items=30):
    n = int(rng.integers(1, n_items))
    ranked = list(rng.permutation(n_items)[:n])
    relevant = set(rng.choice(n_items, size=int(rng.integers(1, 10)), replace=False).tolist())
    k = int(rng.integers(1, 15))
    return ranked, relevant, k


# -- examples ----------------------------------------------------------------------------------


def test_precision_examples():
    assert metrics.precision_at_k([1, 2, 3], {1, 2, 3}, 3) == 1.0
    assert metrics.precision_at_k([1, 2, 3], {7}, 3) == 0.0
    assert metrics.precision_at_k([1, 2, 3, 4], {1, 2, 4}, 4) == 0.75
    # denominator stays K when fewer items are returned
    assert metrics.precision_at_k([1], {1}, 4) == 0.25
    with pytest.raises(ValueError):
        metrics.precision_at_k([1], {1}, 0)


def test_recall_examples():
    assert metrics.recall_at_k([3, 1, 2], {1, 2}, 3) == 1.0
    assert metrics.recall_at_k([1, 9, 8, 7, 6], {1, 2, 3, 4}, 5) == 0.25
    assert metrics.recall_at_k([1, 2], {2, 100}, 2) == 0.5
    with pytest.raises(ValueError):
        metrics.recall_at_k([1], set(), 1)


def test_ndcg_examples():
    assert metrics.ndcg_at_k([1, 2, 3], {1, 2}, 3) == 1.0
    assert metrics.ndcg_at_k([5, 1], {1}, 2) == pytest.approx(1 / math.log2(3), abs=1e-15)
    assert metrics.ndcg_at_k([5, 1], {1}, 2) == pytest.approx(0.6309, abs=1e-4)
    with pytest.raises(ValueError):
        metrics.ndcg_at_k([1], set(), 1)


def test_auc_examples():
    assert metrics.auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert metrics.auc([0.5] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        metrics.auc([0.1, 0.2], [1, 1])


def test_f1_examples():
    assert metrics.f1_score([0.9, 0.1, 0.8], [1, 0, 1]) == 1.0
    # one TP, one FP, one FN -> P = R = 0.5
    assert metrics.f1_score([0.9, 0.9, 0.1], [1, 0, 1]) == 0.5
    probs = [0.9, 0.9, 0.9, 0.9, 0.1]
    labels = [1, 1, 1, 0, 1]
    assert metrics.f1_score(probs, labels) == 0.75
    assert metrics.f1_score([0.1, 0.2], [0, 0]) == 0.0


def test_modality_share_examples():
    assert metrics.modality_weight_share([AttentionWeights(1, 0, 0)] * 3).tolist() == [1, 0, 0]
    share = metrics.modality_weight_share([AttentionWeights(1, 0, 0), AttentionWeights(0, 1, 0)])
    assert share.tolist() == [0.5, 0.5, 0.0]
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(3), size=1000)
    assert abs(metrics.modality_weight_share(w).sum() - 1) < 1e-9
    with pytest.raises(ValueError):
        metrics.modality_weight_share([])


# -- oracle equivalence -----------------------------------------------------------------------


def test_counting_metrics_match_oracle_exactly():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        ranked, relevant, k = random_instance(rng)
        h = hits_oracle(ranked, relevant, k)
        assert metrics.precision_at_k(ranked, relevant, k) == h / k
        assert metrics.recall_at_k(ranked, relevant, k) == h / len(relevant)
        assert round(metrics.precision_at_k(ranked, relevant, k) * k) == h
        assert round(metrics.recall_at_k(ranked, relevant, k) * len(relevant)) == h


def test_f1_matches_oracle_exactly():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        p = rng.random(n)
        y = rng.integers(0, 2, n)
        tp = sum(1 for a, b in zip(p, y) if a >= 0.5 and b)
        fp = sum(1 for a, b in zip(p, y) if a >= 0.5 and not b)
        fn = sum(1 for a, b in zip(p, y) if a < 0.5 and b)
        want = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
        assert metrics.f1_score(p, y) == want


def test_ndcg_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        ranked, relevant, k = random_instance(rng)
        assert abs(metrics.ndcg_at_k(ranked, relevant, k) - ndcg_oracle(ranked, relevant, k)) <= 1e-12


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(2, 200))
        # coarse grid so ties are common
        s = np.round(rng.normal(size=n), int(rng.integers(0, 3)))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 1, 0
        assert abs(metrics.auc(s, y) - auc_oracle(s.tolist(), y.tolist())) <= 1e-12


# -- properties ----------------------------------------------------------------------------------


def test_rates_in_unit_interval_fuzz():
    rng = np.random.default_rng(5)
    for _ in range(10000):
        ranked, relevant, k = random_instance(rng)
        for v in (metrics.precision_at_k(ranked, relevant, k), metrics.recall_at_k(ranked, relevant, k),
                  metrics.ndcg_at_k(ranked, relevant, k)):
            assert 0.0 <= v <= 1.0


def test_ndcg_moving_hit_up_never_decreases():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        ranked, relevant, k = random_instance(rng)
        hit_pos = [i for i, v in enumerate(ranked) if v in relevant]
        if not hit_pos or hit_pos[-1] == 0:
            continue
        i = hit_pos[-1]
        j = int(rng.integers(0, i))
        moved = ranked.copy()
        moved.insert(j, moved.pop(i))
        assert metrics.ndcg_at_k(moved, relevant, k) >= metrics.ndcg_at_k(ranked, relevant, k) - 1e-15


def test_ndcg_is_one_iff_top_positions_hit():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        ranked, relevant, k = random_instance(rng)
        need = min(k, len(relevant))
        full = all(r in relevant for r in ranked[:need]) and len(ranked) >= need
        assert (metrics.ndcg_at_k(ranked, relevant, k) == pytest.approx(1.0, abs=1e-12)) == full


def test_auc_monotone_transform_invariant():
    rng = np.random.default_rng(8)
    for _ in range(200):
        s = rng.normal(size=50)
        y = rng.integers(0, 2, 50)
        y[:2] = [0, 1]
        assert metrics.auc(np.exp(3 * s) + 1, y) == metrics.auc(s, y)


def test_random_ndcg_matches_enumeration():
    # all orderings of 5 candidates with 2 relevant
    for k in (1, 2, 3, 5):
        vals = [ndcg_oracle(list(p), {0, 1}, k) for p in permutations(range(5))]
        assert metrics.random_ndcg_at_k(2, 5, k) == pytest.approx(np.mean(vals), abs=1e-12)
    vals = [hits_oracle(list(p), {0, 1}, 3) / 3 for p in permutations(range(5))]
    assert metrics.random_precision_at_k(2, 5, 3) == pytest.approx(np.mean(vals), abs=1e-12)


def test_report_json_and_table():
    r = metrics.MetricsReport("FULL", precision={10: 0.1}, recall={10: 0.2}, ndcg={10: 0.3}, auc=0.8, f1=0.4,
                              modality_share=(0.2, 0.3, 0.5), n_users=5)
    js = r.to_json()
    assert js["ndcg"] == {"10": 0.3} and js["modality_share"]["audio"] == 0.5
    table = metrics.format_table([r], ["MMT (Full Model)"])
    head = table.splitlines()[0]
    assert [c.strip() for c in head.split("|")] == ["Model Variant", "NDCG@10", "Precision@10", "AUC"]
    assert "MMT (Full Model)" in table and "0.3000" in table
