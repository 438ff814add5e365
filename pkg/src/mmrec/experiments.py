"""Seeded variant sweeps over simulated worlds.

One seed fixes the world, the user split, the negative samples and the
parameter initialization, so the variants of a sweep differ only in the
components they switch off.  Alongside the usual report every run records
the subgroup numbers that need simulator ground truth: drifted users, cold
users and audio-reliant users.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .dataset import Dataset
from .interest import ProfileVocab
from .model import Model, ModelConfig, Variant
from .pipeline import catalog_for_model
from .simdata import World, WorldConfig, generate_world, simulate_logs, true_click_probability
from .training import ExampleSet, TrainConfig, build_examples, evaluate_users, split_users, summarize, train

log = logging.getLogger(__name__)

TABLE_ORDER = (Variant.FULL, Variant.NO_AUDIO, Variant.NO_SEQ, Variant.NO_STATIC, Variant.TEXT_ONLY)
AUDIO_RELIANT = 0.7


@dataclass
class Prepared:
    seed: int
    dataset: Dataset
    world: World | GroundTruth | None
    train_users: set
    val_users: set
    test_users: set
    vocab: ProfileVocab
    profile_idx: dict
    train_set: ExampleSet
    val_set: ExampleSet


def prepare(dataset: Dataset, seed: int, config: TrainConfig, world: World | None = None) -> Prepared:
    """Split users and sample examples; everything downstream of the data
    that all variants share."""
    tr, va, te = split_users(dataset.user_ids(), seed=seed)
    vocab = ProfileVocab.from_profiles([dataset.profiles[u] for u in sorted(tr)])
    pidx = dataset.profile_index(vocab)
    n = len(dataset.ids)
    train_set = build_examples(dataset.logs, n, config.negative_ratio, seed=seed * 2, users=tr, profile_idx=pidx)
    val_set = build_examples(dataset.logs, n, config.negative_ratio, seed=seed * 2 + 1, users=va, profile_idx=pidx)
    return Prepared(seed, dataset, world, tr, va, te, vocab, pidx, train_set, val_set)


def model_config(prep: Prepared, config: TrainConfig, variant: Variant) -> ModelConfig:
    f = prep.dataset.features
    return ModelConfig(d=config.d, d_v=f.visual.shape[1], d_t=f.text.shape[1], d_a=f.audio.shape[1],
                       vocab=prep.vocab, variant=variant, n_heads=config.n_heads, max_len=config.max_len,
                       pooling=config.pooling)


def fit(prep: Prepared, config: TrainConfig, variant: Variant):
    model = Model.init(model_config(prep, config, variant), config.seed)
    return train(prep.train_set, prep.val_set, prep.dataset.features, config, model)


@dataclass
class VariantResult:
    variant: str
    report: metrics.MetricsReport
    history: dict
    seconds: float
    subgroups: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        # wall time is logged, not stored, so outputs stay reproducible
        return {"variant": self.variant, "report": self.report.to_json(), "history": self.history,
                "subgroups": self.subgroups}


def _pooled_auc(evals):
    if not evals:
        return float("nan")
    s = np.concatenate([e.scores for e in evals])
    y = np.concatenate([e.labels for e in evals])
    if y.size == 0 or y.min() == y.max():
        return float("nan")
    return metrics.auc(s, y)


def subgroup_stats(prep: Prepared, evals, K: int = 10) -> dict:
    """Ground-truth subgroup numbers for one evaluated variant."""
    world = prep.world
    if world is None:
        return {}
    index = {uid: i for i, uid in enumerate(world.user_ids)}
    n_catalog = len(prep.dataset.ids)
    split = prep.dataset.split_ts
    by_user = {e.user_id: e for e in evals}

    drifted = [e for e in evals if world.drift[index[e.user_id]]]

    cold_model, cold_random = [], []
    for e in evals:
        if not world.cold[index[e.user_id]] or not e.relevant:
            continue
        consumed = prep.dataset.logs[e.user_id].history_before(split).size
        cold_model.append(metrics.ndcg_at_k(e.recommended, e.relevant, K))
        cold_random.append(metrics.random_ndcg_at_k(len(e.relevant), n_catalog - consumed, K))

    reliant = [uid for uid in by_user if world.beta[index[uid], 2] >= AUDIO_RELIANT]
    alpha = np.concatenate([by_user[u].weights for u in reliant]) if reliant else np.zeros((0, 3))

    return {
        "drift_auc": _pooled_auc(drifted),
        "n_drift_users": len(drifted),
        "cold_ndcg": float(np.mean(cold_model)) if cold_model else float("nan"),
        "cold_random_ndcg": float(np.mean(cold_random)) if cold_random else float("nan"),
        "n_cold_users": len(cold_model),
        "audio_reliant_alpha": alpha.mean(axis=0).tolist() if alpha.size else [],
        "n_audio_reliant": len(reliant),
    }


@dataclass
class GroundTruth:
    """The per-user latents that subgroup statistics need."""

    user_ids: list[str]
    drift: np.ndarray
    cold: np.ndarray
    beta: np.ndarray


def load_ground_truth(data_dir) -> GroundTruth | None:
    """User latents from ``ground_truth.jsonl``, or ``None`` when absent."""
    path = Path(data_dir) / "ground_truth.jsonl"
    if not path.is_file():
        return None
    ids, drift, cold, beta = [], [], [], []
    with open(path) as fh:
        for line in fh:
            if not line.startswith('{"kind":"user"'):
                continue
            rec = json.loads(line)
            ids.append(rec["user_id"])
            drift.append(rec["drift"])
            cold.append(rec["cold"])
            beta.append(rec["beta"])
    return GroundTruth(ids, np.array(drift, bool), np.array(cold, bool), np.array(beta, float).reshape(-1, 3))


def bayes_auc(prep: Prepared) -> float:
    """AUC of the generator's own click probability on the test impressions."""
    world = prep.world
    index = {uid: i for i, uid in enumerate(world.user_ids)}
    split = prep.dataset.split_ts
    scores, labels = [], []
    for uid in sorted(prep.test_users):
        ul = prep.dataset.logs.get(uid)
        if ul is None:
            continue
        t = ul.imp_ts >= split
        if not t.any():
            continue
        u = np.full(int(t.sum()), index[uid])
        scores.append(true_click_probability(world, u, ul.imp_rows[t], ul.imp_ts[t]))
        labels.append(ul.imp_clicked[t])
    return metrics.auc(np.concatenate(scores), np.concatenate(labels))


def run_variant(prep: Prepared, config: TrainConfig, variant: Variant, ks=(5, 10), M: int = 200,
                containment: bool = True) -> tuple[Model, VariantResult]:
    t0 = time.perf_counter()
    model, history = fit(prep, config, variant)
    catalog = catalog_for_model((prep.dataset.ids, prep.dataset.features), model)
    evals, skipped = evaluate_users(model, catalog, prep.dataset.logs, prep.test_users, prep.profile_idx,
                                    prep.dataset.split_ts, max(ks), M, containment)
    report = summarize(evals, variant.value, ks, skipped)
    result = VariantResult(variant.value, report, history.to_json(), time.perf_counter() - t0,
                           subgroup_stats(prep, evals, 10))
    log.info("seed %d %s: auc %.4f ndcg@10 %.5f (%.0fs)", prep.seed, variant.value, report.auc,
             report.ndcg.get(10, float("nan")), result.seconds)
    return model, result


def simulated(seed: int, world_config: WorldConfig | None = None):
    wc = replace(world_config or WorldConfig(), seed=seed)
    world = generate_world(wc)
    return world, Dataset.from_world(world, simulate_logs(world))


def run_seed(seed: int, variants=TABLE_ORDER, train_config: TrainConfig | None = None,
             world_config: WorldConfig | None = None, ks=(5, 10), M: int = 200) -> dict:
    """Generate a world for ``seed`` and train/evaluate every variant on it."""
    config = replace(train_config or TrainConfig(), seed=seed)
    world, ds = simulated(seed, world_config)
    prep = prepare(ds, seed, config, world)
    out = {"seed": seed, "bayes_auc": bayes_auc(prep), "variants": {}}
    for v in variants:
        _, res = run_variant(prep, config, Variant(v), ks, M)
        out["variants"][Variant(v).value] = res.to_json()
    return out
