"""Batch learning pipeline: user-level splits, labeled examples with negative
sampling, Adam training with early stopping on validation AUC, and test-set
evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .interest import MAX_LEN, StaticProfile
from .model import Batch, Features, Model
from .pipeline import Catalog, coarse_rank, fine_scores, predict_click, rank_rows, recommend_for_vector, user_vectors

log = logging.getLogger(__name__)

SESSION_GAP = 1800


class NumericalAbort(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_len: int = MAX_LEN
    learning_rate: float = 0.001
    batch_size: int = 128
    max_epochs: int = 20
    patience: int = 3
    negative_ratio: int = 4
    d: int = 32
    n_heads: int = 2
    pooling: str = "mean"
    early_stop_metric: str = "val_auc"
    seed: int = 0

    @classmethod
    def from_json(cls, obj) -> "TrainConfig":
        return cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 means the initial parameters
    stop_reason: str = "max_epochs"

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class UserLog:
    """One user's behavior, chronological, with catalog rows for videos."""

    user_id: str
    click_rows: np.ndarray
    click_ts: np.ndarray
    imp_rows: np.ndarray
    imp_ts: np.ndarray
    imp_clicked: np.ndarray
    imp_session: np.ndarray

    def history_before(self, ts) -> np.ndarray:
        return self.click_rows[self.click_ts < ts]


def user_logs(log_user, log_video_rows, log_ts, log_event, user_ids) -> dict[str, UserLog]:
    """Group a columnar event log (event 0 = impression, 1 = click) by user.

    A click marks the latest earlier impression of the same video as clicked.
    Sessions split on gaps longer than 30 minutes between impressions.
    """
    order = np.lexsort((log_ts, log_user))
    u, v, ts, ev = log_user[order], log_video_rows[order], log_ts[order], log_event[order]
    bounds = np.flatnonzero(np.r_[True, u[1:] != u[:-1], True])
    out = {}
    for a, b in zip(bounds[:-1], bounds[1:]):
        uid = user_ids[u[a]]
        uv, uts, uev = v[a:b], ts[a:b], ev[a:b]
        imp = uev == 0
        clk = uev == 1
        imp_rows, imp_ts = uv[imp], uts[imp]
        clicked = np.zeros(imp_rows.size, dtype=bool)
        last_seen: dict[int, int] = {}
        j = 0
        for k in range(uv.size):
            if imp[k]:
                last_seen[int(uv[k])] = j
                j += 1
            elif clk[k] and int(uv[k]) in last_seen:
                clicked[last_seen[int(uv[k])]] = True
        session = np.cumsum(np.r_[0, np.diff(imp_ts) > SESSION_GAP]) if imp_ts.size else np.zeros(0, np.int64)
        out[uid] = UserLog(uid, uv[clk], uts[clk], imp_rows, imp_ts, clicked, session)
    return out


def split_users(user_ids, ratios=(0.70, 0.15, 0.15), seed: int = 0):
    """Seeded user-level partition into (train, val, test) id sets."""
    ids = sorted(set(user_ids))
    if len(ids) < 3:
        raise ValueError("need at least 3 users to split")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError("split ratios must sum to 1")
    perm = np.random.default_rng(seed).permutation(len(ids))
    n = len(ids)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(max(n_train, 1), n - 2)
    n_val = min(max(n_val, 1), n - n_train - 1)
    shuffled = [ids[i] for i in perm]
    return set(shuffled[:n_train]), set(shuffled[n_train:n_train + n_val]), set(shuffled[n_train + n_val:])


@dataclass(frozen=True)
class LabeledExample:
    user_id: str
    video_id: str
    label: int
    prefix: tuple[str, ...]
    profile: StaticProfile | None


@dataclass
class ExampleSet:
    """Examples grouped by shared user state: each group is one positive and
    its negatives, all conditioned on the same click prefix."""

    users: list[str]
    profile_idx: np.ndarray  # (n_users, 3)
    clicks: list[np.ndarray]  # chronological click rows per user
    group_user: np.ndarray
    group_prefix: np.ndarray  # number of earlier clicks in the prefix
    group_targets: list[np.ndarray]
    group_labels: list[np.ndarray]

    def __len__(self):
        return int(sum(len(t) for t in self.group_targets))

    @property
    def n_groups(self) -> int:
        return len(self.group_user)

    def examples(self, catalog_ids, profiles=None):
        for g in range(self.n_groups):
            u = self.group_user[g]
            uid = self.users[u]
            prefix = tuple(catalog_ids[r] for r in self.clicks[u][: self.group_prefix[g]])
            prof = profiles.get(uid) if profiles else None
            for t, y in zip(self.group_targets[g], self.group_labels[g]):
                yield LabeledExample(uid, catalog_ids[t], int(y), prefix, prof)

    def batch(self, groups, max_len: int) -> Batch:
        B = len(groups)
        prefixes = []
        for g in groups:
            rows = self.clicks[self.group_user[g]][: self.group_prefix[g]]
            prefixes.append(rows[-max_len:][::-1])
        L = max([len(p) for p in prefixes] + [1])
        T = max(len(self.group_targets[g]) for g in groups)
        hist = np.zeros((B, L), dtype=np.int64)
        hmask = np.zeros((B, L), dtype=bool)
        tgt = np.zeros((B, T), dtype=np.int64)
        tmask = np.zeros((B, T), dtype=bool)
        lab = np.zeros((B, T))
        for i, g in enumerate(groups):
            p = prefixes[i]
            hist[i, :len(p)] = p
            hmask[i, :len(p)] = True
            n = len(self.group_targets[g])
            tgt[i, :n] = self.group_targets[g]
            tmask[i, :n] = True
            lab[i, :n] = self.group_labels[g]
        prof = self.profile_idx[self.group_user[np.asarray(groups)]]
        return Batch(hist, hmask, prof, tgt, tmask, lab)


def build_examples(logs: dict[str, UserLog], n_catalog: int, negative_ratio: int = 4, seed: int = 0,
                   users=None, profile_idx: dict | None = None) -> ExampleSet:
    """One positive per click plus ``negative_ratio`` negatives.

    Negatives come from the same session's unclicked impressions, topped up
    from the catalog minus the user's clicked set.  A target never appears
    in its own prefix.
    """
    rng = np.random.default_rng(seed)
    ids = sorted(logs if users is None else set(users) & set(logs))
    g_user, g_prefix, g_tgt, g_lab = [], [], [], []
    clicks = []
    prof = np.zeros((len(ids), 3), dtype=np.int64)
    for ui, uid in enumerate(ids):
        ul = logs[uid]
        clicks.append(ul.click_rows)
        if profile_idx is not None:
            prof[ui] = profile_idx[uid]
        clicked_all = set(ul.click_rows.tolist())
        for j, (row, ts) in enumerate(zip(ul.click_rows, ul.click_ts)):
            prefix = set(ul.click_rows[:j].tolist())
            if int(row) in prefix:
                continue
            before = ul.imp_ts <= ts
            if before.any():
                session = ul.imp_session[np.flatnonzero(before)[-1]]
                pool = ul.imp_rows[(ul.imp_session == session) & ~ul.imp_clicked]
                pool = np.array([r for r in pool.tolist() if r not in prefix and r != row], dtype=np.int64)
            else:
                pool = np.zeros(0, dtype=np.int64)
            pool = np.unique(pool)
            if pool.size >= negative_ratio:
                negs = rng.choice(pool, size=negative_ratio, replace=False)
            else:
                negs = list(pool)
                banned = clicked_all | set(negs)
                while len(negs) < negative_ratio and len(banned) < n_catalog:
                    r = int(rng.integers(n_catalog))
                    if r not in banned:
                        negs.append(r)
                        banned.add(r)
                negs = np.asarray(negs, dtype=np.int64)
            g_user.append(ui)
            g_prefix.append(j)
            g_tgt.append(np.r_[row, negs].astype(np.int64))
            g_lab.append(np.r_[1.0, np.zeros(len(negs))])
    return ExampleSet(ids, prof, clicks, np.asarray(g_user, dtype=np.int64), np.asarray(g_prefix, dtype=np.int64),
                      g_tgt, g_lab)


def bce(p, y) -> float:
    p = min(max(float(p), 1e-12), 1.0 - 1e-12)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict, names) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in names:
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def example_scores(model: Model, feats: Features, examples: ExampleSet, chunk: int = 256):
    """Fine scores and labels of every example, in group order."""
    scores, labels = [], []
    for start in range(0, examples.n_groups, chunk):
        groups = list(range(start, min(start + chunk, examples.n_groups)))
        b = examples.batch(groups, model.config.max_len)
        z = model.user_vectors(feats, b.hist, b.hist_mask, b.profile)
        s, _ = model.fine_scores(z, feats, b.targets)
        scores.append(s[b.target_mask])
        labels.append(b.labels[b.target_mask])
    if not scores:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(scores), np.concatenate(labels)


def validation_auc(model: Model, feats: Features, examples: ExampleSet) -> float:
    s, y = example_scores(model, feats, examples)
    if y.size == 0 or y.min() == y.max():
        return 0.5
    return metrics.auc(s, y)


def groups_per_batch(config: TrainConfig) -> int:
    return max(1, config.batch_size // (1 + config.negative_ratio))


def length_bucketed_batches(examples: ExampleSet, per_batch: int, max_len: int, rng) -> list[np.ndarray]:
    """Shuffled batches of groups with similar prefix lengths (less padding)."""
    lengths = np.minimum(examples.group_prefix, max_len)
    order = np.lexsort((rng.random(examples.n_groups), lengths))
    batches = [order[s:s + per_batch] for s in range(0, len(order), per_batch)]
    return [batches[i] for i in rng.permutation(len(batches))]


def train(train_set: ExampleSet, val_set: ExampleSet, feats: Features, config: TrainConfig,
          model: Model) -> tuple[Model, TrainHistory]:
    """Adam on mean binary cross-entropy, keeping the best-validation-AUC
    parameters.  ``model`` supplies the initial parameters and is not
    modified."""
    if train_set.n_groups == 0 or val_set.n_groups == 0:
        raise ValueError("training and validation example sets must be nonempty")
    work = model.copy()
    best = model.copy()
    history = TrainHistory()
    if config.max_epochs <= 0:
        return best, history
    rng = np.random.default_rng([config.seed, 7])
    names = work.trainable()
    opt = Adam(config.learning_rate)
    per_batch = groups_per_batch(config)
    best_auc = -np.inf
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        total, count = 0.0, 0
        for bi, groups in enumerate(length_bucketed_batches(train_set, per_batch, config.max_len, rng)):
            batch = train_set.batch(groups, config.max_len)
            loss, grads = work.loss_and_grad(feats, batch)
            if not np.isfinite(loss):
                raise NumericalAbort(f"non-finite loss at epoch {epoch}, batch {bi}")
            opt.step(work.params, grads, names)
            n = int(batch.target_mask.sum())
            total += loss * n
            count += n
        auc = validation_auc(work, feats, val_set)
        history.train_loss.append(total / max(count, 1))
        history.val_auc.append(auc)
        log.info("epoch %d  loss %.5f  val_auc %.5f", epoch, history.train_loss[-1], auc)
        if auc > best_auc:
            best_auc = auc
            best = work.copy()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                history.stop_reason = "patience"
                break
    return best, history


# -- evaluation -------------------------------------------------------------------


@dataclass
class UserEval:
    user_id: str
    recommended: list[int]
    relevant: set
    weights: np.ndarray  # (K, 3)
    scores: np.ndarray  # test-window impression scores
    labels: np.ndarray
    contained: bool
    n_candidates: int = 0


def evaluate_users(model: Model, catalog: Catalog, logs: dict[str, UserLog], users, profile_idx: dict,
                   split_ts: int, K: int = 10, M: int = 200, containment: bool = True) -> tuple[list[UserEval], int]:
    """Per-user recommendations and test-window impression scores.

    History is every click before ``split_ts``; relevance is the set of
    clicks at or after it.  Users without test-window impressions are
    skipped; their count is returned alongside.
    """
    ids = sorted(u for u in users if u in logs)
    skipped = len(set(users)) - len(ids)
    kept, hists, profs = [], [], []
    for uid in ids:
        ul = logs[uid]
        if not (ul.imp_ts >= split_ts).any():
            skipped += 1
            continue
        kept.append(uid)
        hists.append(ul.history_before(split_ts)[-model.config.max_len:][::-1])
        profs.append(profile_idx[uid])
    Z = user_vectors(model, catalog, hists, profs)
    u = model.params["u"]
    out = []
    for uid, z in zip(kept, Z):
        ul = logs[uid]
        consumed = set(ul.history_before(split_ts).tolist())
        rows, _, alpha = recommend_for_vector(z, model, catalog, K, M, consumed)
        contained = True
        if containment:
            keep = np.ones(len(catalog), dtype=bool)
            keep[list(consumed)] = False
            allowed = np.flatnonzero(keep)
            s_all, _ = fine_scores(z, u, catalog, allowed)
            exact = allowed[rank_rows(s_all, allowed, K)]
            coarse, _ = coarse_rank(z, catalog, M, consumed)
            contained = set(exact.tolist()) <= set(coarse.tolist())
        test = ul.imp_ts >= split_ts
        s, _ = fine_scores(z, u, catalog, ul.imp_rows[test])
        rel = set(ul.click_rows[ul.click_ts >= split_ts].tolist())
        out.append(UserEval(uid, rows.tolist(), rel, alpha, s, ul.imp_clicked[test], contained,
                            len(catalog) - len(consumed)))
    return out, skipped


def summarize(evals: list[UserEval], variant: str, ks=(5, 10), skipped: int = 0) -> metrics.MetricsReport:
    """Macro-averaged ranking metrics over users with relevant items, pooled
    AUC/F1 over all scored impressions, and the mean modality weight share of
    the recommended items."""
    report = metrics.MetricsReport(variant=variant)
    ranked = [e for e in evals if e.relevant]
    report.n_users = len(ranked)
    report.n_skipped = skipped + (len(evals) - len(ranked))
    for k in ks:
        if ranked:
            report.precision[k] = float(np.mean([metrics.precision_at_k(e.recommended, e.relevant, k) for e in ranked]))
            report.recall[k] = float(np.mean([metrics.recall_at_k(e.recommended, e.relevant, k) for e in ranked]))
            report.ndcg[k] = float(np.mean([metrics.ndcg_at_k(e.recommended, e.relevant, k) for e in ranked]))
    if evals:
        s = np.concatenate([e.scores for e in evals])
        y = np.concatenate([e.labels for e in evals])
        if y.size and 0 < y.sum() < y.size:
            report.auc = metrics.auc(s, y)
        report.f1 = metrics.f1_score(predict_click(s), y) if y.size else float("nan")
        w = np.concatenate([e.weights for e in evals])
        if w.size:
            report.modality_share = tuple(float(x) for x in metrics.modality_weight_share(w))
        report.containment = float(np.mean([e.contained for e in evals]))
    return report


def random_baseline(evals: list[UserEval], ks=(5, 10)) -> metrics.MetricsReport:
    """Analytic expectations of a uniformly random ranking over the same
    users and candidate pools."""
    report = metrics.MetricsReport(variant="RANDOM", auc=0.5)
    ranked = [e for e in evals if e.relevant]
    report.n_users = len(ranked)
    report.n_skipped = len(evals) - len(ranked)
    for k in ks:
        if ranked:
            report.precision[k] = float(np.mean([metrics.random_precision_at_k(len(e.relevant), e.n_candidates, k)
                                                 for e in ranked]))
            report.recall[k] = float(np.mean([min(k, e.n_candidates) / e.n_candidates for e in ranked]))
            report.ndcg[k] = float(np.mean([metrics.random_ndcg_at_k(len(e.relevant), e.n_candidates, k)
                                            for e in ranked]))
    report.modality_share = (1 / 3, 1 / 3, 1 / 3)
    return report


def evaluate(model: Model, catalog: Catalog, logs, users, profile_idx, split_ts, ks=(5, 10), M: int = 200,
             containment: bool = True) -> metrics.MetricsReport:
    evals, skipped = evaluate_users(model, catalog, logs, users, profile_idx, split_ts, max(ks), M, containment)
    return summarize(evals, model.variant.value, ks, skipped)
