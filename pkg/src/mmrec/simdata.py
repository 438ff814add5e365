"""Synthetic short-video world with planted ground truth.

Videos carry a latent topic mixture.  Each modality expresses its own view of
the topics, a blend of the shared mixture and a modality-specific draw, and
emits features through a fixed random loading plus Gaussian noise.  Users
have topic affinities driven partly by their profile, a modality reliance
vector, and optionally a mid-horizon affinity switch (drift).  Clicks are
Bernoulli draws from a logistic model over the reliance-weighted topic views.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .numerics import sigmoid

DAY = 86_400
EVENT_CODES = ("impression", "click", "like", "comment")
DEVICES = ("android", "ios", "web")
NETWORKS = ("wifi", "4g", "5g")
GENDERS = ("f", "m", "x")


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 2000
    n_videos: int = 5000
    n_topics: int = 5
    d_v: int = 16
    d_t: int = 16
    d_a: int = 16
    rho: float = 0.25  # weight of the shared topic mixture in every modality view
    sigma: float = 0.1  # feature noise
    audio_missing_frac: float = 0.0
    cold_user_frac: float = 0.2
    drift_user_frac: float = 0.5
    sessions_per_user: int = 10
    impressions_per_session: int = 15
    kappa: float = 6.0
    bias: float = -2.5
    topic_concentration: float = 0.3
    reliance: float = 0.8  # weight on a user's dominant modality
    n_regions: int = 8
    n_registration_buckets: int = 5
    region_scale: float = 1.0
    individual_scale: float = 1.0
    days: int = 30
    test_fraction: float = 0.3
    drift_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("rho", "audio_missing_frac", "cold_user_frac", "drift_user_frac",
                     "test_fraction", "drift_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("n_users", "n_videos", "n_topics", "d_v", "d_t", "d_a",
                     "sessions_per_user", "impressions_per_session", "n_regions",
                     "n_registration_buckets", "days"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.impressions_per_session > self.n_videos:
            raise ValueError("impressions_per_session exceeds catalog size")

    @property
    def split_ts(self) -> int:
        """Start of the test window (seconds)."""
        return int(round(self.days * (1.0 - self.test_fraction))) * DAY

    @property
    def drift_ts(self) -> int:
        return int(round(self.days * self.drift_fraction)) * DAY

    @classmethod
    def profile(cls, name: str, **overrides) -> "WorldConfig":
        """Named presets: ``default`` or ``kubd-like`` (no audio track)."""
        if name == "default":
            base = cls()
        elif name == "kubd-like":
            base = cls(audio_missing_frac=1.0)
        else:
            raise ValueError(f"unknown world profile {name!r}")
        return replace(base, **overrides)

    @classmethod
    def from_json(cls, obj) -> "WorldConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class World:
    config: WorldConfig
    video_ids: list[str]
    topics: np.ndarray  # (N, K) topic mixtures
    views: np.ndarray  # (N, 3, K) per-modality topic views
    features: tuple[np.ndarray, np.ndarray, np.ndarray]
    present: np.ndarray  # (N, 3)
    loadings: tuple[np.ndarray, np.ndarray, np.ndarray]
    user_ids: list[str]
    profiles: list[dict]
    affinity: np.ndarray  # (U, K) before drift
    post_affinity: np.ndarray  # (U, K) after drift (equal to affinity when not drifting)
    beta: np.ndarray  # (U, 3) modality reliance
    drift: np.ndarray  # (U,) bool
    cold: np.ndarray  # (U,) bool


@dataclass
class EventLog:
    """Columnar behavior log, sorted by user then timestamp."""

    user: np.ndarray  # int index into user_ids
    video: np.ndarray  # int index into video_ids
    ts: np.ndarray
    event: np.ndarray  # index into EVENT_CODES
    watch_time: np.ndarray
    hour_bucket: np.ndarray
    device: np.ndarray
    network: np.ndarray
    user_ids: list[str]
    video_ids: list[str]
    true_p: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.ts)

    def records(self):
        for i in range(len(self.ts)):
            yield {
                "user_id": self.user_ids[self.user[i]],
                "video_id": self.video_ids[self.video[i]],
                "ts": int(self.ts[i]),
                "event": EVENT_CODES[self.event[i]],
                "watch_time_s": round(float(self.watch_time[i]), 3),
                "context": {
                    "hour_bucket": int(self.hour_bucket[i]),
                    "device": DEVICES[self.device[i]],
                    "network": NETWORKS[self.network[i]],
                },
            }


def _unit_dirichlet(rng, conc, k, size):
    return rng.dirichlet(np.full(k, conc), size=size)


def generate_world(config: WorldConfig) -> World:
    rng = np.random.default_rng(config.seed)
    K, N, U = config.n_topics, config.n_videos, config.n_users
    topics = _unit_dirichlet(rng, config.topic_concentration, K, N)
    own = _unit_dirichlet(rng, config.topic_concentration, K, (N, 3))
    views = config.rho * topics[:, None, :] + (1.0 - config.rho) * own
    dims = (config.d_v, config.d_t, config.d_a)
    loadings = tuple(rng.normal(0.0, 1.0, size=(dm, K)) for dm in dims)
    features = tuple(
        views[:, m] @ loadings[m].T + config.sigma * rng.normal(size=(N, dims[m])) for m in range(3)
    )
    present = np.ones((N, 3), dtype=bool)
    n_missing = int(round(config.audio_missing_frac * N))
    if n_missing:
        present[rng.permutation(N)[:n_missing], 2] = False
    features[2][~present[:, 2]] = 0.0

    region_centres = rng.normal(0.0, config.region_scale, size=(config.n_regions, K))
    gender_offsets = rng.normal(0.0, 0.3 * config.region_scale, size=(len(GENDERS), K))
    region_centres -= region_centres.mean(axis=0)
    gender_offsets -= gender_offsets.mean(axis=0)
    region = rng.integers(config.n_regions, size=U)
    gender = rng.integers(len(GENDERS), size=U)
    bucket = rng.integers(config.n_registration_buckets, size=U)
    base = region_centres[region] + gender_offsets[gender]
    affinity = base + rng.normal(0.0, config.individual_scale, size=(U, K))
    drift = rng.random(U) < config.drift_user_frac
    post = base + rng.normal(0.0, config.individual_scale, size=(U, K))
    # preferences are relative: zero mean over topics, so users differ in
    # what they click rather than in how much
    affinity -= affinity.mean(axis=1, keepdims=True)
    post -= post.mean(axis=1, keepdims=True)
    post_affinity = np.where(drift[:, None], post, affinity)
    dominant = rng.integers(3, size=U)
    beta = np.full((U, 3), (1.0 - config.reliance) / 2.0)
    beta[np.arange(U), dominant] = config.reliance
    cold = rng.random(U) < config.cold_user_frac

    width_v = len(str(N - 1))
    width_u = len(str(U - 1))
    profiles = [
        {
            "user_id": f"u{i:0{width_u}d}",
            "gender": GENDERS[gender[i]],
            "region": f"r{region[i]:02d}",
            "registration_bucket": f"b{bucket[i]}",
        }
        for i in range(U)
    ]
    return World(
        config=config,
        video_ids=[f"v{i:0{width_v}d}" for i in range(N)],
        topics=topics,
        views=views,
        features=features,
        present=present,
        loadings=loadings,
        user_ids=[p["user_id"] for p in profiles],
        profiles=profiles,
        affinity=affinity,
        post_affinity=post_affinity,
        beta=beta,
        drift=drift,
        cold=cold,
    )


def true_click_probability(world: World, user, video, t) -> np.ndarray:
    """Ground-truth click probability for user/video index arrays at times ``t``.

    Absent modalities are dropped and the user's reliance renormalized over
    the rest.
    """
    cfg = world.config
    user, video, t = np.asarray(user), np.asarray(video), np.asarray(t)
    aff = np.where((t >= cfg.drift_ts)[..., None], world.post_affinity[user], world.affinity[user])
    beta = world.beta[user] * world.present[video]
    beta = beta / beta.sum(axis=-1, keepdims=True)
    content = np.einsum("...m,...mk->...k", beta, world.views[video])
    return sigmoid(cfg.kappa * np.einsum("...k,...k->...", aff, content) + cfg.bias)


def text_only_click_probability(world: World, user, video, t) -> np.ndarray:
    """Click probability as seen through the text view alone."""
    cfg = world.config
    user, video, t = np.asarray(user), np.asarray(video), np.asarray(t)
    aff = np.where((t >= cfg.drift_ts)[..., None], world.post_affinity[user], world.affinity[user])
    return sigmoid(cfg.kappa * np.einsum("...k,...k->...", aff, world.views[video, 1]) + cfg.bias)


def session_days(config: WorldConfig, rng) -> np.ndarray:
    S = config.sessions_per_user
    slot = config.days / S
    starts = np.floor(np.arange(S) * slot).astype(int)
    widths = np.maximum(np.floor((np.arange(1, S + 1)) * slot).astype(int) - starts, 1)
    return starts + (rng.random(S) * widths).astype(int)


def simulate_logs(world: World, rng: np.random.Generator | None = None) -> EventLog:
    """Sessions of uniform impressions with Bernoulli clicks.

    Cold users only have sessions inside the test window.  A user is never
    shown a video they already clicked.  ``rng`` defaults to a generator
    derived from the world seed.
    """
    cfg = world.config
    if rng is None:
        rng = np.random.default_rng([cfg.seed, 1])
    cols = {k: [] for k in ("user", "video", "ts", "event", "watch_time", "hour", "device", "network", "p")}

    def emit(u, v, ts, ev, wt, hour, dev, net, p):
        for k, x in zip(cols, (u, v, ts, ev, wt, hour, dev, net, p)):
            cols[k].append(x)

    N = cfg.n_videos
    split_day = cfg.split_ts // DAY
    for u in range(cfg.n_users):
        days = session_days(cfg, rng)
        device = int(rng.integers(len(DEVICES)))
        clicked: set[int] = set()
        for day in days:
            if world.cold[u] and day < split_day:
                continue
            hour = int(rng.integers(24))
            network = int(rng.integers(len(NETWORKS)))
            start = int(day) * DAY + hour * 3600
            pool = rng.permutation(N)
            shown = [int(v) for v in pool[: cfg.impressions_per_session + len(clicked)] if int(v) not in clicked]
            shown = shown[: cfg.impressions_per_session]
            ts = start + 60 * np.arange(len(shown))
            p = true_click_probability(world, np.full(len(shown), u), np.array(shown), ts)
            draws = rng.random((len(shown), 3))
            for j, v in enumerate(shown):
                emit(u, v, ts[j], 0, 0.0, hour // 6, device, network, p[j])
                if draws[j, 0] < p[j]:
                    clicked.add(v)
                    watch = 3.0 + 57.0 * p[j] * (0.5 + draws[j, 1])
                    emit(u, v, ts[j] + 5, 1, watch, hour // 6, device, network, p[j])
                    if draws[j, 1] < 0.4 * p[j]:
                        emit(u, v, ts[j] + 6, 2, 0.0, hour // 6, device, network, p[j])
                    if draws[j, 2] < 0.1 * p[j]:
                        emit(u, v, ts[j] + 7, 3, 0.0, hour // 6, device, network, p[j])
    arr = {k: np.asarray(v) for k, v in cols.items()}
    return EventLog(
        user=arr["user"].astype(np.int64),
        video=arr["video"].astype(np.int64),
        ts=arr["ts"].astype(np.int64),
        event=arr["event"].astype(np.int8),
        watch_time=arr["watch_time"].astype(np.float64),
        hour_bucket=arr["hour"].astype(np.int8),
        device=arr["device"].astype(np.int8),
        network=arr["network"].astype(np.int8),
        user_ids=world.user_ids,
        video_ids=world.video_ids,
        true_p=arr["p"].astype(np.float64),
    )


# -- file emission -------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def _vec(x) -> list[float]:
    return [round(float(v), 10) for v in x]


def write_world(world: World, log: EventLog, out_dir) -> dict:
    """Write catalog, logs, profiles, ground truth and world metadata.

    Returns a summary with counts in the layout of a dataset statistics
    table.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = world.config
    with open(out / "catalog.jsonl", "w") as fh:
        for i, vid in enumerate(world.video_ids):
            rec = {
                "video_id": vid,
                "visual": _vec(world.features[0][i]),
                "text": _vec(world.features[1][i]),
                "audio": _vec(world.features[2][i]) if world.present[i, 2] else None,
            }
            fh.write(_dump(rec) + "\n")
    with open(out / "logs.jsonl", "w") as fh:
        for rec in log.records():
            fh.write(_dump(rec) + "\n")
    with open(out / "profiles.jsonl", "w") as fh:
        for p in world.profiles:
            fh.write(_dump(p) + "\n")
    with open(out / "ground_truth.jsonl", "w") as fh:
        for u, uid in enumerate(world.user_ids):
            fh.write(_dump({
                "kind": "user", "user_id": uid,
                "affinity": _vec(world.affinity[u]), "post_affinity": _vec(world.post_affinity[u]),
                "beta": _vec(world.beta[u]), "drift": bool(world.drift[u]), "cold": bool(world.cold[u]),
            }) + "\n")
        for i, vid in enumerate(world.video_ids):
            fh.write(_dump({
                "kind": "video", "video_id": vid, "topics": _vec(world.topics[i]),
                "views": {m: _vec(world.views[i, j]) for j, m in enumerate(("visual", "text", "audio"))},
            }) + "\n")
        imp = np.flatnonzero(log.event == 0)
        for i in imp:
            fh.write(_dump({
                "kind": "impression", "user_id": world.user_ids[log.user[i]],
                "video_id": world.video_ids[log.video[i]], "ts": int(log.ts[i]),
                "p": round(float(log.true_p[i]), 10),
            }) + "\n")
    clicks = log.event == 1
    n_click_users = max(len(np.unique(log.user[clicks])), 1)
    summary = {
        "users": cfg.n_users,
        "videos": cfg.n_videos,
        "behavior_records": int(len(log)),
        "impressions": int((log.event == 0).sum()),
        "clicks": int(clicks.sum()),
        "image_modality": "features",
        "text_modality": "features",
        "audio_modality": "features" if world.present[:, 2].any() else "(Missing)",
        "avg_sequence_length": round(float(clicks.sum()) / n_click_users, 2),
    }
    meta = {"format_version": 1, "world": asdict(cfg), "split_ts": cfg.split_ts,
            "drift_ts": cfg.drift_ts, "summary": summary}
    (out / "world.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return summary
