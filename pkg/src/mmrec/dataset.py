"""Loading catalogs, behavior logs and profiles from JSONL, or directly from an
in-memory simulated world."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fusion import ModalityFeatures
from .interest import ProfileVocab, StaticProfile
from .model import Features
from .pipeline import VideoRecord, features_from_records
from .simdata import EVENT_CODES, EventLog, World
from .training import UserLog, user_logs


class ParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def _records(path):
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ParseError(path, no, f"invalid JSON ({err.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(path, no, "expected a JSON object")
            yield no, obj


def _vector(path, no, obj, key, optional=False):
    val = obj.get(key, None) if optional else obj.get(key)
    if val is None:
        if optional:
            return None
        raise ParseError(path, no, f"missing field {key!r}")
    if not isinstance(val, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
        raise ParseError(path, no, f"field {key!r} must be a list of numbers")
    arr = np.asarray(val, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ParseError(path, no, f"field {key!r} has non-finite entries")
    return arr


def read_catalog(path) -> list[VideoRecord]:
    out, seen = [], set()
    for no, obj in _records(path):
        vid = obj.get("video_id")
        if not isinstance(vid, str) or not vid:
            raise ParseError(path, no, "missing or non-string 'video_id'")
        if vid in seen:
            raise ParseError(path, no, f"duplicate video id {vid!r}")
        seen.add(vid)
        v = _vector(path, no, obj, "visual")
        t = _vector(path, no, obj, "text")
        if "audio" not in obj:
            raise ParseError(path, no, "missing field 'audio' (use null when absent)")
        a = _vector(path, no, obj, "audio", optional=True)
        out.append(VideoRecord(vid, ModalityFeatures.from_optional(v, t, a)))
    # absent audio tracks take the width of the present ones
    d_a = max((len(r.features.audio) for r in out if r.features.present[2]), default=0)
    if d_a:
        out = [
            r if r.features.present[2]
            else VideoRecord(r.video_id, ModalityFeatures(r.features.visual, r.features.text, np.zeros(d_a), r.features.present))
            for r in out
        ]
    return out


def read_profiles(path) -> dict[str, StaticProfile]:
    out = {}
    for no, obj in _records(path):
        try:
            uid = obj["user_id"]
            prof = StaticProfile(str(obj["gender"]), str(obj["region"]), str(obj["registration_bucket"]))
        except KeyError as err:
            raise ParseError(path, no, f"missing field {err.args[0]!r}") from None
        out[str(uid)] = prof
    return out


def read_logs(path, catalog_row: dict[str, int]):
    """Columnar arrays ``(user, video_row, ts, event)`` plus the user id list.

    Only impressions and clicks feed the model; likes, comments, watch time
    and context are validated and otherwise ignored.
    """
    user_index: dict[str, int] = {}
    cols = ([], [], [], [])
    for no, obj in _records(path):
        for key in ("user_id", "video_id", "ts", "event"):
            if key not in obj:
                raise ParseError(path, no, f"missing field {key!r}")
        if obj["event"] not in EVENT_CODES:
            raise ParseError(path, no, f"unknown event {obj['event']!r}")
        if not isinstance(obj["ts"], int) or isinstance(obj["ts"], bool):
            raise ParseError(path, no, "'ts' must be an integer")
        ctx = obj.get("context", {})
        if not isinstance(ctx, dict):
            raise ParseError(path, no, "'context' must be an object")
        vid = obj["video_id"]
        if vid not in catalog_row:
            raise ParseError(path, no, f"video {vid!r} not in catalog")
        uid = str(obj["user_id"])
        cols[0].append(user_index.setdefault(uid, len(user_index)))
        cols[1].append(catalog_row[vid])
        cols[2].append(obj["ts"])
        cols[3].append(EVENT_CODES.index(obj["event"]))
    arrs = [np.asarray(c, dtype=np.int64) for c in cols]
    return arrs, list(user_index)


@dataclass
class Dataset:
    ids: list[str]
    features: Features
    videos: list[VideoRecord] | None
    logs: dict[str, UserLog]
    profiles: dict[str, StaticProfile]
    split_ts: int

    @property
    def row(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.ids)}

    def user_ids(self) -> list[str]:
        return sorted(self.profiles)

    def profile_index(self, vocab: ProfileVocab) -> dict:
        return {uid: vocab.encode(p) for uid, p in self.profiles.items()}

    @classmethod
    def from_files(cls, data_dir, split_ts: int | None = None) -> "Dataset":
        d = Path(data_dir)
        videos = read_catalog(d / "catalog.jsonl")
        ids, feats = features_from_records(videos)
        row = {v: i for i, v in enumerate(ids)}
        (u, v, ts, ev), users = read_logs(d / "logs.jsonl", row)
        profiles = read_profiles(d / "profiles.jsonl")
        if split_ts is None:
            split_ts = int(json.loads((d / "world.json").read_text())["split_ts"])
        return cls(ids, feats, videos, user_logs(u, v, ts, ev, users), profiles, split_ts)

    @classmethod
    def from_world(cls, world: World, log: EventLog) -> "Dataset":
        feats = Features(*(np.array(f) for f in world.features), world.present.copy())
        logs = user_logs(log.user, log.video, log.ts, log.event.astype(np.int64), world.user_ids)
        profiles = {p["user_id"]: StaticProfile(p["gender"], p["region"], p["registration_bucket"])
                    for p in world.profiles}
        return cls(list(world.video_ids), feats, None, logs, profiles, world.config.split_ts)
