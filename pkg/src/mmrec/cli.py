"""Command-line entry point: ``mmrec <command> [flags]``.

Commands: gen-data, train, evaluate, recommend, ablate, explain.

Configuration is a JSON file (``--config``) with an explicit
``schema_version``.  Environment variables may redirect file paths
(``MMREC_DATA``, ``MMREC_MODEL``, ``MMREC_OUT``) but never touch
hyperparameters.  Exit codes: 0 success, 2 configuration or parse error,
3 numerical abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import experiments, metrics, modelio
from .dataset import Dataset, ParseError
from .model import VARIANT_LABELS, Variant
from .pipeline import catalog_for_model, history_rows, recommend
from .simdata import WorldConfig, generate_world, simulate_logs, write_world
from .training import NumericalAbort, TrainConfig, evaluate_users, random_baseline, split_users, summarize

log = logging.getLogger("mmrec")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
PATH_ENV = {"data": "MMREC_DATA", "model": "MMREC_MODEL", "out": "MMREC_OUT"}

REPORT_NOTE = (
    "# ItemCF, DIN and BERT4Rec baselines are not reproduced; the ablation\n"
    "# variants and an analytic random-ranking row stand in for them.\n"
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str = "data"
    model: str | None = None  # defaults to <out>/model.bin
    out: str = "out"
    train: TrainConfig = field(default_factory=TrainConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    world_profile: str = "default"
    ks: tuple = (5, 10)
    M: int = 200
    variant: Variant = Variant.FULL
    seeds: tuple = (0,)
    world_per_seed: bool = False  # ablate: simulate a fresh world per seed

    @property
    def model_path(self) -> Path:
        return Path(self.model) if self.model else Path(self.out) / "model.bin"


def _check_keys(obj, allowed, where):
    extra = set(obj) - set(allowed)
    if extra:
        raise ConfigError(f"unknown {where} key(s): {', '.join(sorted(extra))}")


def load_config(path=None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err.msg}, line {err.lineno})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}")
    _check_keys(raw, ("schema_version", "paths", "train", "world", "ks", "M", "variant", "seeds",
                      "world_per_seed"), "config")
    cfg = RunConfig()
    paths = raw.get("paths", {})
    _check_keys(paths, PATH_ENV, "paths")
    for key in PATH_ENV:
        if key in paths:
            setattr(cfg, key, str(paths[key]))
        if env.get(PATH_ENV[key]):
            setattr(cfg, key, env[PATH_ENV[key]])
    try:
        train = raw.get("train", {})
        _check_keys(train, TrainConfig.__dataclass_fields__, "train")
        cfg.train = TrainConfig(**train)
        world = dict(raw.get("world", {}))
        cfg.world_profile = world.pop("profile", "default")
        _check_keys(world, WorldConfig.__dataclass_fields__, "world")
        cfg.world = WorldConfig.profile(cfg.world_profile, **world)
        cfg.ks = tuple(int(k) for k in raw.get("ks", cfg.ks))
        cfg.M = int(raw.get("M", cfg.M))
        cfg.variant = Variant(raw.get("variant", cfg.variant.value))
        cfg.seeds = tuple(int(s) for s in raw.get("seeds", cfg.seeds))
        cfg.world_per_seed = bool(raw.get("world_per_seed", False))
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    if not cfg.ks or min(cfg.ks) < 1:
        raise ConfigError("ks must be a nonempty list of positive integers")
    if cfg.M < max(cfg.ks):
        raise ConfigError(f"M={cfg.M} is smaller than the largest K={max(cfg.ks)}")
    return cfg


def apply_flags(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seeds = (args.seed,)
        cfg.train = replace(cfg.train, seed=args.seed)
        cfg.world = replace(cfg.world, seed=args.seed)
    if getattr(args, "variant", None):
        try:
            cfg.variant = Variant(args.variant.upper())
        except ValueError:
            raise ConfigError(f"unknown variant {args.variant!r}; choose from {', '.join(v.value for v in Variant)}") from None
    if getattr(args, "k", None) is not None:
        if args.k < 1:
            raise ConfigError("--k must be >= 1")
        cfg.ks = tuple(sorted(set(cfg.ks) | {args.k}))
    if getattr(args, "m", None) is not None:
        cfg.M = args.m
    if getattr(args, "out", None):
        cfg.out = args.out
    k = getattr(args, "k", None) or max(cfg.ks)
    if cfg.M < k:
        raise ConfigError(f"K={k} exceeds candidate count M={cfg.M}")
    return cfg


# -- output helpers ---------------------------------------------------------------


def _finite(obj):
    """Replace NaN/inf with None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(_finite(obj), indent=2, sort_keys=True) + "\n")


def _load_dataset(cfg: RunConfig) -> Dataset:
    d = Path(cfg.data)
    for name in ("catalog.jsonl", "logs.jsonl", "profiles.jsonl", "world.json"):
        if not (d / name).is_file():
            raise FileNotFoundError(f"missing input file {d / name}")
    return Dataset.from_files(d)


def _load_model(cfg: RunConfig):
    try:
        return modelio.load(cfg.model_path)
    except modelio.ModelFormatError as err:
        raise ConfigError(f"{cfg.model_path}: {err}") from None


# -- commands ------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, args) -> int:
    world = generate_world(cfg.world)
    log_ = simulate_logs(world)
    summary = write_world(world, log_, cfg.out)
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    ds = _load_dataset(cfg)
    seed = cfg.train.seed
    prep = experiments.prepare(ds, seed, cfg.train)
    model, history = experiments.fit(prep, cfg.train, cfg.variant)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    modelio.save(cfg.model_path, model, {"split": seed, "init": seed, "shuffle": seed, "negatives": seed})
    write_json(out / "history.json", history.to_json())
    aucs = ", ".join(f"{a:.4f}" for a in history.val_auc)
    print(f"trained {cfg.variant.value}: epochs={len(history.val_auc)} best_epoch={history.best_epoch} "
          f"stop={history.stop_reason} val_auc=[{aucs}]")
    return EXIT_OK


def _test_setup(cfg: RunConfig, model, header, ds: Dataset):
    split_seed = int(header.get("seeds", {}).get("split", cfg.train.seed))
    tr, _, te = split_users(ds.user_ids(), seed=split_seed)
    assert not (tr & te), "test users leaked into training"
    vocab = model.config.vocab
    pidx = {uid: vocab.encode(p) for uid, p in ds.profiles.items()}
    catalog = catalog_for_model((ds.ids, ds.features), model)
    return te, pidx, catalog


def cmd_evaluate(cfg: RunConfig, args) -> int:
    model, header = _load_model(cfg)
    if args.variant and Variant(args.variant.upper()) is not model.variant:
        raise ConfigError(f"model was trained as {model.variant.value}, not {args.variant.upper()}")
    ds = _load_dataset(cfg)
    te, pidx, catalog = _test_setup(cfg, model, header, ds)
    evals, skipped = evaluate_users(model, catalog, ds.logs, te, pidx, ds.split_ts, max(cfg.ks), cfg.M)
    report = summarize(evals, model.variant.value, cfg.ks, skipped)
    baseline = random_baseline(evals, cfg.ks)
    out = Path(cfg.out)
    write_json(out / "report.json", {"report": report.to_json(), "random_baseline": baseline.to_json(),
                                     "M": cfg.M, "ks": list(cfg.ks)})
    table = REPORT_NOTE + metrics.format_table([report, baseline], [model.variant.label, "Random ranking"])
    (out / "report.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def _lookup_user(ds: Dataset, user_id):
    if user_id is None:
        raise ConfigError("--user is required")
    if user_id not in ds.profiles:
        near = difflib.get_close_matches(user_id, ds.user_ids(), n=5, cutoff=0.0)
        raise LookupError(f"unknown user {user_id!r}; nearest ids: {', '.join(near)}")
    log_ = ds.logs.get(user_id)
    history = [ds.ids[r] for r in log_.click_rows] if log_ is not None else []
    return ds.profiles[user_id], history


def cmd_recommend(cfg: RunConfig, args) -> int:
    model, _ = _load_model(cfg)
    ds = _load_dataset(cfg)
    profile, history = _lookup_user(ds, args.user)
    catalog = catalog_for_model((ds.ids, ds.features), model)
    K = args.k or 10
    for rank, rec in enumerate(recommend(history, profile, model, catalog, K, cfg.M), 1):
        w = rec.weights
        print(f"{rank}\t{rec.video_id}\t{rec.score:.6f}\t{rec.probability:.6f}\t"
              f"{w.visual:.4f},{w.text:.4f},{w.audio:.4f}")
    return EXIT_OK


def cmd_explain(cfg: RunConfig, args) -> int:
    model, _ = _load_model(cfg)
    if model.variant is not Variant.FULL:
        raise ConfigError(f"explain needs a FULL model; this one is {model.variant.value}")
    ds = _load_dataset(cfg)
    profile, history = _lookup_user(ds, args.user)
    catalog = catalog_for_model((ds.ids, ds.features), model)
    K = args.k or 10
    doc = explain(model, catalog, args.user, profile, history, K, cfg.M)
    out = Path(cfg.out)
    write_json(out / f"explain_{args.user}.json", doc)
    print(json.dumps(_finite(doc["items"]), sort_keys=True))
    return EXIT_OK


def explain(model, catalog, user_id, profile, history, K: int = 10, M: int = 200, top: int = 5) -> dict:
    """Plot-ready explanation: per-item modality weights and the encoder's
    attention over the user's last ``max_len`` clicks (chronological)."""
    recs = recommend(history, profile, model, catalog, K, M)
    items = [
        {"rank": i, "video_id": r.video_id, "score": r.score, "probability": r.probability,
         "alpha": {"visual": r.weights.visual, "text": r.weights.text, "audio": r.weights.audio},
         "dominant": r.weights.dominant}
        for i, r in enumerate(recs, 1)
    ]
    rows = history_rows(catalog, history, model.config.max_len)
    doc = {"user_id": user_id, "variant": model.variant.value, "items": items,
           "history": [], "attention": {"heads": [], "mean": []}, "top_attended": []}
    if rows.size:
        hist = rows[None, :]
        mask = np.ones_like(hist, dtype=bool)
        prof = model.config.vocab.encode(profile)[None]
        _, cache = model.user_vectors(catalog.features, hist, mask, prof, trace=True)
        probs = cache["enc"]["block"]["att"]["probs"][0][:, ::-1, ::-1]  # chronological
        mean = probs.mean(axis=0)
        chron = rows[::-1]
        received = mean.mean(axis=0)
        order = np.lexsort((np.arange(received.size), -received))[:top]
        doc["history"] = [catalog.ids[r] for r in chron]
        doc["attention"] = {"heads": probs.tolist(), "mean": mean.tolist()}
        doc["top_attended"] = [{"position": int(i), "video_id": catalog.ids[chron[i]], "weight": float(received[i])}
                               for i in order]
    return doc


def cmd_ablate(cfg: RunConfig, args) -> int:
    per_seed, timings = [], []
    truth = None
    if not cfg.world_per_seed:
        ds = _load_dataset(cfg)
        truth = experiments.load_ground_truth(cfg.data)
    for seed in cfg.seeds:
        tc = replace(cfg.train, seed=seed)
        if cfg.world_per_seed:
            world, ds = experiments.simulated(seed, cfg.world)
            prep = experiments.prepare(ds, seed, tc, world)
            entry = {"seed": seed, "bayes_auc": experiments.bayes_auc(prep), "variants": {}}
        else:
            prep = experiments.prepare(ds, seed, tc, truth)
            entry = {"seed": seed, "variants": {}}
        for v in experiments.TABLE_ORDER:
            try:
                _, res = experiments.run_variant(prep, tc, v, cfg.ks, cfg.M)
            except Exception:
                print(f"ablate: variant {v.value} failed (seed {seed})", file=sys.stderr)
                raise
            entry["variants"][v.value] = res.to_json()
            timings.append({"seed": seed, "variant": v.value, "seconds": round(res.seconds, 3)})
        per_seed.append(entry)
    rows = []
    for v in experiments.TABLE_ORDER:
        reps = [e["variants"][v.value]["report"] for e in per_seed]
        rows.append(metrics.MetricsReport(
            variant=v.value,
            ndcg={10: float(np.mean([r["ndcg"]["10"] for r in reps]))},
            precision={10: float(np.mean([r["precision"]["10"] for r in reps]))},
            auc=float(np.mean([r["auc"] for r in reps])),
        ))
    out = Path(cfg.out)
    write_json(out / "ablation.json", {"seeds": list(cfg.seeds), "per_seed": per_seed,
                                       "table": [r.to_json() for r in rows]})
    # wall times vary run to run, so they live apart from the report
    write_json(out / "timings.json", timings)
    table = REPORT_NOTE + metrics.format_table(rows, [VARIANT_LABELS[v] for v in experiments.TABLE_ORDER])
    (out / "ablation.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
    "ablate": cmd_ablate,
    "explain": cmd_explain,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmrec", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--variant", metavar="NAME")
        p.add_argument("--k", type=int, metavar="N")
        p.add_argument("--m", type=int, metavar="N")
        p.add_argument("--user", metavar="ID")
        p.add_argument("--out", metavar="DIR")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = apply_flags(load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ParseError, LookupError) as err:
        print(f"error: {err.args[0] if isinstance(err, LookupError) else err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, FloatingPointError) as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
