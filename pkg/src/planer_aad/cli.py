"""Command-line pipeline: ``aad <subcommand> --config run.json [overrides]``.

Subcommands: preprocess, train, score, eval, report.

Config file (JSON)::

    {
      "dataset_root": "data/",          # clip paths in the manifest are relative to this
      "manifest": "data/manifest.csv",
      "cache_dir": "cache/",            # optional; falls back to $AAD_CACHE_DIR, then <output_dir>/cache
      "output_dir": "runs/",
      "model": "skip_cae",              # one of ARCHITECTURES or "iforest"
      "seed": 0,
      "features": {...FeatureConfig fields...},
      "train": {...TrainConfig fields...},
      "iforest": {"n_trees": 100, "subsample": 256}
    }

Relative paths are resolved against the config file's directory. Any field
can be overridden with ``--set section.key=value`` (values parsed as JSON
when possible).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .dataset import DatasetError, load_clip, load_manifest, split_train_val
from .evaluation import (
    EvaluationError,
    ScoreRecord,
    export_artifacts,
    load_report,
    per_type_report,
    read_scores,
    write_scores,
)
from .features import FeatureConfig, cache_is_fresh, log_mel_spectrogram, mel_filterbank, read_cached, write_cached
from .iforest import fit_iforest, iforest_scores
from .models import ARCHITECTURES, CheckpointError, anomaly_scores, build_model, load_model, reconstruct, save_model, train_model
from .nn.optim import TrainConfig

log = logging.getLogger("aad")

CACHE_ENV = "AAD_CACHE_DIR"
MODELS = tuple(ARCHITECTURES) + ("iforest",)


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    dataset_root: Path
    manifest: Path
    output_dir: Path
    cache_dir: Path | None = None
    model: str = "skip_cae_transformer"
    seed: int = 0
    features: FeatureConfig = dataclasses.field(default_factory=FeatureConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    iforest: dict = dataclasses.field(default_factory=lambda: {"n_trees": 100, "subsample": 256})

    @property
    def cache(self) -> Path:
        if self.cache_dir is not None:
            return self.cache_dir
        env = os.environ.get(CACHE_ENV)
        return Path(env) if env else self.output_dir / "cache"

    @property
    def model_dir(self) -> Path:
        return self.output_dir / self.model

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {', '.join(MODELS)}")
        for name in ("dataset_root", "manifest"):
            if not getattr(self, name).exists():
                raise ConfigError(f"{name} does not exist: {getattr(self, name)}")
        return self

    def to_dict(self):
        return {
            "dataset_root": str(self.dataset_root),
            "manifest": str(self.manifest),
            "cache_dir": str(self.cache),
            "output_dir": str(self.output_dir),
            "model": self.model,
            "seed": self.seed,
            "features": self.features.to_dict(),
            "train": self.train.to_dict(),
            "iforest": dict(self.iforest),
        }


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, assignments) -> dict:
    raw = json.loads(json.dumps(raw))
    for item in assignments or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value: {item!r}")
        *parents, leaf = key.split(".")
        node = raw
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = _parse_value(value)
    return raw


def config_from_dict(raw: dict, base: Path = Path(".")) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("dataset_root", "manifest", "output_dir"):
        if key not in raw:
            raise ConfigError(f"config is missing {key!r}")

    def path(v):
        p = Path(v)
        return p if p.is_absolute() else base / p

    try:
        features = FeatureConfig(**raw.get("features", {}))
        tr = dict(raw.get("train", {}))
        if "betas" in tr:
            tr["betas"] = tuple(tr["betas"])
        tr.setdefault("seed", raw.get("seed", 0))
        train = TrainConfig(**tr)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    iforest = {"n_trees": 100, "subsample": 256, **raw.get("iforest", {})}
    return RunConfig(
        dataset_root=path(raw["dataset_root"]),
        manifest=path(raw["manifest"]),
        output_dir=path(raw["output_dir"]),
        cache_dir=path(raw["cache_dir"]) if raw.get("cache_dir") else None,
        model=raw.get("model", "skip_cae_transformer"),
        seed=int(raw.get("seed", 0)),
        features=features,
        train=train,
        iforest=iforest,
    )


def load_config(path, overrides=(), **flags) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    sets = list(overrides)
    # the seed flag drives both the model init and the training shuffle
    if flags.get("seed") is not None:
        sets += [f"seed={flags['seed']}", f"train.seed={flags['seed']}"]
    if flags.get("epochs") is not None:
        sets.append(f"train.epochs={flags['epochs']}")
    if flags.get("model") is not None:
        sets.append(f"model={json.dumps(flags['model'])}")
    return config_from_dict(apply_overrides(raw, sets), path.parent).validate()


def _dump_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- subcommands ------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig, jobs=1) -> int:
    manifest = load_manifest(cfg.manifest, cfg.dataset_root, check_files=False)
    cache = cfg.cache
    cache.mkdir(parents=True, exist_ok=True)
    fb = mel_filterbank(cfg.features)

    def work(cid):
        src = manifest.path_of(cid)
        if cache_is_fresh(cache, cid, src, cfg.features):
            return "skipped"
        clip = load_clip(src, cid, cfg.features.sample_rate)
        write_cached(cache, log_mel_spectrogram(clip, cfg.features, fb), cfg.features)
        return "written"

    failures, counts = [], {"written": 0, "skipped": 0}

    def guarded(cid):
        try:
            return cid, work(cid), None
        except (OSError, ValueError) as exc:
            return cid, None, exc

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for cid, status, exc in pool.map(guarded, manifest.ids()):
            if exc is None:
                counts[status] += 1
            else:
                failures.append((cid, exc))
    print(f"preprocess: {counts['written']} written, {counts['skipped']} up to date, {len(failures)} failed")
    for cid, exc in failures:
        print(f"  FAILED {cid}: {exc}")
    return 1 if failures else 0


def _load_features(cache, ids):
    feats, missing = {}, []
    for cid in ids:
        try:
            feats[cid] = read_cached(cache, cid).values
        except (OSError, ValueError):
            missing.append(cid)
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise ConfigError(f"{len(missing)} clip(s) missing from cache {cache}: {shown} (run 'aad preprocess')")
    return feats


def cmd_train(cfg: RunConfig) -> int:
    if cfg.model == "iforest":
        raise ConfigError("iforest has no training step; 'aad score' fits it on the training cache")
    manifest = load_manifest(cfg.manifest, cfg.dataset_root, check_files=False)
    train_ids, val_ids = split_train_val(manifest, cfg.train.val_fraction, cfg.seed)
    if not val_ids:
        # small runs: the floor rule leaves nothing to validate on, so borrow one shuffled clip
        log.warning("val_fraction %.3g of %d clips is empty; holding out one clip",
                    cfg.train.val_fraction, len(train_ids))
        train_ids, val_ids = train_ids[1:], train_ids[:1]
    feats = _load_features(cfg.cache, train_ids + val_ids)
    input_hw = feats[train_ids[0]].shape
    model = build_model(cfg.model, tuple(input_hw), seed=cfg.seed)
    model, history = train_model(model, train_ids, val_ids, feats, cfg.train)
    out = cfg.model_dir
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.ckpt", model, seed=cfg.seed, epoch=history.best_epoch,
               best_val_loss=history.best_val_loss, extra={"feature_config": cfg.features.to_dict()})
    history.to_csv(out / "history.csv")
    _dump_json(out / "config.json", cfg.to_dict())
    print(f"train: {cfg.model} best epoch {history.best_epoch} val {history.best_val_loss:.6g} "
          f"({history.n_epochs} epochs{', stopped early' if history.stopped_early else ''}) -> {out / 'model.ckpt'}")
    return 0


def _eval_ids(manifest, clips_file):
    if clips_file is None:
        return manifest.ids("eval")
    ids = [ln.strip() for ln in Path(clips_file).read_text().splitlines() if ln.strip()]
    for cid in ids:
        if cid not in manifest:
            raise ConfigError(f"no label for scored clip {cid!r} in {manifest.root_path or 'manifest'}")
    return ids


def cmd_score(cfg: RunConfig, checkpoint=None, clips_file=None, out=None) -> int:
    manifest = load_manifest(cfg.manifest, cfg.dataset_root, check_files=False)
    ids = _eval_ids(manifest, clips_file)
    if not ids:
        raise ConfigError("nothing to score: no eval clips")
    data = np.stack([_load_features(cfg.cache, ids)[cid] for cid in ids])
    if cfg.model == "iforest":
        train_ids = manifest.ids("train")
        train = np.stack([v for v in _load_features(cfg.cache, train_ids).values()])
        forest = fit_iforest(train.reshape(len(train), -1), n_trees=int(cfg.iforest["n_trees"]),
                             subsample=int(cfg.iforest["subsample"]), seed=cfg.seed)
        scores = iforest_scores(forest, data.reshape(len(data), -1))
    else:
        ckpt = Path(checkpoint) if checkpoint else cfg.model_dir / "model.ckpt"
        model, _ = load_model(ckpt, expect_architecture=cfg.model)
        if tuple(model.input_hw) != data.shape[1:]:
            raise CheckpointError(f"{ckpt}: model expects {tuple(model.input_hw)} inputs, features are {data.shape[1:]}")
        scores = anomaly_scores(model, data)
    records = []
    for cid, s in zip(ids, scores):
        label = manifest[cid]
        records.append(ScoreRecord(cid, float(s), label.is_anomaly, label.anomaly_type))
    path = Path(out) if out else cfg.model_dir / "scores.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_scores(path, records)
    print(f"score: {len(records)} clips -> {path}")
    return 0


def _model_name(path: Path) -> str:
    return path.parent.name if path.name == "scores.csv" else path.stem


def cmd_eval(score_files, out_dir, per_type=False, p=0.1, names=None) -> int:
    from .plotting import plot_roc_curves

    paths = [Path(s) for s in score_files]
    names = list(names) if names else [_model_name(s) for s in paths]
    if len(set(names)) != len(names):
        raise ConfigError(f"model names must be distinct, got {names} (use --names)")
    out_dir = Path(out_dir)
    reports = []
    for path, name in zip(paths, names):
        report = per_type_report(read_scores(path), p=p, model=name)
        if not per_type:
            report.per_type = {}
        export_artifacts(report, out_dir / name)
        plot_roc_curves([report], out_dir / name / "roc.png", title=name)
        reports.append(report)
        print(f"eval: {name} AUC {report.auc:.4f} pAUC {report.pauc:.4f} -> {out_dir / name}")
        if per_type:
            for t, m in sorted(report.per_type.items()):
                print(f"    {t:<16} AUC {m['auc']:.4f} pAUC {m['pauc']:.4f} (n={m['n_pos']})")
    if len(reports) > 1:
        write_comparison(out_dir / "comparison.csv", reports)
        plot_roc_curves(reports, out_dir / "comparison.png")
        print(format_comparison(reports))
    return 0


def _types(reports):
    return sorted({t for r in reports for t in r.per_type})


def write_comparison(path, reports):
    types = _types(reports)
    lines = [",".join(["model", "auc", "pauc"] + [f"{t}_{m}" for t in types for m in ("auc", "pauc")])]
    for r in reports:
        cells = [r.model, repr(r.auc), repr(r.pauc)]
        for t in types:
            m = r.per_type.get(t)
            cells += [repr(m["auc"]), repr(m["pauc"])] if m else ["", ""]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def format_comparison(reports) -> str:
    width = max(len(r.model) for r in reports)
    rows = [f"{'model':<{width}}  {'AUC':>6}  {'pAUC':>6}"]
    rows += [f"{r.model:<{width}}  {r.auc:6.4f}  {r.pauc:6.4f}" for r in reports]
    return "\n".join(rows)


def cmd_report(cfg: RunConfig, eval_dir=None, n_examples=2) -> int:
    """Render figures from existing eval reports and checkpoints."""
    from .models.training import TrainHistory
    from .plotting import plot_history, plot_reconstructions, plot_roc_curves, plot_type_table

    eval_dir = Path(eval_dir) if eval_dir else cfg.output_dir / "eval"
    out = cfg.output_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    reports = [load_report(d) for d in sorted(eval_dir.iterdir()) if (d / "report.json").exists()] \
        if eval_dir.is_dir() else []
    if not reports:
        raise ConfigError(f"no report.json under {eval_dir} (run 'aad eval' first)")
    written = [out / "roc.png"]
    plot_roc_curves(reports, written[0])
    if any(r.per_type for r in reports):
        written.append(out / "per_type.png")
        plot_type_table(reports, written[-1])
        write_comparison(out / "per_type.csv", reports)

    manifest = load_manifest(cfg.manifest, cfg.dataset_root, check_files=False)
    labels = [manifest[c] for c in manifest.ids("eval")]
    picks = [lab.clip_id for lab in labels if not lab.is_anomaly][:n_examples]
    picks += [lab.clip_id for lab in labels if lab.is_anomaly][:n_examples]
    models = {}
    for arch in ARCHITECTURES:
        ckpt = cfg.output_dir / arch / "model.ckpt"
        if ckpt.exists():
            models[arch] = load_model(ckpt, expect_architecture=arch)[0]
        hist = cfg.output_dir / arch / "history.csv"
        if hist.exists():
            rows = np.loadtxt(hist, delimiter=",", skiprows=1, ndmin=2)
            h = TrainHistory(list(rows[:, 1]), list(rows[:, 2]), list(rows[:, 3]), int(np.argmin(rows[:, 2])))
            written.append(out / f"history_{arch}.png")
            plot_history(h, written[-1], title=arch)
    if models and picks:
        feats = _load_features(cfg.cache, picks)
        for cid in picks:
            recons = {name: reconstruct(m, feats[cid]) for name, m in models.items()}
            written.append(out / f"recon_{cid}.png")
            plot_reconstructions(feats[cid], recons, written[-1],
                                 title=f"{cid} ({manifest[cid].anomaly_type})")
    for w in written:
        print(f"report: {w}")
    return 0


# -- entry point ------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="aad", description="Planer acoustic anomaly detection pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, required=True):
        p.add_argument("--config", required=required, help="run config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. train.batch_size=8")
        p.add_argument("--dump-config", metavar="PATH", help="write the effective config as JSON")
        return p

    p = with_config(sub.add_parser("preprocess", help="compute and cache log-mel features"))
    p.add_argument("--jobs", type=int, default=1)

    p = with_config(sub.add_parser("train", help="train one model"))
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)

    p = with_config(sub.add_parser("score", help="score eval clips into scores.csv"))
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--clips", help="file listing clip ids to score (default: eval split)")
    p.add_argument("--out", help="output CSV (default: <output_dir>/<model>/scores.csv)")

    p = with_config(sub.add_parser("eval", help="metrics and ROC for one or more scores.csv"), required=False)
    p.add_argument("scores", nargs="+")
    p.add_argument("--out", help="output directory (default: <output_dir>/eval, or ./eval)")
    p.add_argument("--names", nargs="+", help="model names, one per scores file")
    p.add_argument("--per-type", action="store_true")
    p.add_argument("--p", type=float, default=0.1, help="max FPR for pAUC")

    p = with_config(sub.add_parser("report", help="render figures from eval results"))
    p.add_argument("--eval-dir")
    p.add_argument("--examples", type=int, default=2)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = None
        if args.config:
            flags = {k: getattr(args, k, None) for k in ("seed", "epochs", "model")}
            cfg = load_config(args.config, args.set, **flags)
            if args.dump_config:
                _dump_json(args.dump_config, cfg.to_dict())
        if args.command == "preprocess":
            return cmd_preprocess(cfg, args.jobs)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "score":
            return cmd_score(cfg, args.checkpoint, args.clips, args.out)
        if args.command == "eval":
            out = args.out or (cfg.output_dir / "eval" if cfg else "eval")
            return cmd_eval(args.scores, out, args.per_type, args.p, args.names)
        return cmd_report(cfg, args.eval_dir, args.examples)
    except (ConfigError, DatasetError, EvaluationError, CheckpointError, OSError, ValueError) as exc:
        print(f"aad {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
