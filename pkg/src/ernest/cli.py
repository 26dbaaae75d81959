"""Command-line entry point: ingest, synth, run, ablate, reduce.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence. Machine-readable summaries go to stdout as JSON; progress logs
go to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, content_hash, load_config, output_dir_for
from .dataset import (
    Stimulus,
    fingerprint,
    generate_synthetic,
    load_cache,
    load_dataset,
    plan_split,
    save_dataset,
)
from .errors import ConfigError, DataError, ErnestError
from .evaluation import EvalReport, evaluate_rankings, reduce_new_trials
from .features import (
    build_trial_matrix,
    channel_accuracy_ranking,
    load_embedders,
    save_embedders,
    train_channel_embedders,
)
from .selection import rank_channels, read_ranking_csv, select_top_k

log = logging.getLogger("ernest")

STAGE_FILE = "stage.json"


# --------------------------------------------------------------------------
# stage checkpoints


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digest(directory: Path) -> str:
    """Digest over every file below ``directory`` except the stage marker."""
    h = hashlib.sha256()
    for p in sorted(directory.rglob("*")):
        if p.is_file() and p.name != STAGE_FILE:
            h.update(str(p.relative_to(directory)).encode() + b"\x00")
            h.update(_file_digest(p).encode())
    return h.hexdigest()


class Stages:
    """``<out>/stages/<name>-<key>/``; a stage counts as done once its marker matches its files."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def path(self, name, key) -> Path:
        return self.root / f"{name}-{key[:16]}"

    def done(self, name, key) -> bool:
        d = self.path(name, key)
        marker = d / STAGE_FILE
        if not marker.exists():
            return False
        try:
            info = json.loads(marker.read_text())
        except ValueError:
            return False
        return info.get("key") == key and info.get("digest") == tree_digest(d)

    def begin(self, name, key) -> Path:
        d = self.path(name, key)
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        return d

    def finish(self, name, key):
        d = self.path(name, key)
        (d / STAGE_FILE).write_text(json.dumps({"stage": name, "key": key, "digest": tree_digest(d)}, indent=2))


# --------------------------------------------------------------------------
# data


def load_source(cfg: PipelineConfig):
    """Dataset named by ``cfg.data`` plus the synthetic ground truth (or None)."""
    data = cfg.data
    if data.source == "synthetic":
        ds, gt = generate_synthetic(data.synthetic)
        return ds, sorted(gt)
    if data.source == "cache":
        return load_cache(data.path), None
    condition = Stimulus.parse(data.condition) if data.condition else None
    return load_dataset(data.path, condition_filter=condition, channel_blacklist=tuple(data.blacklist)), None


def _read_any(path, condition=None, blacklist=None):
    p = Path(path)
    if p.is_file():
        return load_cache(p)
    kwargs = {} if blacklist is None else {"channel_blacklist": tuple(blacklist)}
    return load_dataset(p, condition_filter=Stimulus.parse(condition) if condition else None, **kwargs)


# --------------------------------------------------------------------------
# the pipeline


def execute(cfg: PipelineConfig, out: Path, jobs: int = 1, ablation: bool = False) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.yaml").write_text(cfg.dump())
    stages = Stages(out / "stages")

    dataset, ground_truth = load_source(cfg)
    C = dataset.C
    bad = [K for K in cfg.evaluation.K_list if int(K) > C]
    if bad:
        raise ConfigError(f"K_list has K > C={C}: {bad}")
    split = plan_split(dataset, cfg.split.n_test_subjects, cfg.split_seed)
    train = dataset.select_subjects(split.train_subject_ids)
    test = dataset.select_subjects(split.test_subject_ids)
    data_key = fingerprint(dataset)
    split_ids = {"train": sorted(split.train_subject_ids), "test": sorted(split.test_subject_ids)}
    log.info("data: %d trials, %d channels; %d train / %d test subjects",
             len(dataset), C, len(split.train_subject_ids), len(split.test_subject_ids))

    # embedders -------------------------------------------------------------
    key = content_hash("embedders", cfg.embedder, data_key, split_ids["train"], cfg.master_seed)
    emb_dir = stages.path("embedders", key)
    if not stages.done("embedders", key):
        log.info("stage embedders: training %d channel embedders", C)
        stages.begin("embedders", key)
        embedders = train_channel_embedders(train, cfg.embedder, cfg.master_seed, jobs=jobs)
        save_embedders(embedders, emb_dir, extra={"master_seed": cfg.master_seed})
        stages.finish("embedders", key)
    else:
        log.info("stage embedders: reusing %s", emb_dir.name)
    # downstream always sees the persisted bundle, resumed or not
    embedders = load_embedders(emb_dir)
    emb_key = tree_digest(emb_dir)

    # channel selection -----------------------------------------------------
    key = content_hash("dsaee", cfg.dsaee, emb_key, data_key, split_ids["train"], cfg.master_seed)
    sel_dir = stages.path("dsaee", key)
    if not stages.done("dsaee", key):
        log.info("stage dsaee: %d components", cfg.dsaee.B)
        stages.begin("dsaee", key)
        T = build_trial_matrix(embedders, train, jobs=jobs)
        ranking, R = rank_channels(T, cfg.dsaee, cfg.master_seed, jobs=jobs)
        ranking.to_csv(sel_dir / "ranking.csv", dataset.channel_names)
        np.save(sel_dir / "re_matrix.npy", R.values)
        np.save(sel_dir / "re_labels.npy", R.row_labels)
        stages.finish("dsaee", key)
    else:
        log.info("stage dsaee: reusing %s", sel_dir.name)
    ranking = read_ranking_csv(sel_dir / "ranking.csv")
    rankings = {"dsaee": ranking.order}
    ablation_ranking = None
    if ablation:
        ablation_ranking = channel_accuracy_ranking(embedders)
        rankings["ablation"] = ablation_ranking.order

    # evaluation ------------------------------------------------------------
    ev = cfg.evaluation
    key = content_hash("evaluation", ev, sorted(rankings.items()), emb_key, data_key, split_ids["test"],
                       cfg.master_seed)
    ev_dir = stages.path("evaluation", key)
    if not stages.done("evaluation", key):
        log.info("stage evaluation: K=%s, classifiers=%s", list(ev.K_list), list(ev.classifiers))
        stages.begin("evaluation", key)
        T_test = build_trial_matrix(embedders, test, jobs=jobs)
        report = evaluate_rankings(T_test, rankings, ev.K_list, ev.classifiers, ev.folds,
                                   cfg.master_seed, ev.regularization, ev.cv_mode, jobs)
        (ev_dir / "eval.json").write_text(report.to_json())
        (ev_dir / "eval.csv").write_text(report.to_csv())
        stages.finish("evaluation", key)
    else:
        log.info("stage evaluation: reusing %s", ev_dir.name)
    report = EvalReport.from_dict(json.loads((ev_dir / "eval.json").read_text()))

    # published artifacts ---------------------------------------------------
    shutil.copyfile(sel_dir / "ranking.csv", out / "ranking.csv")
    shutil.copyfile(ev_dir / "eval.json", out / "eval.json")
    shutil.copyfile(ev_dir / "eval.csv", out / "eval.csv")
    if ablation_ranking is not None:
        ablation_ranking.to_csv(out / "ablation_ranking.csv", dataset.channel_names)
    bundle = out / "embedders"
    if bundle.exists():
        shutil.rmtree(bundle)
    shutil.copytree(emb_dir, bundle, ignore=shutil.ignore_patterns(STAGE_FILE))
    selections = {arm: {str(K): list(order[: int(K)]) for K in ev.K_list} for arm, order in rankings.items()}
    (out / "selection.json").write_text(json.dumps(selections, indent=2, sort_keys=True))

    summary = {
        "output_dir": str(out),
        "ranking": ranking.order,
        "selections": selections,
        "results": {arm: {kind: {str(K): c["auroc_mean"] for K, c in cells.items()}
                          for kind, cells in kinds.items()} for arm, kinds in report.arms.items()},
    }
    if ground_truth is not None:
        summary["ground_truth"] = ground_truth
    return summary


# --------------------------------------------------------------------------
# commands


def _config(args) -> PipelineConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append((["master_seed"], args.seed))
    if getattr(args, "out", None) is not None:
        overrides.append((["output_dir"], str(args.out)))
    if getattr(args, "K", None):
        overrides.append((["evaluation", "K_list"], _int_list(args.K)))
    return load_config(args.config, overrides)


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def cmd_ingest(args):
    ds = load_dataset(args.root, Stimulus.parse(args.condition) if args.condition else None,
                      tuple(args.blacklist.split(",")) if args.blacklist is not None else ("X", "Y", "nd"))
    save_dataset(ds, args.out)
    return {"cache": str(args.out), **ds.summary()}


def cmd_synth(args):
    cfg = _config(args)
    ds, gt = generate_synthetic(cfg.data.synthetic)
    save_dataset(ds, args.cache)
    return {"cache": str(args.cache), "ground_truth": sorted(gt), **ds.summary()}


def cmd_run(args, ablation=False):
    cfg = _config(args)
    out = output_dir_for(cfg, "ablate" if ablation else "run")
    print(cfg.dump(), file=sys.stderr)
    return execute(cfg, out, jobs=args.jobs, ablation=ablation)


def cmd_reduce(args):
    embedders = load_embedders(args.embedders)
    if args.channels:
        selection = _int_list(args.channels)
    elif args.ranking:
        if args.K is None:
            raise ConfigError("--ranking needs --K")
        selection = select_top_k(read_ranking_csv(args.ranking), int(args.K))
    else:
        raise ConfigError("give --channels or --ranking with --K")
    data = _read_any(args.data, args.condition)
    A = reduce_new_trials(embedders, selection, data, jobs=args.jobs)
    A.to_csv(args.out, channel_names=list(data.channel_names))
    return {"output": str(args.out), "rows": len(A.labels), "K": A.K, "width": A.values.shape[1],
            "channels": list(A.selected_channels)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ernest", description="EEG channel selection and classification pipeline")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. dsaee.B=10 (repeatable)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--jobs", type=int, default=1, help="worker threads (results do not depend on it)")

    sp = sub.add_parser("ingest", help="parse a UCI EEG directory into a dataset cache")
    sp.add_argument("root")
    sp.add_argument("--out", required=True, help="cache file to write")
    sp.add_argument("--condition", help="keep one stimulus condition (S1_obj, S2_match, S2_nomatch)")
    sp.add_argument("--blacklist", help="comma-separated channel names to drop (default X,Y,nd)")

    sp = sub.add_parser("synth", help="write a planted-channel synthetic dataset cache")
    sp.add_argument("cache", help="cache file to write")
    sp.add_argument("--config")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")

    for name, helptext in (("run", "full pipeline"), ("ablate", "full pipeline plus the accuracy-ranked arm")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, "output directory")
        sp.add_argument("--K", help="comma-separated K list")

    sp = sub.add_parser("reduce", help="embed new trials on selected channels into a CSV")
    sp.add_argument("--embedders", required=True, help="embedder bundle directory")
    sp.add_argument("--data", required=True, help="dataset cache file or UCI directory")
    sp.add_argument("--ranking", help="ranking CSV from a run")
    sp.add_argument("--K", type=int)
    sp.add_argument("--channels", help="explicit comma-separated channel indices")
    sp.add_argument("--condition")
    sp.add_argument("--out", required=True, help="CSV to write")
    sp.add_argument("--jobs", type=int, default=1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    handlers = {
        "ingest": cmd_ingest,
        "synth": cmd_synth,
        "run": cmd_run,
        "ablate": lambda a: cmd_run(a, ablation=True),
        "reduce": cmd_reduce,
    }
    try:
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be at least 1")
        result = handlers[args.command](args)
    except ErnestError as exc:
        print(f"ernest {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"ernest {args.command}: DataError: {exc}", file=sys.stderr)
        return DataError.exit_code
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
