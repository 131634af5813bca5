"""Command-line surface for batch experiment runs.

Every artifact-producing command creates a fresh run directory named
<verb>-<seed>-<UTC timestamp> under --out and writes a resolved-config
snapshot next to its outputs.  Flag overrides (--set key=value) win over
the config file; SIGNL_SEED wins over both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import augment, config, metrics, train
from .featio import (ConfigError, FormatError, SynthConfig, gen_synthetic,
                     read_manifest, sample_limited_labels, write_manifest)


class UsageError(ValueError):
    pass


def _load_cfg(args):
    cfg = config.load(args.config, args.set or ())
    env_seed = os.environ.get("SIGNL_SEED")
    if env_seed is not None:
        cfg["train.seed"] = int(env_seed)
    return cfg


def _run_dir(args, cfg, verb):
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    path = Path(args.out) / f"{verb}-{cfg['train.seed']}-{stamp}"
    if path.exists():
        raise UsageError(f"run directory {path} already exists; refusing to overwrite")
    path.mkdir(parents=True)
    config.dump(cfg, path / "config.resolved.cfg")
    return path


def _manifest(cfg):
    path = cfg["data.manifest"] or str(Path(cfg["data.dir"]) / "manifest.jsonl")
    if not Path(path).exists():
        raise UsageError(f"manifest not found: {path}")
    return read_manifest(path)


def cmd_gen_data(args, cfg):
    synth = SynthConfig(F=cfg["data.f"], T=cfg["data.t"],
                        n_per_split={"train": cfg["data.n_train"],
                                     "dev": cfg["data.n_dev"],
                                     "eval": cfg["data.n_eval"]},
                        n_attack_types=cfg["data.n_attack_types"],
                        artifact_strength=cfg["data.artifact_strength"],
                        seed=cfg["train.seed"])
    entries = gen_synthetic(synth, cfg["data.dir"])
    run = _run_dir(args, cfg, "gen-data")
    (run / "summary.json").write_text(json.dumps(
        {"corpus_dir": cfg["data.dir"], "n_entries": len(entries)}))
    print(f"wrote {len(entries)} clips to {cfg['data.dir']}")
    return 0


def cmd_sample_labels(args, cfg):
    entries = _manifest(cfg)
    subset = sample_limited_labels(entries, cfg["train.label_fraction"], cfg["train.seed"])
    run = _run_dir(args, cfg, "sample-labels")
    write_manifest(subset, run / "manifest.jsonl")
    print(f"kept {len(subset)} of {len(entries)} entries -> {run / 'manifest.jsonl'}")
    return 0


def cmd_pretrain(args, cfg):
    entries = _manifest(cfg)
    run = _run_dir(args, cfg, "pretrain")
    path, trace = train.pretrain(cfg, train.strip_labels(entries), cfg["data.dir"], run)
    print(f"checkpoint: {path} (final dev metric {trace[-1]['dev_metric']:.4f})")
    return 0


def cmd_finetune(args, cfg):
    entries = _manifest(cfg)
    checkpoint = cfg["paths.checkpoint"] or None
    if checkpoint is not None and not Path(checkpoint).exists():
        raise UsageError(f"checkpoint not found: {checkpoint}")
    run = _run_dir(args, cfg, "finetune")
    path, trace, dev_eer = train.finetune(cfg, entries, cfg["data.dir"], run, checkpoint)
    print(f"model: {path} (best dev EER {dev_eer:.4f})")
    return 0


def cmd_eval(args, cfg):
    entries = _manifest(cfg)
    checkpoint = cfg["paths.checkpoint"]
    if not checkpoint or not Path(checkpoint).exists():
        raise UsageError(f"checkpoint not found: {checkpoint!r}")
    model = train.load_model(cfg, checkpoint, head="cls")
    run = _run_dir(args, cfg, "eval")
    score_set, report = train.evaluate(model, entries, cfg["data.dir"])
    score_set.to_jsonl(run / "scores.jsonl")
    (run / "eer.json").write_text(report.to_json())
    print(f"eval EER {report.eer:.4f} at threshold {report.threshold:.4f}")
    return 0


def cmd_collapse(args, cfg):
    entries = _manifest(cfg)
    checkpoint = cfg["paths.checkpoint"]
    if not checkpoint or not Path(checkpoint).exists():
        raise UsageError(f"checkpoint not found: {checkpoint!r}")
    model = train.load_model(cfg, checkpoint, head="proj")
    clips = train.strip_labels(entries, "train")[:200]
    feats = train.load_features(clips, cfg["data.dir"])
    samples = [(cid, feats[cid]) for cid, _ in clips]
    report = metrics.collapse_report(train.collapse_pair_forward(model), samples)
    run = _run_dir(args, cfg, "collapse")
    (run / "collapse.json").write_text(json.dumps(report))
    print(f"pair similarity before projection {report['before']:.4f}, "
          f"after {report['after']:.4f} ({report['n_pairs']} pairs)")
    return 0


def cmd_gradcheck(args, cfg):
    from .gradcheck import run_gradcheck
    worst = run_gradcheck()
    print(f"max relative gradient error: {worst:.3e}")
    return 0 if worst <= 1e-4 else 2


def cmd_ablation_grid(args, cfg):
    entries = _manifest(cfg)
    run = _run_dir(args, cfg, "ablation-grid")
    rows = run_grid(cfg, entries, run)
    table = run / "grid.tsv"
    with open(table, "w") as fh:
        fh.write("name\ted\tgn\tfm\tdev_metric\teval_eer\n")
        for r in rows:
            fh.write("{name}\t{ed}\t{gn}\t{fm}\t{dev_metric:.6f}\t{eval_eer:.6f}\n".format(**r))
    print(table.read_text(), end="")
    return 0


def run_grid(cfg, entries, out_dir):
    """Pretrain + finetune + eval for each of the 8 augmentation combinations."""
    out_dir = Path(out_dir)
    rows = []
    for name, ed, gn, fm in augment.GRID:
        sub = dict(cfg)
        sub["aug.ed"], sub["aug.gn"], sub["aug.fm"] = ed, gn, fm
        combo_dir = out_dir / name
        ck, pre_trace = train.pretrain(sub, train.strip_labels(entries),
                                       sub["data.dir"], combo_dir)
        _, _, dev_eer = train.finetune(sub, entries, sub["data.dir"], combo_dir, ck)
        model = train.load_model(sub, combo_dir / "model.sigc", head="cls")
        _, report = train.evaluate(model, entries, sub["data.dir"])
        rows.append({"name": name, "ed": "Y" if ed else "-", "gn": "Y" if gn else "-",
                     "fm": "Y" if fm else "-", "dev_metric": dev_eer,
                     "eval_eer": report.eer})
    return rows


COMMANDS = {
    "gen-data": cmd_gen_data,
    "sample-labels": cmd_sample_labels,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "collapse": cmd_collapse,
    "gradcheck": cmd_gradcheck,
    "ablation-grid": cmd_ablation_grid,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="signl",
        description="Spatio-temporal vision-graph non-contrastive learning kit.",
        epilog="Precedence: SIGNL_SEED env var > --set overrides > config file > defaults.")
    parser.add_argument("verb", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable; wins over the file)")
    parser.add_argument("--out", default="runs", help="directory for run outputs")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_cfg(args)
        return COMMANDS[args.verb](args, cfg)
    except (ConfigError, FormatError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
