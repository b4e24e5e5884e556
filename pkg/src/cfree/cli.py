"""Command-line interface.

Subcommands: pretrain, probe, finetune, ablate, wlbench, bench-egonet,
validate-data. Every command takes an optional YAML config plus flag
overrides, writes its outputs under --out, and echoes the fully
resolved config there. Exit codes: 0 success, 1 runtime failure, 2
config/validation failure (argparse usage errors also exit 2).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import (RunConfig, SEED_ENV_VAR, dump_config, load_config,
                     resolve_config)
from .encoders import ConfigError, EncoderConfig
from .heads import Backbone, fit_head, write_predictions_csv
from .molgraph import MoleculeError, molecule_from_record, parse_jsonl, parse_sdf_v2000
from .objective import (PredictorConfig, derive_rng, pretrain, sample_views,
                        write_metrics_csv)
from .views import ViewConfig, bench_egonet, write_bench_csv
from .wlbench import (gen_hard_pairs, parse_pairs_file, pairs_to_molecules,
                      run_separation, write_accuracy_csv, write_pairs_file,
                      dataset_hash)

__all__ = ["main"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class CliError(Exception):
    """Runtime failure with a clean message (exit 1)."""


def _load_dataset(path: str):
    if not path:
        raise ConfigError("data.train is required for this command")
    if not os.path.exists(path):
        raise ConfigError(f"dataset not found: {path}")
    if path.endswith(".sdf"):
        return list(parse_sdf_v2000(path))
    return list(parse_jsonl(path))


def _read_split(path: str) -> list[str]:
    if not os.path.exists(path):
        raise ConfigError(f"split file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _echo(cfg: RunConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    dump_config(cfg, os.path.join(out_dir, "resolved.yaml"))


def _maybe_plot(args, out_dir: str, csv_path: str, x: str, ys: list[str]) -> None:
    if not getattr(args, "plots", False):
        return
    import csv as _csv

    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    with open(csv_path, newline="") as fh:
        rows = list(_csv.DictReader(fh))
    if not rows:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [float(r[x]) for r in rows]
    for yname in ys:
        vals = [float(r[yname]) for r in rows]
        ax.plot(xs, vals, label=yname)
    ax.set_xlabel(x)
    ax.legend()
    base = os.path.splitext(os.path.basename(csv_path))[0]
    fig.savefig(os.path.join(out_dir, f"{base}.svg"))
    plt.close(fig)


# ---- subcommands ----

def cmd_validate_data(cfg: RunConfig, args) -> int:
    path = args.data or cfg.data.train
    if not path:
        raise ConfigError("give a dataset via --data or data.train")
    if not os.path.exists(path):
        raise ConfigError(f"dataset not found: {path}")
    n_ok = 0
    n_bad = 0
    n_conf = 0
    issues: list[str] = []
    if path.endswith(".sdf"):
        try:
            for mol in parse_sdf_v2000(path):
                n_ok += 1
                n_conf += len(mol.conformers)
        except MoleculeError as exc:
            n_bad += 1
            issues.append(str(exc))
    else:
        import json
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    mol = molecule_from_record(json.loads(line), f"{path}:{line_no}")
                    n_ok += 1
                    n_conf += len(mol.conformers)
                except (ValueError, MoleculeError) as exc:
                    n_bad += 1
                    issues.append(f"{path}:{line_no}: {exc}")
    print(f"molecules: {n_ok}")
    print(f"conformers: {n_conf}")
    print(f"invalid records: {n_bad}")
    for issue in issues[:20]:
        print(f"  {issue}")
    if n_bad:
        return EXIT_CONFIG
    return EXIT_OK


def _dry_run_report(cfg: RunConfig, mols) -> None:
    total_pairs = 0
    skipped = 0
    for mol in mols:
        pairs, skip = sample_views(mol, cfg.views, derive_rng(cfg.seed, "dry", mol.id))
        total_pairs += len(pairs)
        skipped += skip
    print(f"molecules: {len(mols)}")
    print(f"view pairs per epoch: {total_pairs}")
    print(f"skipped molecules: {skipped}")
    print(f"epochs: {cfg.schedule.total_epochs}, batch_size: {cfg.schedule.batch_size}")


def cmd_pretrain(cfg: RunConfig, args) -> int:
    mols = _load_dataset(cfg.data.train)
    if cfg.encoder.mode in ("MM", "3D-only"):
        missing = [m.id for m in mols if not m.conformers]
        if missing:
            raise ConfigError(f"mode {cfg.encoder.mode} needs conformers; "
                              f"missing for {missing[:5]} "
                              f"(+{max(0, len(missing) - 5)} more)")
    _echo(cfg, cfg.out)
    if args.dry_run:
        _dry_run_report(cfg, mols)
        return EXIT_OK
    result = pretrain(mols, cfg.encoder, cfg.predictor, cfg.schedule, cfg.views,
                      cfg.seed, cfg.out,
                      log_fn=print if args.verbose else None)
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"best val loss {result.best_val_loss:.6g} at epoch {result.best_epoch}")
    _maybe_plot(args, cfg.out, result.metrics_path, "epoch",
                ["train_loss", "val_loss"])
    return EXIT_OK


def _subsample_ids(ids: list[str], fraction: int, seed: int) -> list[str]:
    if fraction >= 100:
        return ids
    n_keep = max(1, int(round(len(ids) * fraction / 100.0)))
    perm = derive_rng(seed, "label-fraction").permutation(len(ids))
    keep = sorted(perm[:n_keep])
    return [ids[i] for i in keep]


def _fit_command(cfg: RunConfig, args, freeze: bool) -> int:
    mols = _load_dataset(cfg.data.train)
    by_id = {m.id: m for m in mols}
    if len(by_id) != len(mols):
        raise ConfigError("dataset has duplicate molecule ids")
    splits = {}
    for name, path in (("train", cfg.data.split_train), ("val", cfg.data.split_val),
                       ("test", cfg.data.split_test)):
        if not path:
            raise ConfigError(f"data.split_{name} is required")
        ids = _read_split(path)
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ConfigError(f"split {name!r} lists unknown ids: {missing[:10]}")
        if name == "train":
            ids = _subsample_ids(ids, cfg.fit.label_fraction, cfg.seed)
        splits[name] = [by_id[i] for i in ids]
    ckpt_path = args.checkpoint
    if not ckpt_path or not os.path.exists(ckpt_path):
        raise ConfigError(f"checkpoint not found: {ckpt_path!r}")
    try:
        stores, meta = load_checkpoint(ckpt_path)
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc
    if "target" not in stores:
        raise ConfigError(f"{ckpt_path}: no target encoder store in checkpoint")
    enc_meta = meta.get("encoder")
    enc_cfg = EncoderConfig(**enc_meta) if enc_meta else cfg.encoder
    backbone = Backbone(params=stores["target"], cfg=enc_cfg)
    tasks = list(cfg.data.tasks)
    if not tasks:
        seen: dict[str, None] = {}
        for m in mols:
            for k in m.labels:
                seen.setdefault(k)
        tasks = list(seen)
    if not tasks:
        raise ConfigError("no tasks: dataset has no labels and data.tasks is empty")
    probe_cfg = replace(cfg.probe, freeze_backbone=freeze)
    _echo(cfg, cfg.out)
    result = fit_head(splits, probe_cfg, backbone, tasks, seed=cfg.seed,
                      epochs=cfg.fit.epochs, lr=cfg.fit.lr,
                      batch_size=cfg.fit.batch_size,
                      log_fn=print if args.verbose else None)
    metrics_path = os.path.join(cfg.out, "head_metrics.csv")
    import csv as _csv
    with open(metrics_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["task", "metric", "value"])
        for task in result.tasks:
            writer.writerow([task, result.metric_name, repr(result.metrics[task])])
    pred_path = os.path.join(cfg.out, "predictions.csv")
    write_predictions_csv(pred_path, result.predictions)
    for task in result.tasks:
        print(f"{task}: {result.metric_name} = {result.metrics[task]:.6g}")
    print(f"metrics: {metrics_path}")
    print(f"predictions: {pred_path}")
    return EXIT_OK


def cmd_probe(cfg: RunConfig, args) -> int:
    return _fit_command(cfg, args, freeze=True)


def cmd_finetune(cfg: RunConfig, args) -> int:
    return _fit_command(cfg, args, freeze=False)


def cmd_ablate(cfg: RunConfig, args) -> int:
    mols = _load_dataset(cfg.data.train)
    _echo(cfg, cfg.out)
    grid = cfg.ablate.grid
    cells = (["2D-only", "3D-only", "MM"] if grid == "modality"
             else ["none", "mlp", "transformer"])
    import csv as _csv
    rows = []
    for cell in cells:
        for seed in cfg.ablate.seeds:
            if grid == "modality":
                enc_cfg = cfg.encoder.with_mode(cell)
                pred_cfg = cfg.predictor
            else:
                enc_cfg = cfg.encoder
                pred_cfg = (PredictorConfig(kind=cell) if cell != "transformer"
                            else replace(cfg.predictor, kind="transformer"))
            cell_dir = os.path.join(cfg.out, f"{grid}-{cell}-seed{seed}")
            result = pretrain(mols, enc_cfg, pred_cfg, cfg.schedule, cfg.views,
                              int(seed), cell_dir)
            last = result.history[-1]
            rows.append({"grid": grid, "cell": cell, "seed": int(seed),
                         "train_loss": last["train_loss"],
                         "val_loss": last["val_loss"],
                         "embedding_std": last["embedding_std"]})
            print(f"{cell} seed {seed}: val {last['val_loss']:.6g} "
                  f"std {last['embedding_std']:.4g}")
    table_path = os.path.join(cfg.out, "ablate.csv")
    with open(table_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["grid", "cell", "seed", "train_loss", "val_loss",
                         "embedding_std"])
        for r in rows:
            writer.writerow([r["grid"], r["cell"], r["seed"], repr(r["train_loss"]),
                             repr(r["val_loss"]), repr(r["embedding_std"])])
        if len(cfg.ablate.seeds) > 1:
            for cell in cells:
                vals = [r["val_loss"] for r in rows if r["cell"] == cell]
                stds = [r["embedding_std"] for r in rows if r["cell"] == cell]
                writer.writerow([grid, cell, "mean", "",
                                 repr(float(np.mean(vals))),
                                 repr(float(np.mean(stds)))])
                writer.writerow([grid, cell, "std", "",
                                 repr(float(np.std(vals))),
                                 repr(float(np.std(stds)))])
    print(f"table: {table_path}")
    return EXIT_OK


def cmd_wlbench(cfg: RunConfig, args) -> int:
    _echo(cfg, cfg.out)
    wl = cfg.wlbench
    rng = derive_rng(cfg.seed, "wlbench-pairs")
    pairs = gen_hard_pairs(wl.pairs, (wl.size_min, wl.size_max), rng)
    pairs_path = os.path.join(cfg.out, "pairs.txt")
    write_pairs_file(pairs_path, pairs)
    print(f"pairs: {pairs_path} (sha256 {dataset_hash(pairs_path)[:16]})")
    result = run_separation(pairs, ks=wl.ks, seeds=wl.seeds, epochs=wl.epochs,
                            log_fn=print if args.verbose else None)
    for warning in result.coverage_warnings:
        print(f"warning: {warning}")
    table_path = os.path.join(cfg.out, "accuracy.csv")
    write_accuracy_csv(table_path, result)
    for row in result.summary:
        print(f"{row['model']}: {row['mean_accuracy']:.3f} "
              f"+/- {row['std_accuracy']:.3f} over {row['n_seeds']} seeds")
    print(f"table: {table_path}")
    return EXIT_OK


def cmd_bench_egonet(cfg: RunConfig, args) -> int:
    _echo(cfg, cfg.out)
    rows = bench_egonet(cfg.bench.sizes, cfg.bench.avg_degree, cfg.bench.trials,
                        k=cfg.bench.k, seed=cfg.seed)
    csv_path = os.path.join(cfg.out, "bench.csv")
    write_bench_csv(csv_path, rows)
    for size, k, mean_ms, std_ms, slope in rows:
        print(f"|V|={size} k={k}: {mean_ms:.4f} ms +/- {std_ms:.4f} "
              f"(slope {slope:.3e} ms per node)")
    print(f"table: {csv_path}")
    _maybe_plot(args, cfg.out, csv_path, "size", ["mean_ms"])
    return EXIT_OK


# ---- argument wiring ----

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help=f"seed (overrides {SEED_ENV_VAR} and config)")
    p.add_argument("--threads", type=int, help="thread budget (runs are single-threaded)")
    p.add_argument("--verbose", action="store_true", help="per-epoch progress")
    p.add_argument("--plots", action="store_true", help="emit SVG plots from CSV outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfree",
        description="Contrast-free multimodal pretraining on molecular graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    _add_common(p)
    p.add_argument("--data", help="dataset path (overrides data.train)")
    p.add_argument("--mode", choices=["2D-only", "3D-only", "MM"])
    p.add_argument("--dry-run", action="store_true",
                   help="validate config and report view-pair yield, then exit")
    p.set_defaults(fn=cmd_pretrain)

    for name, fn in (("probe", cmd_probe), ("finetune", cmd_finetune)):
        p = sub.add_parser(name, help=f"{name} a pretrained backbone")
        _add_common(p)
        p.add_argument("--data", help="dataset path (overrides data.train)")
        p.add_argument("--checkpoint", required=True, help="CFREE-CKPT-1 file")
        p.add_argument("--head", choices=["LIN", "DS"])
        p.add_argument("--task", choices=["classification", "regression"])
        p.add_argument("--label-fraction", type=int, choices=[1, 10, 50, 100],
                       help="percent of train ids kept")
        p.set_defaults(fn=fn)

    p = sub.add_parser("ablate", help="modality or predictor grid")
    _add_common(p)
    p.add_argument("--data", help="dataset path (overrides data.train)")
    p.add_argument("--grid", choices=["modality", "predictor"])
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("wlbench", help="1-WL expressiveness separation")
    _add_common(p)
    p.add_argument("--pairs", type=int, help="number of hard pairs")
    p.add_argument("--epochs", type=int, help="training epochs per model")
    p.set_defaults(fn=cmd_wlbench)

    p = sub.add_parser("bench-egonet", help="ego-net extraction scaling bench")
    _add_common(p)
    p.add_argument("--sizes", type=int, nargs="+", help="graph sizes |V|")
    p.add_argument("--trials", type=int, help="extractions per size")
    p.set_defaults(fn=cmd_bench_egonet)

    p = sub.add_parser("validate-data", help="parse a dataset and report issues")
    _add_common(p)
    p.add_argument("--data", help="dataset path (overrides data.train)")
    p.set_defaults(fn=cmd_validate_data)

    return parser


def _overrides_from_args(args) -> dict:
    over = {
        "seed": args.seed,
        "out": args.out,
        "threads": getattr(args, "threads", None),
    }
    if getattr(args, "data", None):
        over["data.train"] = args.data
    if getattr(args, "mode", None):
        over["encoder.mode"] = args.mode
    if getattr(args, "head", None):
        over["probe.head"] = args.head
    if getattr(args, "task", None):
        over["probe.task"] = args.task
    if getattr(args, "label_fraction", None):
        over["fit.label_fraction"] = args.label_fraction
    if getattr(args, "grid", None):
        over["ablate.grid"] = args.grid
    if getattr(args, "pairs", None):
        over["wlbench.pairs"] = args.pairs
    if getattr(args, "epochs", None):
        over["wlbench.epochs"] = args.epochs
    if getattr(args, "sizes", None):
        over["bench.sizes"] = args.sizes
    if getattr(args, "trials", None):
        over["bench.trials"] = args.trials
    return over


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = resolve_config(cfg, _overrides_from_args(args))
        return args.fn(cfg, args)
    except (ConfigError, MoleculeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CliError, CheckpointError, FloatingPointError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
