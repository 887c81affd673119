"""Command-line pipeline: synth, build-dataset, train, eval, predict, sweep.

Verbs communicate only through files (WFRS scene stacks, WFDS datasets,
WFCK checkpoints, CSV reports, PGM maps), so each stage can be rerun and
tested in isolation. Every verb is deterministic given its config and
seed. Exit codes: 0 success, 2 config error, 3 missing input file,
4 task/architecture mismatch, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics, nn, raster, sampler, synth, training
from .config import ConfigError, RunConfig, apply_sweep_point, load_config
from .models import ModelConfig, build
from .sampler import SPLITS

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_MISMATCH = 4

_INIT_STREAM = 3

IMAGE_ARCHS = ("autoencoder", "unet")
SEQUENCE_ARCHS = ("ae_lstm", "unet_lstm")


class TaskArchMismatch(Exception):
    """Sequence tasks need LSTM models and image tasks need image models."""


def _check_task_arch(task, arch):
    if task == "sequence" and arch not in SEQUENCE_ARCHS:
        raise TaskArchMismatch(
            f"task 'sequence' needs an LSTM model, got {arch!r}")
    if task in ("daily", "aggregated") and arch not in IMAGE_ARCHS:
        raise TaskArchMismatch(
            f"task {task!r} needs an image model, got {arch!r}")


def _scenes_dir(cfg, out):
    return Path(cfg.run["stacks"]) if cfg.run["stacks"] else out / "scenes"


def _data_dir(cfg, out):
    return Path(cfg.run["data"]) if cfg.run["data"] else out


def _load_stacks(scenes_dir):
    paths = sorted(Path(scenes_dir).glob("*.wfrs"))
    if not paths:
        raise FileNotFoundError(f"no .wfrs files in {scenes_dir}")
    return [raster.read_stack(p) for p in paths]


def _dataset_path(data_dir, task, split):
    return Path(data_dir) / f"{task}_{split}.wfds"


def _read_split(data_dir, task, split):
    path = _dataset_path(data_dir, task, split)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    samples, file_task = sampler.read_dataset(path)
    # empty files carry no per-sample task code
    if samples and file_task != task:
        raise TaskArchMismatch(f"{path} holds task {file_task!r}, expected {task!r}")
    return samples


def _model_from_checkpoint(path):
    path = Path(path)
    sidecar = path.with_suffix(".json")
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    if not sidecar.exists():
        raise FileNotFoundError(f"checkpoint sidecar not found: {sidecar}")
    meta = json.loads(sidecar.read_text())
    cfg = ModelConfig(arch=meta["arch"], filter_scheme=tuple(meta["filter_scheme"]),
                      in_channels=meta["in_channels"], tile=meta["tile"],
                      lstm_hidden=meta["lstm_hidden"])
    model = build(cfg, np.random.default_rng(0))
    model.load_params(nn.load_checkpoint(path))
    return model


def cmd_synth(cfg: RunConfig, out: Path) -> int:
    scenes = synth.gen_scenes(cfg.synth)
    scenes_dir = _scenes_dir(cfg, out)
    scenes_dir.mkdir(parents=True, exist_ok=True)
    for stack in scenes:
        raster.write_stack(stack, scenes_dir / f"{stack.date.isoformat()}.wfrs")
    print(f"synth: wrote {len(scenes)} stacks of {cfg.synth.grid[0]}x"
          f"{cfg.synth.grid[1]} to {scenes_dir}")
    return EXIT_OK


def cmd_build_dataset(cfg: RunConfig, out: Path) -> int:
    stacks = _load_stacks(_scenes_dir(cfg, out))
    scfg = cfg.sampler
    split_map = sampler.assign_splits(
        [s.date for s in stacks], scfg,
        np.random.default_rng([scfg.rng_seed, sampler._SPLIT_STREAM]))
    train_stacks = [s for s in stacks if split_map[s.date] == "train"]
    if not train_stacks:
        raise ValueError("no stacks fall in the train split; need more days")
    stats = raster.compute_stats(train_stacks)
    normalized = [raster.normalize(s, stats) for s in stacks]

    samples = sampler.build_dataset(normalized, scfg, cfg.task)
    subsets = sampler.split_subsets(samples)
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    for split in SPLITS:
        path = _dataset_path(out, cfg.task, split)
        sampler.write_dataset(subsets[split], cfg.task, path)
        counts[split] = len(subsets[split])
    stats_payload = {
        "channels": list(stats.channel_names),
        "mean": [float(v) for v in stats.mean],
        "std": [float(v) for v in stats.std],
    }
    (out / "stats.json").write_text(json.dumps(stats_payload, sort_keys=True,
                                               indent=1) + "\n")
    print(f"build-dataset[{cfg.task}]: " +
          ", ".join(f"{s}={counts[s]}" for s in SPLITS))
    return EXIT_OK


def _train_once(cfg: RunConfig, train_data, val_data):
    first = train_data[0].features
    tile = int(first.shape[-1])
    in_channels = int(first.shape[-3])
    mcfg = cfg.model_config(tile=tile, in_channels=in_channels)
    _check_task_arch(cfg.task, mcfg.arch)
    model = build(mcfg, np.random.default_rng([cfg.run["init_seed"], _INIT_STREAM]))
    report = training.train(model, train_data, val_data, cfg.train)
    return model, mcfg, report


def cmd_train(cfg: RunConfig, out: Path) -> int:
    data_dir = _data_dir(cfg, out)
    train_data = _read_split(data_dir, cfg.task, "train")
    val_data = _read_split(data_dir, cfg.task, "val")
    model, mcfg, report = _train_once(cfg, train_data, val_data)

    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.wfck"
    best = report.best_params if report.best_params else \
        {k: t.data for k, t in model.params.items()}
    nn.save_checkpoint(best, ckpt)
    sidecar = {
        "arch": mcfg.arch,
        "filter_scheme": list(mcfg.filter_scheme),
        "in_channels": mcfg.in_channels,
        "tile": mcfg.tile,
        "lstm_hidden": mcfg.lstm_hidden,
        "task": cfg.task,
    }
    ckpt.with_suffix(".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=1) + "\n")
    report.write_csv(out / "report.csv")
    print(f"train[{cfg.task}/{mcfg.arch}]: best val AUC "
          f"{report.best_val_auc:.4f} at epoch {report.best_epoch}; "
          f"checkpoint -> {ckpt}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: Path) -> int:
    data_dir = _data_dir(cfg, out)
    test_data = _read_split(data_dir, cfg.task, "test")
    ckpt = Path(cfg.run["checkpoint"]) if cfg.run["checkpoint"] else out / "checkpoint.wfck"
    model = _model_from_checkpoint(ckpt)
    _check_task_arch(cfg.task, model.config.arch)
    result = metrics.evaluate(model, test_data, threshold=cfg.run["threshold"])
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_eval_csv(result, out / "metrics.csv")
    if cfg.run["write_maps"]:
        metrics.write_probability_maps(model, test_data[:cfg.run["max_maps"]],
                                       out / "maps", threshold=cfg.run["threshold"])
    print(f"eval[{cfg.task}]: auc={result.auc:.4f} precision={result.precision:.4f} "
          f"recall={result.recall:.4f} iou={result.iou:.4f} "
          f"mean_iou={result.mean_iou:.4f} n_valid={result.n_valid}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig, out: Path) -> int:
    data_dir = _data_dir(cfg, out)
    test_data = _read_split(data_dir, cfg.task, "test")
    ckpt = Path(cfg.run["checkpoint"]) if cfg.run["checkpoint"] else out / "checkpoint.wfck"
    model = _model_from_checkpoint(ckpt)
    _check_task_arch(cfg.task, model.config.arch)
    maps_dir = out / "maps"
    written = metrics.write_probability_maps(
        model, test_data[:cfg.run["max_maps"]], maps_dir,
        threshold=cfg.run["threshold"])
    print(f"predict[{cfg.task}]: wrote {len(written)} map pairs to {maps_dir}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    if not cfg.sweep:
        raise ConfigError("sweep verb needs a [sweep] section with value lists")
    data_dir = _data_dir(cfg, out)
    train_data = _read_split(data_dir, cfg.task, "train")
    val_data = _read_split(data_dir, cfg.task, "val")

    keys = sorted(cfg.sweep)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for combo in itertools.product(*(cfg.sweep[k] for k in keys)):
        point = dict(zip(keys, combo))
        run_cfg = apply_sweep_point(cfg, point)
        _, _, report = _train_once(run_cfg, train_data, val_data)
        rows.append(list(combo) + [repr(report.best_val_auc), report.best_epoch])
        print("sweep: " + ", ".join(f"{k}={v}" for k, v in point.items())
              + f" -> val AUC {report.best_val_auc:.4f}")
    with open(out / "sweep.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(keys + ["best_val_auc", "best_epoch"])
        writer.writerows(rows)
    print(f"sweep: {len(rows)} rows -> {out / 'sweep.csv'}")
    return EXIT_OK


_VERBS = {
    "synth": cmd_synth,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
}


def make_parser():
    parser = argparse.ArgumentParser(
        prog="firecast",
        description="wildfire likelihood pipeline: synthetic scenes, tiling, "
                    "segmentation training, and evaluation")
    sub = parser.add_subparsers(dest="verb", required=True)
    for name in _VERBS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override every rng seed in the config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--task", default=None,
                       choices=["daily", "aggregated", "sequence"])
        p.add_argument("--model", default=None,
                       choices=["ae", "unet", "ae-lstm", "unet-lstm"])
        p.add_argument("--threshold", type=float, default=None)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.task:
            cfg.run["task"] = args.task
        if args.model:
            cfg.run["arch"] = {"ae": "autoencoder", "unet": "unet",
                               "ae-lstm": "ae_lstm", "unet-lstm": "unet_lstm"}[args.model]
        if args.out:
            cfg.run["out"] = args.out
        if args.threshold is not None:
            cfg.run["threshold"] = args.threshold
        if args.seed is not None:
            cfg.override_seed(args.seed)
        out = Path(cfg.run["out"])
        return _VERBS[args.verb](cfg, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_MISSING
    except TaskArchMismatch as e:
        print(f"task/model mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except Exception as e:  # noqa: BLE001 - single CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
