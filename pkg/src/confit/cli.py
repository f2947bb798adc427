"""Command-line stages: synth, pairtune, probe, finetune, diagnose, compare.

Stages talk to each other only through files under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_run_config
from .dataio import Dataset, generate_clusters, load_frames_csv, save_frames_csv
from .diagnostics import (
    anisotropy,
    class_means,
    diagnose,
    dim_contribution,
    within_between_gap,
)
from .encoder import load_checkpoint, save_checkpoint
from .errors import ArchitectureMismatch, ConfitError, MissingClass
from .numeric import make_rng
from .trainer import embed_dataset, evaluate, finetune_baseline, inference_param_count, linear_probe, pairtune

ENCODER_CKPT = "encoder.ckpt"
PROBE_CKPT = "probe.ckpt"
TRACE_CSV = "trace.csv"
REPORT_JSON = "report.json"
PROJECTION_CSV = "projection_2d.csv"
MANIFEST_JSON = "manifest.json"
COMPARISON_JSON = "comparison.json"
PROBE_RESULTS_JSON = "probe_results.json"
TRAIN_CSV = "train.csv"
VALIDATION_CSV = "validation.csv"


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(out, command, cfg: RunConfig, artifacts, started, extra=None):
    doc = {
        "command": command,
        "confit_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "artifacts": sorted(str(a) for a in artifacts),
        "wall_clock_seconds": round(time.perf_counter() - started, 6),
    }
    if extra:
        doc.update(extra)
    _write_json(out / MANIFEST_JSON, doc)


def _datasets(cfg: RunConfig, seed=None) -> tuple[Dataset, Dataset]:
    """Train/validation from the data section, or generated from synth."""
    if cfg.data:
        return (load_frames_csv(cfg.path("data", "train"), "train"),
                load_frames_csv(cfg.path("data", "validation"), "validation"))
    if cfg.synth:
        spec = cfg.synth_spec(seed)
        return generate_clusters(spec, make_rng(spec.seed))
    raise ConfitError("config needs a 'data' or 'synth' section")


def _check_encoder(encoder, dataset: Dataset, cfg: RunConfig):
    tc = cfg.train_config()
    if encoder.in_dim != dataset.feature_dim:
        raise ArchitectureMismatch(f"encoder expects {encoder.in_dim} features, data has {dataset.feature_dim}")
    if encoder.out_dim != tc.embed_dim:
        raise ArchitectureMismatch(f"encoder output dim {encoder.out_dim} != configured embed_dim {tc.embed_dim}")


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, out: Path):
    started = time.perf_counter()
    spec = cfg.synth_spec()
    train, val = generate_clusters(spec, make_rng(spec.seed))
    save_frames_csv(train, out / TRAIN_CSV)
    save_frames_csv(val, out / VALIDATION_CSV)
    _write_manifest(out, "synth", cfg, [TRAIN_CSV, VALIDATION_CSV], started,
                    {"synth_spec": {k: getattr(spec, k) for k in spec.__dataclass_fields__}})


def cmd_pairtune(cfg: RunConfig, out: Path):
    started = time.perf_counter()
    train, val = _datasets(cfg)
    tc = cfg.train_config()
    encoder, trace = pairtune(train, val, tc, make_rng(cfg.seed))
    save_checkpoint(out / ENCODER_CKPT, encoder, cfg.to_dict())
    trace.to_csv(out / TRACE_CSV)
    _write_manifest(out, "pairtune", cfg, [ENCODER_CKPT, TRACE_CSV], started)


def cmd_probe(cfg: RunConfig, out: Path):
    started = time.perf_counter()
    train, val = _datasets(cfg)
    encoder = load_checkpoint(cfg.path("probe", "encoder"), expect_kind="encoder")
    _check_encoder(encoder, train, cfg)
    result = linear_probe(encoder, train, val, cfg.grid_spec(), make_rng(cfg.seed))
    save_checkpoint(out / PROBE_CKPT, result.probe, cfg.to_dict())
    _write_json(out / PROBE_RESULTS_JSON, {
        "accuracy": result.accuracy,
        "best_cell": {"learning_rate": result.best_cell[0], "batch_size": result.best_cell[1]},
        "cells": result.cells,
        "inference_param_count": inference_param_count(encoder, result.probe),
    })
    _write_manifest(out, "probe", cfg, [PROBE_CKPT, PROBE_RESULTS_JSON], started)


def cmd_finetune(cfg: RunConfig, out: Path):
    started = time.perf_counter()
    train, val = _datasets(cfg)
    encoder, head, trace = finetune_baseline(train, val, cfg.train_config(), make_rng(cfg.seed))
    save_checkpoint(out / ENCODER_CKPT, encoder, cfg.to_dict())
    save_checkpoint(out / PROBE_CKPT, head, cfg.to_dict())
    trace.to_csv(out / TRACE_CSV)
    _write_manifest(out, "finetune", cfg, [ENCODER_CKPT, PROBE_CKPT, TRACE_CSV], started)


def cmd_diagnose(cfg: RunConfig, out: Path):
    started = time.perf_counter()
    sec = cfg.require("diagnose")
    if "dataset" in sec:
        dataset = load_frames_csv(cfg.path("diagnose", "dataset"), "validation")
    else:
        dataset = _datasets(cfg)[1]
    if dataset.class_count < 2 or len(set(dataset.labels.tolist())) < 2:
        raise MissingClass("diagnostics need at least two classes present")
    encoder = load_checkpoint(cfg.path("diagnose", "encoder"), expect_kind="encoder")
    probe = load_checkpoint(cfg.path("diagnose", "probe"), expect_kind="probe")
    _check_encoder(encoder, dataset, cfg)
    if probe.in_dim != encoder.out_dim or probe.out_dim != dataset.class_count:
        raise ArchitectureMismatch(
            f"probe maps {probe.in_dim}->{probe.out_dim}, need {encoder.out_dim}->{dataset.class_count}")
    report = diagnose(encoder, probe, dataset, sec.get("group_size", 3), sec.get("n_groups", 3))
    report.write(out / REPORT_JSON, out / PROJECTION_CSV)
    _write_manifest(out, "diagnose", cfg, [REPORT_JSON, PROJECTION_CSV], started)


def _model_summary(encoder, val: Dataset):
    R = embed_dataset(encoder, val)
    labels = val.labels
    profile = dim_contribution(class_means(R, labels, val.class_count))
    return {
        "anisotropy": anisotropy(R),
        "dims_to_share": {str(k): v for k, v in profile.dims_to_share.items()},
        "top_k_share": {str(k): v for k, v in profile.top_k_share.items()},
        "within_between_gap": within_between_gap(R, labels),
    }


def _stats(values):
    values = np.asarray(values, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return {"mean": float(np.mean(values)), "std": std}


def compare_runs(cfg: RunConfig, seeds) -> dict:
    """Both pipelines on every seed; with synthetic data the seed also draws the data."""
    runs = []
    for seed in seeds:
        seed = int(seed)
        train, val = _datasets(cfg, seed)
        tc = cfg.train_config(seed)

        pt_encoder, pt_trace = pairtune(train, val, tc, make_rng(seed))
        probe = linear_probe(pt_encoder, train, val, cfg.grid_spec(), make_rng(seed))
        pt_acc, _ = evaluate(pt_encoder, probe.probe, val)

        ft_encoder, ft_head, ft_trace = finetune_baseline(train, val, tc, make_rng(seed))
        ft_acc, _ = evaluate(ft_encoder, ft_head, val)

        runs.append({
            "seed": seed,
            "pairtune": {
                "accuracy": pt_acc,
                "probe_cell": {"learning_rate": probe.best_cell[0], "batch_size": probe.best_cell[1]},
                "curve": pt_trace.curve(),
                "train_loss": pt_trace.losses(),
                "param_count": inference_param_count(pt_encoder, probe.probe),
                **_model_summary(pt_encoder, val),
            },
            "finetune": {
                "accuracy": ft_acc,
                "curve": ft_trace.curve(),
                "train_loss": ft_trace.losses(),
                "param_count": inference_param_count(ft_encoder, ft_head),
                **_model_summary(ft_encoder, val),
            },
            "accuracy_gap": pt_acc - ft_acc,
        })

    summary = {}
    for method in ("pairtune", "finetune"):
        summary[method] = {
            "accuracy": _stats([r[method]["accuracy"] for r in runs]),
            "anisotropy": _stats([r[method]["anisotropy"] for r in runs]),
            "dims_to_share_0.9": _stats([r[method]["dims_to_share"]["0.9"] for r in runs]),
            "within_between_gap": _stats([r[method]["within_between_gap"] for r in runs]),
        }
    summary["accuracy_gap"] = _stats([r["accuracy_gap"] for r in runs])
    return {"seeds": [r["seed"] for r in runs], "runs": runs, "summary": summary}


def cmd_compare(cfg: RunConfig, out: Path):
    started = time.perf_counter()
    seeds = (cfg.compare or {}).get("seeds", [cfg.seed])
    doc = compare_runs(cfg, seeds)
    _write_json(out / COMPARISON_JSON, doc)
    _write_manifest(out, "compare", cfg, [COMPARISON_JSON], started)
    return doc


COMMANDS = {
    "synth": cmd_synth,
    "pairtune": cmd_pairtune,
    "probe": cmd_probe,
    "finetune": cmd_finetune,
    "diagnose": cmd_diagnose,
    "compare": cmd_compare,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="confit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"confit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="YAML run config")
        p.add_argument("--out", required=True, type=Path, help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args.out)
    except ConfitError as exc:
        print(f"confit: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"confit: io_error: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
