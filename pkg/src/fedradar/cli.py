"""Experiment driver: dataset generation, training, cross-testing, reports.

Subcommands::

    fedradar gen-data   --config c.json --out data/        [--paper-scale]
    fedradar train      --config c.json --data data/ --out run/
    fedradar cross-test --config c.json --data data/ --out xdom/
    fedradar report     run1/ run2/ ... --out report/

Every command is a pure function of (config file, dataset bytes, seeds):
reruns produce bit-identical outputs. Wall-clock timing is therefore
only written when the config opts in. Failures exit non-zero; "target
recall not reached within the round budget" is a recorded outcome, not
a failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .config import ExperimentConfig, PAPER_SCALE_FRAMES_PER_SUBCAT
from .dataset import build_client_datasets, load_dataset, save_dataset
from .federated import (
    Paradigm,
    TrainSettings,
    build_model,
    make_clients,
    make_server,
    run_centralized,
    run_federated,
    run_local_only,
)
from .metrics import compare_paradigms, comparison_to_csv, cross_domain_eval
from .model import load_weights, save_checkpoint

WORKERS_ENV = "FEDRADAR_WORKERS"
ROUNDS_CSV = "rounds.csv"
SUMMARY_JSON = "summary.json"
SCHEMA_VERSION = 1


def _workers_default() -> int:
    try:
        return int(os.environ.get(WORKERS_ENV, "0"))
    except ValueError:
        return 0


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.dataset.master_seed = args.seed
        cfg.training.seed = args.seed
    if getattr(args, "paper_scale", False):
        cfg.dataset.frames_per_subcat = PAPER_SCALE_FRAMES_PER_SUBCAT
    cfg.validate()
    return cfg


def _write_effective_config(cfg: ExperimentConfig, out_dir: str) -> None:
    cfg.save(os.path.join(out_dir, "effective_config.json"))


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    ds = cfg.dataset
    os.makedirs(args.out, exist_ok=True)
    clients, global_test = build_client_datasets(
        num_clients=ds.num_clients,
        frames_per_subcat=ds.frames_per_subcat,
        mixtures=ds.mixtures,
        power_jitter_db=ds.power_jitter_db,
        master_seed=ds.master_seed,
        channel=ds.channel,
        sinr_db_range=ds.sinr_db_range,
        workers=args.workers,
    )
    save_dataset(args.out, clients, global_test, generation_config=asdict(ds))
    _write_effective_config(cfg, args.out)

    total = sum(c.num_frames for c in clients)
    print(f"dataset written to {args.out}")
    print(f"{'esc':>4} {'frames':>7} {'train':>6} {'val':>5} {'test':>5}  mixture")
    for c in clients:
        print(
            f"{c.esc_id:>4} {c.num_frames:>7} {len(c.train):>6} {len(c.val):>5} "
            f"{len(c.test):>5}  {c.radar_mixture}"
        )
    print(f"total frames: {total}, global test frames: {len(global_test)}")
    return 0


def _write_rounds_csv(path: str, reports, num_clients: int) -> None:
    cols = ["round"]
    cols += [f"acc_esc{i}" for i in range(num_clients)]
    cols += [f"recall_h0_esc{i}" for i in range(num_clients)]
    cols += [f"recall_h1_esc{i}" for i in range(num_clients)]
    cols += ["global_recall_h1", "uplink_bytes", "downlink_bytes"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(cols)
        for r in reports:
            row = [r.round]
            row += [_fmt(v) for v in r.per_client_val_accuracy]
            row += [_fmt(v) for v in r.per_client_recall_h0]
            row += [_fmt(v) for v in r.per_client_recall_h1]
            row += [_fmt(r.global_val_recall_h1), r.uplink_bytes, r.downlink_bytes]
            writer.writerow(row)


def _summary(cfg: ExperimentConfig, paradigm: str, reports) -> dict:
    last = reports[-1]
    return {
        "schema_version": SCHEMA_VERSION,
        "paradigm": paradigm,
        "config": cfg.to_dict(),
        "rounds_run": len(reports),
        "reached_target": bool(last.global_val_recall_h1 > cfg.training.target_recall),
        "final": {
            "round": last.round,
            "per_client_val_accuracy": last.per_client_val_accuracy,
            "per_client_recall_h0": last.per_client_recall_h0,
            "per_client_recall_h1": last.per_client_recall_h1,
            "global_val_recall_h1": last.global_val_recall_h1,
        },
        "totals": {
            "uplink_bytes": sum(r.uplink_bytes for r in reports),
            "downlink_bytes": sum(r.downlink_bytes for r in reports),
        },
    }


def cmd_train(args) -> int:
    cfg = _load_config(args)
    clients_data, _, manifest = load_dataset(args.data)

    gen_image = tuple(manifest["generation_config"]["channel"]["image_size"])
    if gen_image != tuple(cfg.model.input_size):
        print(
            f"error: dataset images are {gen_image} but the model expects {cfg.model.input_size}",
            file=sys.stderr,
        )
        return 2

    os.makedirs(args.out, exist_ok=True)
    settings = TrainSettings(
        rounds=cfg.training.rounds,
        local_epochs=cfg.training.local_epochs,
        batch_size=cfg.training.batch_size,
        learning_rate=cfg.training.learning_rate,
        target_recall=cfg.training.target_recall,
        bytes_per_param=cfg.training.bytes_per_param,
        seed=cfg.training.seed,
    )
    paradigm = Paradigm(cfg.training.paradigm)
    clients = make_clients(clients_data, cfg.model, settings)

    if paradigm in (Paradigm.FEDAVG, Paradigm.FEDPER):
        server = make_server(clients, cfg.model, settings, paradigm)
        reports = run_federated(clients, server, paradigm, settings)
        if cfg.output.save_checkpoints:
            if paradigm == Paradigm.FEDAVG:
                final = build_model(cfg.model, seed=0)
                load_weights(final, server.global_base)
                save_checkpoint(final, os.path.join(args.out, "global.ckpt"))
            else:
                for c in clients:
                    save_checkpoint(c.model, os.path.join(args.out, f"client_{c.esc_id:02d}.ckpt"))
    elif paradigm == Paradigm.CENTRALIZED:
        model, reports = run_centralized(clients, settings)
        if cfg.output.save_checkpoints:
            save_checkpoint(model, os.path.join(args.out, "model.ckpt"))
    else:
        models, reports = run_local_only(clients, settings)
        if cfg.output.save_checkpoints:
            for esc_id, model in sorted(models.items()):
                save_checkpoint(model, os.path.join(args.out, f"client_{esc_id:02d}.ckpt"))

    _write_rounds_csv(os.path.join(args.out, ROUNDS_CSV), reports, len(clients))
    summary = _summary(cfg, paradigm.value, reports)
    with open(os.path.join(args.out, SUMMARY_JSON), "w") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    if cfg.output.write_timing:
        with open(os.path.join(args.out, "timing.json"), "w") as f:
            json.dump({"per_round_wall_s": [r.wall_time_s for r in reports]}, f, indent=2)
            f.write("\n")
    _write_effective_config(cfg, args.out)

    last = reports[-1]
    print(
        f"{paradigm.value}: {len(reports)} rounds, final global recall "
        f"{last.global_val_recall_h1:.4f} (target {cfg.training.target_recall}, "
        f"{'reached' if summary['reached_target'] else 'not reached'})"
    )
    return 0


def cmd_cross_test(args) -> int:
    cfg = _load_config(args)
    clients_data, _, manifest = load_dataset(args.data)
    gen_image = tuple(manifest["generation_config"]["channel"]["image_size"])
    if gen_image != tuple(cfg.model.input_size):
        print(
            f"error: dataset images are {gen_image} but the model expects {cfg.model.input_size}",
            file=sys.stderr,
        )
        return 2

    os.makedirs(args.out, exist_ok=True)
    settings = TrainSettings(
        rounds=cfg.training.rounds,
        local_epochs=cfg.training.local_epochs,
        batch_size=cfg.training.batch_size,
        learning_rate=cfg.training.learning_rate,
        target_recall=cfg.training.target_recall,
        bytes_per_param=cfg.training.bytes_per_param,
        seed=cfg.training.seed,
    )
    clients = make_clients(clients_data, cfg.model, settings)
    models, _ = run_local_only(clients, settings)
    matrix = cross_domain_eval(models, clients_data)

    rows = matrix.to_rows()
    with open(os.path.join(args.out, "cross_test.csv"), "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "esc_ids": matrix.esc_ids,
        "diagonal_mean_accuracy": matrix.diagonal_mean(),
        "off_diagonal_mean_accuracy": matrix.off_diagonal_mean(),
    }
    with open(os.path.join(args.out, "cross_summary.json"), "w") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    _write_effective_config(cfg, args.out)
    print(
        f"cross-domain: diagonal mean accuracy {matrix.diagonal_mean():.4f}, "
        f"off-diagonal {matrix.off_diagonal_mean():.4f}"
    )
    return 0


def cmd_report(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    summaries = []
    for run_dir in args.runs:
        with open(os.path.join(run_dir, SUMMARY_JSON)) as f:
            summary = json.load(f)
        if summary.get("schema_version") != SCHEMA_VERSION:
            print(f"error: {run_dir}: incompatible summary schema", file=sys.stderr)
            return 2
        summaries.append((run_dir, summary))

    rows = compare_paradigms([s for _, s in summaries])
    with open(os.path.join(args.out, "comparison.csv"), "w") as f:
        f.write(comparison_to_csv(rows))
    with open(os.path.join(args.out, "comparison.json"), "w") as f:
        json.dump(rows, f, sort_keys=True, indent=2)
        f.write("\n")

    series_dir = os.path.join(args.out, "series")
    os.makedirs(series_dir, exist_ok=True)
    for run_dir, summary in summaries:
        name = f"{summary['paradigm']}_{os.path.basename(os.path.normpath(run_dir))}"
        cum_up = 0
        cum_down = 0
        with open(os.path.join(run_dir, ROUNDS_CSV)) as f:
            reader = csv.reader(f)
            header = next(reader)
            out_rows = [header + ["cumulative_uplink_bytes", "cumulative_downlink_bytes"]]
            up_col = header.index("uplink_bytes")
            down_col = header.index("downlink_bytes")
            for row in reader:
                cum_up += int(row[up_col])
                cum_down += int(row[down_col])
                out_rows.append(row + [str(cum_up), str(cum_down)])
        with open(os.path.join(series_dir, f"{name}.csv"), "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerows(out_rows)

    print(f"report written to {args.out} ({len(summaries)} runs)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedradar",
        description="Federated spectrogram-based radar interference detection workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a client-partitioned dataset")
    p.add_argument("--config", help="experiment config JSON (defaults used if omitted)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--workers", type=int, default=_workers_default(),
                   help=f"frame rendering processes (default ${WORKERS_ENV} or serial)")
    p.add_argument("--paper-scale", action="store_true",
                   help=f"use {PAPER_SCALE_FRAMES_PER_SUBCAT} frames per subcategory per client")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one paradigm on a generated dataset")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help="override dataset/training seeds")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cross-test", help="train K local models and cross-evaluate")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help="override seeds")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_cross_test)

    p = sub.add_parser("report", help="merge run summaries into comparison tables")
    p.add_argument("runs", nargs="+", help="run directories from train")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
