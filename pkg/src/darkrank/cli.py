"""Command-line entry point.

Subcommands: gen-data, train-teacher, distill, evaluate, sweep, gradcheck,
report. Every training run writes its manifest before any other output, and
report.json contains only deterministic content (timestamps and wall time
live in the manifest).
"""

import argparse
import dataclasses
import json
import logging
import multiprocessing
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import config as config_mod
from . import dataio
from . import network as net
from . import oracle
from . import trainer
from .exceptions import (CapacityError, ConfigError, DataFormatError, InputError,
                         NumericalError, TrainingDivergedError)

logger = logging.getLogger("darkrank.cli")

METRIC_KEYS = ("mAP", "rank_1", "rank_5", "rank_10", "recall_at_1", "f1", "nmi")

SWEEP_PARAMETERS = ("alpha", "beta", "lambda")


def _setup_logging():
    level_name = os.environ.get("DARKRANK_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        print(f"warning: DARKRANK_LOG={level_name!r} not in {sorted(levels)}; "
              "using 'error'", file=sys.stderr)
        level_name = "error"
    logging.basicConfig(level=levels[level_name],
                        format="%(levelname)s %(name)s: %(message)s")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _start_manifest(out_dir: Path, command: str, cfg_hash: str,
                    inputs: dict, outputs: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "run_id": f"{command}-{cfg_hash[:8]}-{int(time.time() * 1000)}",
        "command": command,
        "config_hash": cfg_hash,
        "inputs": inputs,
        "outputs": outputs,
        "started_utc": _utc_now(),
        "finished_utc": None,
        "wall_time_sec": None,
        "outcome": "running",
    }
    path = out_dir / "manifest.json"
    _write_json(path, manifest)
    return path, manifest


def _finish_manifest(path: Path, manifest: dict, outcome: str, wall=None):
    manifest["outcome"] = outcome
    manifest["finished_utc"] = _utc_now()
    manifest["wall_time_sec"] = wall
    _write_json(path, manifest)


def _print_metrics(metrics: dict):
    for key in METRIC_KEYS:
        print(f"  {key:<12} {metrics[key]:.4f}")


def _load_run_config(args) -> trainer.ExperimentConfig:
    cfg = config_mod.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_gen_data(args) -> int:
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        spec = config_mod.parse_synth_spec(doc)
        if args.seed is not None:
            spec = dataclasses.replace(spec, seed=args.seed)
    else:
        spec = dataio.SynthSpec(
            num_identities=args.num_identities,
            samples_per_identity=args.samples_per_identity,
            feature_dim=args.feature_dim,
            intra_class_stddev=args.stddev,
            inter_class_separation=args.separation,
            heldout_fraction=args.heldout_fraction,
            seed=args.seed if args.seed is not None else 0,
        )
    dataset = dataio.generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.save(dataset, out)
    n_train = int((dataset.split == "train").sum())
    n_held = dataset.num_samples - n_train
    held_ids = len(set(dataset.identities[dataset.split == "heldout"].tolist()))
    print(f"wrote {out}: {dataset.num_samples} samples, dim {dataset.feature_dim}, "
          f"{spec.num_identities} identities "
          f"({n_train} train / {n_held} heldout rows, {held_ids} heldout identities)")
    return 0


def _run_training(args, command: str, is_teacher: bool) -> int:
    cfg = _load_run_config(args)
    if is_teacher:
        # the teacher is always trained without transfer; the config's variant
        # field describes the distillation stage only
        cfg = dataclasses.replace(cfg, variant="none")
    out_dir = Path(args.out)
    cfg_hash = config_mod.config_hash(cfg)
    inputs = {"config": str(args.config)}
    checkpoint_name = "teacher.drknet" if is_teacher else "student.drknet"
    if not is_teacher:
        inputs["teacher"] = str(args.teacher)
    manifest_path, manifest = _start_manifest(
        out_dir, command, cfg_hash, inputs,
        {"checkpoint": checkpoint_name, "report": "report.json"})
    logger.info("%s: config %s seed %s variant %s -> %s",
                command, cfg_hash[:8], cfg.seed, cfg.variant, out_dir)
    start = time.perf_counter()
    try:
        if is_teacher:
            state, report = trainer.train_teacher(cfg)
        else:
            teacher = net.load_checkpoint(args.teacher)
            state, report = trainer.train(cfg, teacher=teacher)
    except TrainingDivergedError as exc:
        _finish_manifest(manifest_path, manifest, f"failed: {exc}",
                         time.perf_counter() - start)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    net.save_checkpoint(state, out_dir / checkpoint_name)
    _write_json(out_dir / "report.json", report.deterministic_dict())
    _finish_manifest(manifest_path, manifest, "completed", report.wall_time_sec)
    print(f"{command} done: seed {cfg.seed}, variant {cfg.variant}, "
          f"{report.num_steps} steps")
    _print_metrics(report.final_metrics)
    return 0


def cmd_train_teacher(args) -> int:
    return _run_training(args, "train-teacher", is_teacher=True)


def cmd_distill(args) -> int:
    return _run_training(args, "distill", is_teacher=False)


def cmd_evaluate(args) -> int:
    state = net.load_checkpoint(args.checkpoint)
    dataset = dataio.load(args.data)
    metrics = trainer.evaluate_network(state, dataset, seed=args.seed or 0)
    if args.out:
        out_dir = Path(args.out)
        manifest_path, manifest = _start_manifest(
            out_dir, "evaluate", "-",
            {"checkpoint": str(args.checkpoint), "data": str(args.data)},
            {"metrics": "metrics.json"})
        _write_json(out_dir / "metrics.json", metrics)
        _finish_manifest(manifest_path, manifest, "completed")
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _apply_sweep_value(cfg: trainer.ExperimentConfig, parameter: str, value: float):
    if parameter == "alpha":
        return dataclasses.replace(
            cfg, score=dataclasses.replace(cfg.score, alpha=value))
    if parameter == "beta":
        return dataclasses.replace(
            cfg, score=dataclasses.replace(cfg.score, beta=value))
    if parameter == "lambda":
        return dataclasses.replace(
            cfg, weights=dataclasses.replace(cfg.weights, transfer=value))
    raise ConfigError(f"unknown sweep parameter {parameter!r}; "
                      f"expected one of {SWEEP_PARAMETERS}")


def _sweep_point(payload):
    cfg_doc, teacher_path, run_dir = payload
    cfg = config_mod.parse_config(cfg_doc)
    teacher = net.load_checkpoint(teacher_path)
    state, report = trainer.train(cfg, teacher=teacher)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    net.save_checkpoint(state, run_dir / "student.drknet")
    _write_json(run_dir / "report.json", report.deterministic_dict())
    return report.final_metrics


def cmd_sweep(args) -> int:
    if args.parameter not in SWEEP_PARAMETERS:
        print(f"error: unknown sweep parameter {args.parameter!r}; "
              f"expected one of {SWEEP_PARAMETERS}", file=sys.stderr)
        return 2
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        print("error: --values must list at least one value", file=sys.stderr)
        return 2
    values = [float(v) for v in values]
    base = _load_run_config(args)
    out_dir = Path(args.out)
    cfg_hash = config_mod.config_hash(base)
    manifest_path, manifest = _start_manifest(
        out_dir, "sweep", cfg_hash,
        {"config": str(args.config), "teacher": str(args.teacher),
         "parameter": args.parameter, "values": values},
        {"table": "sweep.csv", "report": "sweep.json"})
    start = time.perf_counter()
    payloads = []
    for i, value in enumerate(values):
        cfg = _apply_sweep_value(base, args.parameter, value)
        run_dir = out_dir / f"run_{i:02d}_{args.parameter}_{value:g}"
        payloads.append((cfg.to_dict(), str(args.teacher), str(run_dir)))
    if args.parallel and args.parallel > 1 and len(values) > 1:
        with multiprocessing.Pool(min(args.parallel, len(values))) as pool:
            results = pool.map(_sweep_point, payloads)
    else:
        results = [_sweep_point(p) for p in payloads]

    rows = [{"parameter": args.parameter, "value": v, **m}
            for v, m in zip(values, results)]
    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w") as fh:
        fh.write("parameter,value," + ",".join(METRIC_KEYS) + "\n")
        for row in rows:
            metrics = ",".join(repr(float(row[k])) for k in METRIC_KEYS)
            fh.write(f"{row['parameter']},{row['value']:g},{metrics}\n")
    _write_json(out_dir / "sweep.json", rows)
    _finish_manifest(manifest_path, manifest, "completed", time.perf_counter() - start)

    header = f"{args.parameter:>8} " + " ".join(f"{k:>11}" for k in METRIC_KEYS)
    print(header)
    for row in rows:
        print(f"{row['value']:>8g} " + " ".join(f"{row[k]:>11.4f}" for k in METRIC_KEYS))
    return 0


def cmd_gradcheck(args) -> int:
    result = oracle.run_gradcheck(instances=args.instances, seed=args.seed or 0)
    for report in result.reports:
        status = "PASS" if report.passed else "FAIL"
        print(f"{status} {report.name:<32} max_rel_error={report.max_rel_error:.3e} "
              f"(tol {report.tolerance:g}, {report.instances} instances)")
    if args.out:
        _write_json(Path(args.out), result.to_dict())
    if not result.passed:
        worst = result.worst()
        print(f"gradcheck FAILED; worst offender: {worst.name} "
              f"(max_rel_error={worst.max_rel_error:.3e})", file=sys.stderr)
        return 1
    print("gradcheck passed")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        print(f"error: no report.json under {run_dir}", file=sys.stderr)
        return 2
    doc = json.loads(report_path.read_text())
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        print(f"run        {manifest.get('run_id')}")
        print(f"outcome    {manifest.get('outcome')}")
        print(f"config     {manifest.get('config_hash')}")
        print(f"wall time  {manifest.get('wall_time_sec')}")
    print(f"seed       {doc.get('seed')}")
    print(f"variant    {doc.get('config', {}).get('variant')}")
    print(f"steps      {doc.get('num_steps')}")
    epochs = doc.get("epochs", [])
    if epochs:
        last = epochs[-1]
        comps = " ".join(f"{k}={v:.4f}" for k, v in sorted(last["components"].items()))
        print(f"final loss {last['total']:.4f} ({comps})")
    print("heldout metrics:")
    _print_metrics(doc.get("final_metrics", {}))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="darkrank",
        description="Rank-matching knowledge distillation for metric learning")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic DRKDATA1 dataset")
    gen.add_argument("--config", help="JSON synth-spec file (flags are ignored)")
    gen.add_argument("--out", required=True, help="output dataset path")
    gen.add_argument("--seed", type=int)
    defaults = dataio.SynthSpec()
    gen.add_argument("--num-identities", type=int, default=defaults.num_identities)
    gen.add_argument("--samples-per-identity", type=int,
                     default=defaults.samples_per_identity)
    gen.add_argument("--feature-dim", type=int, default=defaults.feature_dim)
    gen.add_argument("--stddev", type=float, default=defaults.intra_class_stddev)
    gen.add_argument("--separation", type=float, default=defaults.inter_class_separation)
    gen.add_argument("--heldout-fraction", type=float, default=defaults.heldout_fraction)
    gen.set_defaults(func=cmd_gen_data)

    tt = sub.add_parser("train-teacher", help="train the teacher network")
    tt.add_argument("--config", required=True)
    tt.add_argument("--out", required=True)
    tt.add_argument("--seed", type=int)
    tt.set_defaults(func=cmd_train_teacher)

    di = sub.add_parser("distill", help="train a student against a frozen teacher")
    di.add_argument("--config", required=True)
    di.add_argument("--teacher", required=True, help="teacher checkpoint path")
    di.add_argument("--out", required=True)
    di.add_argument("--seed", type=int)
    di.set_defaults(func=cmd_distill)

    ev = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--seed", type=int)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_evaluate)

    sw = sub.add_parser("sweep", help="ablation sweep over alpha, beta or lambda")
    sw.add_argument("--config", required=True)
    sw.add_argument("--teacher", required=True)
    sw.add_argument("--parameter", required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--out", required=True)
    sw.add_argument("--seed", type=int)
    sw.add_argument("--parallel", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    gc = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    gc.add_argument("--instances", type=int, default=25)
    gc.add_argument("--seed", type=int)
    gc.add_argument("--out")
    gc.set_defaults(func=cmd_gradcheck)

    rp = sub.add_parser("report", help="print a stored run report")
    rp.add_argument("--run", required=True, help="run output directory")
    rp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, CapacityError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
