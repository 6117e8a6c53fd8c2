"""Command-line interface: gen-data / train / eval / gradcheck / ablate.

All configuration flows through one JSON file plus --set key=value
overrides (dotted paths, JSON-parsed values); no hidden entropy — train
requires an explicit --seed.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness as H
from .config import (ConfigError, RunConfig, apply_overrides, run_config_from_dict,
                     run_config_to_dict)
from .data import write_datasets


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data = json.load(fh)
    else:
        data = run_config_to_dict(RunConfig())
    apply_overrides(data, args.set or [])
    return run_config_from_dict(data)


def _cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out or cfg.data_dir
    meta = write_datasets(cfg.generator, out_dir)
    print(json.dumps({"out_dir": out_dir, "counts": meta["counts"],
                      "checksums": meta["checksums"]}, indent=2, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    out = H.train(cfg, seed=args.seed, out_dir=args.out)
    print(json.dumps({"metrics": out["metrics_path"],
                      "checkpoint": out["checkpoint_dir"]}, indent=2, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    result = H.evaluate_checkpoint(args.checkpoint, cfg, args.split)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    if args.config:
        cfg = _load_config(args)
    else:  # tiny-dims preset; --set overrides apply on top of it
        data = run_config_to_dict(H.gradcheck_config())
        apply_overrides(data, args.set or [])
        cfg = run_config_from_dict(data)
    if cfg.model.hidden_size > 8:
        raise ConfigError(f"gradcheck needs tiny dims (hidden_size <= 8), got {cfg.model.hidden_size}")
    report = H.gradcheck(cfg)
    offenders = [
        f"{mode}:{name}={err:.3e}"
        for mode, tensors in report["modes"].items()
        for name, err in tensors.items() if err >= report["threshold"]
    ]
    summary = {
        "passed": report["passed"],
        "threshold": report["threshold"],
        "checked_entries": report["checked_entries"],
        "skipped_entries": report["skipped_entries"],
        "max_rel_error": max(max(t.values()) for t in report["modes"].values()),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    if not report["passed"]:
        print("gradcheck offenders: " + ", ".join(offenders), file=sys.stderr)
        return 1
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    result = H.ablate(cfg, seeds=seeds, out_dir=args.out)
    print(result["table"])
    print(f"csv: {result['csv_path']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtvqa",
                                     description="multi-task video QA trainer on synthetic episodes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path, JSON value)")

    p = sub.add_parser("gen-data", help="write train/val/test JSONL plus meta.json")
    common(p)
    p.add_argument("--out", help="output directory (default: config data_dir)")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="run the fixed-step training budget")
    common(p)
    p.add_argument("--seed", type=int, required=True, help="training seed (required)")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter tensor")
    common(p)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="run QA / QA+MA / QA+TL / QA+MA+TL over seeds")
    common(p)
    p.add_argument("--seeds", default="1,2,3,4,5", help="comma-separated seeds")
    p.add_argument("--out", required=True, help="ablation output directory")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
