"""Command-line entry points: gen-synthetic | simulate-workers | run | report.

CROWDLOOP_LOG={error|info|debug} controls logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import struct
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .datastore import gen_synthetic, load_manifest, save_features, save_manifest
from .errors import CrowdloopError
from .inference import AnnotationLog, WorkerSkill
from .loop import run as run_loop
from .metrics import emit_curves
from .assignment import worker_importance
from .seeding import derive_seed
from .workers import make_skill_bank_synthetic

log = logging.getLogger("crowdloop")


def _setup_logging() -> None:
    level = os.environ.get("CROWDLOOP_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.ERROR),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _save_model(params, out_dir: Path) -> None:
    """Debug checkpoint: flat float32 arrays plus a JSON shape header."""
    arrays = [params.w1, params.b1, params.w2, params.b2]
    flat = np.concatenate([a.ravel() for a in arrays]).astype("<f4")
    (out_dir / "model.bin").write_bytes(flat.tobytes())
    header = {
        "shapes": {"w1": list(params.w1.shape), "b1": list(params.b1.shape),
                   "w2": list(params.w2.shape), "b2": list(params.b2.shape)},
        "temperature": params.temperature,
        "dtype": "float32",
    }
    (out_dir / "model.json").write_text(
        json.dumps(header, indent=2, sort_keys=True) + "\n")


def _save_skills(skills: dict[str, WorkerSkill], path: Path) -> None:
    doc = {
        w: {"annotations": s.annotation_count,
            "confusion": s.confusion.tolist()}
        for w, s in sorted(skills.items())
    }
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")


def cmd_gen_synthetic(args) -> int:
    groups = None
    if args.group_size > 1:
        groups = [list(range(c, min(c + args.group_size, args.k)))
                  for c in range(0, args.k, args.group_size)]
    manifest, store = gen_synthetic(
        args.k, args.n_per_class, args.dim, args.separation,
        args.prototypes, args.seed, groups=groups,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_features(store, out / "features.bin")
    save_manifest(manifest, out / "manifest.json")
    log.info("wrote %d items (%d classes, dim %d) to %s",
             manifest.n_items, manifest.n_classes, store.dim, out)
    return 0


def cmd_simulate_workers(args) -> int:
    manifest = load_manifest(args.manifest)
    bank = make_skill_bank_synthetic(
        manifest.n_classes, manifest.groups, args.workers_per_group,
        (args.acc_min, args.acc_max), args.seed,
    )
    bank.class_names = list(manifest.class_names)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bank.to_json(out)
    log.info("wrote bank with %d workers to %s", len(bank.workers), out)
    return 0


def cmd_run(args) -> int:
    cfg = cfgmod.config_from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    manifest, store = cfgmod.build_dataset(cfg)
    pool = cfgmod.build_pool(cfg, manifest)
    ctx = cfgmod.build_context(cfg, manifest, store, pool)
    result = run_loop(ctx)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    emit_curves(result.metrics, out)
    result.state.log.to_jsonl(out / "annotations.jsonl")
    residual_doc = {
        "criterion": f"risk >= {cfg.loop.risk_threshold!r}",
        "stop_reason": result.stop_reason,
        "count": len(result.residual),
        "items": [asdict(r) for r in result.residual],
    }
    (out / "residual.json").write_text(
        json.dumps(residual_doc, indent=2, sort_keys=True) + "\n")
    _save_skills(result.state.skills, out / "skills.json")
    state_doc = {
        "steps": result.state.step,
        "stop_reason": result.stop_reason,
        "per_class_val_accuracy": result.per_class_val_accuracy,
        "best_val_loss": (None if result.state.best_val_loss == float("inf")
                          else result.state.best_val_loss),
    }
    (out / "state.json").write_text(
        json.dumps(state_doc, indent=2, sort_keys=True) + "\n")
    if cfg.switches.model_enabled and result.state.model is not None:
        _save_model(result.state.model, out)
    log.info("run finished after %d steps (%s); outputs in %s",
             result.state.step, result.stop_reason, out)
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    skills_doc = json.loads((run_dir / "skills.json").read_text())
    skills = {
        w: WorkerSkill(worker_id=w,
                       confusion=np.asarray(d["confusion"]),
                       annotation_count=int(d["annotations"]))
        for w, d in skills_doc.items()
    }
    log_ = AnnotationLog.from_jsonl(run_dir / "annotations.jsonl")
    state_doc = json.loads((run_dir / "state.json").read_text())
    acc = state_doc.get("per_class_val_accuracy")
    rows = worker_importance(skills, log_,
                             np.asarray(acc) if acc is not None else None)
    out = Path(args.out) if args.out else run_dir / "worker_importance.csv"
    lines = [
        "# importance = 0.5 * sum_k u_k * confusion[k,k] "
        "+ 0.5 * annotations / max annotations,",
        "# with u_k proportional to 1 / max(per-class model accuracy, 0.05) "
        "and normalized to sum to 1 (uniform without a model).",
        "worker,annotations,reliability,importance",
    ]
    for r in rows:
        lines.append(f"{r['worker']},{r['annotations']},"
                     f"{r['reliability']!r},{r['importance']!r}")
    out.write_text("\n".join(lines) + "\n")
    log.info("wrote worker importance for %d workers to %s", len(rows), out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdloop",
        description="Online multi-class annotation with a learner in the loop",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic dataset")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--prototypes", type=int, default=10)
    p.add_argument("--group-size", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("simulate-workers", help="generate a synthetic skill bank")
    p.add_argument("--manifest", required=True)
    p.add_argument("--workers-per-group", type=int, default=10)
    p.add_argument("--acc-min", type=float, default=0.55)
    p.add_argument("--acc-max", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_workers)

    p = sub.add_parser("run", help="run one annotation experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's master seed")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1,
                   help="intra-step parallelism bound (outputs never depend "
                        "on it; the current implementation is sequential)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="emit the worker-importance report")
    p.add_argument("--run", required=True, help="run output directory")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CrowdloopError, OSError, struct.error) as exc:
        print(f"crowdloop: error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 2


if __name__ == "__main__":
    sys.exit(main())
