"""Command-line entry point.

Subcommands: `gen-data` (synthetic corpus), `train` (any mode, writes logs,
weights and report), `eval` (metrics over the test split), and
`uncertainty-maps` (PGM export of voxel and per-channel uncertainty maps).
Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import uncertainty as U
from .config import apply_assignment, load_run_config, resolved_text
from .data import generate_synthetic, load_dataset, save_dataset, split
from .errors import ConfigError, DataError, NumericError
from .model import NoiseSpec, mc_sample
from .rng import RngStream
from .trainer import evaluate, train
from .weights_io import load_weights, save_weights


def write_pgm(path, values: np.ndarray) -> None:
    """8-bit grayscale PGM; values expected in [0, 1]."""
    h, w = values.shape
    quantized = np.clip(np.round(values * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(quantized.tobytes())


def _cmd_gen_data(args) -> int:
    n, size = args.n, args.size
    n_test = args.test
    n_labeled = args.labeled if args.labeled is not None else n - n_test
    dataset = generate_synthetic(n, size, args.seed)
    split(dataset, n_labeled, args.seed, n_test=n_test)
    save_dataset(dataset, args.out)
    m = dataset.manifest
    print(json.dumps({
        "out": str(args.out),
        "train_labeled": len(m.train_labeled),
        "train_unlabeled": len(m.train_unlabeled),
        "test": len(m.test),
    }))
    return 0


def _cmd_train(args) -> int:
    overrides = list(args.set or [])
    cfg = load_run_config(args.config, overrides)
    if args.mode:
        apply_assignment(cfg, f"mode={args.mode}")
    if args.seed is not None:
        apply_assignment(cfg, f"seed={args.seed}")
    cfg.validate()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.txt").write_text(resolved_text(cfg), encoding="utf-8")

    dataset = load_dataset(args.data)
    state, report = train(cfg.model_config(), cfg.loss_config(), cfg.train_config(), dataset)

    with open(out / "train_log.jsonl", "w", encoding="utf-8") as f:
        for log in state.logs:
            f.write(json.dumps(log.to_dict(), sort_keys=True) + "\n")
    save_weights(out / "weights.wts", {"student": state.student, "teacher": state.teacher})
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
    summary = {"out": str(out), "steps": state.step}
    if report.student_test:
        summary["student_test_dice"] = report.student_test["dice"]
        summary["teacher_test_dice"] = report.teacher_test["dice"]
    print(json.dumps(summary))
    return 0


def _cmd_eval(args) -> int:
    _, models = load_weights(args.weights)
    role = "teacher" if args.teacher else "student"
    if role not in models:
        raise DataError(f"weights file holds no {role!r} model")
    dataset = load_dataset(args.data)
    test_ids = dataset.manifest.test
    if not test_ids:
        raise DataError("dataset has no test split to evaluate")
    report = evaluate(models[role], dataset.records(test_ids))
    text = json.dumps({"model": role, **report.to_dict()}, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_uncertainty_maps(args) -> int:
    if args.t < 2:
        raise ConfigError(f"need at least 2 Monte-Carlo passes, got --t {args.t}")
    _, models = load_weights(args.weights)
    role = "teacher" if args.teacher else "student"
    if role not in models:
        raise DataError(f"weights file holds no {role!r} model")
    model = models[role]
    dataset = load_dataset(args.data)
    test_ids = dataset.manifest.test
    if not test_ids:
        raise DataError("dataset has no test split to export maps for")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    noise = NoiseSpec(sigma=args.noise_sigma, clip=args.noise_clip)
    root = RngStream(args.seed).child(3)
    for idx, sid in enumerate(test_ids):
        rec = dataset.samples[sid]
        samples = mc_sample(model, rec.image, args.t, root.child(idx), noise)
        bundle = U.estimate(samples)
        write_pgm(out / f"{sid}_uv.pgm", bundle.u_v_map)
        for c in range(bundle.u_c_maps.shape[0]):
            write_pgm(out / f"{sid}_uc{c:02d}.pgm", bundle.u_c_maps[c])
        lines = [
            f"u_s {bundle.u_s:.9f}",
            f"u_f {bundle.u_f:.9f}",
            "u_c " + " ".join(f"{v:.9f}" for v in bundle.u_c),
        ]
        (out / f"{sid}_uncertainty.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(json.dumps({"out": str(out), "samples": len(test_ids), "passes": args.t}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duwmt",
        description="Double-uncertainty weighted mean-teacher segmentation, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--size", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--labeled", type=int, default=None,
                   help="labeled training samples (default: all non-test)")
    g.add_argument("--test", type=int, default=0)
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", default=None, help="key=value config file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=["paper", "supervised", "mse_ablation", "no_weight_ablation"])
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="evaluate weights on the test split")
    e.add_argument("--weights", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--teacher", action="store_true")
    e.add_argument("--out", default=None)
    e.set_defaults(fn=_cmd_eval)

    u = sub.add_parser("uncertainty-maps", help="export voxel/feature uncertainty maps")
    u.add_argument("--weights", required=True)
    u.add_argument("--data", required=True)
    u.add_argument("--out", required=True)
    u.add_argument("--t", type=int, required=True, help="Monte-Carlo passes")
    u.add_argument("--teacher", action="store_true")
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--noise-sigma", type=float, default=0.1)
    u.add_argument("--noise-clip", type=float, default=0.2)
    u.set_defaults(fn=_cmd_uncertainty_maps)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
