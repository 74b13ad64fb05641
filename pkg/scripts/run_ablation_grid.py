#!/usr/bin/env python3
"""Run the seeded mode grid (paper / ablations / supervised) on one corpus.

Spawns `duwmt train` subprocesses (two at a time by default, one BLAS thread
each), then tabulates test Dice per (mode, seed) and pairwise gains against
the supervised baseline. Results land in <out>/summary.json.

Example:
    python scripts/run_ablation_grid.py --out runs/grid \
        --seeds 0 1 2 3 4 --modes paper supervised --steps 2000
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

PKG_ROOT = Path(__file__).resolve().parent.parent
SRC = PKG_ROOT / "src"


def cli_env() -> dict:
    env = dict(os.environ)
    env["PYTHONPATH"] = str(SRC) + os.pathsep + env.get("PYTHONPATH", "")
    env.setdefault("OPENBLAS_NUM_THREADS", "1")
    env.setdefault("OMP_NUM_THREADS", "1")
    return env


def run_cli(args: list[str]) -> None:
    cmd = [sys.executable, "-m", "duwmt.cli", *args]
    subprocess.run(cmd, check=True, env=cli_env())


def ensure_dataset(data_dir: Path, n: int, size: int, labeled: int, test: int, seed: int) -> None:
    if (data_dir / "manifest.json").is_file():
        return
    run_cli([
        "gen-data", "--out", str(data_dir), "--n", str(n), "--size", str(size),
        "--seed", str(seed), "--labeled", str(labeled), "--test", str(test),
    ])


def train_one(job: tuple) -> tuple:
    mode, seed, data_dir, run_dir, settings = job
    args = ["train", "--data", str(data_dir), "--out", str(run_dir),
            "--mode", mode, "--seed", str(seed)]
    for kv in settings:
        args += ["--set", kv]
    start = time.time()
    run_cli(args)
    (run_dir / "wall_seconds.txt").write_text(f"{time.time() - start:.1f}\n")
    report = json.loads((run_dir / "report.json").read_text())
    return mode, seed, report


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--modes", nargs="+",
                    default=["paper", "supervised", "no_weight_ablation", "mse_ablation"])
    ap.add_argument("--n", type=int, default=130)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--labeled", type=int, default=8)
    ap.add_argument("--test", type=int, default=50)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--base-channels", type=int, default=8)
    ap.add_argument("--mc-passes", type=int, default=8)
    ap.add_argument("--jobs", type=int, default=2)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    settings = [
        f"total_steps={args.steps}",
        f"base_channels={args.base_channels}",
        f"mc_passes={args.mc_passes}",
        *args.set,
    ]

    jobs = []
    for seed in args.seeds:
        data_dir = out / f"data_seed{seed}"
        ensure_dataset(data_dir, args.n, args.size, args.labeled, args.test, seed)
        for mode in args.modes:
            run_dir = out / f"{mode}_seed{seed}"
            if (run_dir / "report.json").is_file():
                print(f"skip existing {run_dir.name}")
                continue
            jobs.append((mode, seed, data_dir, run_dir, settings))

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        for mode, seed, report in pool.map(train_one, jobs):
            print(f"done {mode} seed={seed} "
                  f"student_dice={report['student_test']['dice']:.4f} "
                  f"teacher_dice={report['teacher_test']['dice']:.4f}")

    summary: dict = {"config": settings, "results": {}}
    for mode in args.modes:
        per_seed = {}
        for seed in args.seeds:
            rpt = json.loads((out / f"{mode}_seed{seed}" / "report.json").read_text())
            per_seed[str(seed)] = {
                "student_dice": rpt["student_test"]["dice"],
                "teacher_dice": rpt["teacher_test"]["dice"],
            }
        vals = [v["student_dice"] for v in per_seed.values()]
        summary["results"][mode] = {
            "per_seed": per_seed,
            "student_dice_mean": sum(vals) / len(vals),
        }

    if "paper" in summary["results"] and "supervised" in summary["results"]:
        wins = sum(
            summary["results"]["paper"]["per_seed"][str(s)]["student_dice"]
            > summary["results"]["supervised"]["per_seed"][str(s)]["student_dice"]
            for s in args.seeds
        )
        summary["paper_vs_supervised_wins"] = f"{wins}/{len(args.seeds)}"

    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary["results"], indent=2, sort_keys=True))
    if "paper_vs_supervised_wins" in summary:
        print("paper beats supervised on seeds:", summary["paper_vs_supervised_wins"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
