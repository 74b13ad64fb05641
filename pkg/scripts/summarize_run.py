#!/usr/bin/env python3
"""Print trend statistics for a training run directory.

Shows test metrics from report.json plus first-vs-last-decile means of the
logged teacher/student train Dice, segmentation uncertainty, feature
uncertainty and consistency weight, i.e. the quantities whose trends the
acceptance suite checks.

Usage: python scripts/summarize_run.py RUN_DIR
"""

from __future__ import annotations

import json
import sys
from pathlib import Path


def decile_means(values: list[float]) -> tuple[float, float]:
    n = max(1, len(values) // 10)
    head = sum(values[:n]) / n
    tail = sum(values[-n:]) / n
    return head, tail


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__, file=sys.stderr)
        return 2
    run_dir = Path(sys.argv[1])
    report = json.loads((run_dir / "report.json").read_text())
    logs = [json.loads(l) for l in (run_dir / "train_log.jsonl").read_text().splitlines()]

    print(f"run: {run_dir}")
    print(f"mode: {report['mode']}, steps: {report['total_steps']}")
    for role in ("student_test", "teacher_test"):
        if report.get(role):
            r = report[role]
            print(f"{role}: dice {r['dice']:.4f} jaccard {r['jaccard']:.4f} "
                  f"hd95 {r['hd95']:.2f} asd {r['asd']:.2f} "
                  f"(n={r['n_samples']}, surface undefined {r['n_surface_undefined']})")

    for field, label in (
        ("teacher_dice", "teacher train dice"),
        ("student_dice", "student train dice"),
        ("u_s", "segmentation uncertainty U_s"),
        ("u_f", "feature uncertainty U_f"),
        ("lambda", "consistency weight lambda"),
        ("loss_sup", "supervised loss"),
        ("loss_cons", "consistency loss"),
    ):
        vals = [rec[field] for rec in logs]
        head, tail = decile_means(vals)
        arrow = "down" if tail < head else "up"
        print(f"{label:32s} first10% {head:9.4f} -> last10% {tail:9.4f} ({arrow})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
