"""Pilot run: default corpus, toy features, FR and NR training with default flags.

Writes per-task test metrics and wall-clock time to <out>/pilot.json.  These numbers are
what the thresholds in tests/test_acceptance.py were frozen against.

    python3 scripts/pilot.py --out runs/pilot [--tasks fr nr] [--epochs 300]
"""

import argparse
import contextlib
import io
import json
import time
from pathlib import Path

from sfiqa.cli import main


def run(argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        rc = main(argv)
    if rc != 0:
        raise SystemExit(f"command failed: {' '.join(argv)}")
    return [json.loads(line) for line in buf.getvalue().splitlines() if line.startswith("{")]


def cli():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/pilot")
    ap.add_argument("--tasks", nargs="+", default=["fr", "nr"])
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0, help="training seed")
    args = ap.parse_args()

    out = Path(args.out)
    manifest = out / "corpus" / "manifest.jsonl"
    feats = out / "features"
    if not manifest.exists():
        run(["gen", "--out", str(out / "corpus"), "--seed", "7"])
        run(["extract", "--manifest", str(manifest), "--encoder", "toy", "--features", str(feats)])

    results = {}
    for task in args.tasks:
        ckpt = out / f"{task}.siqc"
        t0 = time.perf_counter()
        run(["train", "--task", task, "--manifest", str(manifest), "--features", str(feats),
             "--epochs", str(args.epochs), "--seed", str(args.seed), "--out", str(ckpt)])
        seconds = time.perf_counter() - t0
        recs = run(["eval", "--ckpt", str(ckpt), "--manifest", str(manifest), "--features", str(feats)])
        results[task] = {"seconds": round(seconds, 1), "epochs": args.epochs,
                         **{f"{r['model']}_{r['metric']}": r["value"] for r in recs}}
        print(task, json.dumps(results[task]), flush=True)
    (out / "pilot.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    cli()
