"""Run both ablation axes on one corpus and print the two tables.

    python3 scripts/ablation.py --out runs/ablation --epochs 100
"""

import argparse
from pathlib import Path

from sfiqa.cli import main


def cli():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--task", default="fr", choices=["fr", "nr"])
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    manifest = out / "corpus" / "manifest.jsonl"
    feats = out / "features"
    if not manifest.exists():
        assert main(["gen", "--out", str(out / "corpus"), "--seed", "7"]) == 0
        assert main(["extract", "--manifest", str(manifest), "--features", str(feats)]) == 0
    for axis in ("branches", "distance"):
        print(f"\n== {axis} ==")
        rc = main(["ablate", "--axis", axis, "--task", args.task, "--manifest", str(manifest),
                   "--features", str(feats), "--epochs", str(args.epochs), "--seed", str(args.seed),
                   "--out-dir", str(out / axis)])
        if rc:
            raise SystemExit(rc)


if __name__ == "__main__":
    cli()
