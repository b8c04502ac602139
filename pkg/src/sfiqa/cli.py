"""Command-line entry points: gen, extract, train, eval, ablate."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from .data import CorpusConfig, Manifest, load_image, make_corpus
from .encoder import EncoderConfig, FeatureFormatError, load_features, save_features, toy_encode
from .evalm import evaluate_split
from .optim import Checkpoint, FeatureStore, TrainConfig, TrainingError, fit

log = logging.getLogger("sfiqa")

BRANCH_ROWS = [("B", "b"), ("F", "f"), ("B+F", "bf")]
DISTANCE_ROWS = [("Sub.", "sub"), ("L2", "l2"), ("cos", "cos"), ("KLD", "kld"), ("L1", "l1")]


class CliError(RuntimeError):
    pass


def _image_paths(manifest: Manifest) -> dict[str, str]:
    paths = {}
    for s in manifest.samples:
        paths[s.ref_id] = s.ref
        paths[s.id] = s.dist
    return dict(sorted(paths.items()))


def cmd_gen(args) -> int:
    cfg = CorpusConfig(seed=args.seed, refs=args.refs, levels=args.levels, extent=args.extent)
    m = make_corpus(cfg, args.out)
    counts = {k: len(m.split(k)) for k in ("train", "val", "test")}
    print(json.dumps({"samples": len(m.samples), **counts, "manifest": str(Path(args.out) / "manifest.jsonl")}))
    return 0


def extract_toy(manifest: Manifest, out_dir, cfg: EncoderConfig) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for image_id, rel in _image_paths(manifest).items():
        save_features(toy_encode(load_image(manifest.path(rel)), cfg), out / f"{image_id}.siqf")
        n += 1
    index = {"encoder": "toy", "patch": cfg.patch, "channels": cfg.channels, "seed": cfg.seed,
             "extent": cfg.extent}
    (out / "features.json").write_text(json.dumps(index, sort_keys=True) + "\n")
    return n


def extract_import(manifest: Manifest, out_dir, source_dir=None) -> int:
    """Validate externally produced ``<id>.siqf`` files and copy them into ``out_dir``."""
    out = Path(out_dir)
    src = Path(source_dir) if source_dir else out
    out.mkdir(parents=True, exist_ok=True)
    shape = None
    for image_id in _image_paths(manifest):
        path = src / f"{image_id}.siqf"
        if not path.exists():
            raise CliError(f"missing imported feature file {path}")
        fmap = load_features(path)
        if shape is None:
            shape = fmap.data.shape
        elif fmap.data.shape != shape:
            raise CliError(f"{path}: shape {fmap.data.shape} differs from {shape}")
        if fmap.height != fmap.width:
            raise CliError(f"{path}: feature grid must be square, got {fmap.height}×{fmap.width}")
        if src != out:
            shutil.copyfile(path, out / path.name)
    index = {"encoder": "import", "shape": list(shape) if shape else None}
    (out / "features.json").write_text(json.dumps(index, sort_keys=True) + "\n")
    return len(_image_paths(manifest))


def cmd_extract(args) -> int:
    manifest = Manifest.load(args.manifest)
    if args.encoder == "toy":
        cfg = EncoderConfig(patch=args.patch, channels=args.channels, seed=args.encoder_seed,
                            extent=manifest.config.extent)
        n = extract_toy(manifest, args.features, cfg)
    else:
        n = extract_import(manifest, args.features, args.import_dir)
    print(json.dumps({"encoder": args.encoder, "files": n, "features": str(args.features)}))
    return 0


def _train_config(args, **overrides) -> TrainConfig:
    kw = dict(task=args.task, distance=args.distance, branches=args.branches, epochs=args.epochs,
              batch=args.batch, lr=args.lr, seed=args.seed, augment=not args.no_augment)
    kw.update(overrides)
    return TrainConfig(**kw)


def run_training(manifest: Manifest, store: FeatureStore, cfg: TrainConfig, out, verbose: bool = False):
    def on_epoch(rec):
        if verbose:
            print(json.dumps(rec), file=sys.stderr)

    result = fit(manifest, store, cfg, on_epoch=on_epoch)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.checkpoint.save(out)
    with open(str(out) + ".log.jsonl", "w") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return result


def cmd_train(args) -> int:
    manifest = Manifest.load(args.manifest)
    store = FeatureStore.from_dir(manifest, args.features)
    cfg = _train_config(args)
    result = run_training(manifest, store, cfg, args.out, verbose=args.verbose)
    last = result.log[-1] if result.log else {}
    print(json.dumps({"checkpoint": str(args.out), "config_hash": cfg.hash(), "best_epoch": result.best_epoch,
                      "final_train_loss": last.get("train_loss"), "val_srcc": last.get("val_srcc")}))
    return 0


def _emit(records: list[dict], out=None) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    for line in lines:
        print(line)
    if out:
        with open(out, "a") as fh:
            fh.write("\n".join(lines) + "\n")


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    manifest = Manifest.load(args.manifest)
    store = FeatureStore.from_dir(manifest, args.features)
    records = evaluate_split(ckpt.model(), manifest, args.split, store, cfg_hash=ckpt.config_hash,
                             logistic=args.plcc_logistic)
    _emit(records, args.out)
    return 0


def ablation_rows(axis: str) -> list[tuple[str, dict]]:
    if axis == "branches":
        return [(name, {"branches": mask}) for name, mask in BRANCH_ROWS]
    if axis == "distance":
        return [(name, {"distance": metric}) for name, metric in DISTANCE_ROWS]
    raise CliError(f"unknown ablation axis {axis!r}")


def format_table(axis: str, rows: list[dict]) -> str:
    head = f"{'B':<3} {'F':<3}" if axis == "branches" else f"{'Method':<8}"
    lines = [f"{head} {'SRCC':>8} {'PLCC':>8}"]

    def fmt(v):
        return f"{v:8.4f}" if v is not None else f"{'undef':>8}"

    for r in rows:
        if axis == "branches":
            mask = r["branches"]
            label = f"{'x' if 'b' in mask else '-':<3} {'x' if 'f' in mask else '-':<3}"
        else:
            label = f"{r['row']:<8}"
        lines.append(f"{label} {fmt(r['srcc'])} {fmt(r['plcc'])}")
    return "\n".join(lines)


def run_ablation(manifest: Manifest, store: FeatureStore, base: TrainConfig, axis: str, out_dir, split="test",
                 logistic: bool = False) -> list[dict]:
    """Train one model per configuration (shared seed) and collect SRCC/PLCC per row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, override in ablation_rows(axis):
        cfg = TrainConfig(**{**base.__dict__, **override})
        tag = name.replace("+", "").replace(".", "").lower()
        result = run_training(manifest, store, cfg, out_dir / f"{axis}_{tag}.siqc")
        recs = evaluate_split(result.model, manifest, split, store, cfg_hash=cfg.hash(), logistic=logistic,
                              psnr_baseline=False)
        vals = {r["metric"]: r["value"] for r in recs}
        rows.append({"axis": axis, "row": name, "split": split, "task": cfg.task, "branches": cfg.branches,
                     "distance": cfg.distance, "srcc": vals["srcc"], "plcc": vals["plcc"],
                     "config_hash": cfg.hash()})
    return rows


def cmd_ablate(args) -> int:
    manifest = Manifest.load(args.manifest)
    store = FeatureStore.from_dir(manifest, args.features)
    base = _train_config(args)
    rows = run_ablation(manifest, store, base, args.axis, args.out_dir, args.split, args.plcc_logistic)
    with open(Path(args.out_dir) / f"ablation_{args.axis}.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    print(format_table(args.axis, rows))
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=["fr", "nr"], default="fr")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distance", choices=["l1", "l2", "cos", "kld", "sub"], default="l1")
    p.add_argument("--branches", choices=["b", "f", "bf"], default="bf")
    p.add_argument("--no-augment", action="store_true", help="disable random flips")
    p.add_argument("--verbose", action="store_true", help="print per-epoch records to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfiqa", description="Spatial-frequency IQA toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the synthetic distortion corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--refs", type=int, default=60)
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--extent", type=int, default=128)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("extract", help="write one .siqf feature file per image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--encoder", choices=["toy", "import"], default="toy")
    p.add_argument("--features", required=True)
    p.add_argument("--import-dir", default=None, help="source of imported .siqf files (default: --features)")
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--encoder-seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train an FR or NR model")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--plcc-logistic", action="store_true", help="fit a 4-parameter logistic before PLCC")
    p.add_argument("--out", default=None, help="append records to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="branch or distance ablation matrix")
    p.add_argument("--axis", choices=["branches", "distance"], required=True)
    _add_train_flags(p)
    p.add_argument("--split", choices=["val", "test"], default="test")
    p.add_argument("--plcc-logistic", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingError, CliError, FeatureFormatError, FileNotFoundError, ValueError) as exc:
        print(f"sfiqa {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
