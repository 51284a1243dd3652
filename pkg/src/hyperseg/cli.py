"""Command-line entry point: ``hyperseg gen|train|segment|eval|selftest``."""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as run_config
from . import formats
from .errors import EmptyDatasetError, HypersegError
from .metrics import evaluate_levels
from .nn import set_deterministic
from .pipeline import InferenceConfig, segment
from .synthgen import SynthConfig, generate_dataset
from .training import train

log = logging.getLogger("hyperseg")


def cmd_gen(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(volume_edge=args.edge, n_volumes=args.count, seed=args.seed,
                      irregular=args.irregular)
    records = []
    for i, split, vol in generate_dataset(cfg):
        formats.write_vox(out / formats.volume_name(i), vol.intensities.astype(np.float32))
        for level, mask in enumerate(vol.labels, start=1):
            formats.write_vox(out / formats.label_name(i, level), mask.astype(np.uint8))
        records.append({
            "id": i,
            "split": split,
            "volume": formats.volume_name(i),
            "labels": [formats.label_name(i, lv) for lv in (1, 2, 3)],
            "seed": vol.seed,
            "noise_seed": vol.noise_seed,
            "irregular": vol.irregular,
            "objects": [o.to_dict() for o in vol.objects],
            "warnings": vol.warnings,
        })
        for w in vol.warnings:
            log.warning("volume %d: %s", i, w)
    formats.write_manifest(out, cfg.to_dict(), records)
    counts = {s: sum(r["split"] == s for r in records) for s in ("train", "val", "test")}
    print(json.dumps({"out": str(out), "volumes": len(records), "split": counts}))
    return 0


def _dataset_volumes(data_dir, split, limit):
    manifest = formats.read_manifest(data_dir)
    recs = [r for r in manifest["volumes"] if split == "all" or r["split"] == split]
    if limit:
        recs = recs[:limit]
    if not recs:
        raise EmptyDatasetError(f"no '{split}' volumes in {data_dir}")
    return [formats.read_vox(Path(data_dir) / r["volume"]) for r in recs]


def cmd_train(args):
    cfg = run_config.load(args.config) if args.config else run_config.RunConfig()
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    volumes = _dataset_volumes(args.data, args.split, args.limit)
    loss_path = Path(args.loss_log) if args.loss_log else Path(str(args.out) + ".loss.jsonl")
    with open(loss_path, "w", encoding="utf-8") as fh:
        ckpt, history = train(volumes, cfg.model, train_cfg, cfg.sampler, loss_log=fh)
    formats.save_checkpoint(args.out, ckpt)
    print(json.dumps({"checkpoint": str(args.out), "loss_log": str(loss_path),
                      "final": history[-1]}))
    return 0


def cmd_segment(args):
    ckpt = formats.load_checkpoint(args.ckpt)
    volume = formats.read_vox(args.volume)
    cfg = InferenceConfig(p=args.patch, k=args.k, stride=args.stride, batch=args.batch,
                          seed=args.seed)
    mask = segment(volume, ckpt, cfg)
    formats.write_vox(args.out, mask)
    print(json.dumps({"mask": str(args.out), "shape": list(mask.shape),
                      "labels": int(np.unique(mask).size)}))
    return 0


def cmd_eval(args):
    pred = formats.read_vox(args.pred)
    gt_dir = Path(args.gt_dir)
    gts = [formats.read_vox(gt_dir / formats.label_name(args.volume_id, lv)) for lv in (1, 2, 3)]
    k = args.k if args.k is not None else int(pred.max()) + 1
    report = evaluate_levels(pred, gts, k=k)
    doc = report.to_dict()
    doc["volume_id"] = args.volume_id
    doc["k"] = k
    text = json.dumps(doc, indent=2)
    out = Path(args.out) if args.out else Path(str(args.pred) + ".metrics.json")
    out.write_text(text + "\n")
    print(text)
    return 0


def cmd_selftest(args):
    from .selftest import run

    return 0 if run(verbose=not args.quiet) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="hyperseg", description=__doc__)
    p.add_argument("--threads", type=int, default=None,
                   help="torch intra-op threads; 1 forces deterministic execution")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=120)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--edge", type=int, default=50, help="volume edge length in voxels")
    g.add_argument("--irregular", action="store_true")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a generated dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--split", default="train", choices=("train", "val", "test", "all"))
    t.add_argument("--limit", type=int, default=0, help="use at most this many volumes")
    t.add_argument("--loss-log", default=None, help="JSON-lines loss log (default CKPT.loss.jsonl)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("segment", help="segment one volume with a trained checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--volume", required=True)
    s.add_argument("--k", type=int, default=7)
    s.add_argument("--patch", type=int, default=5)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--batch", type=int, default=1024)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_segment)

    e = sub.add_parser("eval", help="score a mask against a volume's ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt-dir", required=True)
    e.add_argument("--volume-id", type=int, required=True)
    e.add_argument("--k", type=int, default=None)
    e.add_argument("--out", default=None, help="report path (default PRED.metrics.json)")
    e.set_defaults(func=cmd_eval)

    st = sub.add_parser("selftest", help="run the built-in property and oracle checks")
    st.add_argument("--quiet", action="store_true")
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        set_deterministic(args.threads)
    try:
        return args.func(args)
    except (HypersegError, OSError, ValueError, KeyError) as exc:
        print(f"hyperseg {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
