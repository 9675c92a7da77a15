"""Command-line driver for the full pipeline.

Subcommands: synth, labelgen, pretrain2d, transfer, train3d, infer, eval,
bench, archive.  Commands are thin wrappers over the library; exit codes
are 0 (ok), 2 (usage), 3 (data error), 4 (numeric failure).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import errors, groundtruth, metrics, pipeline, swc, transfer, train, vit, volume
from .rng import Rng, derive

_DATA_EXIT = 3
_NUMERIC_EXIT = 4


def _load_config(path):
    return pipeline.load_experiment_config(path)


def _write_json_atomic(path, obj) -> None:
    payload = (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()
    volume.write_atomic(path, payload)


def _write_text_atomic(path, text: str) -> None:
    volume.write_atomic(path, text.encode())


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.synth.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    groups = (("train", pipeline.make_volumes(cfg.synth, cfg.n_train, salt=1)),
              ("test", pipeline.make_volumes(cfg.synth, cfg.n_test, salt=2)))
    for prefix, vols in groups:
        for i, (image, label, morph) in enumerate(vols):
            stem = f"{prefix}_{i:03d}"
            volume.save_raw(image, out / f"{stem}.raw", out / f"{stem}.json")
            volume.save_raw(label, out / f"{stem}_label.raw", out / f"{stem}_label.json")
            _write_text_atomic(out / f"{stem}.swc", swc.write_swc(morph))
    print(f"wrote {cfg.n_train} train + {cfg.n_test} test volumes to {out}")
    return 0


def cmd_labelgen(args) -> int:
    text = Path(args.swc).read_text(encoding="utf-8")
    morph = swc.parse_swc(text)
    dims = tuple(int(v) for v in args.dims.split("x"))
    if len(dims) != 3:
        raise errors.BadMeta(f"dims must be WxHxD, got {args.dims!r}")
    mode = groundtruth.LabelMode(args.mode)
    labels = groundtruth.rasterize_labels(morph, dims, mode)
    volume.save_raw(labels, args.out, _meta_path(args.out))
    print(f"rasterized {len(morph)} nodes into {args.out}")
    return 0


def _meta_path(data_path) -> str:
    p = Path(data_path)
    return str(p.with_suffix(".json"))


def cmd_pretrain2d(args) -> int:
    cfg = _load_config(args.config)
    vols = pipeline.make_volumes(cfg.synth, cfg.n_train, salt=1)
    hw = cfg.vit2d.img_hw
    blocks = pipeline.training_blocks(vols, (hw[1], hw[0], 1), cfg.pretrain.tau)
    archive, report = train.pretrain_2d(blocks, cfg.vit2d, cfg.pretrain)
    transfer.write_archive(archive, args.out)
    sys.stdout.write(report.to_jsonl())
    print(f"wrote 2D archive with {len(archive)} tensors to {args.out}")
    return 0


def cmd_transfer(args) -> int:
    cfg = _load_config(args.config)
    src = transfer.read_archive(args.src)
    strategy = transfer.TransferStrategy(args.strategy)
    rng = Rng(derive(cfg.train.seed, 0x584652))
    params = transfer.transfer_weights(src, cfg.vit3d, strategy, rng)
    transfer.write_archive(transfer.params_to_archive(params), args.out)
    prov = transfer.transfer_provenance(cfg.vit3d)
    width = max(len(n) for n in prov)
    for name, how in prov.items():
        shape = "x".join(str(s) for s in params[name].shape)
        print(f"{name:<{width}}  {how:<22}  {shape}")
    print(f"wrote 3D archive ({strategy.value}) to {args.out}")
    return 0


def cmd_train3d(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    vols = pipeline.make_volumes(cfg.synth, cfg.n_train, salt=1)
    hw = cfg.vit3d.img_hw
    blocks = pipeline.training_blocks(
        vols, (hw[1], hw[0], cfg.vit3d.block_depth), cfg.train.tau)
    if args.init == "scratch":
        params = vit.init_params(cfg.vit3d, Rng(derive(cfg.train.seed, 0x494E49)), "3d")
    elif args.init.startswith("archive:"):
        src = transfer.read_archive(args.init.split(":", 1)[1])
        params = transfer.params_from_archive(src, cfg.vit3d, "3d")
    else:
        raise errors.BadMeta(f"--init must be 'scratch' or 'archive:<path>', got {args.init!r}")
    def hook(epoch, snapshot):
        train.save_checkpoint(snapshot, f"{args.out}.epoch{epoch:04d}")

    params, report = train.fit("3d", params, blocks, cfg.train, cfg.vit3d,
                               checkpoint_hook=hook)
    train.save_checkpoint(params, args.out)
    sys.stdout.write(report.to_jsonl())
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_config(args.config)
    arch = transfer.read_archive(args.checkpoint)
    kind = "3d" if arch["patch_embed.w"].ndim == 5 else "2d"
    vcfg = cfg.vit3d if kind == "3d" else cfg.vit2d
    params = transfer.params_from_archive(arch, vcfg, kind)
    img = volume.load_raw(args.volume, args.meta or _meta_path(args.volume))
    probs = metrics.predict_volume(params, vcfg, img)
    volume.save_raw(probs, args.out, _meta_path(args.out))
    print(f"wrote probability volume to {args.out}")
    return 0


def cmd_eval(args) -> int:
    pred = volume.load_raw(args.pred, args.pred_meta or _meta_path(args.pred))
    gt = volume.load_raw(args.gt, args.gt_meta or _meta_path(args.gt))
    pred_mask = pred.data >= args.threshold
    gt_mask = gt.data >= 0.5
    d = metrics.dice(pred_mask, gt_mask)
    try:
        h = metrics.hd95(pred_mask, gt_mask)
    except errors.EmptyMask:
        h = None
    print(json.dumps({"dice": d, "hd95": h}, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    if args.seeds:
        cfg.seeds = tuple(int(s) for s in args.seeds.split(","))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = pipeline.run_bench(cfg, log=sys.stderr if args.verbose else None)
    _write_json_atomic(out / "bench.json", results)
    _write_text_atomic(out / "bench.md", pipeline.bench_markdown(results))
    print(pipeline.bench_markdown(results), end="")
    return 0


def cmd_archive(args) -> int:
    arch = transfer.read_archive(args.src)
    for name, data in arch.items():
        shape = "x".join(str(s) for s in data.shape)
        print(f"{name}  f32[{shape}]")
    print(f"{len(arch)} tensors")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neuroseg",
                                 description="3D neuron segmentation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "generate synthetic volumes, labels, and SWC files")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("labelgen", cmd_labelgen, "rasterize an SWC file into a label volume")
    p.add_argument("--swc", required=True)
    p.add_argument("--dims", required=True, help="WxHxD, e.g. 64x64x15")
    p.add_argument("--mode", choices=["binary", "soft"], default="binary")
    p.add_argument("--out", required=True)

    p = add("pretrain2d", cmd_pretrain2d, "pretrain the 2D model on synthetic slices")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)

    p = add("transfer", cmd_transfer, "inflate a 2D archive into 3D init weights")
    p.add_argument("--src", required=True)
    p.add_argument("--strategy", choices=["average", "center"], required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)

    p = add("train3d", cmd_train3d, "train the 3D segmenter")
    p.add_argument("--config", default=None)
    p.add_argument("--init", default="scratch", help="'scratch' or 'archive:<path>'")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("infer", cmd_infer, "predict a probability volume from a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--meta", default=None)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "Dice / Hd95 between prediction and ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--pred-meta", default=None)
    p.add_argument("--gt", required=True)
    p.add_argument("--gt-meta", default=None)
    p.add_argument("--threshold", type=float, default=0.5)

    p = add("bench", cmd_bench, "run the full benchmark matrix")
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", default=None, help="comma-separated, overrides config")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")

    p = add("archive", cmd_archive, "list the tensors in an archive")
    p.add_argument("--src", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except errors.NumericError as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return _NUMERIC_EXIT
    except errors.NeurosegError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return _DATA_EXIT
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return _DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
