"""Experiment orchestration: synthetic datasets, the pretrain/transfer/
train/evaluate pipeline, and the benchmark matrix (2D scratch, 2D
pre-trained, 3D scratch, 3D average-transfer, 3D center-transfer).

Everything is driven by one TOML config and one master seed per benchmark
run; per-volume, per-row, and per-phase streams are derived, never
shared, so reruns are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # py310
    import tomli as tomllib

from .errors import BadMeta
from .groundtruth import SynthParams, synth_volume
from .metrics import aggregate, evaluate
from .numerics import Tensor
from .rng import Rng, derive
from .train import TrainConfig, fit, pretrain_2d
from .transfer import TransferStrategy, transfer_weights
from .vit import VitConfig, init_params, model_kind
from .volume import BlockGridSpec, blockify, filter_training_blocks

_VOL_KEY = 0x564F4C  # "VOL"
_INIT_KEY = 0x494E49  # "INI"
_XFER_KEY = 0x584652  # "XFR"
_FIT_KEY = 0x464954  # "FIT"


@dataclass
class ExperimentConfig:
    """Defaults are the desk-scale benchmark: a larger disjoint corpus for
    2D pretraining, scarce 3D training volumes, low-contrast noisy images.
    In this regime random-init 3D models tend to collapse to background
    within the budget while transferred ones segment well."""

    synth: SynthParams = field(default_factory=SynthParams)
    n_pretrain: int = 6
    n_train: int = 1
    n_test: int = 3
    vit2d: VitConfig = field(default_factory=lambda: VitConfig(
        img_hw=(32, 32), patch=4, block_depth=1, embed_dim=64, layers=2,
        heads=4, mlp_ratio=2))
    vit3d: VitConfig = field(default_factory=lambda: VitConfig(
        img_hw=(32, 32), patch=4, block_depth=5, embed_dim=64, layers=2,
        heads=4, mlp_ratio=2))
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=3e-4, epochs=16, batch_size=8, seed=1234))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=3e-4, epochs=24, batch_size=4, seed=0))
    seeds: tuple[int, ...] = (1, 2, 3)
    prob_threshold: float = 0.5

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1 or self.n_pretrain < 1:
            raise BadMeta("need at least one pretrain, training, and test volume")
        if self.vit2d.block_depth != 1:
            raise BadMeta("vit2d.block_depth must be 1")
        if self.vit2d.img_hw != self.vit3d.img_hw or self.vit2d.patch != self.vit3d.patch:
            raise BadMeta("2D and 3D models must share img_hw and patch for transfer")


def _build(default_obj, table: dict, where: str):
    """Overlay TOML keys onto the benchmark defaults for one section."""
    cls = type(default_obj)
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise BadMeta(f"unknown keys in [{where}]: {sorted(unknown)}")
    merged = {f.name: getattr(default_obj, f.name) for f in fields(cls)}
    for k, v in table.items():
        merged[k] = tuple(v) if isinstance(v, list) else v
    return cls(**merged)


def load_experiment_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """TOML -> ExperimentConfig; every key is optional."""
    doc = {}
    if path is not None:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    if overrides:
        doc.update(overrides)
    known = {"synth", "vit2d", "vit3d", "pretrain", "train", "bench"}
    unknown = set(doc) - known
    if unknown:
        raise BadMeta(f"unknown config sections: {sorted(unknown)}")
    defaults = ExperimentConfig()
    synth_tab = dict(doc.get("synth", {}))
    n_pretrain = synth_tab.pop("n_pretrain", defaults.n_pretrain)
    n_train = synth_tab.pop("n_train", defaults.n_train)
    n_test = synth_tab.pop("n_test", defaults.n_test)
    bench = dict(doc.get("bench", {}))
    bench_known = {"seeds", "prob_threshold"}
    if set(bench) - bench_known:
        raise BadMeta(f"unknown keys in [bench]: {sorted(set(bench) - bench_known)}")
    return ExperimentConfig(
        synth=_build(defaults.synth, synth_tab, "synth"),
        n_pretrain=n_pretrain,
        n_train=n_train,
        n_test=n_test,
        vit2d=_build(defaults.vit2d, dict(doc.get("vit2d", {}), block_depth=1), "vit2d"),
        vit3d=_build(defaults.vit3d, doc.get("vit3d", {}), "vit3d"),
        pretrain=_build(defaults.pretrain, doc.get("pretrain", {}), "pretrain"),
        train=_build(defaults.train, doc.get("train", {}), "train"),
        seeds=tuple(bench.get("seeds", defaults.seeds)),
        prob_threshold=bench.get("prob_threshold", defaults.prob_threshold),
    )


def make_volumes(sp: SynthParams, count: int, salt: int):
    """`count` independent synthetic volumes: (image, label, morphology)."""
    out = []
    for i in range(count):
        params = replace(sp, seed=derive(sp.seed, _VOL_KEY, salt, i))
        out.append(synth_volume(params))
    return out


def training_blocks(volumes, block_size: tuple[int, int, int], tau: float):
    """Filtered (input, target) training pairs from (image, label) volumes.

    Inputs get a leading channel axis; depth-1 blocks come out as 2D
    [C,H,W] items so they feed the 2D model directly.
    """
    spec = BlockGridSpec(block_size=block_size)
    pairs = []
    for image, label, _ in volumes:
        img_blocks = blockify(image, spec)
        lbl_blocks = blockify(label, spec)
        for img, lbl in filter_training_blocks(img_blocks, lbl_blocks, tau):
            if block_size[2] == 1:
                pairs.append((img.data[0][None], lbl.data))
            else:
                pairs.append((img.data[None], lbl.data))
    return pairs


ROWS = (
    {"model": "2D ViT", "pretrained": False, "strategy": None, "input_depth": 1},
    {"model": "2D ViT", "pretrained": True, "strategy": None, "input_depth": 1},
    {"model": "3D ViT", "pretrained": False, "strategy": None, "input_depth": None},
    {"model": "3D ViT", "pretrained": True, "strategy": "average", "input_depth": None},
    {"model": "3D ViT", "pretrained": True, "strategy": "center", "input_depth": None},
)


def _row_params(row: dict, row_idx: int, seed: int, cfg: ExperimentConfig, archive):
    """Initial parameters for one benchmark row under one seed."""
    if row["model"] == "2D ViT":
        vcfg = cfg.vit2d
        if row["pretrained"]:
            # Depth-1 transfer: inflation is the identity, decoder fresh;
            # squeeze the unit depth axis to get the true 2D model back.
            params = transfer_weights(archive, vcfg, TransferStrategy.CENTER,
                                      Rng(derive(seed, _XFER_KEY, row_idx)))
            params["patch_embed.w"] = Tensor(params["patch_embed.w"].data[:, :, 0])
            return params, vcfg
        return init_params(vcfg, Rng(derive(seed, _INIT_KEY, row_idx)), "2d"), vcfg
    vcfg = cfg.vit3d
    if row["pretrained"]:
        strategy = TransferStrategy(row["strategy"])
        return transfer_weights(archive, vcfg, strategy,
                                Rng(derive(seed, _XFER_KEY, row_idx))), vcfg
    return init_params(vcfg, Rng(derive(seed, _INIT_KEY, row_idx)), "3d"), vcfg


def run_bench(cfg: ExperimentConfig, log=None) -> dict:
    """Train and evaluate the full matrix; returns a JSON-ready dict.

    The output contains no timing or machine state, so identical configs
    produce byte-identical serializations.
    """
    def say(msg):
        if log is not None:
            print(msg, file=log)

    say(f"synthesizing {cfg.n_pretrain} pretrain + {cfg.n_train} train + "
        f"{cfg.n_test} test volumes "
        f"({cfg.synth.dims[0]}x{cfg.synth.dims[1]}x{cfg.synth.dims[2]})")
    pretrain_vols = make_volumes(cfg.synth, cfg.n_pretrain, salt=0)
    train_vols = make_volumes(cfg.synth, cfg.n_train, salt=1)
    test_vols = make_volumes(cfg.synth, cfg.n_test, salt=2)

    hw = cfg.vit3d.img_hw
    pretrain_blocks = training_blocks(pretrain_vols, (hw[1], hw[0], 1), cfg.pretrain.tau)
    blocks2d = training_blocks(train_vols, (hw[1], hw[0], 1), cfg.train.tau)
    blocks3d = training_blocks(train_vols, (hw[1], hw[0], cfg.vit3d.block_depth),
                               cfg.train.tau)
    say(f"training blocks: {len(pretrain_blocks)} pretrain slices, "
        f"{len(blocks2d)} 2D, {len(blocks3d)} 3D (tau={cfg.train.tau})")

    say(f"pretraining 2D model for {cfg.pretrain.epochs} epochs")
    archive, _ = pretrain_2d(pretrain_blocks, cfg.vit2d, cfg.pretrain)

    rows_out = []
    for row_idx, row in enumerate(ROWS):
        depth = 1 if row["model"] == "2D ViT" else cfg.vit3d.block_depth
        dataset = blocks2d if depth == 1 else blocks3d
        per_seed = []
        for seed in cfg.seeds:
            params, vcfg = _row_params(row, row_idx, seed, cfg, archive)
            tcfg = replace(cfg.train, seed=derive(seed, _FIT_KEY, row_idx))
            params, _ = fit(model_kind(params), params, dataset, tcfg, vcfg)
            evals = [evaluate(params, vcfg, img, lbl.data >= 0.5, cfg.prob_threshold)
                     for img, lbl, _ in test_vols]
            agg = aggregate(evals)
            per_seed.append({
                "seed": seed,
                "dice": agg.dice,
                "hd95": agg.hd95,
                "hd95_failures": agg.hd95_failures,
            })
            say(f"  {row['model']} pretrained={row['pretrained']} "
                f"strategy={row['strategy']} seed={seed}: "
                f"dice={agg.dice:.4f} hd95={agg.hd95}")
        dices = [s["dice"] for s in per_seed]
        hds = [s["hd95"] for s in per_seed if s["hd95"] is not None]
        rows_out.append({
            "model": row["model"],
            "pretrained": row["pretrained"],
            "strategy": row["strategy"],
            "input_depth": depth,
            "mean_dice": float(np.mean(dices)),
            "mean_hd95": float(np.mean(hds)) if hds else None,
            "hd95_failures": sum(s["hd95_failures"] for s in per_seed),
            "seeds": per_seed,
        })
    return {
        "seeds": list(cfg.seeds),
        "n_pretrain": cfg.n_pretrain,
        "n_train": cfg.n_train,
        "n_test": cfg.n_test,
        "dims": list(cfg.synth.dims),
        "rows": rows_out,
    }


def bench_markdown(results: dict) -> str:
    """Markdown table mirroring the benchmark columns."""
    lines = [
        "| Model | Pre-trained Weights | Transferring Strategy | Input Depth | Mean Dice | Mean Hd95 |",
        "|---|---|---|---|---|---|",
    ]
    for row in results["rows"]:
        pre = "yes" if row["pretrained"] else "/"
        strat = row["strategy"].capitalize() if row["strategy"] else "/"
        hd = "failed" if row["mean_hd95"] is None else f"{row['mean_hd95']:.3f}"
        fails = row["hd95_failures"]
        if fails and row["mean_hd95"] is not None:
            hd += f" ({fails} failed)"
        lines.append(f"| {row['model']} | {pre} | {strat} | {row['input_depth']} "
                     f"| {row['mean_dice']:.4f} | {hd} |")
    return "\n".join(lines) + "\n"
