"""Deterministic supervised training for the 2D and 3D segmenters.

Loss is weighted BCE-with-logits plus soft Dice (smoothing 1.0).  Each
epoch shuffles the dataset with a seeded permutation; per-batch gradients
accumulate over items in fixed index order, so runs are bit-reproducible
under a fixed seed and thread policy.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, NonFiniteLoss, ShapeMismatch
from .numerics import AdamState, Tensor, adam_step, sigmoid
from .rng import Rng, derive
from .transfer import params_from_archive, params_to_archive, read_archive, write_archive
from .vit import VitConfig, init_params, model_backward, model_forward, model_kind

_SHUFFLE_KEY = 0x5348  # "SH"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 30
    batch_size: int = 4
    seed: int = 0
    tau: float = 0.01  # foreground-ratio threshold used by dataset builders
    loss_weights: tuple[float, float] = (0.5, 0.5)  # (bce, dice)
    checkpoint_every: int = 0  # 0 = only at the end

    def __post_init__(self):
        w_bce, w_dice = self.loss_weights
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if w_bce < 0 or w_dice < 0 or w_bce + w_dice <= 0:
            raise ValueError(f"bad loss weights {self.loss_weights}")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    dice: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    wall_time_s: float = 0.0
    final_params: dict | None = None

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"epoch": e.epoch, "loss": e.loss, "dice": e.dice}) + "\n"
            for e in self.epochs)


def seg_loss(logits: np.ndarray, target: np.ndarray,
             weights: tuple[float, float] = (0.5, 0.5)) -> float:
    return seg_loss_grad(logits, target, weights)[0]


def seg_loss_grad(logits: np.ndarray, target: np.ndarray,
                  weights: tuple[float, float] = (0.5, 0.5)):
    """(loss, d loss / d logits).

    loss = w_bce * mean BCE(sigmoid(z), t) + w_dice * (1 - (2*sum(p*t)+1) /
    (sum(p)+sum(t)+1)), with the BCE evaluated in stable logit form.
    """
    if logits.shape != target.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs target {target.shape}")
    w_bce, w_dice = weights
    z = np.asarray(logits)
    t = np.asarray(target, dtype=z.dtype)
    n = z.size

    p = sigmoid(z)
    bce = float(np.mean(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))))
    dz = (p - t) * (w_bce / n)

    sum_pt = float((p * t).sum(dtype=np.float64))
    sum_p = float(p.sum(dtype=np.float64))
    sum_t = float(t.sum(dtype=np.float64))
    denom = sum_p + sum_t + 1.0
    dice_coeff = (2.0 * sum_pt + 1.0) / denom
    # d dice_loss / dp = -(2*t*denom - (2*sum_pt+1)) / denom^2
    ddp = -(2.0 * t * denom - (2.0 * sum_pt + 1.0)) / (denom * denom)
    dz = (dz + w_dice * ddp * p * (1.0 - p)).astype(z.dtype)

    loss = w_bce * bce + w_dice * (1.0 - dice_coeff)
    return float(loss), dz


def _binary_dice(p: np.ndarray, t: np.ndarray) -> float:
    a = p >= 0.5
    b = t >= 0.5
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / (na + nb)


def fit(model_kind_name: str, init: dict[str, Tensor], dataset, cfg: TrainConfig,
        vit_cfg: VitConfig, checkpoint_hook=None):
    """Train on (input, target) pairs; returns (params, TrainReport).

    `dataset` items are ([C,H,W] or [C,D,H,W] f32 input, matching-shape
    target in [0,1] without the channel axis).  The input params are not
    mutated; training starts from a copy.  When `checkpoint_hook` is set
    and cfg.checkpoint_every > 0, the hook receives (epoch, params) every
    that many epochs.
    """
    if not dataset:
        raise EmptyDataset("fit called with an empty dataset")
    if model_kind(init) != model_kind_name:
        raise ShapeMismatch(f"params are {model_kind(init)}, expected {model_kind_name}")
    params = {name: Tensor(t.data.copy()) for name, t in init.items()}
    state = AdamState()
    rng = Rng(derive(cfg.seed, _SHUFFLE_KEY))
    report = TrainReport()
    t0 = time.perf_counter()

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        losses, dices = [], []
        for b_idx, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start:start + cfg.batch_size]
            for p in params.values():
                p.zero_grad()
            scale = np.float32(1.0 / len(batch))
            batch_loss = 0.0
            for item in batch:
                x, y = dataset[item]
                logits, cache = model_forward(params, vit_cfg, x)
                loss, dlogits = seg_loss_grad(logits, y, cfg.loss_weights)
                grads = model_backward(cache, vit_cfg, dlogits * scale)
                for name, g in grads.items():
                    params[name].accumulate_grad(g)
                batch_loss += loss / len(batch)
                dices.append(_binary_dice(sigmoid(logits), y))
            if not np.isfinite(batch_loss):
                raise NonFiniteLoss(epoch, b_idx, batch_loss)
            losses.append(batch_loss)
            adam_step(params, state, cfg.lr)
        report.epochs.append(EpochStats(epoch, float(np.mean(losses)), float(np.mean(dices))))
        if (checkpoint_hook is not None and cfg.checkpoint_every > 0
                and (epoch + 1) % cfg.checkpoint_every == 0):
            checkpoint_hook(epoch, params)

    report.wall_time_s = time.perf_counter() - t0
    report.final_params = params
    return params, report


def pretrain_2d(slice_dataset, vit_cfg: VitConfig, cfg: TrainConfig):
    """Supervised pre-training of a 2D ViT on (image, label) slices;
    returns (archive, report) with the canonical 2D tensor names."""
    if vit_cfg.block_depth != 1:
        raise ShapeMismatch("pretrain_2d requires a block_depth == 1 config")
    rng = Rng(derive(cfg.seed, 0x5054))  # "PT"
    params = init_params(vit_cfg, rng, "2d")
    params, report = fit("2d", params, slice_dataset, cfg, vit_cfg)
    return params_to_archive(params), report


def save_checkpoint(params: dict[str, Tensor], path) -> None:
    write_archive(params_to_archive(params), path)


def load_checkpoint(path, cfg: VitConfig, kind: str) -> dict[str, Tensor]:
    return params_from_archive(read_archive(path), cfg, kind)
