"""Reconstruction loss, warmup schedule and the training loop."""

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .data import FrameRecord, from_labeled, gather_windows, window_index
from .errors import ConfigError, DegenerateRotationError, InputError
from .model import ModelConfig, PoseAutoencoder

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    lr_peak: float = 1e-4
    warmup_epochs: int = 60
    epochs: int = 2500
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip_norm: float | None = None
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.lr_peak > 0:
            raise ConfigError("lr_peak must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError("warmup_epochs must lie in [0, epochs]")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ConfigError("grad_clip_norm must be > 0 when set")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config keys {sorted(unknown)}")
        return cls(**d)


class LossBreakdown(NamedTuple):
    total: float
    bce_term: float
    box_term: float
    centering_term: float


def learning_rate(epoch, cfg):
    """Linear warmup from 0 to ``lr_peak`` over ``warmup_epochs``, then constant."""
    if cfg.warmup_epochs == 0:
        return cfg.lr_peak
    return cfg.lr_peak * min(1.0, epoch / cfg.warmup_epochs)


def loss_terms(output, z_reenc, target):
    """Per-sample loss terms, each of shape ``(B,)``.

    ``target`` is ``(B, n, 5)`` with binary presence. ``z_reenc`` holds the
    re-encoded ``(z2, z3)`` of the centered reconstruction, or ``None`` when
    the model has no rotation head.
    """
    y = target[..., 0]
    if not bool(((y == 0) | (y == 1)).all()):
        raise InputError("target presence must be binary")
    y_hat = output.y_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -(y * torch.log(y_hat) + (1 - y) * torch.log(1 - y_hat)).sum(-1)
    box = (y.unsqueeze(-1) * (target[..., 1:] - output.b_rotated).abs()).sum((-1, -2))
    if z_reenc is None:
        centering = torch.zeros_like(bce)
    else:
        centering = z_reenc.abs().sum(-1)
    return bce, box, centering


def loss(output, z_reenc, target):
    """:class:`LossBreakdown` for one sample (or the batch mean)."""
    target = torch.as_tensor(target, dtype=output.y_hat.dtype)
    if target.dim() == 2:
        target = target.unsqueeze(0)
    terms = [t.mean() for t in loss_terms(output, z_reenc, target)]
    bce, box, centering = (float(t) for t in terms)
    return LossBreakdown(float(sum(terms)), bce, box, centering)


def batch_loss(model, seq, target):
    """Mean loss over a batch; returns ``(total tensor, [bce, box, centering])``."""
    out = model(seq)
    z_reenc = None
    if model.cfg.rotation_enabled:
        z_reenc = model.center_reencode(target[..., 0], out.b_centered)
    terms = [t.mean() for t in loss_terms(out, z_reenc, target)]
    return terms[0] + terms[1] + terms[2], terms


def _as_records(dataset):
    if dataset and not isinstance(dataset[0], FrameRecord):
        return from_labeled(dataset)
    return list(dataset)


def _write_history(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["epoch", "lr", *LossBreakdown._fields])
        for epoch, (lr, row) in enumerate(history):
            w.writerow([epoch, repr(lr), *(repr(v) for v in row)])


def train(dataset, model_cfg, train_cfg, run_dir=None, init_model=None, callback=None):
    """Fit the autoencoder on all length-``s`` windows of ``dataset``.

    Returns ``(model, history)`` where ``history`` holds one
    :class:`LossBreakdown` of batch-mean losses per epoch. With ``run_dir``
    set, the config snapshot, a tab-separated history and checkpoints are
    written there. ``callback(epoch, model, breakdown)`` runs after every epoch.
    """
    records = _as_records(dataset)
    if not records:
        raise InputError("empty dataset")
    if records[0].n_classes != model_cfg.n_classes:
        raise ConfigError(
            f"dataset has {records[0].n_classes} classes, model expects {model_cfg.n_classes}"
        )
    s = model_cfg.seq_len
    frames, starts, _ = window_index(records, s)
    if len(starts) == 0:
        raise InputError(f"dataset yields no window of length {s}")

    model = init_model if init_model is not None else PoseAutoencoder(model_cfg)
    dtype = model.dtype
    frames_t = torch.as_tensor(frames, dtype=dtype)
    opt = torch.optim.AdamW(
        model.parameters(),
        lr=0.0,
        betas=(train_cfg.beta1, train_cfg.beta2),
        eps=train_cfg.eps,
        weight_decay=train_cfg.weight_decay,
    )
    rng = np.random.default_rng(train_cfg.seed)
    offsets = torch.arange(s)
    starts_t = torch.as_tensor(starts)

    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        snapshot = {"model": model_cfg.to_dict(), "training": train_cfg.to_dict()}
        (run_dir / "train_config.json").write_text(json.dumps(snapshot, indent=2) + "\n")

    history, lrs = [], []
    t0 = time.perf_counter()
    for epoch in range(train_cfg.epochs):
        lr = learning_rate(epoch, train_cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        order = torch.as_tensor(rng.permutation(len(starts)))
        sums = np.zeros(4)
        n_batches = skipped = 0
        for b in range(0, len(order), train_cfg.batch_size):
            idx = starts_t[order[b : b + train_cfg.batch_size]]
            seq = frames_t[idx[:, None] + offsets]
            try:
                total, terms = batch_loss(model, seq, seq[:, -1])
            except DegenerateRotationError as exc:
                skipped += 1
                log.warning("epoch %d: skipping batch: %s", epoch, exc)
                continue
            opt.zero_grad(set_to_none=True)
            total.backward()
            if train_cfg.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip_norm)
            opt.step()
            sums += [float(total.detach()), *(float(t.detach()) for t in terms)]
            n_batches += 1
        if n_batches == 0:
            raise DegenerateRotationError(f"epoch {epoch}: every batch hit a degenerate rotation")
        history.append(LossBreakdown(*(sums / n_batches)))
        lrs.append(lr)
        if epoch % 10 == 0 or epoch == train_cfg.epochs - 1:
            log.info(
                "epoch %d lr %.3g loss %.5f (bce %.4f box %.4f center %.4f) %.1fs",
                epoch, lr, *history[-1], time.perf_counter() - t0,
            )
        if callback is not None:
            callback(epoch, model, history[-1])
        if run_dir is not None and train_cfg.checkpoint_every and (epoch + 1) % train_cfg.checkpoint_every == 0:
            save_checkpoint(model, run_dir / "checkpoints" / f"epoch_{epoch + 1:05d}", {"epoch": epoch + 1})

    if run_dir is not None:
        _write_history(run_dir / "history.tsv", list(zip(lrs, history)))
        save_checkpoint(model, run_dir / "model", {"epoch": train_cfg.epochs})
    return model, history


def stack_windows(records, s):
    """All windows as one array ``(N, s, n, 5)`` plus their target records."""
    frames, starts, targets = window_index(records, s)
    return gather_windows(frames, starts, s), targets
