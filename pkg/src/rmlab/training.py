"""Reward-model training in three modes.

standard        minimize -log(sigmoid(margin)) on full multimodal features
text_only       same loss with the vision block zeroed
shortcut_aware  dual branch: an auxiliary text-only net trains alongside the
                primary net, and each sample's primary loss is weighted by
                its shortcut-failure coefficient

    sfc = loss_text / (loss_multimodal + loss_text)

computed from the current step's detached per-sample losses. The weights are
plain numbers: no gradient flows through them. A high sfc means the text-only
branch fails on that sample, so the primary branch is pushed toward the
samples where multimodal grounding is required.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import net as netmod
from .errors import ConfigError, DomainError
from .net import NetDims, OptimizerState, RewardNet, adamw_step, bt_loss, sigmoid

MODES = ("standard", "text_only", "shortcut_aware")
LOSS_FLOOR = 1e-300  # keeps the sfc ratio defined if a margin saturates


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    mode: str
    base_lr: float = 5e-4
    epochs: int = 44
    batch_size: int = 64
    weight_decay: float = 0.05
    warmup_ratio: float = 0.1
    seed: int = 0
    sfc_normalized: bool = True  # weight by sfc / batch-mean(sfc); False = raw sfc
    hidden: int = 64
    aux_lr_scale: float = 8.0  # text branch lr multiplier; see note in train()
    force_uniform_weights: bool = False  # diagnostic: overrides all weights to 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError("warmup_ratio must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "base_lr": self.base_lr, "epochs": self.epochs,
            "batch_size": self.batch_size, "weight_decay": self.weight_decay,
            "warmup_ratio": self.warmup_ratio, "seed": self.seed,
            "sfc_normalized": self.sfc_normalized, "hidden": self.hidden,
            "aux_lr_scale": self.aux_lr_scale,
            "force_uniform_weights": self.force_uniform_weights,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class EpochSfcStats:
    """Mean sfc split by the generator's planted-shortcut flag, one epoch."""

    epoch: int
    mean_sfc_planted: float | None
    mean_sfc_clean: float | None
    n_planted: int
    n_clean: int


@dataclass
class TrainRun:
    """Configuration plus the persisted outcome of one training job."""

    config: TrainConfig
    dataset_fingerprint: str
    loss_trace: list
    sfc_trace: list | None
    primary: RewardNet
    aux: RewardNet | None = None
    epoch_sfc_stats: list = field(default_factory=list)

    def save(self, run_dir) -> None:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump({"config": self.config.to_dict(),
                       "dataset_fingerprint": self.dataset_fingerprint},
                      fh, sort_keys=True, indent=1)
        with open(os.path.join(run_dir, "trace.csv"), "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "mean_sfc"])
            for i, loss in enumerate(self.loss_trace):
                sfc_val = "" if self.sfc_trace is None else repr(self.sfc_trace[i])
                writer.writerow([i + 1, repr(loss), sfc_val])
        with open(os.path.join(run_dir, "primary.json"), "w", encoding="utf-8") as fh:
            json.dump(self.primary.to_dict(), fh)
        if self.aux is not None:
            with open(os.path.join(run_dir, "aux.json"), "w", encoding="utf-8") as fh:
                json.dump(self.aux.to_dict(), fh)
        if self.epoch_sfc_stats:
            with open(os.path.join(run_dir, "sfc_by_flag.json"), "w", encoding="utf-8") as fh:
                json.dump([vars(s) for s in self.epoch_sfc_stats], fh, indent=1)

    @classmethod
    def load(cls, run_dir) -> "TrainRun":
        with open(os.path.join(run_dir, "config.json"), encoding="utf-8") as fh:
            doc = json.load(fh)
        config = TrainConfig.from_dict(doc["config"])
        losses, sfcs = [], []
        with open(os.path.join(run_dir, "trace.csv"), encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                losses.append(float(row["loss"]))
                if row["mean_sfc"]:
                    sfcs.append(float(row["mean_sfc"]))
        with open(os.path.join(run_dir, "primary.json"), encoding="utf-8") as fh:
            primary = RewardNet.from_dict(json.load(fh))
        aux = None
        aux_path = os.path.join(run_dir, "aux.json")
        if os.path.exists(aux_path):
            with open(aux_path, encoding="utf-8") as fh:
                aux = RewardNet.from_dict(json.load(fh))
        stats = []
        stats_path = os.path.join(run_dir, "sfc_by_flag.json")
        if os.path.exists(stats_path):
            with open(stats_path, encoding="utf-8") as fh:
                stats = [EpochSfcStats(**row) for row in json.load(fh)]
        return cls(config=config, dataset_fingerprint=doc["dataset_fingerprint"],
                   loss_trace=losses, sfc_trace=sfcs or None,
                   primary=primary, aux=aux, epoch_sfc_stats=stats)


def sfc(loss_mm: float, loss_t: float) -> float:
    """Shortcut-failure coefficient: the text branch's share of the total loss.

    Both losses are treated as detached constants; the result is in (0, 1),
    decreasing in loss_mm and increasing in loss_t.
    """
    if loss_mm <= 0.0 or loss_t <= 0.0:
        raise DomainError(f"sfc needs strictly positive losses, got ({loss_mm}, {loss_t})")
    return loss_t / (loss_mm + loss_t)


def proxy_mask(sample, proxy_kind):
    """Return a copy of the sample with the designated feature blocks zeroed.

    "text_only" zeroes the vision block; "image_only" zeroes everything
    textual (query and both answers); a custom 0/1 vector over the
    concatenated (v, q, a) layout masks each block elementwise, with the
    answer segment applied to both answers.
    """
    from .envs import PreferenceSample

    d_v, d_q, d_a = sample.v.shape[0], sample.q.shape[0], sample.a1.shape[0]
    if isinstance(proxy_kind, str):
        if proxy_kind == "text_only":
            mask = np.concatenate([np.zeros(d_v), np.ones(d_q), np.ones(d_a)])
        elif proxy_kind == "image_only":
            mask = np.concatenate([np.ones(d_v), np.zeros(d_q), np.zeros(d_a)])
        else:
            raise ConfigError(f"unknown proxy kind {proxy_kind!r}")
    else:
        mask = np.asarray(proxy_kind, dtype=np.float64)
        if mask.shape != (d_v + d_q + d_a,):
            raise ConfigError(
                f"custom mask must have length {d_v + d_q + d_a}, got {mask.shape}")
    return PreferenceSample(
        v=sample.v * mask[:d_v],
        q=sample.q * mask[d_v:d_v + d_q],
        a1=sample.a1 * mask[d_v + d_q:],
        a2=sample.a2 * mask[d_v + d_q:],
        y=sample.y,
        shortcut_applied=sample.shortcut_applied,
    )


def _stack_pairs(dataset, mask_vision: bool):
    """Chosen/rejected concatenated feature matrices for a whole dataset."""
    n = len(dataset.samples)
    s0 = dataset.samples[0]
    d_v, d_q, d_a = s0.v.shape[0], s0.q.shape[0], s0.a1.shape[0]
    x_c = np.empty((n, d_v + d_q + d_a))
    x_r = np.empty_like(x_c)
    for i, s in enumerate(dataset.samples):
        v = np.zeros(d_v) if mask_vision else s.v
        chosen, rejected = (s.a1, s.a2) if s.y == 1 else (s.a2, s.a1)
        x_c[i] = np.concatenate([v, s.q, chosen])
        x_r[i] = np.concatenate([v, s.q, rejected])
    return x_c, x_r


def batch_losses(network: RewardNet, x_c: np.ndarray, x_r: np.ndarray) -> np.ndarray:
    """Per-sample pairwise losses for stacked chosen/rejected features."""
    margins = netmod.batch_scores(network, x_c) - netmod.batch_scores(network, x_r)
    return bt_loss(margins)


def batch_pair_grads(network: RewardNet, x_c: np.ndarray, x_r: np.ndarray,
                     weights: np.ndarray):
    """Per-sample losses plus the weighted mean gradient over the batch.

    The gradient equals sum_i weights[i] * grad_i / batch_size, reduced with
    fixed-order matrix products so reruns are bit-identical.
    """
    n = x_c.shape[0]
    z_c = x_c @ network.w1.T + network.b1
    z_r = x_r @ network.w1.T + network.b1
    h_c, h_r = np.tanh(z_c), np.tanh(z_r)
    margins = (h_c - h_r) @ network.w2
    losses = bt_loss(margins)
    g = -(sigmoid(-margins)) * weights / n  # (n,) d(weighted mean loss)/dmargin

    coef_c = (g[:, None] * (1.0 - h_c * h_c)) * network.w2
    coef_r = (g[:, None] * (1.0 - h_r * h_r)) * network.w2
    grads = {
        "w1": coef_c.T @ x_c - coef_r.T @ x_r,
        "b1": coef_c.sum(axis=0) - coef_r.sum(axis=0),
        "w2": (g[:, None] * (h_c - h_r)).sum(axis=0),
        "b2": 0.0,
    }
    return losses, grads


@dataclass
class SampleRecord:
    """Exact per-sample quantities used by one shortcut-aware batch step."""

    loss_mm: float
    loss_t: float
    sfc: float
    weight: float


def weighted_grad_step(primary: RewardNet, aux: RewardNet,
                       x_c: np.ndarray, x_r: np.ndarray,
                       xt_c: np.ndarray, xt_r: np.ndarray,
                       normalized: bool = False,
                       weight_override: np.ndarray | None = None):
    """Gradients for one shortcut-aware batch.

    Primary gradients are the sfc-weighted mean of per-sample pair gradients;
    auxiliary gradients are the unweighted mean of text-only pair gradients.
    ``weight_override`` bypasses the sfc weights entirely (diagnostics: all
    ones reduces the step to standard training; passing previously recorded
    weights demonstrates the weights are detached constants).

    Returns (records, primary_grads, aux_grads).
    """
    loss_mm = np.maximum(batch_losses(primary, x_c, x_r), LOSS_FLOOR)
    loss_t = np.maximum(batch_losses(aux, xt_c, xt_r), LOSS_FLOOR)
    sfc_vals = loss_t / (loss_mm + loss_t)

    if weight_override is not None:
        weights = np.asarray(weight_override, dtype=np.float64)
    elif normalized:
        weights = sfc_vals / np.mean(sfc_vals)
    else:
        weights = sfc_vals

    _, primary_grads = batch_pair_grads(primary, x_c, x_r, weights)
    _, aux_grads = batch_pair_grads(aux, xt_c, xt_r, np.ones_like(weights))
    records = [SampleRecord(float(lm), float(lt), float(s), float(w))
               for lm, lt, s, w in zip(loss_mm, loss_t, sfc_vals, weights)]
    return records, primary_grads, aux_grads


def train(config: TrainConfig, dataset) -> TrainRun:
    """Run one training job over the dataset and return its artifacts."""
    n = len(dataset.samples)
    if n == 0:
        raise ConfigError("dataset is empty")
    s0 = dataset.samples[0]
    dims = NetDims(d_v=s0.v.shape[0], d_q=s0.q.shape[0], d_a=s0.a1.shape[0],
                   hidden=config.hidden)

    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = steps_per_epoch * config.epochs

    primary = RewardNet.init(dims, config.seed)
    opt = OptimizerState.for_net(primary, config.base_lr, config.warmup_ratio,
                                 total_steps, config.weight_decay)
    aux = aux_opt = None
    if config.mode == "shortcut_aware":
        aux = RewardNet.init(dims, config.seed)  # bit-identical to primary
        # The text branch shares the schedule shape but runs at a scaled lr.
        # If both branches learn the planted text pattern at the same rate,
        # their losses track each other and every sfc sits at ~0.5; the proxy
        # has to stay ahead on text-learnable samples for the coefficient to
        # discriminate at this scale.
        aux_opt = OptimizerState.for_net(aux, config.base_lr * config.aux_lr_scale,
                                         config.warmup_ratio, total_steps,
                                         config.weight_decay)

    mask_primary = config.mode == "text_only"
    x_c, x_r = _stack_pairs(dataset, mask_vision=mask_primary)
    xt_c = xt_r = None
    if config.mode == "shortcut_aware":
        xt_c, xt_r = _stack_pairs(dataset, mask_vision=True)
    flags = np.array([s.shortcut_applied for s in dataset.samples], dtype=bool)

    shuffle_rng = np.random.default_rng([config.seed, 0x5F5])
    loss_trace, sfc_trace = [], [] if config.mode == "shortcut_aware" else None
    epoch_stats = []

    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        sfc_sum = np.zeros(2)  # planted, clean
        sfc_count = np.zeros(2, dtype=np.int64)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            if config.mode == "shortcut_aware":
                override = np.ones(len(idx)) if config.force_uniform_weights else None
                records, g_primary, g_aux = weighted_grad_step(
                    primary, aux, x_c[idx], x_r[idx], xt_c[idx], xt_r[idx],
                    normalized=config.sfc_normalized, weight_override=override)
                batch_sfc = np.array([r.sfc for r in records])
                batch_loss = np.array([r.loss_mm for r in records])
                adamw_step(opt, primary, g_primary)
                adamw_step(aux_opt, aux, g_aux)
                sfc_trace.append(float(np.mean(batch_sfc)))
                planted = flags[idx]
                sfc_sum += [batch_sfc[planted].sum(), batch_sfc[~planted].sum()]
                sfc_count += [int(planted.sum()), int((~planted).sum())]
            else:
                losses, grads = batch_pair_grads(
                    primary, x_c[idx], x_r[idx], np.ones(len(idx)))
                batch_loss = losses
                adamw_step(opt, primary, grads)
            loss_trace.append(float(np.mean(batch_loss)))
        if config.mode == "shortcut_aware":
            epoch_stats.append(EpochSfcStats(
                epoch=epoch,
                mean_sfc_planted=float(sfc_sum[0] / sfc_count[0]) if sfc_count[0] else None,
                mean_sfc_clean=float(sfc_sum[1] / sfc_count[1]) if sfc_count[1] else None,
                n_planted=int(sfc_count[0]),
                n_clean=int(sfc_count[1]),
            ))

    return TrainRun(config=config, dataset_fingerprint=dataset.fingerprint,
                    loss_trace=loss_trace, sfc_trace=sfc_trace,
                    primary=primary, aux=aux, epoch_sfc_stats=epoch_stats)


def mean_sfc_over(primary: RewardNet, aux: RewardNet, dataset) -> float:
    """Mean end-state sfc of a dataset under a trained branch pair."""
    x_c, x_r = _stack_pairs(dataset, mask_vision=False)
    xt_c, xt_r = _stack_pairs(dataset, mask_vision=True)
    loss_mm = np.maximum(batch_losses(primary, x_c, x_r), LOSS_FLOOR)
    loss_t = np.maximum(batch_losses(aux, xt_c, xt_r), LOSS_FLOOR)
    return float(np.mean(loss_t / (loss_mm + loss_t)))
