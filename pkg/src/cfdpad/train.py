"""Training loop with per-batch channel importance, suppression and the combined loss."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import checkpoint
from .backbone import Model, classifier_forward, embedding_forward, generator_forward, init_model, model_from_arrays, spoof_score
from .config import RunConfig, config_from_mapping, parse_kv
from .data import STREAM_AUGMENT, STREAM_BATCHES, Dataset, augment_batch, balanced_batches, stream, synth_generate
from .denoise import ChannelDistance, DenoiseMask, importance_update, select_bottomk, select_topk, suppress_channels
from .losses import LossWeights, combined_loss, liveness_labels
from .metrics import ScoreSet, all_metrics
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

DENOISING_VARIANTS = ("cfd_only", "cfd_regularize", "full")


def variant_weights(variant: str, w: LossWeights) -> LossWeights:
    """Loss weights a variant actually trains with."""
    if variant == "baseline":
        return LossWeights(w.lambda1, 0.0, 0.0, w.margin)
    if variant == "pa_only":
        return LossWeights(w.lambda1, w.lambda2, 0.0, w.margin)
    if variant == "cfd_only":
        return LossWeights(w.lambda1, 0.0, w.lambda3, w.margin)
    return w


def variant_mask(variant: str, dis: ChannelDistance, k: int) -> DenoiseMask:
    if variant == "cfd_regularize":
        return select_bottomk(dis, k)
    if variant in DENOISING_VARIANTS:
        return select_topk(dis, k)
    return DenoiseMask.all_channels(dis.channels)


@dataclass
class StepTimes:
    importance: float = 0.0
    gradient: float = 0.0


@dataclass
class Trainer:
    """Mutable training state for one run: model, optimizer, channel distance."""

    config: RunConfig
    model: Model
    adam: AdamState
    dis: ChannelDistance
    times: StepTimes = field(default_factory=StepTimes)

    @classmethod
    def create(cls, config: RunConfig) -> "Trainer":
        model = init_model(config.model, config.seed)
        return cls(
            config,
            model,
            AdamState(lr=config.lr),
            ChannelDistance.zeros(config.model.feature_channels, config.dis_decay),
        )

    def step(self, x: np.ndarray, attack: np.ndarray) -> dict[str, float]:
        """One optimisation step on a batch; returns the loss value."""
        cfg = self.config
        model = self.model
        y = liveness_labels(attack)
        t0 = time.perf_counter()
        f = generator_forward(model, x)
        e = embedding_forward(model, f)
        o = classifier_forward(model, e)
        t_imp = 0.0
        if cfg.variant in DENOISING_VARIANTS:
            t1 = time.perf_counter()
            importance_update(model, f, self.dis)
            t_imp = time.perf_counter() - t1
            mask = variant_mask(cfg.variant, self.dis, cfg.k)
            e_dn = embedding_forward(model, suppress_channels(f, mask))
            o_dn = classifier_forward(model, e_dn)
        else:
            e_dn, o_dn = e, o
        loss = combined_loss(o, o_dn, e_dn, y, attack, variant_weights(cfg.variant, cfg.weights))
        model.zero_grad()
        loss.backward()
        grads = {n: p.grad for n, p in model.params.items() if p.grad is not None}
        new, self.adam = adam_step(model.arrays(), grads, self.adam)
        model.set_arrays(new)
        self.times.importance += t_imp
        self.times.gradient += time.perf_counter() - t0 - t_imp
        return {"loss": loss.item()}

    def mask(self) -> DenoiseMask:
        return variant_mask(self.config.variant, self.dis, self.config.k)


@dataclass
class RunResult:
    config: RunConfig
    model: Model
    dis: ChannelDistance
    mask: DenoiseMask
    epoch_losses: list[float]
    metrics: dict[str, float]
    times: dict[str, float]
    train: Dataset
    test: Dataset

    def report(self) -> dict:
        """Deterministic run summary (wall-clock times are kept separately)."""
        return {
            "variant": self.config.variant,
            "seed": self.config.seed,
            "epoch_losses": self.epoch_losses,
            "metrics": self.metrics,
            "dis": self.dis.dis.tolist(),
            "batches_seen": self.dis.batches_seen,
            "mask_keep": [int(b) for b in self.mask.keep],
            "config": self.config.to_text(),
        }


def run_training(config: RunConfig, data: Optional[tuple[Dataset, Dataset]] = None) -> RunResult:
    train, test = data if data is not None else synth_generate(config.synth)
    trainer = Trainer.create(config)
    losses = []
    t_start = time.perf_counter()
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        batches = balanced_batches(train.attack, config.batch_size, stream(config.seed, STREAM_BATCHES, epoch))
        for b, idx in enumerate(batches):
            x = train.images[idx]
            if config.use_augment:
                x = augment_batch(x, config.augment, stream(config.seed, STREAM_AUGMENT, epoch, b))
            out = trainer.step(x, train.attack[idx])
            total += out["loss"]
            count += 1
        losses.append(total / count)
        log.info("epoch %d/%d loss %.5f", epoch + 1, config.epochs, losses[-1])
    mask = trainer.mask()
    keep = mask.keep if config.apply_mask else None
    metrics = evaluate(trainer.model, test, keep)
    times = {
        "importance_s": trainer.times.importance,
        "gradient_s": trainer.times.gradient,
        "total_s": time.perf_counter() - t_start,
    }
    return RunResult(config, trainer.model, trainer.dis, mask, losses, metrics, times, train, test)


def score_dataset(model: Model, ds: Dataset, keep: Optional[np.ndarray] = None, chunk: int = 256) -> ScoreSet:
    scores = np.concatenate([spoof_score(model, ds.images[i : i + chunk], keep) for i in range(0, len(ds), chunk)])
    return ScoreSet(scores, ds.is_spoof)


def evaluate(model: Model, ds: Dataset, keep: Optional[np.ndarray] = None) -> dict[str, float]:
    return all_metrics(score_dataset(model, ds, keep))


# checkpoints

def checkpoint_arrays(result: RunResult) -> dict[str, np.ndarray]:
    arrays = {name: arr for name, arr in result.model.arrays().items()}
    arrays["dis"] = result.dis.dis
    arrays["dis_batches"] = np.array(float(result.dis.batches_seen))
    arrays["mask_keep"] = result.mask.keep.astype(np.float64)
    arrays["config.txt"] = checkpoint.text_to_array(result.config.to_text())
    return arrays


@dataclass
class LoadedCheckpoint:
    config: RunConfig
    model: Model
    dis: ChannelDistance
    mask: DenoiseMask


def load_checkpoint(path: str) -> LoadedCheckpoint:
    arrays = checkpoint.load(path)
    for key in ("config.txt", "dis", "mask_keep"):
        if key not in arrays:
            raise checkpoint.ContainerError(f"checkpoint lacks array {key!r}")
    cfg = config_from_mapping(parse_kv(checkpoint.array_to_text(arrays["config.txt"])))
    model = model_from_arrays(cfg.model, arrays)
    dis = ChannelDistance(arrays["dis"].copy(), int(arrays.get("dis_batches", np.array(0.0))), cfg.dis_decay)
    return LoadedCheckpoint(cfg, model, dis, DenoiseMask(arrays["mask_keep"] > 0.5))

