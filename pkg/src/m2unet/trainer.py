"""Training and evaluation loops.

One optimizer thread owns the parameters; every random choice derives from
(seed, epoch[, index]) so runs are reproducible, resumable at epoch
boundaries, and independent of loader parallelism.  The schedule is a
single non-restarting cosine over all optimizer steps.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt_mod
from . import engine
from .data import AugmentConfig, MaskDataset, augment, per_sample_rng, synth_polyp_dataset
from .engine import Tensor, backward, no_grad
from .errors import NumericError, UsageError
from .losses import MetricsReport, batch_jaccard_loss, score_sample
from .model import ModelConfig, build_model, m2unet_forward, named_parameters
from .optim import OptimState, adam_step, cosine_lr


@dataclass
class TrainConfig:
    """Run recipe: data source, schedule, and model/augment sub-configs."""

    epochs: int = 158
    batch_size: int = 4
    target_size: int = 64
    lr_max: float = 1e-4
    lr_min: float = 0.0
    alpha: float = 0.7
    seed: int = 0
    dataset: str = "synth"      # folder path, or "synth" for generated data
    synth_n: int = 16
    out_dir: str = "runs"
    ckpt_every: int = 0         # extra checkpoint every k epochs (0 = final only)
    resume: str = ""
    model: ModelConfig = field(default_factory=lambda: ModelConfig(image_size=(64, 64)))
    aug: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1 or self.synth_n < 0:
            raise UsageError("epochs and batch_size must be positive")
        if self.target_size % 32 != 0:
            raise UsageError(f"target_size {self.target_size} must be divisible by 32")
        if self.model.image_size != (self.target_size, self.target_size):
            raise UsageError(f"model.image_size {self.model.image_size} must match "
                             f"train.target_size {self.target_size}")
        self.model.validate()
        self.aug.validate()
        return self


@dataclass
class TrainResult:
    params: object
    optim: OptimState
    step_losses: list
    epoch_lines: list
    ckpt_path: str


def train_config_from_flat(flat):
    """Build a TrainConfig (with nested model/aug) from parsed flat keys.

    ``model.image_size`` defaults to the training target size unless set
    explicitly, so a config file only needs ``train.target_size``.
    """
    from . import config as config_mod

    bad = config_mod.unknown_keys(flat)
    if bad:
        raise UsageError(f"unknown config keys: {', '.join(sorted(bad))}")
    base = TrainConfig()
    kwargs = config_mod.fill_dataclass(TrainConfig, base, flat, "train")
    target = kwargs.get("target_size", base.target_size)
    flat = dict(flat)
    flat.setdefault("model.image_size", f"{target},{target}")
    kwargs["model"] = config_mod.model_config_from_flat(flat)
    kwargs["aug"] = config_mod.augment_config_from_flat(flat)
    return TrainConfig(**kwargs).validate()


def load_training_data(cfg):
    if cfg.dataset == "synth":
        return synth_polyp_dataset(cfg.synth_n, cfg.target_size, cfg.seed)
    return MaskDataset(cfg.dataset, cfg.target_size)


def _stack(samples):
    images = np.stack([s.image.data for s in samples])
    masks = np.stack([s.mask.data for s in samples])
    return Tensor(images), Tensor(masks)


def train(cfg, log=print):
    """Run the full loop; returns a :class:`TrainResult`.

    Per epoch: seeded shuffle, augmentation, forward, smoothed-Jaccard
    loss, backward, Adam with the cosine rate for the global step.  Logs
    one tab-separated ``epoch<TAB>mean_loss<TAB>lr`` line per epoch.  A
    checkpoint lands in ``out_dir`` at the end and every ``ckpt_every``
    epochs; resuming from one reproduces the uninterrupted run.
    """
    cfg.validate()
    dataset = load_training_data(cfg)
    if len(dataset) == 0:
        raise UsageError(f"dataset {cfg.dataset!r} is empty")

    if cfg.resume:
        params, done_steps, optim = ckpt_mod.load(cfg.resume)
        if optim is None:
            raise UsageError(f"checkpoint {cfg.resume!r} has no optimizer state to resume")
        if params.cfg != cfg.model:
            raise UsageError("checkpoint model config does not match train config")
    else:
        params = build_model(cfg.model, cfg.seed)
        optim = OptimState()
        done_steps = 0

    named = named_parameters(params)
    steps_per_epoch = max(1, -(-len(dataset) // cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    if done_steps % steps_per_epoch != 0:
        raise UsageError(f"checkpoint step {done_steps} is not an epoch boundary "
                         f"for {steps_per_epoch} steps/epoch")
    start_epoch = done_steps // steps_per_epoch
    if start_epoch >= cfg.epochs:
        raise UsageError(f"checkpoint already covers {start_epoch} epochs >= {cfg.epochs}")

    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.out_dir, "model.ckpt")
    step = done_steps
    step_losses = []
    epoch_lines = []
    t0 = time.time()
    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, epoch))).permutation(len(dataset))
        epoch_losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            batch = []
            for j in idx:
                s = dataset[int(j)]
                if cfg.aug.enabled:
                    rng_j = per_sample_rng(cfg.seed, epoch, int(j))
                    donor_j = int(rng_j.integers(0, len(dataset)))
                    donor = dataset[donor_j] if donor_j != int(j) else None
                    s = augment(s, cfg.aug, rng_j, donor=donor)
                batch.append(s)
            images, masks = _stack(batch)
            lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min)
            try:
                probs = m2unet_forward(images, params)
                loss = batch_jaccard_loss(masks, probs, alpha=cfg.alpha)
            except NumericError as e:
                raise NumericError(f"aborting at step {step}: {e}") from e
            grads = backward(loss, params=list(named.values()))
            grads_by_name = {name: grads[t] for name, t in named.items()}
            adam_step(named, grads_by_name, optim, lr)
            step += 1
            step_losses.append(loss.item())
            epoch_losses.append(loss.item())
        line = f"{epoch}\t{float(np.mean(epoch_losses)):.6f}\t{lr:.8g}"
        epoch_lines.append(line)
        if log is not None:
            log(line)
        if cfg.ckpt_every and (epoch + 1) % cfg.ckpt_every == 0:
            snap = os.path.join(cfg.out_dir, f"model_epoch{epoch + 1:04d}.ckpt")
            ckpt_mod.save(snap, params, step, optim)
    ckpt_mod.save(ckpt_path, params, step, optim)
    if log is not None:
        log(f"# finished {step - done_steps} steps in {time.time() - t0:.1f}s; "
            f"checkpoint {ckpt_path}")
    return TrainResult(params=params, optim=optim, step_losses=step_losses,
                       epoch_lines=epoch_lines, ckpt_path=ckpt_path)


def evaluate(params, dataset, threshold=0.5, predict=None):
    """Score every sample without augmentation; returns a MetricsReport.

    ``predict`` overrides the model forward (mainly for tests); it maps a
    Sample to an (H, W, 1) probability array.
    """
    rows = []
    with no_grad():
        for i in range(len(dataset)):
            s = dataset[i]
            if predict is None:
                probs = m2unet_forward(_unsqueeze(s.image), params).data[0]
            else:
                probs = np.asarray(predict(s))
            rows.append(score_sample(s.id, s.mask.data, probs, threshold=threshold))
    return MetricsReport(per_sample=rows)


def evaluate_checkpoint(ckpt_path, data_dir, target_size=None):
    """Evaluate a stored checkpoint against a dataset folder."""
    params, _, _ = ckpt_mod.load(ckpt_path)
    w, h = params.cfg.image_size
    if target_size is not None and target_size != w:
        raise UsageError(f"eval target size {target_size} conflicts with "
                         f"checkpoint image size {w}")
    dataset = MaskDataset(data_dir, w)
    return evaluate(params, dataset)


def _unsqueeze(t):
    return Tensor(t.data[None, ...])
