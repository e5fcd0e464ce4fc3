"""Adversarial optimization: non-saturating losses with an R1 gradient
penalty on real samples, Adam updates, and progressive resolution growth."""
from __future__ import annotations

import csv as csvmod
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .data import LabeledImageSet
from .gan import GanConfig, GeneratorCheckpoint, NoiseSpec, save_checkpoint

FULL_SCALE_BATCHES = {4: 128, 8: 128, 16: 128, 32: 64, 64: 32, 128: 16, 256: 8}
DESK_BATCHES = {4: 64, 8: 64, 16: 64, 32: 32, 64: 16, 128: 8, 256: 8}


@dataclass
class StageSpec:
    resolution: int
    batch_size: int
    steps: int


@dataclass
class TrainConfig:
    r1_gamma: float = 10.0
    learning_rate: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    resolution_ladder: list[StageSpec] | None = None
    steps_per_stage: int = 400
    fade_in_fraction: float = 0.3
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.r1_gamma < 0:
            raise ValueError("r1_gamma must be >= 0")
        if not 0.0 <= self.fade_in_fraction <= 1.0:
            raise ValueError("fade_in_fraction must be in [0,1]")
        if self.resolution_ladder:
            ladder = [s.resolution for s in self.resolution_ladder]
            if ladder[0] != 4 or any(b != 2 * a for a, b in zip(ladder, ladder[1:])):
                raise ValueError("ladder resolutions must double from 4")
            if any(s.batch_size < 1 for s in self.resolution_ladder):
                raise ValueError("batch sizes must be >= 1")


def progressive_schedule(gan_cfg: GanConfig, train_cfg: TrainConfig) -> list[StageSpec]:
    """Ordered growth stages 4 -> target with per-stage batch size and steps.

    Full 256 scale uses the reference batch ladder (128,128,128,64,32,16,8);
    desk-scale targets start at 64 and halve past 16x16.
    """
    if train_cfg.resolution_ladder:
        return list(train_cfg.resolution_ladder)
    table = FULL_SCALE_BATCHES if gan_cfg.target_resolution == 256 else DESK_BATCHES
    return [
        StageSpec(res, table[res], train_cfg.steps_per_stage)
        for res in gan_cfg.resolutions
    ]


@dataclass
class TrainState:
    step: int = 0
    stage_idx: int = 0
    blend: float = 1.0
    history: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def g_loss(fake_logits):
    """Non-saturating generator loss: mean softplus(-logit)."""
    t = ad.astensor(fake_logits)
    return ad.mean(ad.softplus(ad.neg(t)))


def d_loss(real_logits, fake_logits, r1_term=0.0):
    t_r, t_f = ad.astensor(real_logits), ad.astensor(fake_logits)
    loss = ad.add(ad.mean(ad.softplus(ad.neg(t_r))), ad.mean(ad.softplus(t_f)))
    return ad.add(loss, ad.astensor(r1_term))


def r1_penalty(real_batch, labels, logit_fn, gamma: float):
    """(gamma/2) * E[ ||d logit / d input||^2 ] evaluated on real samples.

    `logit_fn(x)` must map an input Tensor to per-sample logits so the input
    gradient exists; the result keeps its graph and can be differentiated
    with respect to the discriminator parameters.
    """
    x = Tensor(np.asarray(real_batch), requires_grad=True)
    logits = logit_fn(x)
    if not logits.requires_grad:
        raise ValueError("logit_fn must build a differentiable graph over its input")
    s = ad.sum_(logits)
    (gx,) = ad.grad(s, [x], create_graph=True)
    per_sample = ad.sum_(ad.pow_const(gx, 2), axis=tuple(range(1, gx.ndim)))
    return ad.mul(ad.mean(per_sample), gamma / 2.0)


# ---------------------------------------------------------------------------
# the update step
# ---------------------------------------------------------------------------


def downscale_to(imgs: np.ndarray, res: int) -> np.ndarray:
    """Average-pool images down to the requested stage resolution."""
    out = imgs
    while out.shape[-1] > res:
        b, c, h, w = out.shape
        out = out.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return out.astype(imgs.dtype)


class GanTrainer:
    def __init__(self, ckpt: GeneratorCheckpoint, train_cfg: TrainConfig):
        self.ckpt = ckpt
        self.cfg = train_cfg
        lr = train_cfg.learning_rate
        self.opt_g = nn.Adam(
            ckpt.generator.trainable_parameters(),
            lr=lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.adam_eps,
        )
        self.opt_d = nn.Adam(
            ckpt.discriminator.trainable_parameters(),
            lr=lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.adam_eps,
        )
        self.state = TrainState()

    def train_step(self, real_imgs, real_labels, stage_res, blend) -> dict:
        """One discriminator update (with R1 on the real batch) followed by
        one generator update. Deterministic given (seed, global step)."""
        gen, disc = self.ckpt.generator, self.ckpt.discriminator
        cfg = self.ckpt.config
        rng = np.random.default_rng([self.cfg.seed, self.state.step, 0x57E9])
        b = len(real_imgs)

        # --- discriminator
        z = rng.standard_normal((b, cfg.latent_dim))
        fake_c = rng.integers(0, cfg.n_classes, b)
        fakes = gen.generate(z, fake_c, NoiseSpec("fresh"), stage_res=stage_res,
                             blend=blend, rng=rng)
        x_real = Tensor(np.asarray(real_imgs), requires_grad=True)
        real_logits = disc.discriminate(x_real, real_labels, stage_res=stage_res, blend=blend)
        fake_logits = disc.discriminate(fakes, fake_c, stage_res=stage_res, blend=blend)
        if self.cfg.r1_gamma > 0:
            s = ad.sum_(real_logits)
            (gx,) = ad.grad(s, [x_real], create_graph=True)
            per_sample = ad.sum_(ad.pow_const(gx, 2), axis=(1, 2, 3))
            r1 = ad.mul(ad.mean(per_sample), self.cfg.r1_gamma / 2.0)
        else:
            r1 = ad.astensor(np.asarray(0.0, dtype=x_real.dtype))
        loss_d = d_loss(real_logits, fake_logits, r1)
        grads_d = ad.grad(loss_d, self.opt_d.params)
        self.opt_d.step(grads_d)

        # --- generator
        z2 = rng.standard_normal((b, cfg.latent_dim))
        c2 = rng.integers(0, cfg.n_classes, b)
        fakes2 = gen.generate_graph(z2, c2, NoiseSpec("fresh"), stage_res=stage_res,
                                    blend=blend, rng=rng)
        logits2 = disc.discriminate(fakes2, c2, stage_res=stage_res, blend=blend)
        loss_g = g_loss(logits2)
        grads_g = ad.grad(loss_g, self.opt_g.params)
        self.opt_g.step(grads_g)

        losses = {
            "step": self.state.step,
            "stage": stage_res,
            "d_loss": float(loss_d.data),
            "g_loss": float(loss_g.data),
            "r1": float(r1.data),
        }
        if not np.isfinite(losses["d_loss"]) or not np.isfinite(losses["g_loss"]):
            raise FloatingPointError(f"non-finite loss at step {self.state.step}: {losses}")
        self.state.step += 1
        self.state.history.append(losses)
        return losses

    def run(self, dataset: LabeledImageSet, log_path=None, progress=None,
            checkpoint_dir=None):
        """Full progressive schedule over the dataset. With checkpoint_dir
        set, an intermediate checkpoint lands every `checkpoint_every` steps."""
        schedule = progressive_schedule(self.ckpt.config, self.cfg)
        imgs = dataset.stacked().astype(self.ckpt.config.dtype)
        labels = dataset.labels
        data_rng = np.random.default_rng([self.cfg.seed, 0xDA7A])
        t0 = time.time()
        for stage_idx, stage in enumerate(schedule):
            self.state.stage_idx = stage_idx
            stage_imgs = downscale_to(imgs, stage.resolution)
            fade_steps = int(self.cfg.fade_in_fraction * stage.steps)
            for local in range(stage.steps):
                if stage_idx == 0 or fade_steps == 0:
                    blend = 1.0
                else:
                    blend = min(1.0, (local + 1) / max(fade_steps, 1))
                self.state.blend = blend
                idx = data_rng.integers(0, len(labels), stage.batch_size)
                self.train_step(stage_imgs[idx], labels[idx], stage.resolution, blend)
                if progress and self.state.step % 100 == 0:
                    progress(self.state.step, self.state.history[-1], time.time() - t0)
                if (checkpoint_dir and self.cfg.checkpoint_every
                        and self.state.step % self.cfg.checkpoint_every == 0):
                    self.ckpt.step = self.state.step
                    save_checkpoint(self.ckpt, Path(checkpoint_dir) / f"step-{self.state.step:06d}")
        self.ckpt.step = self.state.step
        if log_path:
            write_loss_csv(self.state.history, log_path)
        return self.state


def write_loss_csv(history: list[dict], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csvmod.DictWriter(fh, fieldnames=["step", "stage", "d_loss", "g_loss", "r1"])
        writer.writeheader()
        writer.writerows(history)


def train_gan(dataset: LabeledImageSet, gan_cfg: GanConfig, train_cfg: TrainConfig,
              out_dir=None, progress=None) -> GeneratorCheckpoint:
    ckpt = GeneratorCheckpoint.fresh(gan_cfg)
    trainer = GanTrainer(ckpt, train_cfg)
    log_path = Path(out_dir) / "losses.csv" if out_dir else None
    snap_dir = Path(out_dir) / "snapshots" if out_dir and train_cfg.checkpoint_every else None
    trainer.run(dataset, log_path=log_path, progress=progress, checkpoint_dir=snap_dir)
    if out_dir:
        save_checkpoint(ckpt, out_dir)
    return ckpt


# ---------------------------------------------------------------------------
# finite-difference validation harness
# ---------------------------------------------------------------------------


def gradient_check(loss_fn, params: list[Tensor], probe_count: int = 50, h: float = 1e-5,
                   seed: int = 0, rel_floor: float = 1e-6) -> dict:
    """Compare analytic gradients of `loss_fn()` against central finite
    differences at `probe_count` randomly chosen parameter entries.

    Returns the max relative error plus per-probe diagnostics. Parameters and
    the loss should be double precision for the stated tolerances to hold.
    """
    loss = loss_fn()
    grads = ad.grad(loss, params)
    rng = np.random.default_rng([seed, 0xFD])
    sizes = np.array([p.size for p in params])
    probs = sizes / sizes.sum()
    worst, records = 0.0, []
    for _ in range(probe_count):
        pi = int(rng.choice(len(params), p=probs))
        p = params[pi]
        flat_idx = int(rng.integers(0, p.size))
        idx = np.unravel_index(flat_idx, p.shape)
        orig = p.data[idx]
        p.data[idx] = orig + h
        f_plus = float(loss_fn().data)
        p.data[idx] = orig - h
        f_minus = float(loss_fn().data)
        p.data[idx] = orig
        fd = (f_plus - f_minus) / (2 * h)
        an = float(grads[pi].data[idx])
        rel = abs(an - fd) / max(abs(an), abs(fd), rel_floor)
        worst = max(worst, rel)
        records.append({"param": pi, "index": idx, "analytic": an, "fd": fd, "rel": rel})
    return {"max_rel_error": worst, "probes": records}
