"""Optimization loop: pair batches, run the four-image forward pass, update
critic+classifier, then the generator.

All per-step randomness (batch draw, pairing, penalty interpolation) is
derived from (seed, purpose, step), never from mutable generator state, so a
run restarted from a checkpoint replays the exact loss sequence of an
uninterrupted one.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import torch

from .data import LabeledBatch, make_pairs
from .errors import ConfigError
from .latent import filter_code, split, swap
from .losses import (LossReport, LossWeights, adv_loss_d, adv_loss_g,
                     attr_cls_loss, gradient_penalty, reconstruction_loss,
                     total_losses)
from .networks import Critic, Generator, ModelConfig, build_networks, load_checkpoint, save_checkpoint
from .seeding import derive_seed


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 20000
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    n_critic: int = 5
    checkpoint_every: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 to form exemplar pairs")
        if self.n_critic < 1:
            raise ConfigError("n_critic must be at least 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be non-negative")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be at least 1")


@dataclass
class TrainState:
    """Everything needed to continue training: networks, optimizer moments,
    and the step counter. Sampling state is derived from the step, so it
    needs no storage."""

    model: ModelConfig
    train: TrainConfig
    weights: LossWeights
    generator: Generator
    critic: Critic
    opt_g: torch.optim.Adam
    opt_dc: torch.optim.Adam
    step: int = 0


@dataclass
class ForwardPass:
    """The four decoded images and the latents they came from."""

    a1: torch.Tensor
    b1: torch.Tensor
    a2: torch.Tensor
    b2: torch.Tensor
    lat_a: object
    lat_b: object
    lat_c: object
    lat_d: object


def init_state(model: ModelConfig, train: TrainConfig,
               weights: LossWeights = LossWeights()) -> TrainState:
    torch.manual_seed(derive_seed(train.seed, "init"))
    generator, critic = build_networks(model)
    betas = (train.beta1, train.beta2)
    return TrainState(
        model=model, train=train, weights=weights,
        generator=generator, critic=critic,
        opt_g=torch.optim.Adam(generator.parameters(), lr=train.lr, betas=betas),
        opt_dc=torch.optim.Adam(critic.parameters(), lr=train.lr, betas=betas),
    )


def forward_pass(generator: Generator, images_a: torch.Tensor, labels_a: torch.Tensor,
                 images_b: torch.Tensor, labels_b: torch.Tensor) -> ForwardPass:
    """Encode both sides, filter by labels, swap attribute halves, decode all
    four images. Decodes run one latent at a time so a self-swap output is
    computed by the very same calls as the reconstruction."""
    n = generator.config.n_attrs
    lat_a = filter_code(split(generator.encode(images_a), n), labels_a)
    lat_b = filter_code(split(generator.encode(images_b), n), labels_b)
    lat_c, lat_d = swap(lat_a, lat_b)
    return ForwardPass(
        a1=generator.decode(lat_a.to_tensor()),
        b1=generator.decode(lat_b.to_tensor()),
        a2=generator.decode(lat_c.to_tensor()),
        b2=generator.decode(lat_d.to_tensor()),
        lat_a=lat_a, lat_b=lat_b, lat_c=lat_c, lat_d=lat_d,
    )


def _critic_phase(state: TrainState, batch_a: LabeledBatch, batch_b: LabeledBatch,
                  adversarial: bool) -> tuple[float, float, float]:
    """n_critic joint critic/classifier updates on one pair of batches.

    The swapped images are generated once without graph; each inner update
    re-scores them and draws a fresh penalty interpolation seed.
    """
    with torch.no_grad():
        fp = forward_pass(state.generator, batch_a.images, batch_a.labels,
                          batch_b.images, batch_b.labels)
    l_adv = gp = l_cls = 0.0
    for k in range(state.train.n_critic):
        state.opt_dc.zero_grad(set_to_none=True)
        scores_a, probs_a = state.critic(batch_a.images)
        scores_b, probs_b = state.critic(batch_b.images)
        # Real images only: generated ones never supervise the classifier.
        cls = (attr_cls_loss(probs_a, batch_a.labels)
               + attr_cls_loss(probs_b, batch_b.labels)) / 2
        total = cls
        if adversarial:
            adv = adv_loss_d(scores_a, scores_b,
                             state.critic.score(fp.a2), state.critic.score(fp.b2))
            pen = gradient_penalty(
                state.critic.score,
                torch.cat([batch_a.images, batch_b.images]),
                torch.cat([fp.a2, fp.b2]),
                derive_seed(state.train.seed, "gp", state.step, k),
            )
            total = adv + state.weights.lambda_gp * pen + cls
            l_adv, gp = adv.item(), pen.item()
        total.backward()
        state.opt_dc.step()
        l_cls = cls.item()
    return l_adv, gp, l_cls


def _generator_phase(state: TrainState, batch_a: LabeledBatch, batch_b: LabeledBatch,
                     adversarial: bool) -> tuple[float, float, float]:
    state.opt_g.zero_grad(set_to_none=True)
    fp = forward_pass(state.generator, batch_a.images, batch_a.labels,
                      batch_b.images, batch_b.labels)
    rec = (reconstruction_loss(batch_a.images, fp.a1, state.weights.recon_norm)
           + reconstruction_loss(batch_b.images, fp.b1, state.weights.recon_norm)) / 2
    total = state.weights.lambda_rec * rec
    l_adv = l_cls = 0.0
    if adversarial:
        scores_a2, probs_a2 = state.critic(fp.a2)
        scores_b2, probs_b2 = state.critic(fp.b2)
        # The swapped images carry the exemplar's attributes, so each is
        # supervised with the other side's label vector.
        cls = (attr_cls_loss(probs_a2, batch_b.labels)
               + attr_cls_loss(probs_b2, batch_a.labels)) / 2
        adv = adv_loss_g(scores_a2, scores_b2)
        total = adv + state.weights.lambda_g * cls + state.weights.lambda_rec * rec
        l_adv, l_cls = adv.item(), cls.item()
    total.backward()
    state.opt_g.step()
    return rec.item(), l_cls, l_adv


def train_step(state: TrainState, batch_a: LabeledBatch, batch_b: LabeledBatch, *,
               update_critic: bool = True, update_generator: bool = True,
               adversarial: bool = True) -> LossReport:
    """One full optimization step; increments state.step first so all derived
    seeds are tagged with the step they belong to.

    The switches exist for diagnostics: adversarial=False trains only the
    reconstruction (generator side) and classification (critic side) terms.
    """
    state.step += 1
    l_adv_d = grad_pen = l_cls_c = 0.0
    if update_critic:
        l_adv_d, grad_pen, l_cls_c = _critic_phase(state, batch_a, batch_b, adversarial)
    l_rec = l_cls_g = l_adv_g = 0.0
    if update_generator:
        l_rec, l_cls_g, l_adv_g = _generator_phase(state, batch_a, batch_b, adversarial)
    return total_losses(l_rec=l_rec, l_cls_g=l_cls_g, l_cls_c=l_cls_c,
                        l_adv_g=l_adv_g, l_adv_d=l_adv_d, grad_penalty=grad_pen,
                        weights=state.weights)


def sample_step_batches(dataset, train: TrainConfig, step: int) -> tuple[LabeledBatch, LabeledBatch]:
    """Draw the (source, exemplar) batches belonging to a given step number."""
    batch = dataset.sample_batch(train.batch_size, derive_seed(train.seed, "batch", step))
    return make_pairs(batch, derive_seed(train.seed, "pairs", step))


def save_train_state(path, state: TrainState):
    save_checkpoint(path, state.model, state.generator, state.critic,
                    step=state.step,
                    optimizers={"generator": state.opt_g, "critic": state.opt_dc},
                    extra={"train": asdict(state.train),
                           "loss": asdict(state.weights)})


def load_train_state(path, model: ModelConfig | None = None,
                     train: TrainConfig | None = None,
                     weights: LossWeights | None = None) -> TrainState:
    """Rebuild a TrainState from a checkpoint archive.

    A requested config that contradicts the stored one is refused; fields
    that only extend the run (total_steps, checkpoint_every) may differ.
    """
    ckpt = load_checkpoint(path, expect_config=model)
    stored_train = TrainConfig(**ckpt.extra["train"]) if "train" in ckpt.extra else TrainConfig()
    stored_weights = LossWeights(**ckpt.extra["loss"]) if "loss" in ckpt.extra else LossWeights()
    if train is not None:
        diff = [f"{k}: checkpoint={v} requested={getattr(train, k)}"
                for k, v in asdict(stored_train).items()
                if k not in ("total_steps", "checkpoint_every") and getattr(train, k) != v]
        if diff:
            raise ConfigError("resume config does not match checkpoint: " + "; ".join(diff))
        stored_train = TrainConfig(**{**asdict(stored_train),
                                      "total_steps": train.total_steps,
                                      "checkpoint_every": train.checkpoint_every})
    if weights is not None and weights != stored_weights:
        diff = [f"{k}: checkpoint={v} requested={getattr(weights, k)}"
                for k, v in asdict(stored_weights).items() if getattr(weights, k) != v]
        raise ConfigError("resume loss weights do not match checkpoint: " + "; ".join(diff))
    betas = (stored_train.beta1, stored_train.beta2)
    opt_g = torch.optim.Adam(ckpt.generator.parameters(), lr=stored_train.lr, betas=betas)
    opt_dc = torch.optim.Adam(ckpt.critic.parameters(), lr=stored_train.lr, betas=betas)
    if ckpt.optimizer_states:
        opt_g.load_state_dict(ckpt.optimizer_states["generator"])
        opt_dc.load_state_dict(ckpt.optimizer_states["critic"])
    return TrainState(model=ckpt.config, train=stored_train, weights=stored_weights,
                      generator=ckpt.generator, critic=ckpt.critic,
                      opt_g=opt_g, opt_dc=opt_dc, step=ckpt.step)


def train(dataset, model: ModelConfig, config: TrainConfig,
          weights: LossWeights = LossWeights(), out_dir=None, resume=None,
          progress=None) -> tuple[TrainState, list[dict]]:
    """Run the loop to total_steps, logging one line per step.

    Writes <out_dir>/train_log.jsonl (appending on resume) and periodic
    checkpoint archives. Returns the final state and the in-memory log of
    this invocation.
    """
    torch.use_deterministic_algorithms(True)
    if resume is not None:
        state = load_train_state(resume, model, config, weights)
    else:
        state = init_state(model, config, weights)

    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train_log.jsonl"),
                      "a" if resume is not None else "w", encoding="utf-8")
    log = []
    try:
        for step in range(state.step + 1, config.total_steps + 1):
            batch_a, batch_b = sample_step_batches(dataset, state.train, step)
            report = train_step(state, batch_a, batch_b)
            line = {"step": step, **report.to_dict()}
            log.append(line)
            if log_fh is not None:
                log_fh.write(json.dumps(line) + "\n")
                log_fh.flush()
            if progress is not None:
                progress(step, report)
            if out_dir is not None and (step % config.checkpoint_every == 0
                                        or step == config.total_steps):
                save_train_state(
                    os.path.join(out_dir, f"checkpoint_{step:07d}.zip"), state)
    finally:
        if log_fh is not None:
            log_fh.close()
    return state, log
