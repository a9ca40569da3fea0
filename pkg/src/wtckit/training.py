"""Min-max training procedures for all model kinds.

One master seed is split into named streams (data sampling, reparameterization
noise, permutations, gradient-penalty interpolation, initialization) so runs
that differ in one mechanism still consume identical draws everywhere else;
a wtc-vae run with gamma=0 is bit-identical to a plain VAE run.
"""

import math
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .adversarial import (WtcConfig, apply_permutations, build_critic,
                          critic_ascent_step, critic_gap, draw_permutations)
from .data import sample_batch
from .models import (MODEL_KINDS, build_model, decode, encode,
                     kl_to_standard_normal, recon_nll, reparameterize)
from .nn import Adam
from .seeding import stream_rng

GAMMA_GRID = (10.0, 20.0, 40.0, 80.0)


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss term; carries the partial TrainLog."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


@dataclass
class TrainConfig:
    kind: str
    steps: int
    seed: int
    beta: float = 1.0
    gamma: float = 0.0
    learning_rate: float = 1e-4
    batch_size: int = 64
    critic_steps: int = 1
    latent_dim: int = 10
    enc_hidden: tuple = (256, 256)
    critic_hidden: tuple = (256, 256, 256)
    wtc: WtcConfig = field(default_factory=WtcConfig)

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind '{self.kind}'")
        if self.steps < 0 or self.batch_size < 1 or self.critic_steps < 1:
            raise ValueError("steps >= 0, batch_size >= 1, critic_steps >= 1")
        if self.beta < 0 or self.gamma < 0 or self.learning_rate <= 0:
            raise ValueError("beta, gamma must be >= 0 and learning rate > 0")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.kind == "wtc-wae" and self.gamma < self.beta:
            warnings.warn("wtc-wae usually wants gamma >= beta to encourage "
                          "disentanglement", stacklevel=2)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["wtc"] = WtcConfig(**d.get("wtc", {}))
        d["enc_hidden"] = tuple(d.get("enc_hidden", (256, 256)))
        d["critic_hidden"] = tuple(d.get("critic_hidden", (256, 256, 256)))
        return cls(**d)


@dataclass
class StepRecord:
    step: int
    recon: float
    kl: float = math.nan
    wtc_gap: float = math.nan
    prior_gap: float = math.nan
    critic_f: float = math.nan
    critic_g: float = math.nan
    total: float = math.nan


class TrainLog:
    """Per-step records, one per step, in step order."""

    FIELDS = ("step", "recon", "kl", "wtc_gap", "prior_gap", "critic_f",
              "critic_g")

    def __init__(self):
        self.records = []

    def append(self, record):
        if self.records and record.step != self.records[-1].step + 1:
            raise ValueError("non-consecutive step index in train log")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def rows(self):
        for r in self.records:
            yield [getattr(r, f) for f in self.FIELDS]


@dataclass
class TrainResult:
    model: object
    critic_f: object
    critic_g: object
    log: TrainLog
    config: TrainConfig


@contextmanager
def _named_term(name, step):
    try:
        yield
    except (ad.NonFiniteError, ad.DomainError) as err:
        raise TrainingAborted(
            f"non-finite '{name}' at step {step}: {err}") from err


class _Run:
    """Mutable state of one training run."""

    def __init__(self, cfg, ds):
        cfg.validate()
        if ds.image_dim < 1:
            raise ValueError("empty dataset")
        self.cfg = cfg
        self.ds = ds
        self.rng = {name: stream_rng(cfg.seed, name)
                    for name in ("data", "reparam", "permute", "gp", "prior")}
        self.model = build_model(cfg.kind, ds.image_dim,
                                 stream_rng(cfg.seed, "init_encoder"),
                                 stream_rng(cfg.seed, "init_decoder"),
                                 latent_dim=cfg.latent_dim,
                                 hidden=tuple(cfg.enc_hidden))
        self.opt_ae = Adam(self.model.parameters(), lr=cfg.learning_rate)
        self.critic_f = self.critic_g = None
        self.opt_f = self.opt_g = None
        if cfg.kind in ("wtc-vae", "wtc-wae") and cfg.gamma > 0:
            self.critic_f = build_critic(cfg.latent_dim,
                                         stream_rng(cfg.seed, "init_critic_f"),
                                         hidden=tuple(cfg.critic_hidden),
                                         role="wtc")
            self.opt_f = Adam(self.critic_f.parameters(), lr=cfg.learning_rate)
        if cfg.kind in ("wae", "wtc-wae") and cfg.beta > 0:
            self.critic_g = build_critic(cfg.latent_dim,
                                         stream_rng(cfg.seed, "init_critic_g"),
                                         hidden=tuple(cfg.critic_hidden),
                                         role="prior")
            self.opt_g = Adam(self.critic_g.parameters(), lr=cfg.learning_rate)

    def _batch(self):
        batch = sample_batch(self.ds, self.cfg.batch_size, self.rng["data"])
        return ad.constant(batch.images)

    def _posterior_sample(self, x, step):
        with _named_term("encoder output", step):
            enc_out = encode(self.model, x)
            z = reparameterize(enc_out, self.rng["reparam"])
        return enc_out, z

    def _prior_sample(self):
        shape = (self.cfg.batch_size, self.cfg.latent_dim)
        return ad.constant(self.rng["prior"].standard_normal(shape))

    def _ae_update(self, total, step):
        with _named_term("autoencoder gradients", step):
            grads = ad.backward(total, self.model.parameters())
            self.opt_ae.step(grads)

    def _critic_updates(self, critic, opt, joint, factored_fn, step, name):
        """cfg.critic_steps ascent steps; factored_fn() supplies a fresh
        factored batch per sub-update. Returns (last gap, last factored)."""
        gap = math.nan
        factored = None
        for _ in range(self.cfg.critic_steps):
            factored = factored_fn()
            with _named_term(name, step):
                gap = critic_ascent_step(critic, opt, joint, factored,
                                         self.cfg.wtc, self.rng["gp"])
        return gap, factored


def train_step_baseline(run, step):
    """One descent step for vae / beta-vae / wae."""
    cfg = run.cfg
    x = run._batch()
    enc_out, z = run._posterior_sample(x, step)
    with _named_term("reconstruction NLL", step):
        recon = recon_nll(x, decode(run.model, z))
    rec = StepRecord(step=step, recon=recon.item())

    if cfg.kind != "wae":  # vae, beta-vae, or wtc-vae reduced by gamma=0
        with _named_term("KL divergence", step):
            kl = kl_to_standard_normal(enc_out)
        beta = cfg.beta if cfg.kind == "beta-vae" else 1.0
        total = recon + kl * beta
        rec.kl = kl.item()
    elif cfg.beta > 0:  # wae: adversarial prior matching on unpermuted z
        z_prior = run._prior_sample()
        z_det = z.detach()
        critic_val, _ = run._critic_updates(
            run.critic_g, run.opt_g, z_det, lambda: z_prior, step,
            "prior critic loss")
        rec.critic_g = critic_val
        with _named_term("prior gap", step):
            pg = critic_gap(run.critic_g, z, z_prior)
        total = recon + pg * cfg.beta
        rec.prior_gap = pg.item()
    else:  # beta=0 collapses the wae objective to plain reconstruction
        total = recon
    rec.total = total.item()
    run._ae_update(total, step)
    return rec


def train_step_wtc_vae(run, step):
    """Step order: sample batch, sample z, permute dims, critic ascent on
    detached samples, then autoencoder descent on recon + KL + gamma * gap
    with the critic frozen (gradients flow through z and permuted z)."""
    cfg = run.cfg
    x = run._batch()
    enc_out, z = run._posterior_sample(x, step)
    z_det = z.detach()

    def fresh_factored():
        perms = draw_permutations(cfg.batch_size, cfg.latent_dim,
                                  run.rng["permute"])
        fresh_factored.perms = perms
        return apply_permutations(z_det, perms).detach()

    critic_val, _ = run._critic_updates(run.critic_f, run.opt_f, z_det,
                                        fresh_factored, step, "wtc critic loss")
    z_bar = apply_permutations(z, fresh_factored.perms)

    with _named_term("reconstruction NLL", step):
        recon = recon_nll(x, decode(run.model, z))
    with _named_term("KL divergence", step):
        kl = kl_to_standard_normal(enc_out)
    with _named_term("wtc gap", step):
        gap = critic_gap(run.critic_f, z, z_bar)
    total = recon + kl + gap * cfg.gamma
    rec = StepRecord(step=step, recon=recon.item(), kl=kl.item(),
                     wtc_gap=gap.item(), critic_f=critic_val,
                     total=total.item())
    run._ae_update(total, step)
    return rec


def train_step_wtc_wae(run, step):
    """Two-critic step: f on the joint/factored gap, g on the factored/prior
    gap, then autoencoder descent on recon + beta*(g-gap) + gamma*(f-gap).

    Weight-zero terms are dropped exactly (beta=gamma=0 is plain
    reconstruction training)."""
    cfg = run.cfg
    x = run._batch()
    _, z = run._posterior_sample(x, step)
    z_det = z.detach()

    def fresh_factored():
        perms = draw_permutations(cfg.batch_size, cfg.latent_dim,
                                  run.rng["permute"])
        fresh_factored.perms = perms
        return apply_permutations(z_det, perms).detach()

    rec = StepRecord(step=step, recon=math.nan)
    if cfg.gamma > 0:
        rec.critic_f, z_bar_det = run._critic_updates(
            run.critic_f, run.opt_f, z_det, fresh_factored, step,
            "wtc critic loss")
    else:
        z_bar_det = fresh_factored()
    z_bar = apply_permutations(z, fresh_factored.perms)

    with _named_term("reconstruction NLL", step):
        recon = recon_nll(x, decode(run.model, z))
    total = recon
    rec.recon = recon.item()
    if cfg.beta > 0:
        z_prior = run._prior_sample()
        rec.critic_g, _ = run._critic_updates(
            run.critic_g, run.opt_g, z_bar_det, lambda: z_prior, step,
            "prior critic loss")
        with _named_term("prior gap", step):
            pg = critic_gap(run.critic_g, z_bar, z_prior)
        total = total + pg * cfg.beta
        rec.prior_gap = pg.item()
    if cfg.gamma > 0:
        with _named_term("wtc gap", step):
            gap = critic_gap(run.critic_f, z, z_bar)
        total = total + gap * cfg.gamma
        rec.wtc_gap = gap.item()
    rec.total = total.item()
    run._ae_update(total, step)
    return rec


def _step_fn(cfg):
    if cfg.kind in ("vae", "beta-vae", "wae"):
        return train_step_baseline
    if cfg.kind == "wtc-vae":
        # gamma=0 reduces the objective exactly to the plain VAE loss; the
        # critic could be trained but cannot influence the autoencoder.
        return train_step_baseline if cfg.gamma == 0 else train_step_wtc_vae
    if cfg.kind == "wtc-wae":
        return train_step_wtc_wae
    raise ValueError(f"unknown model kind '{cfg.kind}'")


def train(cfg, ds, on_step=None):
    """Run cfg.steps training steps on `ds`; deterministic given cfg.seed.

    `on_step(record)` is called after each step (logging/checkpoint hooks).
    Raises TrainingAborted on non-finite losses with the partial log attached.
    """
    run = _Run(cfg, ds)
    step_fn = _step_fn(cfg)
    log = TrainLog()
    try:
        for step in range(cfg.steps):
            record = step_fn(run, step)
            log.append(record)
            if on_step is not None:
                on_step(record)
    except TrainingAborted as err:
        err.log = log
        raise
    return TrainResult(model=run.model, critic_f=run.critic_f,
                       critic_g=run.critic_g, log=log, config=cfg)
