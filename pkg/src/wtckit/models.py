"""Gaussian encoder, Bernoulli decoder, and the non-adversarial loss terms."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Batch
from .nn import DenseNet, init_dense_net

MODEL_KINDS = ("vae", "beta-vae", "wae", "wtc-vae", "wtc-wae")


@dataclass
class GenerativeModel:
    encoder: DenseNet          # input -> 2*latent_dim (mu, log-variance)
    decoder: DenseNet          # latent_dim -> input (Bernoulli logits)
    latent_dim: int
    kind: str

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind '{self.kind}'")
        if self.encoder.out_dim != 2 * self.latent_dim:
            raise ValueError(f"encoder head width {self.encoder.out_dim} != "
                             f"2*latent_dim {2 * self.latent_dim}")
        if self.decoder.in_dim != self.latent_dim:
            raise ValueError("decoder input width != latent_dim")
        if self.decoder.out_dim != self.encoder.in_dim:
            raise ValueError("decoder output width != flattened image size")

    @property
    def input_dim(self):
        return self.encoder.in_dim

    def named_parameters(self):
        return ([(f"encoder.{n}", p) for n, p in self.encoder.named_parameters()]
                + [(f"decoder.{n}", p) for n, p in self.decoder.named_parameters()])

    def parameters(self):
        return [p for _, p in self.named_parameters()]


@dataclass
class EncoderOutput:
    mu: ad.Tensor              # (B, d)
    log_var: ad.Tensor         # (B, d)


def build_model(kind, input_dim, rng_encoder, rng_decoder, latent_dim=10,
                hidden=(256, 256)):
    """Dense autoencoder: [input, *hidden, 2d] encoder, mirrored decoder."""
    enc_sizes = [input_dim, *hidden, 2 * latent_dim]
    dec_sizes = [latent_dim, *reversed(hidden), input_dim]
    acts = ["relu"] * len(hidden) + ["none"]
    return GenerativeModel(
        encoder=init_dense_net(enc_sizes, acts, rng_encoder),
        decoder=init_dense_net(dec_sizes, acts, rng_decoder),
        latent_dim=latent_dim, kind=kind)


def _as_input_tensor(x):
    if isinstance(x, Batch):
        return ad.constant(x.images)
    return ad.as_tensor(x)


def encode(model, x):
    """Gaussian posterior parameters: first d head columns are the means,
    the last d are log-variances."""
    h = model.encoder.forward(_as_input_tensor(x))
    d = model.latent_dim
    return EncoderOutput(mu=h[:, :d], log_var=h[:, d:2 * d])


def decode(model, z):
    """Bernoulli logits for a latent batch."""
    return model.decoder.forward(z)


def reparameterize(enc_out, rng, eps=None):
    """z = mu + exp(log_var / 2) * eps with eps ~ N(0, I).

    Gradients flow to mu and log_var only; eps is a constant. Tests may pin
    eps explicitly (eps=0 gives z = mu).
    """
    if eps is None:
        eps = rng.standard_normal(enc_out.mu.shape)
    eps = ad.constant(np.broadcast_to(np.asarray(eps, dtype=np.float64),
                                      enc_out.mu.shape))
    sigma = ad.exp(enc_out.log_var * 0.5)
    return enc_out.mu + sigma * eps


def kl_to_standard_normal(enc_out):
    """Batch-mean KL(q(z|x) || N(0, I)) in closed form for diagonal Gaussians:
    0.5 * sum_j (mu_j^2 + sigma_j^2 - 1 - log sigma_j^2)."""
    mu, lv = enc_out.mu, enc_out.log_var
    batch = mu.shape[0]
    per_element = ad.square(mu) + ad.exp(lv) - lv - 1.0
    return per_element.sum() * (0.5 / batch)


def softplus(t):
    """log(1 + exp(t)) in the overflow-safe form relu(t) + log(1 + exp(-|t|))."""
    t = ad.as_tensor(t)
    return ad.relu(t) + ad.log(ad.exp(-ad.tabs(t)) + 1.0)


def recon_nll(x, logits):
    """Batch mean of the per-image summed Bernoulli negative log-likelihood,
    sum_pixels [softplus(logit) - x * logit]."""
    x = _as_input_tensor(x)
    if np.any(x.data < 0.0) or np.any(x.data > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    logits = ad.as_tensor(logits)
    if x.shape != logits.shape:
        raise ad.ShapeError(f"pixels {x.shape} vs logits {logits.shape}")
    batch = x.shape[0]
    nll = softplus(logits) - x * logits
    return nll.sum() * (1.0 / batch)


def elbo_terms(model, x, rng, eps=None):
    """(reconstruction NLL, KL, sampled z) for one batch."""
    x = _as_input_tensor(x)
    enc_out = encode(model, x)
    z = reparameterize(enc_out, rng, eps=eps)
    recon = recon_nll(x, decode(model, z))
    return recon, kl_to_standard_normal(enc_out), z


def bernoulli_probs(logits):
    """Stable sigmoid on a plain array (decoding for image export)."""
    x = np.asarray(logits, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def encoder_mean_fn(model):
    """Encoder-means closure on plain arrays, for metric evaluation."""
    d = model.latent_dim

    def enc(batch_images):
        return model.encoder.forward_numpy(batch_images)[:, :d]

    return enc


def recon_nll_at_mean(model, pixels):
    """Dataset reconstruction error with z = mu (no sampling), plain arrays."""
    pixels = np.asarray(pixels, dtype=np.float64)
    mu = model.encoder.forward_numpy(pixels)[:, :model.latent_dim]
    logits = model.decoder.forward_numpy(mu)
    nll = np.logaddexp(0.0, logits) - pixels * logits
    return float(nll.sum(axis=1).mean())
