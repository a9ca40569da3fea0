"""Learning and evaluating disentangled latent representations with
Wasserstein total correlation penalties.

Subpackage map:
    autodiff     reverse-mode AD over float64 tensors (second-order capable)
    nn           dense networks and the Adam optimizer
    data         miniature labeled factor datasets and the FDS on-disk format
    models       Gaussian-encoder / Bernoulli-decoder autoencoders and losses
    adversarial  permute-dims sampling, critic gaps, gradient penalty
    training     min-max training loops for all model kinds
    metrics      disentanglement metrics, W1 kernels and exact OT oracles
    cli          command-line surface, checkpoints, sweep orchestration
"""

import os as _os


def _prefer_avx512_blas():
    """OpenBLAS's runtime autodetection can pick pre-AVX512 kernels on CPUs
    that support better ones, costing ~1.5x on the float64 matmuls everything
    here leans on. Best-effort and user-overridable; only effective if numpy
    has not been imported yet."""
    try:
        with open("/proc/cpuinfo") as f:
            if "avx512f" in f.read():
                _os.environ.setdefault("OPENBLAS_CORETYPE", "SKYLAKEX")
    except OSError:
        pass


_prefer_avx512_blas()

from . import adversarial, autodiff, data, metrics, models, nn, training

__all__ = [
    "adversarial",
    "autodiff",
    "data",
    "metrics",
    "models",
    "nn",
    "training",
]

__version__ = "0.1.0"
