#!/usr/bin/env python3
"""Adversarial W1 estimation: critic gap vs the exact matching oracle.

A dense critic is trained by gradient ascent on the mean-value gap between
joint samples and dimension-permuted samples, with a gradient penalty
holding it near 1-Lipschitz. On correlated Gaussians the converged gap
tracks the exact optimal-transport value computed by the Hungarian oracle.
"""
import numpy as np

from wtckit import autodiff as ad
from wtckit.adversarial import (WtcConfig, build_critic, critic_ascent_step,
                                critic_gap, permute_dims)
from wtckit.metrics import exact_empirical_w1_nd
from wtckit.nn import Adam


def gaussian_batch(rho, n, rng):
    chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    return rng.standard_normal((n, 2)) @ chol.T


cfg = WtcConfig()                       # gradient penalty, coefficient 10
for rho in (0.0, 0.5, 0.9):
    rng = np.random.default_rng(7)
    critic = build_critic(2, np.random.default_rng(8))
    opt = Adam(critic.parameters(), lr=1e-3)
    for step in range(800):
        z = ad.constant(gaussian_batch(rho, 64, rng))
        z_bar = permute_dims(z, rng).detach()
        critic_ascent_step(critic, opt, z, z_bar, cfg, rng)
    estimates, oracles = [], []
    for _ in range(30):
        z = gaussian_batch(rho, 64, rng)
        z_bar = permute_dims(ad.constant(z), rng)
        estimates.append(critic_gap(critic, z, z_bar).item())
        oracles.append(exact_empirical_w1_nd(z, z_bar.data))
    print(f"rho={rho:.1f}: critic estimate {np.mean(estimates):6.3f}   "
          f"matching oracle {np.mean(oracles):6.3f}")

print("\nindependent dimensions score near zero; the estimate grows with "
      "the correlation, tracking the oracle.")
