"""Disentanglement metrics, empirical Wasserstein-1 kernels, and exact
optimal-transport oracles.

All metrics consume encoder *means*. The Wasserstein dependency gap (WDG)
scores, for each ground-truth factor, how much more the most dependent
latent dimension moves with that factor than the runner-up, where
dependency is the expected W1 distance between a dimension's
factor-conditional and marginal distributions. FactorVAE score, MIG and
Modularity are implemented for comparison, and brute-force matching oracles
verify every estimator on small instances.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import sample_fixed_factor_batch
from .models import GenerativeModel, encoder_mean_fn, recon_nll_at_mean

DEFAULT_EMBED_N = 12800
VARIANCE_PRUNE_THRESHOLD = 0.05


# ---------------------------------------------------------------------------
# Wasserstein-1 kernels and oracles
# ---------------------------------------------------------------------------

def w1_empirical_1d(a, b):
    """W1 between two 1-D empirical distributions.

    Equal sizes reduce to the mean absolute difference of sorted order
    statistics; unequal sizes integrate |CDF_a - CDF_b| over the merged
    support.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample set")
    if a.size == b.size:
        return float(np.abs(a - b).mean())
    support = np.concatenate([a, b])
    support.sort(kind="mergesort")
    deltas = np.diff(support)
    cdf_a = np.searchsorted(a, support[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, support[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def exact_empirical_w1_nd(x, y):
    """Exact W1 between equal-size empirical measures in R^d.

    Solves the min-cost perfect matching under Euclidean cost (assignment
    problem); the mean matched cost equals the Wasserstein-1 distance.
    O(n^3), intended as an oracle for small n.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape != y.shape:
        raise ValueError(f"sample sets must match in size and dimension, "
                         f"got {x.shape} vs {y.shape}")
    diff = x[:, None, :] - y[None, :, :]
    cost = np.sqrt(np.sum(np.square(diff), axis=2))
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / x.shape[0])


def histogram_total_correlation(x, bins=12):
    """Histogram plug-in total correlation: sum of marginal entropies minus
    the joint entropy, each from equal-width binning (nats)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need an (n, d) sample matrix")
    codes = _discretize(x, bins)
    joint = _entropy_of_counts(_joint_counts(codes, bins))
    marginals = sum(_entropy_of_counts(np.bincount(codes[:, j], minlength=bins))
                    for j in range(x.shape[1]))
    return float(marginals - joint)


def _discretize(z, bins):
    """Equal-width bin codes per column over each column's observed range."""
    z = np.asarray(z, dtype=np.float64)
    lo = z.min(axis=0)
    width = (z.max(axis=0) - lo) / bins
    width[width == 0] = 1.0  # constant column: everything lands in bin 0
    return np.minimum((z - lo) // width, bins - 1).astype(np.int64)


def _joint_counts(codes, bins):
    flat = codes[:, 0]
    for j in range(1, codes.shape[1]):
        flat = flat * bins + codes[:, j]
    return np.bincount(flat, minlength=bins ** codes.shape[1])


def _entropy_of_counts(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def _mutual_information(codes_i, values_k, bins, n_values):
    joint = np.zeros((bins, n_values))
    np.add.at(joint, (codes_i, values_k), 1.0)
    n = joint.sum()
    pz = joint.sum(axis=1, keepdims=True) / n
    pv = joint.sum(axis=0, keepdims=True) / n
    p = joint / n
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / (pz @ pv)[mask])).sum())


# ---------------------------------------------------------------------------
# representations
# ---------------------------------------------------------------------------

@dataclass
class Representation:
    """Latent means aligned with ground-truth factor values.

    `scale` is the per-dimension standard deviation over the embedding set;
    dependency computations divide by it so the metric is invariant to
    per-dimension rescaling of the raw representation.
    """

    latents: np.ndarray         # (N, d) raw encoder means
    factors: np.ndarray         # (N, K)
    cardinalities: tuple
    scale: np.ndarray = field(init=False)

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.factors = np.asarray(self.factors, dtype=np.int64)
        if self.latents.shape[0] != self.factors.shape[0]:
            raise ValueError("latents/factors row count mismatch")
        scale = self.latents.std(axis=0)
        scale[scale == 0] = 1.0
        self.scale = scale

    @property
    def n_dims(self):
        return self.latents.shape[1]

    @property
    def n_factors(self):
        return self.factors.shape[1]

    def normalized(self):
        return self.latents / self.scale


def embed_representation(encoder_fn, ds, n=DEFAULT_EMBED_N, rng=None):
    """Encode `n` random dataset samples (with replacement when the dataset
    is smaller than n) into a Representation."""
    rng = rng if rng is not None else np.random.default_rng()
    idx = rng.choice(ds.n, size=n, replace=ds.n < n)
    pixels = ds.images[idx].reshape(len(idx), -1) / 255.0
    return Representation(latents=np.asarray(encoder_fn(pixels)),
                          factors=ds.factors[idx],
                          cardinalities=ds.cardinalities)


# ---------------------------------------------------------------------------
# Wasserstein dependency gap
# ---------------------------------------------------------------------------

def wasserstein_dependency(rep, dim, factor):
    """Expected W1 distance between a latent dimension's factor-conditional
    and marginal distributions, weighted by the factor-value frequencies."""
    z = rep.normalized()[:, dim]
    values = rep.factors[:, factor]
    total = 0.0
    n = len(z)
    for v in range(rep.cardinalities[factor]):
        mask = values == v
        count = int(mask.sum())
        if count == 0:
            raise ValueError(f"factor {factor} value {v} has no rows")
        total += (count / n) * w1_empirical_1d(z[mask], z)
    return total


def dependency_matrix(rep):
    """All pairwise dependencies, shape (n_factors, n_dims)."""
    deps = np.zeros((rep.n_factors, rep.n_dims))
    z = rep.normalized()
    n = len(z)
    sorted_marginals = np.sort(z, axis=0)
    for k in range(rep.n_factors):
        values = rep.factors[:, k]
        for v in range(rep.cardinalities[k]):
            mask = values == v
            count = int(mask.sum())
            if count == 0:
                raise ValueError(f"factor {k} value {v} has no rows")
            w = count / n
            for i in range(rep.n_dims):
                deps[k, i] += w * _w1_sorted_vs_sorted(
                    np.sort(z[mask, i]), sorted_marginals[:, i])
    return deps


def _w1_sorted_vs_sorted(a, b):
    """w1_empirical_1d for pre-sorted inputs (the dependency-matrix hot loop)."""
    if a.size == b.size:
        return float(np.abs(a - b).mean())
    support = np.concatenate([a, b])
    support.sort(kind="mergesort")
    deltas = np.diff(support)
    cdf_a = np.searchsorted(a, support[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, support[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def wdg(rep):
    """Mean over factors of (highest dependency - second highest) across
    latent dimensions; argmax ties break toward the lowest dimension index."""
    if rep.n_dims < 2:
        raise ValueError("WDG needs at least two latent dimensions")
    deps = dependency_matrix(rep)
    gaps = []
    for k in range(rep.n_factors):
        row = deps[k]
        best = int(np.argmax(row))
        rest = np.delete(row, best)
        gaps.append(row[best] - rest.max())
    return float(np.mean(gaps))


# ---------------------------------------------------------------------------
# comparison metrics
# ---------------------------------------------------------------------------

def factor_vae_score(encoder_fn, ds, rng, n_embed=DEFAULT_EMBED_N,
                     n_train=10000, n_eval=5000, vote_batch=64,
                     prune_threshold=VARIANCE_PRUNE_THRESHOLD):
    """Majority-vote classifier accuracy for the fixed-factor prediction game.

    Procedure: estimate per-dimension variance from `n_embed` random
    embeddings and exclude collapsed dimensions (variance below the
    threshold); each vote fixes a random factor at a random value, embeds a
    fixed-factor batch, and votes for the dimension with the lowest
    normalized variance; a majority classifier is fit on `n_train` votes and
    scored on `n_eval` votes.
    """
    if ds.n_factors < 2:
        raise ValueError("need at least two factors")
    if isinstance(encoder_fn, GenerativeModel):
        encoder_fn = encoder_mean_fn(encoder_fn)
    idx = rng.choice(ds.n, size=n_embed, replace=ds.n < n_embed)
    z = np.asarray(encoder_fn(ds.images[idx].reshape(len(idx), -1) / 255.0))
    global_var = z.var(axis=0)
    active = np.flatnonzero(global_var >= prune_threshold)
    if active.size == 0:
        raise ValueError("all latent dimensions pruned as collapsed")

    def votes(count):
        dims = np.empty(count, dtype=np.int64)
        ks = np.empty(count, dtype=np.int64)
        for t in range(count):
            k = int(rng.integers(ds.n_factors))
            v = int(rng.integers(ds.cardinalities[k]))
            batch = sample_fixed_factor_batch(ds, k, v, vote_batch, rng)
            zb = np.asarray(encoder_fn(batch.images))
            ratio = zb.var(axis=0)[active] / global_var[active]
            dims[t] = active[int(np.argmin(ratio))]
            ks[t] = k
        return dims, ks

    train_dims, train_ks = votes(n_train)
    counts = np.zeros((z.shape[1], ds.n_factors))
    np.add.at(counts, (train_dims, train_ks), 1.0)
    classifier = counts.argmax(axis=1)
    eval_dims, eval_ks = votes(n_eval)
    return float((classifier[eval_dims] == eval_ks).mean())


def mig(rep, bins=20):
    """Mutual information gap: mean over factors of the normalized gap
    between the two most informative latent dimensions."""
    if rep.n_dims < 2:
        raise ValueError("MIG needs at least two latent dimensions")
    mi = _mi_matrix(rep, bins)                        # (d, K)
    gaps = []
    for k in range(rep.n_factors):
        h = _entropy_of_counts(np.bincount(rep.factors[:, k],
                                           minlength=rep.cardinalities[k]))
        col = np.sort(mi[:, k])[::-1]
        gaps.append((col[0] - col[1]) / h if h > 0 else 0.0)
    return float(np.mean(gaps))


def modularity(rep, bins=20):
    """Mean over dimensions of 1 - deviation-from-ideal, where a dimension
    is ideal when only its best factor carries mutual information.

    A dimension with all-zero mutual information contributes 1 (it is
    vacuously modular)."""
    if rep.n_factors < 2:
        raise ValueError("modularity needs at least two factors")
    mi = _mi_matrix(rep, bins)
    sq = np.square(mi)
    scores = []
    for i in range(rep.n_dims):
        best = sq[i].max()
        if best == 0:
            scores.append(1.0)
            continue
        delta = (sq[i].sum() - best) / (best * (rep.n_factors - 1))
        scores.append(1.0 - delta)
    return float(np.mean(scores))


def _mi_matrix(rep, bins):
    codes = _discretize(rep.latents, bins)
    mi = np.zeros((rep.n_dims, rep.n_factors))
    for i in range(rep.n_dims):
        for k in range(rep.n_factors):
            mi[i, k] = _mutual_information(codes[:, i], rep.factors[:, k],
                                           bins, rep.cardinalities[k])
    return mi


def rank_correlation(scores_a, scores_b):
    """Spearman's rho: Pearson correlation of average-rank transforms."""
    a = np.asarray(scores_a, dtype=np.float64).ravel()
    b = np.asarray(scores_b, dtype=np.float64).ravel()
    if a.size != b.size or a.size < 3:
        raise ValueError("need two equal-length score lists of size >= 3")
    ra, rb = _average_ranks(a), _average_ranks(b)
    if ra.std() == 0 or rb.std() == 0:
        raise ValueError("zero rank variance")
    ra -= ra.mean()
    rb -= rb.mean()
    return float((ra * rb).sum() / np.sqrt((ra * ra).sum() * (rb * rb).sum()))


def _average_ranks(x):
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    ranks[order] = np.arange(1, len(x) + 1, dtype=np.float64)
    for val in np.unique(x):
        mask = x == val
        if mask.sum() > 1:
            ranks[mask] = ranks[mask].mean()
    return ranks


# ---------------------------------------------------------------------------
# evaluation driver
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    wdg: float
    factorvae: float
    mig: float
    modularity: float
    recon_nll: float
    wdg_std: float = 0.0
    factorvae_std: float = 0.0
    mig_std: float = 0.0
    modularity_std: float = 0.0
    runs: int = 1
    run_seeds: tuple = ()


def evaluate(model, ds, runs=10, rng=None, n_embed=DEFAULT_EMBED_N,
             fixed_embedding=False, n_votes=(10000, 5000)):
    """Mean and std of the disentanglement scores over `runs` repetitions.

    `model` is a GenerativeModel or a plain encoder callable. Each run draws
    a fresh embedding sample (unless fixed_embedding) and fresh votes
    (`n_votes` = train/eval counts for the FactorVAE score).
    Reconstruction NLL is a single full pass at z = mu, reported per image;
    it is NaN for bare encoder callables.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    encoder_fn = (encoder_mean_fn(model) if isinstance(model, GenerativeModel)
                  else model)
    run_seeds = tuple(int(s) for s in rng.integers(0, 2 ** 63 - 1, size=runs))
    fixed_rep = None
    if fixed_embedding:
        fixed_rep = embed_representation(
            encoder_fn, ds, n=n_embed, rng=np.random.default_rng(run_seeds[0]))
    scores = {"wdg": [], "factorvae": [], "mig": [], "modularity": []}
    for seed in run_seeds:
        run_rng = np.random.default_rng(seed)
        rep = fixed_rep if fixed_rep is not None else embed_representation(
            encoder_fn, ds, n=n_embed, rng=run_rng)
        scores["wdg"].append(wdg(rep))
        scores["mig"].append(mig(rep))
        scores["modularity"].append(max(0.0, modularity(rep)))  # report clamp
        scores["factorvae"].append(
            factor_vae_score(encoder_fn, ds, run_rng, n_embed=n_embed,
                             n_train=n_votes[0], n_eval=n_votes[1]))
    recon = (recon_nll_at_mean(model, ds.pixels_flat())
             if isinstance(model, GenerativeModel) else math.nan)
    mean = {k: float(np.mean(v)) for k, v in scores.items()}
    std = {k: float(np.std(v)) for k, v in scores.items()}
    return MetricReport(wdg=mean["wdg"], factorvae=mean["factorvae"],
                        mig=mean["mig"], modularity=mean["modularity"],
                        recon_nll=recon, wdg_std=std["wdg"],
                        factorvae_std=std["factorvae"], mig_std=std["mig"],
                        modularity_std=std["modularity"], runs=runs,
                        run_seeds=run_seeds)
