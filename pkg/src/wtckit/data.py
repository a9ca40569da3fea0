"""Miniature labeled factor datasets and the FDS on-disk format.

Datasets are exhaustive factor grids (every combination of factor values
appears exactly once), so conditional distributions over any factor value
have balanced support. Images are uint8; training batches are float64
normalized by 255.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

FDS_MAGIC = b"FDS1"

_SPRITE_SIZES = (3, 5, 7, 9)
_N_POSITIONS = 8
_SHAPE_NAMES = ("square", "disc", "cross")


class FdsFormatError(ValueError):
    """Malformed or truncated FDS file."""


def factor_grid(cardinalities):
    """Full-factorial factor table in lexicographic order, shape (N, K)."""
    cards = [int(c) for c in cardinalities]
    if any(c < 1 for c in cards):
        raise ValueError("cardinalities must be positive")
    grids = np.meshgrid(*[np.arange(c) for c in cards], indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.int64)


@dataclass
class FactorDataset:
    images: np.ndarray          # (N, H, W, C) uint8
    factors: np.ndarray         # (N, K) int64, factors[n][k] in [0, cards[k])
    cardinalities: tuple        # K positive ints
    factor_names: tuple         # K strings

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.factors = np.ascontiguousarray(self.factors, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N,H,W,C), got {self.images.shape}")
        n, k = self.factors.shape
        if self.images.shape[0] != n:
            raise ValueError("images/factors row count mismatch")
        cards = tuple(int(c) for c in self.cardinalities)
        if len(cards) != k or len(self.factor_names) != k:
            raise ValueError("cardinalities/names must have one entry per factor")
        if any(c < 1 for c in cards):
            raise ValueError("cardinalities must be positive")
        if n != int(np.prod(cards)):
            raise ValueError(f"N={n} is not the product of cardinalities {cards}")
        if (self.factors < 0).any() or (self.factors >= np.array(cards)).any():
            raise ValueError("factor values outside their cardinality range")
        # exactly-once coverage of the factor grid
        strides = np.cumprod((1,) + cards[::-1][:-1])[::-1]
        linear = self.factors @ strides
        if np.unique(linear).size != n:
            raise ValueError("factor combinations are not unique")
        self.cardinalities = cards
        self.factor_names = tuple(str(s) for s in self.factor_names)

    @property
    def n(self):
        return self.images.shape[0]

    @property
    def n_factors(self):
        return self.factors.shape[1]

    @property
    def image_dim(self):
        return int(np.prod(self.images.shape[1:]))

    def pixels_flat(self):
        """All images as float64 rows in [0, 1]."""
        return self.images.reshape(self.n, -1).astype(np.float64) / 255.0


@dataclass
class Batch:
    images: np.ndarray          # (B, H*W*C) float64 in [0, 1]
    factors: np.ndarray = None  # (B, K) or None
    replaced: bool = False      # True when drawn with replacement


_EDGE_WIDTH = 1.6   # pixels of soft edge on every sprite boundary


def _sprite_mask(shape_idx, size):
    """Grayscale stencil of one sprite, size x size, centered.

    Intensity falls off linearly over a signed-distance band around the
    shape boundary. The soft-edge pixels give every image an irreducible
    Bernoulli-NLL floor, which keeps the reconstruction loss at a scale
    where the regularization-strength grid behaves like it does on the
    full-size datasets.
    """
    half = (size - 1) / 2.0
    offsets = np.arange(size) - half
    dx = offsets[None, :]
    dy = offsets[:, None]
    reach = half + 0.5 - _EDGE_WIDTH / 2.0   # keep the band inside the stencil
    if shape_idx == 0:                                   # square
        dist = np.maximum(np.abs(dx), np.abs(dy)) - reach
    elif shape_idx == 1:                                 # disc
        dist = np.sqrt(dx * dx + dy * dy) - reach
    elif shape_idx == 2:                                 # diagonal cross
        width = max(0.45, size / 7.0)
        arm = (np.abs(np.abs(dx) - np.abs(dy)) / np.sqrt(2.0)) - width
        box = np.maximum(np.abs(dx), np.abs(dy)) - reach
        dist = np.maximum(arm, box)
    else:
        raise ValueError(f"unknown shape index {shape_idx}")
    intensity = np.clip(0.5 - dist / _EDGE_WIDTH, 0.0, 1.0)
    return np.rint(intensity * 255.0).astype(np.uint8)


def gen_toysprites(seed, height=16, width=16):
    """Procedural sprite dataset: shape(3) x scale(4) x posX(8) x posY(8).

    768 grayscale images. Rendering is a pure function of the factor values
    (the seed only has to reproduce the dataset, which it trivially does);
    positions translate sprites by whole pixels with no clipping, so images
    differing only in position share a pixel multiset.
    """
    height, width = int(height), int(width)
    if height < 8 or width < 8:
        raise ValueError("canvas must be at least 8x8")
    max_size = _SPRITE_SIZES[-1]
    half = (max_size - 1) // 2
    if width < _N_POSITIONS + 2 * half or height < _N_POSITIONS + 2 * half:
        raise ValueError(
            f"canvas too small for largest sprite: need at least "
            f"{_N_POSITIONS + 2 * half} pixels per side, got {height}x{width}")
    x0 = half + (width - (_N_POSITIONS + 2 * half)) // 2
    y0 = half + (height - (_N_POSITIONS + 2 * half)) // 2

    cards = (len(_SHAPE_NAMES), len(_SPRITE_SIZES), _N_POSITIONS, _N_POSITIONS)
    factors = factor_grid(cards)
    images = np.zeros((len(factors), height, width, 1), dtype=np.uint8)
    masks = {(s, z): _sprite_mask(s, _SPRITE_SIZES[z])
             for s in range(cards[0]) for z in range(cards[1])}
    for n, (shape_idx, scale_idx, px, py) in enumerate(factors):
        size = _SPRITE_SIZES[scale_idx]
        h = (size - 1) // 2
        cx, cy = x0 + px, y0 + py
        images[n, cy - h:cy + h + 1, cx - h:cx + h + 1, 0] = \
            masks[(shape_idx, scale_idx)]
    return FactorDataset(images=images, factors=factors, cardinalities=cards,
                         factor_names=("shape", "scale", "posX", "posY"))


def gen_linear_gaussian(seed, n_factors, dim, noise_sigma, cardinalities=None):
    """Oracle dataset: observations are a random linear mix of the factors.

    x = A u + eps with u the per-factor standardized grid values, A a fixed
    full-column-rank (dim x n_factors) matrix and eps ~ N(0, noise_sigma^2).
    Observations are affinely quantized into uint8 "pixels" (shape (N,1,1,dim));
    the returned info dict carries A, the quantization transform, and the
    ideal encoder that inverts both, recovering u up to quantization error.
    """
    n_factors, dim = int(n_factors), int(dim)
    if dim < n_factors:
        raise ValueError("dim must be >= n_factors")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    cards = tuple(int(c) for c in (cardinalities or (8,) * n_factors))
    if len(cards) != n_factors:
        raise ValueError("one cardinality per factor required")
    rng = np.random.default_rng(seed)
    factors = factor_grid(cards)
    mean = (np.array(cards) - 1) / 2.0
    std = np.sqrt((np.square(np.array(cards, dtype=np.float64)) - 1) / 12.0)
    std[std == 0] = 1.0
    u = (factors - mean) / std

    mixing = rng.standard_normal((dim, n_factors))
    while np.linalg.matrix_rank(mixing) < n_factors:
        mixing = rng.standard_normal((dim, n_factors))
    x = u @ mixing.T
    if noise_sigma > 0:
        x = x + noise_sigma * rng.standard_normal(x.shape)

    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    span[span == 0] = 1.0
    pixels = np.rint((x - lo) / span * 255.0).astype(np.uint8)

    ds = FactorDataset(images=pixels.reshape(-1, 1, 1, dim), factors=factors,
                       cardinalities=cards,
                       factor_names=tuple(f"factor{k}" for k in range(n_factors)))
    pinv = np.linalg.pinv(mixing)
    enc_w = span[:, None] * pinv.T          # (dim, K): u_hat = batch @ enc_w + enc_b
    enc_b = pinv @ lo

    def ideal_encoder(batch_images):
        return np.asarray(batch_images, dtype=np.float64) @ enc_w + enc_b

    info = {
        "mixing": mixing,
        "pixel_lo": lo,
        "pixel_span": span,
        "encoder_weight": enc_w,
        "encoder_bias": enc_b,
        "ideal_encoder": ideal_encoder,
        "factor_values": u,
    }
    return ds, info


def sample_batch(ds, batch_size, rng):
    """Uniform without-replacement batch of normalized images + factor rows."""
    if batch_size > ds.n:
        raise ValueError(f"batch size {batch_size} exceeds dataset size {ds.n}")
    idx = rng.choice(ds.n, size=batch_size, replace=False)
    return Batch(images=ds.images[idx].reshape(batch_size, -1) / 255.0,
                 factors=ds.factors[idx])


def sample_fixed_factor_batch(ds, factor_index, value, batch_size, rng):
    """Batch restricted to rows with factors[:, factor_index] == value.

    Falls back to with-replacement sampling (flagged on the Batch) when the
    restricted set is smaller than the batch.
    """
    k = int(factor_index)
    if not 0 <= k < ds.n_factors:
        raise ValueError(f"factor index {k} out of range")
    if not 0 <= int(value) < ds.cardinalities[k]:
        raise ValueError(f"value {value} outside cardinality {ds.cardinalities[k]}")
    rows = np.flatnonzero(ds.factors[:, k] == int(value))
    replaced = rows.size < batch_size
    idx = rng.choice(rows, size=batch_size, replace=replaced)
    return Batch(images=ds.images[idx].reshape(batch_size, -1) / 255.0,
                 factors=ds.factors[idx], replaced=replaced)


# ---------------------------------------------------------------------------
# FDS file format (little-endian, no padding):
#   magic "FDS1"; u32 N, H, W, C, K;
#   K x (u32 cardinality, u8 name-length, name bytes);
#   N*K u16 factor values row-major; N*H*W*C u8 pixels.
# ---------------------------------------------------------------------------

def save_fds(ds, path):
    n, h, w, c = ds.images.shape
    k = ds.n_factors
    if any(card > 0xFFFF for card in ds.cardinalities):
        raise ValueError("FDS stores factors as u16; cardinality too large")
    with open(path, "wb") as f:
        f.write(FDS_MAGIC)
        f.write(struct.pack("<5I", n, h, w, c, k))
        for card, name in zip(ds.cardinalities, ds.factor_names):
            raw = name.encode("utf-8")
            if len(raw) > 0xFF:
                raise ValueError(f"factor name too long: {name!r}")
            f.write(struct.pack("<IB", card, len(raw)))
            f.write(raw)
        f.write(ds.factors.astype("<u2").tobytes())
        f.write(ds.images.tobytes())


def load_fds(path):
    with open(path, "rb") as f:
        blob = f.read()

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise FdsFormatError(f"truncated FDS file while reading {what}")
        out = blob[off:off + n]
        off += n
        return out

    off = 0
    if take(4, "magic") != FDS_MAGIC:
        raise FdsFormatError("bad magic; not an FDS file")
    n, h, w, c, k = struct.unpack("<5I", take(20, "header"))
    cards, names = [], []
    for i in range(k):
        card, name_len = struct.unpack("<IB", take(5, f"factor {i} header"))
        names.append(take(name_len, f"factor {i} name").decode("utf-8"))
        cards.append(card)
    factors = np.frombuffer(take(n * k * 2, "factor table"), dtype="<u2")
    pixels = np.frombuffer(take(n * h * w * c, "pixels"), dtype=np.uint8)
    if off != len(blob):
        raise FdsFormatError(f"{len(blob) - off} trailing bytes after payload")
    try:
        return FactorDataset(images=pixels.reshape(n, h, w, c).copy(),
                             factors=factors.reshape(n, k).astype(np.int64),
                             cardinalities=tuple(cards),
                             factor_names=tuple(names))
    except ValueError as err:
        raise FdsFormatError(f"invalid dataset in FDS file: {err}") from err
