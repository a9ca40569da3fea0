import numpy as np
import pytest

from wtckit.data import (Batch, FactorDataset, FdsFormatError, factor_grid,
                         gen_linear_gaussian, gen_toysprites, load_fds,
                         sample_batch, sample_fixed_factor_batch, save_fds)


def test_factor_grid_lexicographic():
    grid = factor_grid((2, 3))
    want = [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]
    np.testing.assert_array_equal(grid, want)


def test_factor_grid_covers_every_row_exactly_once():
    cards = (3, 4, 8, 8)
    grid = factor_grid(cards)
    strides = np.array([4 * 8 * 8, 8 * 8, 8, 1])
    linear = grid @ strides
    np.testing.assert_array_equal(np.sort(linear), np.arange(np.prod(cards)))


# ---------------------------------------------------------------------------
# toy sprites
# ---------------------------------------------------------------------------

def test_toysprites_size_and_layout():
    ds = gen_toysprites(1)
    assert ds.n == 3 * 4 * 8 * 8 == 768
    assert ds.images.shape == (768, 16, 16, 1)
    assert ds.images.dtype == np.uint8
    assert ds.cardinalities == (3, 4, 8, 8)
    assert ds.factor_names == ("shape", "scale", "posX", "posY")


def test_toysprites_translation_preserves_pixel_multiset():
    ds = gen_toysprites(1)
    # rows with identical shape/scale/posY but different posX
    base = ds.factors
    for target_x in (0, 3, 7):
        a = np.flatnonzero((base[:, 0] == 2) & (base[:, 1] == 3)
                           & (base[:, 2] == 0) & (base[:, 3] == 4))[0]
        b = np.flatnonzero((base[:, 0] == 2) & (base[:, 1] == 3)
                           & (base[:, 2] == target_x) & (base[:, 3] == 4))[0]
        np.testing.assert_array_equal(np.sort(ds.images[a].ravel()),
                                      np.sort(ds.images[b].ravel()))


def test_toysprites_deterministic_and_factor_table_seed_independent():
    a, b = gen_toysprites(5), gen_toysprites(5)
    np.testing.assert_array_equal(a.images, b.images)
    c = gen_toysprites(6)
    np.testing.assert_array_equal(a.factors, c.factors)


def test_toysprites_bounding_box_grows_with_scale():
    ds = gen_toysprites(1)
    for shape_idx in range(3):
        extents = []
        for scale_idx in range(4):
            row = np.flatnonzero((ds.factors[:, 0] == shape_idx)
                                 & (ds.factors[:, 1] == scale_idx)
                                 & (ds.factors[:, 2] == 4)
                                 & (ds.factors[:, 3] == 4))[0]
            ys, xs = np.nonzero(ds.images[row, :, :, 0])
            extents.append((ys.max() - ys.min() + 1, xs.max() - xs.min() + 1))
        assert extents == sorted(extents)
        assert extents[0] < extents[-1]


def test_toysprites_center_monotone_in_position():
    ds = gen_toysprites(1)
    centers = []
    for px in range(8):
        row = np.flatnonzero((ds.factors[:, 0] == 0) & (ds.factors[:, 1] == 0)
                             & (ds.factors[:, 2] == px)
                             & (ds.factors[:, 3] == 0))[0]
        xs = np.nonzero(ds.images[row, :, :, 0])[1]
        centers.append(xs.mean())
    assert all(b > a for a, b in zip(centers, centers[1:]))


def test_toysprites_shapes_distinct_at_every_scale():
    ds = gen_toysprites(1)
    for scale_idx in range(4):
        stamps = []
        for shape_idx in range(3):
            row = np.flatnonzero((ds.factors[:, 0] == shape_idx)
                                 & (ds.factors[:, 1] == scale_idx)
                                 & (ds.factors[:, 2] == 4)
                                 & (ds.factors[:, 3] == 4))[0]
            stamps.append(ds.images[row].tobytes())
        assert len(set(stamps)) == 3


def test_toysprites_canvas_too_small():
    with pytest.raises(ValueError):
        gen_toysprites(1, height=7, width=16)
    with pytest.raises(ValueError):
        gen_toysprites(1, height=12, width=12)


# ---------------------------------------------------------------------------
# linear gaussian
# ---------------------------------------------------------------------------

def test_linear_gaussian_grid_size():
    ds, _ = gen_linear_gaussian(0, 2, 4, 0.0)
    assert ds.n == 64
    assert ds.cardinalities == (8, 8)
    assert ds.images.shape == (64, 1, 1, 4)


def test_linear_gaussian_ideal_encoder_recovers_factors():
    ds, info = gen_linear_gaussian(0, 2, 4, 0.0)
    u_hat = info["ideal_encoder"](ds.pixels_flat())
    # uint8 quantization bounds the recovery error
    assert np.abs(u_hat - info["factor_values"]).max() < 2e-2


def test_linear_gaussian_matches_matrix_form():
    ds, info = gen_linear_gaussian(3, 3, 6, 0.01)
    batch = ds.pixels_flat()[:10]
    np.testing.assert_allclose(info["ideal_encoder"](batch),
                               batch @ info["encoder_weight"]
                               + info["encoder_bias"])


def test_linear_gaussian_shares_factor_grid_layout():
    ds, _ = gen_linear_gaussian(0, 4, 6, 0.0, cardinalities=(3, 4, 8, 8))
    np.testing.assert_array_equal(ds.factors, gen_toysprites(1).factors)


def test_linear_gaussian_validates_args():
    with pytest.raises(ValueError):
        gen_linear_gaussian(0, 4, 2, 0.0)        # dim < n_factors
    with pytest.raises(ValueError):
        gen_linear_gaussian(0, 2, 4, -1.0)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_sample_batch_normalization_and_shape(rng):
    ds = gen_toysprites(1)
    batch = sample_batch(ds, 32, rng)
    assert batch.images.shape == (32, 256)
    assert batch.images.min() >= 0.0 and batch.images.max() <= 1.0
    assert batch.factors.shape == (32, 4)
    assert not batch.replaced


def test_sample_batch_full_size_is_permutation(rng):
    ds, _ = gen_linear_gaussian(0, 2, 3, 0.0)
    batch = sample_batch(ds, ds.n, rng)
    got = np.sort(batch.images @ np.array([1.0, 256.0, 256.0 ** 2]))
    want = np.sort(ds.pixels_flat() @ np.array([1.0, 256.0, 256.0 ** 2]))
    np.testing.assert_allclose(got, want)


def test_sample_batch_seeded_reproducible():
    ds = gen_toysprites(1)
    a = sample_batch(ds, 16, np.random.default_rng(42))
    b = sample_batch(ds, 16, np.random.default_rng(42))
    np.testing.assert_array_equal(a.images, b.images)
    with pytest.raises(ValueError):
        sample_batch(ds, ds.n + 1, np.random.default_rng(0))


def test_fixed_factor_batch_shares_value(rng):
    ds = gen_toysprites(1)
    batch = sample_fixed_factor_batch(ds, 2, 5, 64, rng)
    assert np.all(batch.factors[:, 2] == 5)
    assert not batch.replaced


def test_fixed_factor_batch_flags_replacement(rng):
    ds, _ = gen_linear_gaussian(0, 2, 3, 0.0)    # 8 rows per fixed value
    batch = sample_fixed_factor_batch(ds, 0, 1, 32, rng)
    assert batch.replaced
    assert np.all(batch.factors[:, 0] == 1)
    with pytest.raises(ValueError):
        sample_fixed_factor_batch(ds, 0, 99, 4, rng)
    with pytest.raises(ValueError):
        sample_fixed_factor_batch(ds, 9, 0, 4, rng)


# ---------------------------------------------------------------------------
# dataset invariants
# ---------------------------------------------------------------------------

def test_dataset_rejects_duplicate_combinations():
    images = np.zeros((4, 2, 2, 1), dtype=np.uint8)
    factors = np.array([[0, 0], [0, 1], [1, 0], [0, 0]])
    with pytest.raises(ValueError):
        FactorDataset(images=images, factors=factors, cardinalities=(2, 2),
                      factor_names=("a", "b"))


def test_dataset_rejects_out_of_range_values():
    images = np.zeros((4, 2, 2, 1), dtype=np.uint8)
    factors = np.array([[0, 0], [0, 1], [1, 0], [1, 3]])
    with pytest.raises(ValueError):
        FactorDataset(images=images, factors=factors, cardinalities=(2, 2),
                      factor_names=("a", "b"))


def test_dataset_rejects_wrong_row_count():
    images = np.zeros((3, 2, 2, 1), dtype=np.uint8)
    with pytest.raises(ValueError):
        FactorDataset(images=images, factors=factor_grid((2, 2))[:3],
                      cardinalities=(2, 2), factor_names=("a", "b"))


# ---------------------------------------------------------------------------
# FDS format
# ---------------------------------------------------------------------------

def test_fds_roundtrip_byte_exact(tmp_path):
    ds = gen_toysprites(2)
    path = tmp_path / "sprites.fds"
    save_fds(ds, path)
    loaded = load_fds(path)
    np.testing.assert_array_equal(ds.images, loaded.images)
    np.testing.assert_array_equal(ds.factors, loaded.factors)
    assert ds.cardinalities == loaded.cardinalities
    assert ds.factor_names == loaded.factor_names
    second = tmp_path / "again.fds"
    save_fds(loaded, second)
    assert path.read_bytes() == second.read_bytes()


def test_fds_bad_magic(tmp_path):
    path = tmp_path / "bad.fds"
    ds = gen_toysprites(1)
    save_fds(ds, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(FdsFormatError):
        load_fds(path)


def test_fds_truncated(tmp_path):
    path = tmp_path / "trunc.fds"
    save_fds(gen_toysprites(1), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) - 100])
    with pytest.raises(FdsFormatError):
        load_fds(path)


def test_fds_trailing_garbage(tmp_path):
    path = tmp_path / "extra.fds"
    save_fds(gen_toysprites(1), path)
    path.write_bytes(path.read_bytes() + b"\x00\x01")
    with pytest.raises(FdsFormatError):
        load_fds(path)


def test_fds_header_payload_mismatch(tmp_path):
    # header claims more rows than the payload carries
    import struct
    path = tmp_path / "short.fds"
    save_fds(gen_toysprites(1), path)
    blob = bytearray(path.read_bytes())
    n = struct.unpack_from("<I", blob, 4)[0]
    struct.pack_into("<I", blob, 4, n + 1)
    path.write_bytes(bytes(blob))
    with pytest.raises(FdsFormatError):
        load_fds(path)


def test_fds_invalid_dataset_rejected_on_load(tmp_path):
    # corrupt one factor value beyond its cardinality
    path = tmp_path / "corrupt.fds"
    ds, _ = gen_linear_gaussian(0, 2, 3, 0.0)
    save_fds(ds, path)
    blob = bytearray(path.read_bytes())
    header = 4 + 20 + sum(5 + len(n) for n in ds.factor_names)
    blob[header] = 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(FdsFormatError):
        load_fds(path)
