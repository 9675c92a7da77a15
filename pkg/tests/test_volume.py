import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuroseg import errors
from neuroseg.rng import Rng
from neuroseg.volume import (
    Block,
    BlockGridSpec,
    Volume3D,
    blockify,
    filter_training_blocks,
    foreground_ratio,
    load_raw,
    normalize,
    save_raw,
    stitch,
)
from oracles import grid_origins, percentile_linear, stitch_brute


def rand_volume(seed, w, h, d):
    return Volume3D(Rng(seed).uniform_array((d, h, w)).astype(np.float32))


# -- raw I/O --------------------------------------------------------------------

def test_single_voxel_half_is_ieee754_le(tmp_path):
    save_raw(Volume3D(np.full((1, 1, 1), 0.5, np.float32)),
             tmp_path / "v.raw", tmp_path / "v.json")
    assert (tmp_path / "v.raw").read_bytes() == bytes([0x00, 0x00, 0x00, 0x3F])
    meta = json.loads((tmp_path / "v.json").read_text())
    assert meta == {"width": 1, "height": 1, "depth": 1, "dtype": "f32le", "order": "zyx"}


def test_roundtrip_bitwise(tmp_path):
    v = rand_volume(3, 10, 10, 5)
    save_raw(v, tmp_path / "v.raw", tmp_path / "v.json")
    back = load_raw(tmp_path / "v.raw", tmp_path / "v.json")
    assert back.data.tobytes() == v.data.tobytes()


def test_size_mismatch(tmp_path):
    (tmp_path / "v.raw").write_bytes(b"\x00" * 4)
    (tmp_path / "v.json").write_text(
        '{"width":2,"height":2,"depth":2,"dtype":"f32le","order":"zyx"}')
    with pytest.raises(errors.SizeMismatch):
        load_raw(tmp_path / "v.raw", tmp_path / "v.json")


def test_unsupported_dtype(tmp_path):
    (tmp_path / "v.raw").write_bytes(b"\x00" * 8)
    (tmp_path / "v.json").write_text(
        '{"width":1,"height":1,"depth":1,"dtype":"f64le","order":"zyx"}')
    with pytest.raises(errors.UnsupportedDtype):
        load_raw(tmp_path / "v.raw", tmp_path / "v.json")


def test_bad_meta(tmp_path):
    (tmp_path / "v.raw").write_bytes(b"")
    (tmp_path / "v.json").write_text('{"width": 1}')
    with pytest.raises(errors.BadMeta):
        load_raw(tmp_path / "v.raw", tmp_path / "v.json")
    (tmp_path / "v.json").write_text("not json")
    with pytest.raises(errors.BadMeta):
        load_raw(tmp_path / "v.raw", tmp_path / "v.json")


def test_nonfinite_rejected():
    with pytest.raises(errors.BadMeta):
        Volume3D(np.array([[[np.nan]]], dtype=np.float32))


# -- normalize -------------------------------------------------------------------

def test_normalize_constant_all_zero():
    v = Volume3D(np.full((2, 3, 4), 7.0, np.float32))
    assert np.array_equal(normalize(v).data, np.zeros((2, 3, 4), np.float32))


def test_normalize_two_values_full_range():
    data = np.zeros((1, 1, 10), np.float32)
    data[0, 0, 5:] = 10.0
    out = normalize(Volume3D(data), 0.0, 100.0)
    assert set(np.unique(out.data)) == {0.0, 1.0}


def test_normalize_ramp_matches_percentile_oracle():
    data = np.arange(1000, dtype=np.float32).reshape(10, 10, 10)
    lo = percentile_linear(data, 1.0)
    hi = percentile_linear(data, 99.0)
    expected = ((np.clip(data.astype(np.float64), lo, hi) - lo) / (hi - lo)).astype(np.float32)
    assert np.array_equal(normalize(Volume3D(data)).data, expected)


@given(st.integers(0, 2**32))
@settings(max_examples=20)
def test_normalize_range_invariant(seed):
    out = normalize(rand_volume(seed, 6, 5, 4))
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


# -- blockify / stitch -------------------------------------------------------------

def test_blockify_exact_fit_single_block():
    v = rand_volume(1, 100, 100, 5)
    blocks = blockify(v, BlockGridSpec())
    assert len(blocks) == 1
    assert blocks[0].origin == (0, 0, 0)
    assert np.array_equal(blocks[0].data, v.data)


def test_blockify_two_blocks_along_x():
    v = rand_volume(2, 200, 100, 5)
    blocks = blockify(v, BlockGridSpec())
    assert [b.origin for b in blocks] == [(0, 0, 0), (100, 0, 0)]


def test_blockify_boundary_padding_and_grid():
    v = rand_volume(3, 250, 130, 7)
    blocks = blockify(v, BlockGridSpec())
    origins = {b.origin for b in blocks}
    expected = {(x, y, z)
                for z in grid_origins(7, 5)
                for y in grid_origins(130, 100)
                for x in grid_origins(250, 100)}
    assert origins == expected
    assert len(blocks) == 3 * 2 * 2
    corner = next(b for b in blocks if b.origin == (200, 100, 5))
    assert np.array_equal(corner.data[:2, :30, :50], v.data[5:, 100:, 200:])
    assert np.all(corner.data[2:] == 0.0)
    assert np.all(corner.data[:, 30:, :] == 0.0)
    assert np.all(corner.data[:, :, 50:] == 0.0)


def test_blockify_covers_every_voxel():
    v = rand_volume(4, 37, 23, 9)
    spec = BlockGridSpec(block_size=(10, 10, 4), stride=(7, 9, 3))
    covered = np.zeros(v.data.shape, dtype=bool)
    for b in blockify(v, spec):
        x0, y0, z0 = b.origin
        covered[z0:z0 + 4, y0:y0 + 10, x0:x0 + 10] = True
    assert covered.all()


def test_stitch_blockify_identity_bitwise():
    v = rand_volume(5, 37, 23, 9)
    spec = BlockGridSpec(block_size=(10, 8, 4))
    out = stitch(blockify(v, spec), v.dims)
    assert out.data.tobytes() == v.data.tobytes()


def test_stitch_overlap_mean():
    a = ((0, 0, 0), np.zeros((2, 4, 4), np.float32))
    b = ((0, 0, 1), np.ones((2, 4, 4), np.float32))
    out = stitch([a, b], (4, 4, 3))
    assert np.all(out.data[0] == 0.0)
    assert np.all(out.data[1] == 0.5)
    assert np.all(out.data[2] == 1.0)


def test_stitch_random_overlap_matches_brute_force():
    rng = Rng(6)
    dims = (9, 7, 5)
    pairs = []
    for _ in range(6):
        x0, y0, z0 = rng.randint(6), rng.randint(4), rng.randint(3)
        data = rng.uniform_array((3, 4, 4)).astype(np.float32)
        pairs.append(((x0, y0, z0), data))
    # ensure full coverage with one big block
    pairs.append(((0, 0, 0), rng.uniform_array((5, 7, 9)).astype(np.float32)))
    out = stitch(pairs, dims)
    assert np.array_equal(out.data, stitch_brute(pairs, dims))


def test_stitch_coverage_gap():
    with pytest.raises(errors.CoverageGap):
        stitch([((0, 0, 0), np.ones((1, 2, 2), np.float32))], (4, 4, 1))


# -- foreground filtering ----------------------------------------------------------

def _block(data):
    data = np.asarray(data, dtype=np.float32)
    d, h, w = data.shape
    return Block((0, 0, 0), (w, h, d), data)


def test_foreground_ratio_extremes():
    assert foreground_ratio(_block(np.zeros((5, 10, 10)))) == 0.0
    assert foreground_ratio(_block(np.ones((5, 10, 10)))) == 1.0


def test_foreground_ratio_counts():
    data = np.zeros((5, 100, 100), np.float32)
    data.reshape(-1)[:500] = 1.0
    assert foreground_ratio(_block(data)) == 0.01


def test_filter_tau_zero_keeps_all():
    imgs = [Block((0, 0, 0), (2, 2, 1), np.zeros((1, 2, 2), np.float32)),
            Block((2, 0, 0), (2, 2, 1), np.zeros((1, 2, 2), np.float32))]
    labs = [Block((0, 0, 0), (2, 2, 1), np.zeros((1, 2, 2), np.float32)),
            Block((2, 0, 0), (2, 2, 1), np.ones((1, 2, 2), np.float32))]
    assert len(filter_training_blocks(imgs, labs, 0.0)) == 2


def test_filter_tau_one_keeps_full_only():
    imgs = [Block((0, 0, 0), (2, 2, 1), np.zeros((1, 2, 2), np.float32)),
            Block((2, 0, 0), (2, 2, 1), np.zeros((1, 2, 2), np.float32))]
    half = np.zeros((1, 2, 2), np.float32)
    half[0, 0, 0] = 1.0
    labs = [Block((0, 0, 0), (2, 2, 1), half),
            Block((2, 0, 0), (2, 2, 1), np.ones((1, 2, 2), np.float32))]
    kept = filter_training_blocks(imgs, labs, 1.0)
    assert [img.origin for img, _ in kept] == [(2, 0, 0)]


def test_filter_matches_oracle_on_synthetic():
    rng = Rng(8)
    spec = BlockGridSpec(block_size=(8, 8, 2))
    img = rand_volume(9, 24, 16, 4)
    lab = Volume3D((rng.uniform_array((4, 16, 24)) > 0.9).astype(np.float32))
    imgs, labs = blockify(img, spec), blockify(lab, spec)
    tau = 0.01
    kept = filter_training_blocks(imgs, labs, tau)
    expected = [i for i, b in enumerate(labs)
                if (b.data >= 0.5).sum() / b.data.size >= tau]
    assert [imgs[i].origin for i in expected] == [img.origin for img, _ in kept]


def test_filter_alignment_mismatch():
    a = [Block((0, 0, 0), (2, 2, 1), np.zeros((1, 2, 2), np.float32))]
    b = [Block((2, 0, 0), (2, 2, 1), np.zeros((1, 2, 2), np.float32))]
    with pytest.raises(errors.AlignmentMismatch):
        filter_training_blocks(a, b, 0.0)
    with pytest.raises(errors.AlignmentMismatch):
        filter_training_blocks(a, [], 0.0)


def test_grid_spec_validation():
    with pytest.raises(errors.BadMeta):
        BlockGridSpec(block_size=(4, 4, 2), stride=(5, 4, 2))
    with pytest.raises(errors.BadMeta):
        BlockGridSpec(block_size=(4, 4, 2), stride=(0, 4, 2))
