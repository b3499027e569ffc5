import io
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lensmae.data import (
    CLASS_NAMES,
    NOISE_SIGMA,
    BadMagicError,
    DatasetLayoutError,
    ImageShapeError,
    TruncatedPayloadError,
    UnpairedFilesError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    batch_iter,
    block_average,
    encode_npy,
    index_dataset1,
    load_images,
    normalize_image,
    pair_index,
    parse_npy,
    read_npy,
    split_pairs,
    stratified_split,
    synth_dataset1,
    synth_lens,
    synth_sr_pairs,
    write_npy,
)

FIXTURES = Path(__file__).parent / "fixtures"


# --- NPY reader against reference-written fixtures ---------------------------


def test_fixture_f4_2x2_exact():
    arr = read_npy(FIXTURES / "f4_2x2.npy")
    assert arr.shape == (2, 2) and arr.descr == "<f4"
    np.testing.assert_array_equal(arr.data, [[0, 1], [2, 3]])
    assert arr.data.dtype == np.float32


@pytest.mark.parametrize("name", ["f4_2x2", "f8_3x4", "f4_fortran", "f8_scalar", "f4_v2"])
def test_fixtures_match_reference_reader_bit_exactly(name):
    path = FIXTURES / f"{name}.npy"
    ours = read_npy(path).data
    ref = np.load(path)
    assert ours.dtype == ref.dtype and ours.shape == ref.shape
    assert ours.tobytes() == np.ascontiguousarray(ref).tobytes()


def test_fortran_fixture_flag():
    arr = read_npy(FIXTURES / "f4_fortran.npy")
    assert arr.fortran_order
    np.testing.assert_array_equal(arr.data, np.arange(6).reshape(2, 3))


@pytest.mark.parametrize(
    "name, err",
    [("bad_magic", BadMagicError), ("int32", UnsupportedDtypeError), ("truncated", TruncatedPayloadError)],
)
def test_malformed_fixtures_raise_distinct_errors(name, err):
    with pytest.raises(err):
        read_npy(FIXTURES / f"{name}.npy")


def test_malformed_error_kinds_are_distinct():
    kinds = set()
    for name in ("bad_magic", "int32", "truncated"):
        try:
            read_npy(FIXTURES / f"{name}.npy")
        except Exception as exc:  # noqa: BLE001
            kinds.add(type(exc))
    assert len(kinds) == 3


def test_unsupported_version():
    buf = bytearray((FIXTURES / "f4_2x2.npy").read_bytes())
    buf[6] = 3
    with pytest.raises(UnsupportedVersionError):
        parse_npy(bytes(buf))


# --- writer ------------------------------------------------------------------


@pytest.mark.parametrize("dtype", ["<f4", "<f8"])
@pytest.mark.parametrize("shape", [(), (3,), (2, 2), (64, 64), (3, 16, 16)])
def test_writer_byte_identical_to_numpy_save(dtype, shape):
    arr = np.random.default_rng(0).standard_normal(shape).astype(dtype)
    ref = io.BytesIO()
    np.save(ref, arr)
    assert encode_npy(arr) == ref.getvalue()


def test_header_is_64_byte_aligned():
    data = encode_npy(np.zeros((5, 7), np.float32))
    hlen = int.from_bytes(data[8:10], "little")
    assert (10 + hlen) % 64 == 0
    assert data[10 + hlen - 1:10 + hlen] == b"\n"


def test_writer_rejects_int():
    with pytest.raises(UnsupportedDtypeError):
        encode_npy(np.arange(3))


def test_round_trip_file_byte_identical(tmp_path):
    src = FIXTURES / "f8_3x4.npy"
    arr = read_npy(src)
    out = tmp_path / "copy.npy"
    write_npy(arr.data, out)
    assert out.read_bytes() == src.read_bytes()
    assert read_npy(out).shape == arr.shape


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(st.sampled_from([np.float32, np.float64]), hnp.array_shapes(min_dims=0, max_dims=3, max_side=6),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_property(arr):
    buf = encode_npy(arr)
    back = parse_npy(buf)
    assert back.data.tobytes() == arr.tobytes()
    assert encode_npy(back.data) == buf


# --- indexing, splits, pairing -----------------------------------------------


def make_tree(root, per_class=3, extra=None):
    for name in CLASS_NAMES:
        (root / name).mkdir(parents=True)
        for i in range(per_class):
            write_npy(np.full((4, 4), float(i), np.float32), root / name / f"img_{i:03d}.npy")
    if extra:
        (root / extra).mkdir()
        write_npy(np.zeros((4, 4), np.float32), root / extra / "x.npy")
    return root


def test_index_counts_and_labels(tmp_path):
    idx = index_dataset1(make_tree(tmp_path))
    assert len(idx) == 9
    assert idx.counts == {"no_sub": 3, "cdm": 3, "axion": 3}
    assert idx.labels.tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2]


def test_index_ignores_unknown_dir_with_warning(tmp_path):
    make_tree(tmp_path, extra="junk")
    with pytest.warns(UserWarning, match="junk"):
        idx = index_dataset1(tmp_path)
    assert len(idx) == 9


def test_index_ordering_stable(tmp_path):
    make_tree(tmp_path)
    a = [e.path for e in index_dataset1(tmp_path).entries]
    b = [e.path for e in index_dataset1(tmp_path).entries]
    assert a == b == sorted(a, key=lambda p: (CLASS_NAMES.index(p.parent.name), p.name))


def test_index_missing_class_dir(tmp_path):
    (tmp_path / "no_sub").mkdir()
    with pytest.raises(DatasetLayoutError):
        index_dataset1(tmp_path)


def test_split_class_of_ten(tmp_path):
    idx = index_dataset1(make_tree(tmp_path, per_class=10))
    sp = stratified_split(idx, seed=0)
    for c in range(3):
        assert sp.train[idx.labels == c].sum() == 9


def test_split_rounding_half_even(tmp_path):
    # 0.5 * 5 = 2.5 -> 2
    idx = index_dataset1(make_tree(tmp_path, per_class=5))
    sp = stratified_split(idx, seed=0, fraction=0.5)
    assert sp.train[idx.labels == 0].sum() == 2


def test_split_deterministic_and_seed_sensitive(tmp_path):
    idx = index_dataset1(make_tree(tmp_path, per_class=10))
    a = stratified_split(idx, 3).train
    assert np.array_equal(a, stratified_split(idx, 3).train)
    assert any(not np.array_equal(a, stratified_split(idx, s).train) for s in range(20) if s != 3)


def test_split_keeps_one_item_on_each_side(tmp_path):
    # round(0.9 * 2) = 2 would leave no test item
    idx = index_dataset1(make_tree(tmp_path, per_class=2))
    sp = stratified_split(idx, seed=0, fraction=0.9)
    for c in range(3):
        assert sp.train[idx.labels == c].sum() == 1


def test_split_too_small_class(tmp_path):
    idx = index_dataset1(make_tree(tmp_path, per_class=1))
    with pytest.raises(ValueError):
        stratified_split(idx, 0)


def test_split_pairs_counts():
    from lensmae.data import PairIndex

    pairs = PairIndex(Path("."), [(Path(f"l{i}"), Path(f"h{i}")) for i in range(20)])
    sp = split_pairs(pairs, 0)
    assert sp.train.sum() == 18
    assert np.array_equal(sp.train, split_pairs(pairs, 0).train)


def make_pairs(root, n=4, hr_shape=(64, 64)):
    (root / "HR").mkdir(parents=True)
    (root / "LR").mkdir()
    for i in range(n):
        write_npy(np.zeros(hr_shape, np.float32), root / "HR" / f"p{i}.npy")
        write_npy(np.zeros((16, 16), np.float32), root / "LR" / f"p{i}.npy")
    return root


def test_pair_index_matches(tmp_path):
    pi = pair_index(make_pairs(tmp_path))
    assert len(pi) == 4
    assert pi.names == ["p0.npy", "p1.npy", "p2.npy", "p3.npy"]


def test_pair_index_extra_lr(tmp_path):
    make_pairs(tmp_path)
    write_npy(np.zeros((16, 16), np.float32), tmp_path / "LR" / "extra.npy")
    with pytest.raises(UnpairedFilesError, match="extra.npy"):
        pair_index(tmp_path)


def test_pair_index_wrong_hr_shape(tmp_path):
    make_pairs(tmp_path, hr_shape=(32, 32))
    with pytest.raises(ImageShapeError):
        pair_index(tmp_path)


# --- normalisation, loading, batching ----------------------------------------


def test_normalize_example():
    np.testing.assert_array_equal(normalize_image(np.array([[0, 2], [4, 8]], float)), [[0, 0.25], [0.5, 1.0]])


def test_normalize_constant():
    np.testing.assert_array_equal(normalize_image(np.full((3, 3), 5.0)), 0.0)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (5, 5), elements=st.floats(-1e3, 1e3)))
def test_normalize_range(x):
    out = normalize_image(x)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_normalize_none_and_unknown():
    x = np.arange(4.0)
    assert normalize_image(x, "none") is x
    with pytest.raises(ValueError):
        normalize_image(x, "zscore")


def test_load_images_stack(tmp_path):
    make_tree(tmp_path, per_class=2)
    idx = index_dataset1(tmp_path)
    imgs = load_images([e.path for e in idx.entries], normalize="none")
    assert imgs.shape == (6, 4, 4) and imgs.dtype == np.float32


def test_batch_sizes():
    assert [len(b) for b in batch_iter(130, 64, 0)] == [64, 64, 2]


def test_batch_partition_and_determinism():
    a = batch_iter(130, 64, 5, epoch=2)
    b = batch_iter(130, 64, 5, epoch=2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    np.testing.assert_array_equal(np.sort(np.concatenate(a)), np.arange(130))
    c = batch_iter(130, 64, 5, epoch=3)
    assert not np.array_equal(np.concatenate(a), np.concatenate(c))


# --- synthetic generator -----------------------------------------------------


def test_synth_class_means_differ():
    means = []
    for c in range(3):
        rng = np.random.default_rng([0, c])
        means.append(np.mean([synth_lens(c, rng) for _ in range(1000)], axis=0))
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.abs(means[i] - means[j]).mean() > 5 * NOISE_SIGMA


def test_synth_deterministic_and_in_range():
    for c in CLASS_NAMES:
        a = synth_lens(c, np.random.default_rng(4))
        b = synth_lens(c, np.random.default_rng(4))
        assert a.tobytes() == b.tobytes()
        assert a.shape == (64, 64) and a.min() >= 0 and a.max() <= 1


def test_synth_rejects_unknown_class():
    with pytest.raises(ValueError):
        synth_lens("wdm", np.random.default_rng(0))
    with pytest.raises(ValueError):
        synth_lens(3, np.random.default_rng(0))


def test_block_average_properties():
    np.testing.assert_array_equal(block_average(np.full((64, 64), 0.3)), np.full((16, 16), 0.3))
    lr = np.random.default_rng(0).random((16, 16))
    up = np.kron(lr, np.ones((4, 4)))
    np.testing.assert_allclose(block_average(up), lr, rtol=0, atol=1e-15)


def test_synth_dataset_layout(tmp_path):
    root = synth_dataset1(tmp_path / "D1", per_class=3, seed=1)
    idx = index_dataset1(root)
    assert idx.counts == {"no_sub": 3, "cdm": 3, "axion": 3}
    assert read_npy(idx.entries[0].path).shape == (64, 64)


def test_synth_pairs_on_disk(tmp_path):
    pi = synth_sr_pairs(tmp_path / "D2", n=3, seed=1)
    assert len(pi) == 3
    assert len(list((tmp_path / "D2" / "HR").glob("*.npy"))) == 3
    assert len(list((tmp_path / "D2" / "LR").glob("*.npy"))) == 3
    lr, hr = pi.pairs[0]
    np.testing.assert_allclose(read_npy(lr).data, block_average(read_npy(hr).data.astype(np.float64)), atol=1e-7)
    assert len(pair_index(tmp_path / "D2")) == 3
