import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pageann.datasets import (clustered_dataset, ground_truth, ingest_fvecs, read_fvecs, read_ivecs,
                              recall_at_k, write_fvecs, write_ivecs)


def test_fvecs_round_trip_is_byte_exact(tmp_path, rng):
    arr = rng.normal(size=(7, 5)).astype(np.float32)
    write_fvecs(tmp_path / "a.fvecs", arr)
    raw = (tmp_path / "a.fvecs").read_bytes()
    want = b"".join(struct.pack("<i", 5) + row.tobytes() for row in arr)
    assert raw == want
    back = read_fvecs(tmp_path / "a.fvecs")
    assert back.tobytes() == arr.tobytes()
    assert ingest_fvecs(tmp_path / "a.fvecs").dim == 5


def test_ivecs_round_trip(tmp_path, rng):
    arr = rng.integers(0, 10**6, size=(4, 3)).astype(np.int32)
    write_ivecs(tmp_path / "t.ivecs", arr)
    assert np.array_equal(read_ivecs(tmp_path / "t.ivecs"), arr)


def test_mismatched_dim_names_the_record(tmp_path):
    raw = struct.pack("<i3f", 3, 1, 2, 3) + struct.pack("<i3f", 3, 4, 5, 6) + struct.pack("<i2f", 2, 7, 8)
    (tmp_path / "bad.fvecs").write_bytes(raw)
    with pytest.raises(ValueError, match="record 2"):
        read_fvecs(tmp_path / "bad.fvecs")


def test_truncated_and_empty_files(tmp_path):
    (tmp_path / "t.fvecs").write_bytes(struct.pack("<i3f", 3, 1, 2, 3) + struct.pack("<i2f", 3, 1, 2))
    with pytest.raises(ValueError, match="record 1 truncated"):
        read_fvecs(tmp_path / "t.fvecs")
    (tmp_path / "e.fvecs").write_bytes(b"")
    with pytest.raises(ValueError, match="empty"):
        read_fvecs(tmp_path / "e.fvecs")
    (tmp_path / "h.fvecs").write_bytes(struct.pack("<i3f", 3, 1, 2, 3) + b"\x03\x00")
    with pytest.raises(ValueError, match="header in record 1"):
        read_fvecs(tmp_path / "h.fvecs")


def test_clustered_dataset_is_seeded():
    a = clustered_dataset(100, 4, 3, seed=9, n_queries=5)
    b = clustered_dataset(100, 4, 3, seed=9, n_queries=5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert a[0].shape == (100, 4) and a[1].shape == (5, 4) and a[0].dtype == np.float32


def test_ground_truth_matches_quadratic_oracle(rng):
    data = rng.integers(-3, 4, size=(60, 3)).astype(np.float32)  # many ties
    qs = rng.integers(-3, 4, size=(10, 3)).astype(np.float32)
    got = ground_truth(data, qs, 7)
    for q, row in zip(qs, got):
        pairs = []
        for i, x in enumerate(data):
            pairs.append((sum((float(a) - float(b)) ** 2 for a, b in zip(x, q)), i))
        assert row.tolist() == [i for _, i in sorted(pairs)[:7]]
    full = ground_truth(data, qs[:1], 60)
    assert sorted(full[0].tolist()) == list(range(60))
    assert ground_truth(data, qs[:1], 100).shape == (1, 60)


def test_recall_examples():
    assert recall_at_k([1, 2, 3], [3, 2, 1], 3) == 1.0
    assert recall_at_k([1, 2, 9], [1, 2, 3], 3) == pytest.approx(2 / 3)
    assert recall_at_k([7], [8], 1) == 0.0
    with pytest.raises(ValueError):
        recall_at_k([1, 2], [1, 2, 3], 3)


@settings(max_examples=100)
@given(st.lists(st.integers(0, 30), min_size=5, max_size=5, unique=True),
       st.lists(st.integers(0, 30), min_size=5, max_size=5, unique=True), st.randoms())
def test_recall_is_permutation_invariant(res, truth, rnd):
    r = recall_at_k(res, truth, 5)
    shuffled = list(res)
    rnd.shuffle(shuffled)
    assert recall_at_k(shuffled, truth, 5) == r
    assert 0.0 <= r <= 1.0
    assert r == len(set(res) & set(truth)) / 5
