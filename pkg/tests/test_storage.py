import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pageann.core import DataBlock, GraphIndex, SearchStats
from pageann.storage import (DEFAULT_PAGE_SIZE, MAGIC, FileBackend, IndexHeader, SimBackend, block_width,
                             blocks_per_page, decode_index, decode_page, encode_index, open_backend,
                             read_pages, write_index)


def _random_blocks(rng, n, dim, R):
    blocks = []
    for i in range(n):
        k = int(rng.integers(0, R + 1))
        nb = rng.choice(n, size=min(k, n), replace=False).astype(np.int64)
        blocks.append(DataBlock(i, rng.normal(size=dim).astype(np.float32), nb))
    return blocks


def test_block_arithmetic():
    assert block_width(96, 32) == 516
    assert blocks_per_page(96, 32, 4096) == 7
    assert blocks_per_page(16, 32) == 20


def test_single_block_file(tmp_path):
    blk = DataBlock(0, np.arange(4, dtype=np.float32), np.array([], dtype=np.int64))
    h = write_index([blk], tmp_path / "i.bin", R=4)
    assert (tmp_path / "i.bin").stat().st_size == 2 * DEFAULT_PAGE_SIZE
    assert (h.n, h.b, h.num_pages) == (1, DEFAULT_PAGE_SIZE // 36, 1)


def test_write_then_read_round_trips(tmp_path, rng):
    blocks = _random_blocks(rng, 50, 8, 6)
    write_index(blocks, tmp_path / "i.bin", R=6, page_size=512)
    with FileBackend(tmp_path / "i.bin") as be:
        b = be.b
        got = read_pages(be, [0])
        assert got[0][0] == 0
        assert got[0][1] == blocks[:b]
        for blk in got[0][1]:
            assert blk.vector.tobytes() == blocks[blk.id].vector.tobytes()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 60), st.integers(1, 12), st.integers(1, 10))
def test_round_trip_property(seed, n, dim, R):
    rng = np.random.default_rng(seed)
    blocks = _random_blocks(rng, n, dim, R)
    page = 64 * (1 + (block_width(dim, R) * 3) // 64)
    lists = [b.neighbors.tolist() for b in blocks]
    image = encode_index(np.stack([b.vector for b in blocks]), GraphIndex.from_lists(lists, R), page)
    be = SimBackend(image)
    back = [blk for _, bl in read_pages(be, range(be.num_pages)) for blk in bl]
    assert back == blocks
    h, vecs, g = decode_index(image)
    assert g.to_lists() == lists and np.array_equal(vecs, np.stack([b.vector for b in blocks]))


def test_duplicate_pages_are_coalesced(rng):
    blocks = _random_blocks(rng, 100, 4, 4)
    lists = [b.neighbors.tolist() for b in blocks]
    be = SimBackend(encode_index(np.stack([b.vector for b in blocks]), GraphIndex.from_lists(lists, 4), 256))
    st_ = SearchStats()
    got = read_pages(be, [3, 3], st_)
    assert [p for p, _ in got] == [3]
    assert st_.ssd_page_reads == 1 and be.total_reads == 1


def test_simulator_latency_and_determinism(rng):
    blocks = _random_blocks(rng, 40, 4, 4)
    lists = [b.neighbors.tolist() for b in blocks]
    image = encode_index(np.stack([b.vector for b in blocks]), GraphIndex.from_lists(lists, 4), 256)
    be = SimBackend(image, page_cost=5, batch_cost=20)
    h = be.submit([0, 1, 2])
    assert h.latency == 35 and not h.done()
    h.advance(34)
    assert not h.done()
    h.advance(1)
    assert h.done()
    h2 = be.submit([1])
    assert not h2.done()
    pages = h2.wait()
    assert h2.done() and list(pages) == [1]
    assert be.submit([]).done()
    runs = []
    for _ in range(2):
        s = SearchStats()
        sim = SimBackend(image)
        for batch in ([0], [1, 2], [2, 2, 3]):
            sim.submit(batch, s).wait()
        runs.append(s)
    assert runs[0] == runs[1]


def test_hundred_pages_reassemble_graph(tmp_path, rng):
    n, R = 400, 5
    blocks = _random_blocks(rng, n, 4, R)
    write_index(blocks, tmp_path / "i.bin", R=R, page_size=160)  # 40-byte blocks, b = 4
    with FileBackend(tmp_path / "i.bin") as be:
        assert be.num_pages == 100
        got = read_pages(be, range(100))
    edges = {(blk.id, int(u)) for _, bl in got for blk in bl for u in blk.neighbors}
    assert edges == {(b.id, int(u)) for b in blocks for u in b.neighbors}


def test_file_and_sim_agree_on_reads_and_alignment(tmp_path, rng):
    blocks = _random_blocks(rng, 90, 6, 4)
    write_index(blocks, tmp_path / "i.bin", R=4, page_size=256)
    raw = (tmp_path / "i.bin").read_bytes()
    fs, ss = SearchStats(), SearchStats()
    with FileBackend(tmp_path / "i.bin") as fb:
        sb = SimBackend(raw)
        assert len(raw) == (1 + fb.num_pages) * 256
        for batch in ([0, 5], [5, 5, 6], [fb.num_pages - 1]):
            a = fb.submit(batch, fs).wait()
            b = sb.submit(batch, ss).wait()
            assert a == b
            for p in a:
                assert a[p] == decode_page(raw[(1 + p) * 256 : (2 + p) * 256], p, fb.header)
    assert fs.ssd_page_reads == ss.ssd_page_reads == 5


def test_concurrent_batches(tmp_path, rng):
    blocks = _random_blocks(rng, 200, 4, 4)
    write_index(blocks, tmp_path / "i.bin", R=4, page_size=128)
    with open_backend(tmp_path / "i.bin", "file", workers=4) as be:
        def job(p):
            return be.submit([p, (p + 7) % be.num_pages]).wait()
        with ThreadPoolExecutor(8) as pool:
            out = list(pool.map(job, range(be.num_pages)))
    for p, pages in enumerate(out):
        assert all(blk.id // be.b == q for q, bl in pages.items() for blk in bl)


def test_header_errors(tmp_path, rng):
    blocks = _random_blocks(rng, 10, 4, 4)
    write_index(blocks, tmp_path / "i.bin", R=4, page_size=256)
    raw = bytearray((tmp_path / "i.bin").read_bytes())
    with pytest.raises(ValueError, match="magic"):
        SimBackend(b"NOTANIDX" + bytes(raw[8:]))
    bumped = bytearray(raw)
    struct.pack_into("<I", bumped, 8, 99)
    with pytest.raises(ValueError, match="version"):
        SimBackend(bytes(bumped))
    with pytest.raises(ValueError):
        SimBackend(bytes(raw[:300]))
    (tmp_path / "short.bin").write_bytes(bytes(raw[:-10]))
    with pytest.raises(ValueError):
        FileBackend(tmp_path / "short.bin")
    with pytest.raises(ValueError):
        IndexHeader.unpack(MAGIC[:4])
    be = SimBackend(bytes(raw))
    with pytest.raises(IndexError):
        be.submit([be.num_pages])
    with pytest.raises(ValueError):
        encode_index(np.zeros((2, 1000), dtype=np.float32), GraphIndex.from_lists([[1], [0]]), 256)
