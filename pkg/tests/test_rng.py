import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from spdereg.rng import BLOCK_SIZE, StreamKey, block_sizes, map_blocks, purpose_code


def test_streams_are_reproducible_and_distinct():
    a = StreamKey(7, "bel").generator().standard_normal(5)
    b = StreamKey(7, "bel").generator().standard_normal(5)
    c = StreamKey(7, "fd").generator().standard_normal(5)
    d = StreamKey(8, "bel").generator().standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_block_and_derive_change_stream():
    k = StreamKey(1, "x")
    assert k.with_block(1).generator().random() != k.generator().random()
    assert k.derive("y").purpose == "x/y"
    assert str(k.with_block(3)) == "1:x:3"


def test_purpose_code_is_stable():
    assert purpose_code("semigroup") == purpose_code("semigroup")
    assert purpose_code("a") != purpose_code("b")


@given(st.integers(1, 50_000), st.integers(1, 5000))
def test_block_sizes_partition(n, bs):
    sizes = block_sizes(n, bs)
    assert sum(sizes) == n
    assert all(0 < s <= bs for s in sizes)
    assert all(s == bs for s in sizes[:-1])


def test_map_blocks_is_worker_independent():
    key = StreamKey(3, "sum")

    def fn(n, k):
        return k.generator().standard_normal(n).sum()

    one = map_blocks(fn, 3 * BLOCK_SIZE + 17, key, workers=1)
    many = map_blocks(fn, 3 * BLOCK_SIZE + 17, key, workers=4)
    assert one == many and len(one) == 4
