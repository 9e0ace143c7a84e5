"""Counter-based random streams addressed by (seed, purpose, block).

Trajectories are grouped into fixed-size blocks.  Block ``b`` of purpose
``p`` under master seed ``s`` always draws from the same Philox stream, so a
result depends on the seed and the sample count only, never on how blocks
are scheduled across workers.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, TypeVar

import numpy as np

BLOCK_SIZE = 4096

T = TypeVar("T")


def purpose_code(tag: str) -> int:
    """Stable 64-bit integer for a purpose string (Python's hash() is salted)."""
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")


@dataclass(frozen=True)
class StreamKey:
    seed: int
    purpose: str
    block: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1),
                                    spawn_key=(purpose_code(self.purpose), int(self.block)))
        return np.random.Generator(np.random.Philox(ss))

    def with_block(self, block: int) -> "StreamKey":
        return StreamKey(self.seed, self.purpose, block)

    def derive(self, suffix: str) -> "StreamKey":
        return StreamKey(self.seed, f"{self.purpose}/{suffix}", self.block)

    def __str__(self) -> str:
        return f"{self.seed}:{self.purpose}:{self.block}"


def block_sizes(n: int, block_size: int = BLOCK_SIZE) -> List[int]:
    full, rest = divmod(int(n), int(block_size))
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(fn: Callable[[int, StreamKey], T], n: int, key: StreamKey,
               workers: int = 1, block_size: int = BLOCK_SIZE) -> List[T]:
    """Run ``fn(block_len, block_key)`` over all blocks, results in block order."""
    sizes = block_sizes(n, block_size)
    keys = [key.with_block(b) for b in range(len(sizes))]
    if workers <= 1 or len(sizes) <= 1:
        return [fn(m, k) for m, k in zip(sizes, keys)]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(fn, sizes, keys))
