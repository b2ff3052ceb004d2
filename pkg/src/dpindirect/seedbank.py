"""Deterministic, tagged random substreams.

Every random quantity in a study is drawn from a stream identified by
``(master_seed, tag, indices)``.  Streams are built on numpy's counter-based
Philox generator keyed through :class:`numpy.random.SeedSequence`, so any
stream can be derived directly, in any order, by any worker.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DISTRIBUTIONS = ("normal01", "uniform01", "uniform_pm1", "gamma")


def _tag_key(tag: str) -> int:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SeedBank:
    """Root of all randomness for one experiment."""

    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def stream(self, tag: str, indices: Sequence[int] = ()) -> np.random.Generator:
        return derive_stream(self, tag, indices)


def derive_stream(bank: SeedBank, tag: str, indices: Sequence[int] = ()) -> np.random.Generator:
    """Return the generator for ``(bank.master_seed, tag, indices)``.

    The draws are a pure function of those three inputs; consuming one stream
    never advances another.
    """
    if not tag:
        raise ValueError("stream tag must be nonempty")
    idx = [int(i) for i in indices]
    if any(i < 0 for i in idx):
        raise ValueError("stream indices must be nonnegative")
    seq = np.random.SeedSequence(int(bank.master_seed), spawn_key=(_tag_key(tag), *idx))
    return np.random.Generator(np.random.Philox(seq))


def draw_standard(stream: np.random.Generator, distribution: str, count, *, shape=None, rate=None):
    """Draw ``count`` iid variates from one of the standard laws.

    ``count`` may be an int or a shape tuple.  ``gamma`` uses the rate
    parameterization, so its mean is ``shape / rate``.
    """
    if distribution == "normal01":
        return stream.standard_normal(count)
    if distribution == "uniform01":
        return stream.random(count)
    if distribution == "uniform_pm1":
        return stream.uniform(-1.0, 1.0, count)
    if distribution == "gamma":
        if shape is None or rate is None or shape <= 0 or rate <= 0:
            raise ValueError("gamma needs shape > 0 and rate > 0")
        return stream.gamma(shape, 1.0 / rate, count)
    raise ValueError(f"unknown distribution {distribution!r}; expected one of {DISTRIBUTIONS}")
