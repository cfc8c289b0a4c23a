"""Bag-of-features histograms and their comparative MD5 digest."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .features import DescriptorSet
from .md5 import md5
from .vocab import Dictionary, assign_words


def histogram_payload(words_count: int, values: np.ndarray) -> bytes:
    """Canonical DescriptorData payload: i32 words_count then f64 values, little-endian."""
    return struct.pack("<i", words_count) + np.asarray(values, dtype="<f8").tobytes()


@dataclass
class BofHistogram:
    values: np.ndarray
    image_id: object = None
    comparative_hash: bytes = field(default=b"", compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not self.comparative_hash:
            self.comparative_hash = hash_descriptor(self)

    @property
    def words_count(self) -> int:
        return self.values.shape[0]

    @property
    def total(self) -> int:
        return int(self.values.sum())

    def __eq__(self, other):
        if not isinstance(other, BofHistogram):
            return NotImplemented
        return self.image_id == other.image_id and self.values.tobytes() == other.values.tobytes()


def hash_descriptor(h: BofHistogram) -> bytes:
    """MD5 of the canonical payload; independent of image_id and normalization."""
    return md5(histogram_payload(h.words_count, h.values))


def encode_histogram(d: Dictionary, ds: DescriptorSet) -> BofHistogram:
    """Count how many descriptors of ``ds`` fall on each visual word of ``d``."""
    if len(ds) and ds.dim != d.single_word_size:
        raise DimensionMismatch(
            f"descriptor dim {ds.dim}, dictionary word size {d.single_word_size}"
        )
    words = assign_words(d, ds.vectors)
    counts = np.bincount(words, minlength=d.words_count).astype(np.float64)
    return BofHistogram(counts, image_id=ds.image_id)


def normalize_l1(h: BofHistogram | np.ndarray) -> np.ndarray:
    values = h.values if isinstance(h, BofHistogram) else np.asarray(h, dtype=np.float64)
    total = values.sum()
    if total == 0:
        return np.zeros_like(values)
    return values / total
