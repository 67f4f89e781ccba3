"""Layer-wise 1-bit quantization and bit packing.

Bit ``k`` of a code lives in word ``k // 64`` at position ``k % 64``;
sign +1 is stored as bit 1, sign -1 as bit 0, and padding bits past ``d``
are always zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

WORD_BITS = 64


def num_words(d: int) -> int:
    return -(-d // WORD_BITS)


def signs(v: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = +1, as float in {-1, +1}."""
    return np.where(v >= 0, 1.0, -1.0)


def binarize_layer(layer: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sign codes and L1-mean scalers for every row of ``layer``.

    >>> s, a = binarize_layer(np.array([[0.5, -0.2, 0.1]]))
    >>> s.tolist(), round(float(a[0]), 5)
    ([[1.0, -1.0, 1.0]], 0.26667)
    """
    layer = np.atleast_2d(np.asarray(layer, dtype=np.float64))
    return signs(layer), np.abs(layer).mean(axis=1)


def pack_bits(s: np.ndarray) -> np.ndarray:
    """Pack ``(..., d)`` sign arrays into ``(..., ceil(d/64))`` uint64 words."""
    s = np.asarray(s)
    d = s.shape[-1]
    W = num_words(d)
    bits = np.zeros(s.shape[:-1] + (W * WORD_BITS,), dtype=np.uint8)
    bits[..., :d] = s > 0
    # packbits 'little' puts bit k of each byte at position k; little-endian
    # uint64 view then places byte b at bits 8b..8b+7
    packed = np.packbits(bits, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False)


def unpack_bits(words: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns float signs in {-1, +1}."""
    words = np.ascontiguousarray(np.asarray(words, dtype=np.uint64))
    if words.shape[-1] != num_words(d):
        raise ValueError(f"expected {num_words(d)} words for d={d}, got {words.shape[-1]}")
    as_bytes = words.astype("<u8", copy=False).view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")[..., :d]
    return np.where(bits == 1, 1.0, -1.0)


def valid_mask(d: int) -> np.ndarray:
    """Per-word mask with ones exactly over the ``d`` valid bit positions."""
    W = num_words(d)
    mask = np.full(W, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    rem = d % WORD_BITS
    if rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return mask


@dataclass
class BinarizedTable:
    """Deployable model: per-node, per-layer scalers and packed sign codes.

    ``scalers`` has shape ``(M + N, L + 1)`` (float32, as stored on disk) and
    ``codes`` has shape ``(M + N, L + 1, ceil(d / 64))``.
    """

    num_users: int
    num_items: int
    d: int
    scalers: np.ndarray
    codes: np.ndarray
    layer_weights: np.ndarray

    @property
    def L(self) -> int:
        return self.scalers.shape[1] - 1

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    def user_rows(self, u) -> np.ndarray:
        return np.asarray(u)

    def item_rows(self, i) -> np.ndarray:
        return self.num_users + np.asarray(i)

    def unpacked(self, rows=None) -> np.ndarray:
        """Float signs ``(rows, L + 1, d)``; all nodes when ``rows`` is None."""
        codes = self.codes if rows is None else self.codes[rows]
        return unpack_bits(codes, self.d)

    def reconstruct(self, rows=None) -> np.ndarray:
        """``alpha * q`` per layer as float64, shape ``(rows, L + 1, d)``."""
        sc = self.scalers if rows is None else self.scalers[rows]
        return sc.astype(np.float64)[..., None] * self.unpacked(rows)


def build_tables(layers: Sequence[np.ndarray], num_users: int, layer_weights) -> BinarizedTable:
    """Binarize and pack every layer of a propagated embedding stack."""
    if not layers:
        raise ValueError("need at least one layer")
    n, d = layers[0].shape
    scalers = np.empty((n, len(layers)), dtype=np.float32)
    codes = np.empty((n, len(layers), num_words(d)), dtype=np.uint64)
    for l, layer in enumerate(layers):
        s, a = binarize_layer(layer)
        scalers[:, l] = a
        codes[:, l] = pack_bits(s)
    w = np.asarray(layer_weights, dtype=np.float32)
    if w.shape != (len(layers),):
        raise ValueError(f"expected {len(layers)} layer weights, got {w.shape}")
    return BinarizedTable(num_users, n - num_users, d, scalers, codes, w)
