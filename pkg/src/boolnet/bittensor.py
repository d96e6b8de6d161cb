"""Bit-packed NCHW tensors and the popcount substrate for binary kernels.

Layout: pixel-major, channel-packed.  A tensor of shape (n, c, h, w) is
stored as uint64 words of shape (n, h, w, ceil(c/64)); within a word the
least significant bit is the lowest channel index.  +1 maps to bit 1 and
-1 to bit 0, so the dot product of two +-1 channel vectors of length m is
2 * popcount(xnor) - m.  Pad bits past the channel count are always zero;
the constructor enforces this so every kernel that builds its result
through BitTensor(...) keeps pad hygiene for free.
"""

from __future__ import annotations

import numpy as np

from .errors import LengthMismatch, NonBinaryValue

WORD_BITS = 64


def words_for(channels: int) -> int:
    """Number of 64-bit words needed for `channels` packed bits."""
    return (channels + WORD_BITS - 1) // WORD_BITS


def pad_mask(channels: int) -> np.ndarray:
    """uint64 mask per word keeping exactly `channels` low bits valid."""
    nw = words_for(channels)
    mask = np.full(nw, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    rem = channels % WORD_BITS
    if rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return mask


class BitTensor:
    """Immutable bit-packed activation/weight tensor.

    `shape` is the logical (n, c, h, w); `words` is the uint64 storage of
    shape (n, h, w, words_for(c)).
    """

    __slots__ = ("shape", "words")

    def __init__(self, shape: tuple[int, int, int, int], words: np.ndarray):
        n, c, h, w = shape
        nw = words_for(c)
        if words.shape != (n, h, w, nw) or words.dtype != np.uint64:
            raise ValueError(
                f"words shape {words.shape}/{words.dtype} does not match "
                f"logical shape {shape}"
            )
        # Zero pad bits unconditionally; cheap and makes pad hygiene a
        # constructor invariant instead of a per-kernel obligation.
        words = words & pad_mask(c)
        words.setflags(write=False)
        self.shape = (n, c, h, w)
        self.words = words

    @property
    def channels(self) -> int:
        return self.shape[1]

    def pad_bits_clear(self) -> bool:
        """True iff every bit past the channel count is zero."""
        rem = self.channels % WORD_BITS
        if rem == 0:
            return True
        bad = self.words[..., -1] >> np.uint64(rem)
        return not bad.any()

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BitTensor)
            and self.shape == other.shape
            and np.array_equal(self.words, other.words)
        )

    def __hash__(self):  # pragma: no cover - identity hashing only
        return id(self)

    def __repr__(self) -> str:
        return f"BitTensor(shape={self.shape})"


def pack(x: np.ndarray) -> BitTensor:
    """Pack a +-1 float NCHW array into a BitTensor.

    Raises NonBinaryValue unless every element is exactly -1.0 or +1.0.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise NonBinaryValue(f"expected NCHW array, got ndim={x.ndim}")
    pos = x == 1
    if not np.logical_or(pos, x == -1).all():
        raise NonBinaryValue("tensor contains values outside {-1, +1}")
    return pack_bool(np.ascontiguousarray(pos))


def pack_bool(bits: np.ndarray) -> BitTensor:
    """Pack an NCHW boolean array (True -> bit 1) into a BitTensor."""
    n, c, h, w = bits.shape
    nw = words_for(c)
    # (n, h, w, c) bit order, pad channel axis to a word multiple.
    b = np.moveaxis(bits, 1, -1).astype(np.uint8)
    if c % WORD_BITS:
        padded = np.zeros((n, h, w, nw * WORD_BITS), dtype=np.uint8)
        padded[..., :c] = b
        b = padded
    by = np.packbits(b, axis=-1, bitorder="little")
    words = by.reshape(n, h, w, nw, 8).view(np.uint64).reshape(n, h, w, nw)
    return BitTensor((n, c, h, w), words.copy())


def unpack(t: BitTensor) -> np.ndarray:
    """Inverse of pack: bit 1 -> +1.0, bit 0 -> -1.0 (float32 NCHW)."""
    return np.where(unpack_bool(t), np.float32(1.0), np.float32(-1.0))


def unpack_bool(t: BitTensor) -> np.ndarray:
    """BitTensor -> NCHW boolean array."""
    n, c, h, w = t.shape
    by = t.words.reshape(n, h, w, -1).view(np.uint8)
    bits = np.unpackbits(by, axis=-1, bitorder="little")[..., :c]
    return np.moveaxis(bits, -1, 1).astype(bool)


def masked_popcount(a: np.ndarray, b: np.ndarray, valid: int) -> np.ndarray:
    """popcount(XNOR(a, b) & mask(valid)), summed over the last axis.

    `a` and `b` are uint64 word spans with a common last axis; `valid`
    low bits of the span are kept.  Broadcasting over leading axes is
    allowed (and used heavily by the convolution kernel).
    """
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape[-1] != b.shape[-1]:
        raise LengthMismatch(f"span lengths differ: {a.shape[-1]} vs {b.shape[-1]}")
    if valid > a.shape[-1] * WORD_BITS:
        raise LengthMismatch(
            f"valid={valid} exceeds span capacity {a.shape[-1] * WORD_BITS}"
        )
    mask = np.zeros(a.shape[-1], dtype=np.uint64)
    vm = pad_mask(valid) if valid else np.zeros(0, dtype=np.uint64)
    mask[: vm.shape[0]] = vm
    xnor = ~(a ^ b) & mask
    return np.bitwise_count(xnor).sum(axis=-1, dtype=np.int64)


def popcount_words(words: np.ndarray) -> np.ndarray:
    """Elementwise popcount summed over the last (word) axis."""
    return np.bitwise_count(words).sum(axis=-1, dtype=np.int64)
