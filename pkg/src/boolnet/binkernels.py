"""Inference-time binary compute kernels.

All kernels are pure functions over immutable BitTensors.  The
convolution returns raw int32 pre-activations; thresholding them back
into the binary domain is the quantization module's job, which keeps the
BatchNorm-sign fusion lossless and testable in isolation.
"""

from __future__ import annotations

import numpy as np

from .bittensor import (
    BitTensor,
    masked_popcount,
    pack_bool,
    unpack_bool,
)
from .errors import (
    GroupDivisibility,
    GroupMismatch,
    OddChannelSplit,
    ShapeMismatch,
)


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def replicate_pad(x: BitTensor, pad) -> BitTensor:
    """Replication padding: duplicates the outer-most pixels.

    Keeps the value domain closed under {-1,+1}; zero padding would
    introduce a third value and is rejected for 1-bit layers.
    """
    ph, pw = _pair(pad)
    if ph < 0 or pw < 0:
        raise ValueError("pad must be >= 0")
    if ph == 0 and pw == 0:
        return x
    n, c, h, w = x.shape
    words = np.pad(x.words, ((0, 0), (ph, ph), (pw, pw), (0, 0)), mode="edge")
    return BitTensor((n, c, h + 2 * ph, w + 2 * pw), words.copy())


def bconv2d(
    x: BitTensor,
    w: BitTensor,
    stride: int = 1,
    dilation: int = 1,
    groups: int = 1,
) -> np.ndarray:
    """XNOR-popcount convolution; returns int32 NCHW pre-activations.

    `w` holds the weights as a BitTensor with logical shape
    (out_ch, in_ch/groups, kh, kw) packed along the in-channel axis.
    Spatial padding is replication padding of dilation*(k-1)/2 per side,
    so odd kernels at stride 1 are shape preserving.  The result equals
    the float convolution of the unpacked +-1 tensors exactly: every
    receptive-field dot product is 2*popcount(xnor)-valid accumulated in
    integers.
    """
    n, c, h, ww = x.shape
    oc, icg, kh, kw = w.shape
    if icg * groups != c:
        raise GroupMismatch(
            f"input channels {c} != {icg} x groups {groups}"
        )
    if oc % groups:
        raise GroupMismatch(f"out channels {oc} not divisible by groups {groups}")
    ph = dilation * (kh - 1) // 2
    pw = dilation * (kw - 1) // 2
    xp = replicate_pad(x, (ph, pw))
    hp, wp = h + 2 * ph, ww + 2 * pw
    ho = (hp - dilation * (kh - 1) - 1) // stride + 1
    wo = (wp - dilation * (kw - 1) - 1) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeMismatch(f"kernel {kh}x{kw} too large for input {h}x{w}")

    ocg = oc // groups
    acc = np.zeros((n, oc, ho, wo), dtype=np.int32)
    for g in range(groups):
        xg = channel_slice(xp, g * icg, (g + 1) * icg)
        wg = w.words[g * ocg : (g + 1) * ocg]  # (ocg, kh, kw, words)
        for u in range(kh):
            for v in range(kw):
                r0 = u * dilation
                c0 = v * dilation
                xs = xg.words[
                    :,
                    r0 : r0 + (ho - 1) * stride + 1 : stride,
                    c0 : c0 + (wo - 1) * stride + 1 : stride,
                    :,
                ]
                # (n, ho, wo, 1, words) xnor (ocg, words) -> (n, ho, wo, ocg)
                pc = masked_popcount(xs[:, :, :, None, :], wg[:, u, v, :], icg)
                acc[:, g * ocg : (g + 1) * ocg] += np.moveaxis(
                    2 * pc - icg, -1, 1
                ).astype(np.int32)
    return acc


def logic_xnor(a: BitTensor, b: BitTensor) -> BitTensor:
    """Elementwise XNOR; equals the elementwise product in +-1 encoding."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return BitTensor(a.shape, ~(a.words ^ b.words))


def logic_or(a: BitTensor, b: BitTensor) -> BitTensor:
    """Elementwise OR in {0,1} encoding (-1 is the identity element)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return BitTensor(a.shape, a.words | b.words)


def or_maxpool2d(x: BitTensor, kernel, stride=None) -> BitTensor:
    """Window-wise OR; equals float max pooling on the unpacked values."""
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    if min(kh, kw, sh, sw) < 1:
        raise ValueError("kernel and stride must be >= 1")
    n, c, h, w = x.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    out = np.zeros((n, ho, wo, x.words.shape[-1]), dtype=np.uint64)
    for u in range(kh):
        for v in range(kw):
            out |= x.words[
                :, u : u + (ho - 1) * sh + 1 : sh, v : v + (wo - 1) * sw + 1 : sw, :
            ]
    return BitTensor((n, c, ho, wo), out)


def channel_slice(x: BitTensor, lo: int, hi: int) -> BitTensor:
    """Channels [lo, hi) as a new BitTensor (bit-level gather)."""
    if not (0 <= lo < hi <= x.channels):
        raise ShapeMismatch(f"slice [{lo},{hi}) out of {x.channels} channels")
    if lo == 0 and hi == x.channels:
        return x
    return _gather_channels(x, np.arange(lo, hi))


def channel_split(x: BitTensor) -> tuple[BitTensor, BitTensor]:
    """First/second half by channel index; channels must be even."""
    c = x.channels
    if c % 2:
        raise OddChannelSplit(f"cannot split {c} channels")
    return channel_slice(x, 0, c // 2), channel_slice(x, c // 2, c)


def channel_concat(a: BitTensor, b: BitTensor) -> BitTensor:
    """Concatenate along the channel axis (inverse of channel_split)."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    bits = np.concatenate([unpack_bool(a), unpack_bool(b)], axis=1)
    return pack_bool(bits)


def channel_shuffle(x: BitTensor, groups: int) -> BitTensor:
    """Interleave channel groups (ShuffleNet-style permutation).

    Channel c moves to position (c mod groups)*(C/groups) + c//groups.
    """
    c = x.channels
    if c % groups:
        raise GroupDivisibility(f"{c} channels not divisible by {groups} groups")
    per = c // groups
    # src[p] = channel that lands at position p under the move rule above
    p = np.arange(c)
    src = (p % per) * groups + p // per
    return _gather_channels(x, src)


def _gather_channels(x: BitTensor, idx: np.ndarray) -> BitTensor:
    bits = unpack_bool(x)
    return pack_bool(np.ascontiguousarray(bits[:, idx]))
