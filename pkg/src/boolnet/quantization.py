"""Sign semantics, multi-slice projection, and lossless BatchNorm fusion.

Inference-mode BatchNorm followed by a sign is replaced by a per-channel
sign flip plus an integer threshold: BN(x) = a*(x + c) with
a = gamma/sqrt(var+eps) and c = (beta - gamma*mu/sqrt(var+eps))/a, so
sign(BN(x)) == XNOR(Sign(a), sign(x + c)).  Because binary convolutions
produce integer pre-activations, the comparison collapses further to
`acc >= ceil(-c)` done entirely in the integer domain.

Conventions pinned by this module:
  * Sign(0) = +1, making the integer comparison a clean >=.
  * Sign(x, zero_point) reads as a threshold: +1 iff x >= zero_point.
  * BN eps defaults to 1e-5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bittensor import BitTensor, pack_bool
from .errors import DegenerateChannel, NonFinite

DEFAULT_BN_EPS = 1e-5


def sign(x: np.ndarray) -> np.ndarray:
    """Total sign: +1 where x >= 0, else -1 (float32)."""
    x = np.asarray(x)
    if not np.isfinite(x).all():
        raise NonFinite("sign() requires finite input")
    return np.where(x >= 0, np.float32(1.0), np.float32(-1.0))


@dataclass
class BnParams:
    """Inference-mode BatchNorm constants, one entry per channel."""

    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    var: np.ndarray
    eps: float = DEFAULT_BN_EPS

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if (self.var < 0).any():
            raise ValueError("variance must be >= 0")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Evaluate BN(x) channelwise; x has shape (..., C) or (C,)."""
        a = self.gamma / np.sqrt(self.var + self.eps)
        b = self.beta - self.gamma * self.mu / np.sqrt(self.var + self.eps)
        return a * x + b


@dataclass
class FusedSignParams:
    """Per-channel sign flip and threshold offset replacing BN+Sign."""

    sign_a: np.ndarray  # +-1 per channel
    c: np.ndarray  # float64 threshold offset per channel


@dataclass
class MultiSliceSpec:
    """k ascending thresholds; k=1 degenerates to the plain sign."""

    k: int
    thresholds: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.thresholds is None:
            self.thresholds = default_slice_biases(self.k)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if self.thresholds.shape != (self.k,):
            raise ValueError(f"expected {self.k} thresholds")
        if (np.diff(self.thresholds) <= 0).any():
            raise ValueError("thresholds must be strictly ascending")
        if self.k == 1 and self.thresholds[0] != 0.0:
            raise ValueError("k=1 requires the single threshold 0")


def default_slice_biases(k: int) -> np.ndarray:
    """Symmetric grid of k slice thresholds.

    k=1 -> {0}; even k -> {+-2n/k : n=1..k/2} (k=4 gives
    -1, -0.5, +0.5, +1); odd k>1 -> {0} plus the symmetric pairs.
    """
    if k == 1:
        return np.zeros(1)
    half = k // 2
    pos = 2.0 * np.arange(1, half + 1) / k
    vals = np.concatenate([-pos[::-1], pos]) if k % 2 == 0 else np.concatenate(
        [-pos[::-1], [0.0], pos]
    )
    return vals


def fuse_bn_sign(bn: BnParams) -> FusedSignParams:
    """Fold BN into a parameterized sign; exact for all finite inputs.

    Raises DegenerateChannel for gamma == 0 (a = 0 leaves the fused form
    undefined); the trainer keeps |gamma| floored away from zero so this
    only fires on hand-built parameters.
    """
    if (bn.gamma == 0).any():
        bad = np.nonzero(bn.gamma == 0)[0]
        raise DegenerateChannel(f"gamma == 0 on channels {bad.tolist()}")
    denom = np.sqrt(bn.var + bn.eps)
    a = bn.gamma / denom
    b = bn.beta - bn.gamma * bn.mu / denom
    return FusedSignParams(sign_a=np.where(a >= 0, 1.0, -1.0), c=b / a)


def fused_sign_apply(fused: FusedSignParams, x: np.ndarray) -> np.ndarray:
    """XNOR(Sign(a), sign(x + c)) on float inputs; x shaped (..., C)."""
    return fused.sign_a * sign(x + fused.c)


def fused_threshold_int(fused: FusedSignParams) -> np.ndarray:
    """Integer thresholds t with sign(x+c) == (x >= t) for integer x."""
    return np.ceil(-fused.c).astype(np.int64)


def fused_slice_thresholds(
    bn: BnParams, spec: MultiSliceSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Per-(channel, slice) integer thresholds for multi-slice sign of BN output.

    sign(BN(x) - b_j) = XNOR(Sign(a), sign(x + (b'-b_j)/a)) with
    b' the BN shift; returns (sign_a[C], t[C, k]) such that the output
    bit for slice j is XNOR(sign_a, acc >= t[:, j]).
    """
    if (bn.gamma == 0).any():
        bad = np.nonzero(bn.gamma == 0)[0]
        raise DegenerateChannel(f"gamma == 0 on channels {bad.tolist()}")
    denom = np.sqrt(bn.var + bn.eps)
    a = bn.gamma / denom
    b = bn.beta - bn.gamma * bn.mu / denom
    c = (b[:, None] - spec.thresholds[None, :]) / a[:, None]
    t = np.ceil(-c).astype(np.int64)
    return np.where(a >= 0, 1.0, -1.0), t


def apply_slice_thresholds(
    acc: np.ndarray, sign_a: np.ndarray, t: np.ndarray
) -> BitTensor:
    """Threshold integer pre-activations into a packed multi-slice tensor.

    acc is int NCHW with C channels; the result has C*k channels with the
    k slices of each source channel adjacent (the grouping contract for
    groups=k convolutions).
    """
    n, c, h, w = acc.shape
    k = t.shape[1]
    ge = acc[:, :, None] >= t[None, :, :, None, None]  # (n, c, k, h, w)
    flip = (sign_a > 0)[None, :, None, None, None]
    bits = np.where(flip, ge, ~ge)
    return pack_bool(np.ascontiguousarray(bits.reshape(n, c * k, h, w)))


def multi_slice_project(x: np.ndarray, spec: MultiSliceSpec) -> np.ndarray:
    """Binarize each channel against k thresholds; output has C*k channels.

    Output channel c*k + j is +1 iff x[c] >= thresholds[j]; ascending
    thresholds make each pixel's k slices a monotone non-increasing +-1
    sequence (a thermometer code of the magnitude).
    """
    x = np.asarray(x)
    if not np.isfinite(x).all():
        raise NonFinite("multi_slice_project requires finite input")
    n, c, h, w = x.shape
    ge = x[:, :, None] >= spec.thresholds[None, None, :, None, None]
    out = np.where(ge, np.float32(1.0), np.float32(-1.0))
    return out.reshape(n, c * spec.k, h, w)
