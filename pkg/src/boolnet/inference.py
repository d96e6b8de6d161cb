"""Bit-packed inference executor for an exported LayerGraph.

The executor walks the same layer records the trainer was built from.
Tensors move through three domains:
  float64   stem / Local Adaptive Shifting / head (32-bit layers)
  int32     binary-convolution accumulators, consumed immediately by
            fused integer thresholds
  BitTensor everything between the first projection and the head pool

BatchNorm records on the binary path hold no runtime work: their
parameters were folded into the following sign record's
(sign_a, thresholds) at export, so the record is a pass-through and the
sign record does one integer comparison per slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import binkernels as bk
from . import bittensor as bt
from .errors import ShapeMismatch
from .quantization import (
    BnParams,
    MultiSliceSpec,
    apply_slice_thresholds,
    multi_slice_project,
)


def conv2d_f64(x, w, stride=1, dilation=1, groups=1):
    """Float64 NCHW convolution with replication padding (im2col)."""
    n, c, h, ww = x.shape
    oc, icg, kh, kw = w.shape
    ph = dilation * (kh - 1) // 2
    pw = dilation * (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="edge")
    ho = (h + 2 * ph - dilation * (kh - 1) - 1) // stride + 1
    wo = (ww + 2 * pw - dilation * (kw - 1) - 1) // stride + 1
    ocg = oc // groups
    out = np.empty((n, oc, ho, wo), dtype=np.float64)
    for g in range(groups):
        xg = xp[:, g * icg : (g + 1) * icg]
        cols = np.empty((n, icg * kh * kw, ho * wo), dtype=np.float64)
        idx = 0
        for ci in range(icg):
            for u in range(kh):
                for v in range(kw):
                    patch = xg[
                        :, ci,
                        u * dilation : u * dilation + (ho - 1) * stride + 1 : stride,
                        v * dilation : v * dilation + (wo - 1) * stride + 1 : stride,
                    ]
                    cols[:, idx] = patch.reshape(n, -1)
                    idx += 1
        wg = w[g * ocg : (g + 1) * ocg].reshape(ocg, -1)
        out[:, g * ocg : (g + 1) * ocg] = (wg @ cols).reshape(n, ocg, ho, wo)
    return out


def maxpool2d_f64(x, kernel, stride, pad):
    """Float max pooling with -inf padding (stem pool semantics)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                   mode="constant", constant_values=-np.inf)
    n, c, h, w = x.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    out = np.full((n, c, ho, wo), -np.inf)
    for u in range(kernel):
        for v in range(kernel):
            np.maximum(
                out,
                x[:, :, u : u + (ho - 1) * stride + 1 : stride,
                  v : v + (wo - 1) * stride + 1 : stride],
                out=out,
            )
    return out


def _int_maxpool(x, kernel, stride):
    n, c, h, w = x.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    out = np.full((n, c, ho, wo), np.iinfo(x.dtype).min, dtype=x.dtype)
    for u in range(kernel):
        for v in range(kernel):
            np.maximum(
                out,
                x[:, :, u : u + (ho - 1) * stride + 1 : stride,
                  v : v + (wo - 1) * stride + 1 : stride],
                out=out,
            )
    return out


@dataclass
class InferenceModel:
    """LayerGraph plus exported per-layer parameters.

    params maps layer name -> dict of numpy objects:
      conv (1-bit)   {"weights": BitTensor}
      conv (32-bit)  {"weight": float64 array}
      bn (float path){"bn": BnParams}; binary-path bn entries are empty
      sign (fused)   {"sign_a": array, "thresholds": int64 [C, k]}
      sign (float)   {"spec": MultiSliceSpec}
      prelu          {"slope": float}
      dense          {"weight": float64 [out, in], "bias": float64 [out]}
    """

    graph: object
    params: dict = field(default_factory=dict)

    def forward(self, x, trace=None):
        """Run one batch; `trace` (a dict) collects every binary tensor."""
        x = np.asarray(x, dtype=np.float64)
        cfg = self.graph.config
        expected = (cfg.in_channels, cfg.input_resolution, cfg.input_resolution)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeMismatch(f"expected (n,{expected}), got {x.shape}")
        env = {"input": x}
        for lyr in self.graph:
            env[lyr.name] = self._run(lyr, env)
            if trace is not None and isinstance(env[lyr.name], bt.BitTensor):
                trace[lyr.name] = env[lyr.name]
        return env[self.graph.output_name]

    __call__ = forward

    def _run(self, lyr, env):
        x = env[lyr.inputs[0]]
        p = self.params.get(lyr.name, {})
        if lyr.kind == "conv":
            if lyr.bits == 1:
                return bk.bconv2d(x, p["weights"], stride=lyr.stride,
                                  dilation=lyr.dilation, groups=lyr.groups)
            return conv2d_f64(x, p["weight"], stride=lyr.stride,
                              dilation=lyr.dilation, groups=lyr.groups)
        if lyr.kind == "bn":
            if isinstance(x, bt.BitTensor) or x.dtype.kind in "iu":
                return x  # folded into the next sign record at export
            bn: BnParams = p["bn"]
            a = bn.gamma / np.sqrt(bn.var + bn.eps)
            b = bn.beta - bn.gamma * bn.mu / np.sqrt(bn.var + bn.eps)
            return a[None, :, None, None] * x + b[None, :, None, None]
        if lyr.kind == "sign":
            if "thresholds" in p:
                return apply_slice_thresholds(
                    x.astype(np.int64), p["sign_a"], p["thresholds"]
                )
            spec: MultiSliceSpec = p["spec"]
            return bt.pack(multi_slice_project(x, spec))
        if lyr.kind == "maxpool":
            return maxpool2d_f64(x, lyr.kh, lyr.stride, pad=1)
        if lyr.kind == "or_maxpool":
            if isinstance(x, bt.BitTensor):
                return bk.or_maxpool2d(x, lyr.kh, lyr.stride)
            # shortcut-branch pooling happens on integer conv accumulators
            # (BN + sign follow); integer max keeps the path lossless
            return _int_maxpool(x, lyr.kh, lyr.stride)
        if lyr.kind == "logic":
            y = env[lyr.inputs[1]]
            fn = bk.logic_xnor if lyr.op == "xnor" else bk.logic_or
            return fn(x, y)
        if lyr.kind == "split":
            lo, hi = (int(v) for v in lyr.op.split(":"))
            return bk.channel_slice(x, lo, hi)
        if lyr.kind == "concat":
            return bk.channel_concat(x, env[lyr.inputs[1]])
        if lyr.kind == "shuffle":
            return bk.channel_shuffle(x, lyr.k)
        if lyr.kind == "sum_pool":
            vals = bt.unpack(x).astype(np.float64)
            n, ck, h, w = vals.shape
            return vals.reshape(n, ck // lyr.k, lyr.k, h, w).sum(axis=(2, 3, 4))
        if lyr.kind == "prelu":
            s = p["slope"]
            return np.where(x >= 0, x, s * x)
        if lyr.kind == "dense":
            return x @ p["weight"].T + p["bias"]
        raise ValueError(f"unknown layer kind {lyr.kind!r}")
