"""Float-domain differentiable emulation of the boolean network.

Forward surrogates mirror the bit kernels exactly on +-1 inputs; the
backward passes are the straight-through estimators the training recipe
prescribes:

  ste_sign              forward sign(x) (sign(0)=+1), grad 1 on |x| < 1
  progressive_binarize  forward clamp(w/lambda, -1, 1); grad 1 on |w| < 1
                        (the lambda=1 window, applied to weights only)
  multi-slice sign      per-slice STE around each threshold
  relaxed XNOR / OR     x*y and 2*min(1, (x+y)/2 + 1) - 1; the Min tie
                        takes the linear branch's gradient

Training uses RAdam (lr 0.002, no weight decay) with cross-entropy and
a cosine learning-rate decay; lambda decays by sigma per period of
samples down to lambda_min.  Evaluation always binarizes weights with
the exact sign function, never the Hardtanh surrogate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import bittensor as bt
from .architecture import LayerGraph
from .errors import NonFiniteLoss
from .inference import InferenceModel
from .quantization import (
    BnParams,
    MultiSliceSpec,
    default_slice_biases,
    fused_slice_thresholds,
)

GAMMA_FLOOR = 1e-12


class _SteSignFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, 1.0, -1.0).to(x.dtype)

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * (x.abs() < 1).to(g.dtype)


def ste_sign(x):
    return _SteSignFn.apply(x)


class _ProgressiveBinarizeFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, w, lam):
        ctx.save_for_backward(w)
        return torch.clamp(w / lam, -1.0, 1.0)

    @staticmethod
    def backward(ctx, g):
        (w,) = ctx.saved_tensors
        return g * (w.abs() < 1).to(g.dtype), None


def progressive_binarize(w, lam):
    if not 0 < lam <= 1:
        raise ValueError(f"lambda must be in (0, 1], got {lam}")
    return _ProgressiveBinarizeFn.apply(w, lam)


class _MultiSliceSignFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, biases):
        d = x.unsqueeze(2) - biases.view(1, 1, -1, 1, 1)
        ctx.save_for_backward(d)
        n, c, k, h, w = d.shape
        out = torch.where(d >= 0, 1.0, -1.0).to(x.dtype)
        return out.reshape(n, c * k, h, w)

    @staticmethod
    def backward(ctx, g):
        (d,) = ctx.saved_tensors
        n, c, k, h, w = d.shape
        g = g.reshape(n, c, k, h, w)
        return (g * (d.abs() < 1).to(g.dtype)).sum(dim=2), None


class _RelaxedOrFn(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, y):
        s = (x + y) / 2 + 1
        ctx.save_for_backward(s <= 1)  # tie at the boundary: linear branch
        return 2 * torch.minimum(s, torch.ones_like(s)) - 1

    @staticmethod
    def backward(ctx, g):
        (linear,) = ctx.saved_tensors
        gx = g * linear.to(g.dtype)
        return gx, gx.clone()


def relaxed_or(x, y):
    return _RelaxedOrFn.apply(x, y)


def relaxed_xnor(x, y):
    return x * y


class BinaryConv2d(nn.Module):
    """Convolution over latent 32-bit weights, binarized on the fly.

    Training binarizes with the progressive Hardtanh(w/lambda); eval
    uses the exact sign.  Input padding is replication, keeping the
    binary value domain closed.
    """

    def __init__(self, cin, cout, kernel, stride=1, dilation=1, groups=1):
        super().__init__()
        self.stride, self.dilation, self.groups = stride, dilation, groups
        self.pad = dilation * (kernel - 1) // 2
        self.weight = nn.Parameter(
            torch.empty(cout, cin // groups, kernel, kernel).uniform_(-1, 1)
        )
        self.lam = 1.0
        self.last_binarization = None  # "progressive" | "sign" (testability)

    def forward(self, x):
        if self.training:
            wq = progressive_binarize(self.weight, self.lam)
            self.last_binarization = "progressive"
        else:
            wq = ste_sign(self.weight)
            self.last_binarization = "sign"
        if self.pad:
            x = F.pad(x, (self.pad,) * 4, mode="replicate")
        return F.conv2d(x, wq, stride=self.stride, dilation=self.dilation,
                        groups=self.groups)


class MultiSliceSign(nn.Module):
    def __init__(self, k):
        super().__init__()
        self.k = k
        self.register_buffer(
            "biases", torch.tensor(default_slice_biases(k), dtype=torch.float32)
        )

    def forward(self, x):
        return _MultiSliceSignFn.apply(x, self.biases.to(x.dtype))


def _mod_name(name: str) -> str:
    return name.replace(".", "__")


class TorchModel(nn.Module):
    """DAG executor over a LayerGraph with torch modules per record."""

    def __init__(self, graph: LayerGraph):
        super().__init__()
        self.graph = graph
        mods = {}
        for lyr in graph:
            m = None
            if lyr.kind == "conv" and lyr.bits == 1:
                m = BinaryConv2d(lyr.cin, lyr.cout, lyr.kh, lyr.stride,
                                 lyr.dilation, lyr.groups)
            elif lyr.kind == "conv":
                m = nn.Conv2d(lyr.cin, lyr.cout, lyr.kh, stride=lyr.stride,
                              padding=lyr.dilation * (lyr.kh - 1) // 2,
                              dilation=lyr.dilation, groups=lyr.groups,
                              bias=False, padding_mode="replicate")
            elif lyr.kind == "bn":
                m = nn.BatchNorm2d(lyr.cout, eps=1e-5)
            elif lyr.kind == "sign":
                m = MultiSliceSign(lyr.k)
            elif lyr.kind == "prelu":
                m = nn.PReLU(1)
            elif lyr.kind == "dense":
                m = nn.Linear(lyr.cin, lyr.cout)
            if m is not None:
                mods[_mod_name(lyr.name)] = m
        self.mods = nn.ModuleDict(mods)

    def set_lambda(self, lam: float):
        for m in self.mods.values():
            if isinstance(m, BinaryConv2d):
                m.lam = lam

    def module_for(self, name: str):
        return self.mods[_mod_name(name)]

    def forward(self, x, trace=None):
        env = {"input": x}
        for lyr in self.graph:
            a = env[lyr.inputs[0]]
            if lyr.kind in ("conv", "bn", "sign", "prelu", "dense"):
                out = self.module_for(lyr.name)(a)
            elif lyr.kind == "maxpool":
                out = F.max_pool2d(a, lyr.kh, lyr.stride, padding=1)
            elif lyr.kind == "or_maxpool":
                out = F.max_pool2d(a, lyr.kh, lyr.stride)
            elif lyr.kind == "logic":
                b = env[lyr.inputs[1]]
                out = relaxed_xnor(a, b) if lyr.op == "xnor" else relaxed_or(a, b)
            elif lyr.kind == "split":
                lo, hi = (int(v) for v in lyr.op.split(":"))
                out = a[:, lo:hi]
            elif lyr.kind == "concat":
                out = torch.cat([a, env[lyr.inputs[1]]], dim=1)
            elif lyr.kind == "shuffle":
                n, c, h, w = a.shape
                # out[p] = src[(p % per)*g + p//per], matching the bit kernel
                out = (a.reshape(n, c // lyr.k, lyr.k, h, w)
                       .transpose(1, 2).reshape(n, c, h, w))
            elif lyr.kind == "sum_pool":
                n, ck, h, w = a.shape
                out = a.reshape(n, ck // lyr.k, lyr.k, h, w).sum(dim=(2, 3, 4))
            else:
                raise ValueError(f"unknown layer kind {lyr.kind!r}")
            env[lyr.name] = out
            if trace is not None and _is_binary_record(lyr):
                trace[lyr.name] = out
        return env[self.graph.output_name]


def _is_binary_record(lyr) -> bool:
    return lyr.kind in ("sign", "logic", "split", "concat", "shuffle",
                        "or_maxpool")


@dataclass(frozen=True)
class ProgressiveSchedule:
    sigma: float = 0.965
    period_samples: int = 256_000
    lambda_min: float = 1e-6

    def __post_init__(self):
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must be in (0, 1)")
        if self.period_samples < 1 or self.lambda_min <= 0:
            raise ValueError("invalid schedule parameters")

    def step_index(self, samples_seen: int) -> int:
        return samples_seen // self.period_samples

    def lam(self, samples_seen: int) -> float:
        return max(self.sigma ** self.step_index(samples_seen),
                   self.lambda_min)


class TrainState:
    """Model + optimizer + schedule; deterministic under a fixed seed."""

    def __init__(self, graph: LayerGraph, schedule: ProgressiveSchedule = None,
                 lr: float = 0.002, seed: int = 0, total_epochs: int = None):
        torch.manual_seed(seed)
        self.graph = graph
        self.model = TorchModel(graph)
        self.schedule = schedule or ProgressiveSchedule()
        self.optimizer = torch.optim.RAdam(self.model.parameters(), lr=lr)
        self.lr_schedule = (
            torch.optim.lr_scheduler.CosineAnnealingLR(
                self.optimizer, T_max=total_epochs
            )
            if total_epochs
            else None
        )
        self.samples_seen = 0
        self.seed = seed

    @property
    def lam(self) -> float:
        return self.schedule.lam(self.samples_seen)

    def end_epoch(self):
        if self.lr_schedule is not None:
            self.lr_schedule.step()


def train_step(state: TrainState, images, labels) -> float:
    """One forward/backward/update; advances the lambda schedule."""
    state.model.train()
    state.model.set_lambda(state.lam)
    logits = state.model(images)
    loss = F.cross_entropy(logits, labels)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(
            f"loss={loss.item()} at samples_seen={state.samples_seen}, "
            f"lambda={state.lam}"
        )
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    _floor_bn_gammas(state.model)
    state.samples_seen += images.shape[0]
    return float(loss.detach())


def _floor_bn_gammas(model: TorchModel):
    """Keep |gamma| away from zero so BN fusion never degenerates."""
    with torch.no_grad():
        for m in model.mods.values():
            if isinstance(m, nn.BatchNorm2d):
                g = m.weight
                tiny = g.abs() < GAMMA_FLOOR
                if tiny.any():
                    g[tiny] = torch.where(
                        g[tiny] >= 0,
                        torch.full_like(g[tiny], GAMMA_FLOOR),
                        torch.full_like(g[tiny], -GAMMA_FLOOR),
                    )


def evaluate(state_or_model, images, labels) -> float:
    """Top-1 accuracy with exact-sign weights (no surrogate in eval)."""
    model = getattr(state_or_model, "model", state_or_model)
    model.eval()
    with torch.no_grad():
        logits = model(images)
        pred = logits.argmax(dim=1)
        return float((pred == labels).float().mean())


# -- export ------------------------------------------------------------------


def export_fused(state_or_model) -> InferenceModel:
    """Freeze the training graph into the bit-packed inference model.

    Weights become sign(latent); every BatchNorm on the binary path is
    folded into the next sign record's integer thresholds.  Raises
    DegenerateChannel if a fused gamma is exactly zero.
    """
    model = getattr(state_or_model, "model", state_or_model)
    model.eval()
    graph = model.graph
    producers = {lyr.name: lyr for lyr in graph}
    params = {}
    for lyr in graph:
        if lyr.kind == "conv" and lyr.bits == 1:
            w = model.module_for(lyr.name).weight.detach()
            bits = np.where(w.numpy() >= 0, np.float32(1), np.float32(-1))
            params[lyr.name] = {"weights": bt.pack(bits)}
        elif lyr.kind == "conv":
            w = model.module_for(lyr.name).weight.detach()
            params[lyr.name] = {"weight": w.double().numpy()}
        elif lyr.kind == "bn":
            params[lyr.name] = {"bn": _bn_params(model.module_for(lyr.name))}
        elif lyr.kind == "sign":
            spec = MultiSliceSpec(lyr.k)
            src = producers.get(lyr.inputs[0])
            if src is not None and src.kind == "bn":
                # integer-domain producers: 1-bit conv, possibly through
                # the shortcut branch's integer max pool
                origin = producers.get(src.inputs[0])
                while origin is not None and origin.kind == "or_maxpool":
                    origin = producers.get(origin.inputs[0])
                if origin is not None and origin.kind == "conv" and origin.bits == 1:
                    bn = _bn_params(model.module_for(src.name))
                    sign_a, t = fused_slice_thresholds(bn, spec)
                    params[lyr.name] = {"sign_a": sign_a, "thresholds": t}
                    params[src.name] = {}  # folded away
                    continue
            params[lyr.name] = {"spec": spec}
        elif lyr.kind == "prelu":
            params[lyr.name] = {
                "slope": float(model.module_for(lyr.name).weight.detach())
            }
        elif lyr.kind == "dense":
            m = model.module_for(lyr.name)
            params[lyr.name] = {
                "weight": m.weight.detach().double().numpy(),
                "bias": m.bias.detach().double().numpy(),
            }
    return InferenceModel(graph=graph, params=params)


def _bn_params(m: nn.BatchNorm2d) -> BnParams:
    return BnParams(
        gamma=m.weight.detach().double().numpy(),
        beta=m.bias.detach().double().numpy(),
        mu=m.running_mean.detach().double().numpy(),
        var=m.running_var.detach().double().numpy(),
        eps=m.eps,
    )


# -- dual-path differential test ---------------------------------------------


@dataclass
class VerifyResult:
    trials: int
    bit_mismatches: int
    max_logit_rel_err: float

    @property
    def passed(self) -> bool:
        return self.bit_mismatches == 0 and self.max_logit_rel_err <= 1e-4


def verify_dual_path(model, inf: InferenceModel, trials: int = 1000,
                     seed: int = 0, batch: int = 50) -> VerifyResult:
    """Compare torch-eval and bit-packed paths on random inputs.

    Every binary tensor must agree bit for bit; the final logits must
    agree within 1e-4 relative error (float64 reference path).
    """
    model = getattr(model, "model", model)
    model = model.double().eval()
    cfg = inf.graph.config
    rng = np.random.default_rng(seed)
    mismatches = 0
    max_rel = 0.0
    done = 0
    while done < trials:
        n = min(batch, trials - done)
        x = rng.normal(size=(n, cfg.in_channels, cfg.input_resolution,
                             cfg.input_resolution))
        t_trace, i_trace = {}, {}
        with torch.no_grad():
            t_logits = model(torch.from_numpy(x), trace=t_trace).numpy()
        i_logits = inf.forward(x, trace=i_trace)
        for name, bits in i_trace.items():
            ref = t_trace[name].numpy()
            got = bt.unpack(bits)
            mismatches += int((got != ref).sum())
        denom = np.maximum(np.abs(t_logits), 1.0)
        rel = np.abs(i_logits - t_logits) / denom
        max_rel = max(max_rel, float(rel.max()))
        done += n
    return VerifyResult(trials=done, bit_mismatches=mismatches,
                        max_logit_rel_err=max_rel)
