"""Desk-scale pipeline: train -> export -> verify -> infer.

The story this demo tells: the float training graph and the bit-packed
inference engine are two implementations of the same function.  After a
few optimizer steps on synthetic data we fuse every BatchNorm into
integer thresholds, bit-pack the weights, and then check that both paths
agree on every intermediate binary tensor, bit for bit.

Run:  python3 demos/desk_pipeline.py
"""

import numpy as np
import torch

from boolnet.architecture import ModelConfig, build
from boolnet.traingraph import (
    ProgressiveSchedule,
    TrainState,
    export_fused,
    train_step,
    verify_dual_path,
)


def main():
    torch.set_num_threads(1)
    cfg = ModelConfig(variant="boolnet", k=4, stage_channels=(32, 64, 128, 256),
                      stage_depths=(1, 1, 1, 1), input_resolution=32,
                      class_count=10, in_channels=1)
    graph = build(cfg)
    print(f"desk model: {cfg.variant} k={cfg.k}, "
          f"{sum(1 for lyr in graph if lyr.kind == 'conv' and lyr.bits == 1)} "
          f"binary convs")

    state = TrainState(graph, schedule=ProgressiveSchedule(period_samples=64),
                       seed=0)
    rng = np.random.default_rng(0)
    print("\n== a few training steps on synthetic data ==")
    for step in range(6):
        x = torch.from_numpy(rng.normal(size=(32, 1, 32, 32)).astype(np.float32))
        y = torch.from_numpy(rng.integers(0, 10, 32))
        loss = train_step(state, x, y)
        print(f"step {step}: lambda {state.lam:.4f}  loss {loss:.3f}")

    print("\n== export: BN folded into integer thresholds, weights packed ==")
    inf = export_fused(state)
    fused = sum(1 for p in inf.params.values() if "thresholds" in p)
    packed = sum(1 for p in inf.params.values() if "weights" in p)
    print(f"{fused} sign layers carry fused integer thresholds, "
          f"{packed} convs carry bit-packed weights")

    print("\n== dual-path verification (200 random inputs) ==")
    res = verify_dual_path(state, inf, trials=200, seed=7, batch=50)
    print(f"trials {res.trials}  bit mismatches {res.bit_mismatches}  "
          f"max logit rel err {res.max_logit_rel_err:.2e}")
    assert res.passed, "the two paths diverged"

    print("\n== inference on the packed engine alone ==")
    x = rng.normal(size=(3, 1, 32, 32))
    logits = inf.forward(x)
    for i, row in enumerate(logits):
        print(f"input {i}: argmax class {int(np.argmax(row))}  "
              f"top logit {row.max():.3f}")
    print("\nBoth paths computed the same boolean network; the float graph")
    print("exists only to make it differentiable.")


if __name__ == "__main__":
    main()
