"""Command-line front end: train / export / infer / verify / cost.

Exit codes: 0 ok, 2 config error, 3 verification failure, 4 I/O error.
Errors print a single machine-parseable line on stderr:
`error <code> <message>`.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .architecture import build, load_config
from .errors import BoolNetError, ConfigInvalid, ModelFileError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_IO = 4


def _fail(code: int, message: str) -> int:
    label = {EXIT_CONFIG: "config", EXIT_VERIFY: "verify", EXIT_IO: "io"}[code]
    print(f"error {label} {message}".replace("\n", " "), file=sys.stderr)
    return code


def _set_threads(n: int):
    import torch

    torch.set_num_threads(n)


def _seed_all(seed: int):
    import torch

    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def cmd_train(args) -> int:
    import torch

    from . import io as bio
    from .traingraph import ProgressiveSchedule, TrainState, evaluate, train_step

    try:
        cfg = load_config(args.config)
    except OSError as e:
        return _fail(EXIT_IO, f"cannot read config: {e}")
    except ConfigInvalid as e:
        return _fail(EXIT_CONFIG, str(e))
    graph = build(cfg)
    try:
        name = "mnist-idx" if cfg.in_channels == 1 else "cifar10-bin"
        if args.dataset:
            name = args.dataset
        data = bio.load_dataset(name, args.data)
    except (OSError, BoolNetError, ValueError) as e:
        return _fail(EXIT_IO, f"cannot load dataset: {e}")
    _seed_all(args.seed)
    # one lambda decay per ~4 epochs of the desk dataset
    period = max(1, 4 * len(data.train_images))
    state = TrainState(graph, ProgressiveSchedule(period_samples=period),
                       seed=args.seed, total_epochs=args.epochs)
    batches_per_epoch = (len(data.train_images) + args.batch - 1) // args.batch
    for epoch in range(args.epochs):
        it = bio.iterate_batches(data.train_images, data.train_labels,
                                 args.batch, seed=args.seed + epoch,
                                 augment=data.augment)
        for step, (x, y) in enumerate(it):
            loss = train_step(state, torch.from_numpy(np.ascontiguousarray(x)),
                              torch.from_numpy(y))
            if step % 50 == 0:
                print(f"epoch {epoch} step {step}/{batches_per_epoch} "
                      f"lambda {state.lam:.6f} loss {loss:.4f}")
        state.end_epoch()
        acc = evaluate(state,
                       torch.from_numpy(data.test_images[:2000]),
                       torch.from_numpy(data.test_labels[:2000]))
        print(f"epoch {epoch} lambda {state.lam:.6f} test_acc {acc:.4f}")
    try:
        bio.save_checkpoint(state, args.out)
    except OSError as e:
        return _fail(EXIT_IO, f"cannot write checkpoint: {e}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def cmd_export(args) -> int:
    from . import io as bio
    from .errors import DegenerateChannel
    from .traingraph import export_fused

    try:
        state = bio.load_checkpoint(args.ckpt)
    except OSError as e:
        return _fail(EXIT_IO, f"cannot read checkpoint: {e}")
    except ModelFileError as e:
        return _fail(EXIT_IO, f"bad checkpoint: {e}")
    try:
        model = export_fused(state)
    except DegenerateChannel as e:
        return _fail(EXIT_CONFIG, f"degenerate channel: {e}")
    try:
        bio.save_model(model, args.out)
    except OSError as e:
        return _fail(EXIT_IO, f"cannot write model: {e}")
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from . import io as bio

    try:
        model = bio.load_model(args.model)
    except OSError as e:
        return _fail(EXIT_IO, f"cannot read model: {e}")
    except ModelFileError as e:
        return _fail(EXIT_IO, f"bad model file: {e}")
    try:
        x = np.load(args.input)
    except (OSError, ValueError) as e:
        return _fail(EXIT_IO, f"cannot read input tensor: {e}")
    if x.ndim == 3:
        x = x[None]
    try:
        logits = model.forward(x)
    except BoolNetError as e:
        return _fail(EXIT_CONFIG, str(e))
    top = min(args.topk, logits.shape[1])
    for row in logits:
        order = np.argsort(row)[::-1][:top]
        ranked = " ".join(f"{c}:{row[c]:.4f}" for c in order)
        print(f"top{top} {ranked}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import io as bio
    from .traingraph import export_fused, verify_dual_path

    try:
        state = bio.load_checkpoint(args.ckpt)
        model = bio.load_model(args.model)
    except OSError as e:
        return _fail(EXIT_IO, f"cannot read inputs: {e}")
    except ModelFileError as e:
        return _fail(EXIT_IO, f"bad file: {e}")
    result = verify_dual_path(state, model, trials=args.trials,
                              seed=args.seed)
    print(f"trials {result.trials} bit_mismatches {result.bit_mismatches} "
          f"max_logit_rel_err {result.max_logit_rel_err:.3e}")
    if not result.passed:
        return _fail(
            EXIT_VERIFY,
            f"{result.bit_mismatches} bit mismatches, "
            f"max rel err {result.max_logit_rel_err:.3e}",
        )
    print("verify ok")
    return EXIT_OK


def cmd_cost(args) -> int:
    from . import costmodel as cm

    try:
        configs = [load_config(args.config)]
        for extra in args.compare or []:
            configs.append(load_config(extra))
    except OSError as e:
        return _fail(EXIT_IO, f"cannot read config: {e}")
    except ConfigInvalid as e:
        return _fail(EXIT_CONFIG, str(e))
    graphs = [build(c) for c in configs]
    power = cm.PowerConfig()
    out = []
    for g in graphs:
        label = f"{g.config.variant}_k{g.config.k}"
        if args.table in ("ops", "all"):
            out.append(f"# ops {label}")
            out.append(cm.render_ops(cm.count_ops(g)).rstrip())
        if args.table in ("memory", "all"):
            out.append(f"# memory {label}")
            out.append(cm.render_memory(cm.memory_table(g)).rstrip())
        if args.table in ("energy", "all"):
            out.append(f"# energy {label}")
            out.append(cm.render_energy(cm.energy_report(g, power,
                                                         label=label)).rstrip())
    if args.table in ("energy", "all") and len(graphs) >= 2:
        reports = [cm.energy_report(g, power,
                                    label=f"{g.config.variant}_k{g.config.k}")
                   for g in graphs]
        ranked = cm.compare_models(reports)
        out.append("# ordering " + " < ".join(ranked["ordering"]))
    text = "\n".join(out) + "\n"
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as f:
                f.write(text)
        except OSError as e:
            return _fail(EXIT_IO, f"cannot write report: {e}")
    print(text, end="")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boolnet",
                                description="boolean-flow BNN toolkit")
    p.add_argument("--threads", type=int, default=1,
                   help="intra-op threads (default 1 for reproducibility)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--dataset", choices=["mnist-idx", "cifar10-bin"])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch", type=int, default=100)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("export", help="fuse and bit-pack a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_export)

    i = sub.add_parser("infer", help="run the bit-packed engine on a tensor")
    i.add_argument("--model", required=True)
    i.add_argument("--input", required=True, help=".npy tensor, CHW or NCHW")
    i.add_argument("--batch", action="store_true")
    i.add_argument("--topk", type=int, default=5)
    i.set_defaults(fn=cmd_infer)

    v = sub.add_parser("verify", help="dual-path differential test")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--model", required=True)
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(fn=cmd_verify)

    c = sub.add_parser("cost", help="static cost report")
    c.add_argument("--config", required=True)
    c.add_argument("--power")
    c.add_argument("--compare", action="append")
    c.add_argument("--out")
    c.add_argument("--table", choices=["ops", "memory", "energy", "all"],
                   default="all")
    c.set_defaults(fn=cmd_cost)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
    except ImportError:
        pass
    try:
        return args.fn(args)
    except ConfigInvalid as e:
        return _fail(EXIT_CONFIG, str(e))
    except ModelFileError as e:
        return _fail(EXIT_IO, str(e))
    except BoolNetError as e:
        return _fail(EXIT_CONFIG, str(e))


if __name__ == "__main__":
    sys.exit(main())
