"""Declarative assembly of BaseNet/BoolNet variants into a LayerGraph.

A LayerGraph is a topologically ordered list of immutable layer records
forming a small DAG (records name their inputs).  The same records drive
three independent consumers: the torch training graph, the bit-packed
inference engine, and the static cost model.  Keeping the topology in
one place is what makes the dual-path bit-exactness test meaningful —
both executors walk the identical structure.

Block vocabulary
  stem            32-bit conv + BN (+ maxpool at large input resolutions)
  MS-BConv        grouped binary conv -> BN -> multi-slice sign
  basenet block   two stacked MS-BConv, logic shortcut around each
                  (XNOR after the first, OR after the second)
  boolnet block   channel_split -> two MS-BConv with logic shortcuts on
                  one half -> channel_concat -> channel_shuffle
  downsample      channel-doubling block; shortcut branches are
                  [1-bit 1x1 conv (groups=1), OR-maxpool 2x2/2, BN, sign]
  head            per-channel integer sum-pool -> PReLU -> 32-bit dense
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigInvalid, ShapeMismatch

VARIANTS = ("basenet", "boolnet", "boolnet_star")
DOWNSAMPLE_MODES = ("binary_maxpool", "avgpool32", "stride2")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "boolnet"
    k: int = 4
    stage_channels: tuple = (64, 128, 256, 512)
    stage_depths: tuple = (4, 8, 10, 4)
    shortcut_ops: tuple = ("xnor", "or")
    downsample_mode: str = "binary_maxpool"
    downsample_conv_bits: int = 1
    use_local_adaptive_shift: bool = True
    input_resolution: int = 224
    class_count: int = 1000
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "stage_depths", tuple(self.stage_depths))
        object.__setattr__(self, "shortcut_ops", tuple(self.shortcut_ops))
        validate_config(self)


def validate_config(cfg: ModelConfig) -> None:
    """Raise ConfigInvalid naming the violated invariant."""
    if cfg.variant not in VARIANTS:
        raise ConfigInvalid(f"variant must be one of {VARIANTS}, got {cfg.variant!r}")
    if cfg.k < 1:
        raise ConfigInvalid(f"k must be >= 1, got {cfg.k}")
    if len(cfg.stage_channels) != len(cfg.stage_depths):
        raise ConfigInvalid(
            "stage lists same length: "
            f"{len(cfg.stage_channels)} channels vs {len(cfg.stage_depths)} depths"
        )
    if not cfg.stage_channels:
        raise ConfigInvalid("at least one stage required")
    if any(d < 1 for d in cfg.stage_depths):
        raise ConfigInvalid(f"stage depths must be >= 1, got {cfg.stage_depths}")
    if cfg.downsample_mode not in DOWNSAMPLE_MODES:
        raise ConfigInvalid(
            f"downsample_mode must be one of {DOWNSAMPLE_MODES}, "
            f"got {cfg.downsample_mode!r}"
        )
    if cfg.downsample_conv_bits not in (1, 32):
        raise ConfigInvalid("downsample conv_bits must be 1 or 32")
    if tuple(cfg.shortcut_ops) not in (("xnor", "or"), ("or", "xnor")):
        raise ConfigInvalid(
            "shortcut_ops must assign xnor and or to the two positions, "
            f"got {cfg.shortcut_ops}"
        )
    for c in cfg.stage_channels:
        if c % cfg.k:
            raise ConfigInvalid(
                f"stage channels must be divisible by k={cfg.k} "
                f"(groups=k convolution), got {c}"
            )
        if cfg.variant in ("boolnet", "boolnet_star"):
            if c % 2:
                raise ConfigInvalid(
                    f"channels even where channel_split is used, got {c}"
                )
            if (c // 2) % cfg.k:
                raise ConfigInvalid(
                    f"half-channels must be divisible by k={cfg.k} "
                    f"for the split branch, got {c}//2"
                )
    for prev, nxt in zip(cfg.stage_channels, cfg.stage_channels[1:]):
        if nxt != 2 * prev:
            raise ConfigInvalid(
                "channel doubling across downsample blocks: "
                f"expected {2 * prev} after {prev}, got {nxt}"
            )
    if cfg.input_resolution < 8:
        raise ConfigInvalid(f"input_resolution too small: {cfg.input_resolution}")
    if cfg.class_count < 2:
        raise ConfigInvalid(f"class_count must be >= 2, got {cfg.class_count}")
    if cfg.in_channels < 1:
        raise ConfigInvalid(f"in_channels must be >= 1, got {cfg.in_channels}")


@dataclass(frozen=True)
class Layer:
    """One record of the LayerGraph DAG.

    `bits` is the compute bit width of the layer's weights/arithmetic
    (1 or 32); structural records (split/concat/shuffle/logic/sign/pool)
    carry bits=0 and own no MACs.
    """

    name: str
    kind: str  # conv, bn, sign, maxpool, or_maxpool, logic, split,
    #            concat, shuffle, sum_pool, prelu, dense
    inputs: tuple
    stage: int = -1  # -1 stem, 0..n-1 stages, 99 head
    role: str = "body"  # stem, body, shortcut, head
    bits: int = 0
    cin: int = 0
    cout: int = 0
    hin: int = 0
    win: int = 0
    hout: int = 0
    wout: int = 0
    kh: int = 0
    kw: int = 0
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    k: int = 1  # slices (sign records); channel groups (shuffle records)
    op: str = ""  # xnor | or (logic records); lo:hi (split records)


@dataclass
class LayerGraph:
    config: ModelConfig
    layers: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def by_name(self, name: str) -> Layer:
        for lyr in self.layers:
            if lyr.name == name:
                return lyr
        raise KeyError(name)

    @property
    def output_name(self) -> str:
        return self.layers[-1].name


class _Builder:
    """Accumulates layer records while tracking the running tensor shape."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.layers = []
        self.shapes = {"input": (cfg.in_channels, cfg.input_resolution,
                                 cfg.input_resolution)}

    def add(self, name, kind, inputs, cout, hout, wout, **kw):
        c0, h0, w0 = self.shapes[inputs[0]]
        self.layers.append(
            Layer(
                name=name, kind=kind, inputs=tuple(inputs),
                cin=c0, cout=cout, hin=h0, win=w0, hout=hout, wout=wout, **kw
            )
        )
        self.shapes[name] = (cout, hout, wout)
        return name

    def conv(self, name, src, cout, kernel, stride=1, dilation=1, groups=1,
             bits=1, stage=-1, role="body"):
        c, h, w = self.shapes[src]
        if c % groups or cout % groups:
            raise ConfigInvalid(
                f"{name}: channels ({c}->{cout}) not divisible by groups {groups}"
            )
        pad = dilation * (kernel - 1) // 2
        ho = (h + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1
        wo = (w + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1
        return self.add(name, "conv", [src], cout, ho, wo, kh=kernel, kw=kernel,
                        stride=stride, dilation=dilation, groups=groups,
                        bits=bits, stage=stage, role=role)

    def bn(self, name, src, stage=-1, role="body"):
        c, h, w = self.shapes[src]
        return self.add(name, "bn", [src], c, h, w, bits=32, stage=stage,
                        role=role)

    def sign(self, name, src, k, stage=-1, role="body"):
        c, h, w = self.shapes[src]
        return self.add(name, "sign", [src], c * k, h, w, k=k, stage=stage,
                        role=role)

    def maxpool(self, name, src, kernel, stride, pad, stage=-1, role="stem"):
        c, h, w = self.shapes[src]
        ho = (h + 2 * pad - kernel) // stride + 1
        wo = (w + 2 * pad - kernel) // stride + 1
        return self.add(name, "maxpool", [src], c, ho, wo, kh=kernel, kw=kernel,
                        stride=stride, bits=32, stage=stage, role=role)

    def or_maxpool(self, name, src, kernel, stride, stage, role="shortcut"):
        c, h, w = self.shapes[src]
        ho = (h - kernel) // stride + 1
        wo = (w - kernel) // stride + 1
        return self.add(name, "or_maxpool", [src], c, ho, wo, kh=kernel,
                        kw=kernel, stride=stride, stage=stage, role=role)

    def logic(self, name, op, a, b, stage, role="body"):
        if self.shapes[a] != self.shapes[b]:
            raise ConfigInvalid(
                f"{name}: logic operands differ {self.shapes[a]} vs {self.shapes[b]}"
            )
        c, h, w = self.shapes[a]
        return self.add(name, "logic", [a, b], c, h, w, op=op, stage=stage,
                        role=role)

    def split(self, name, src, half, stage):
        c, h, w = self.shapes[src]
        lo, hi = (0, c // 2) if half == 0 else (c // 2, c)
        return self.add(name, "split", [src], hi - lo, h, w, op=f"{lo}:{hi}",
                        stage=stage)

    def concat(self, name, a, b, stage):
        ca, h, w = self.shapes[a]
        cb, _, _ = self.shapes[b]
        return self.add(name, "concat", [a, b], ca + cb, h, w, stage=stage)

    def shuffle(self, name, src, groups, stage):
        c, h, w = self.shapes[src]
        return self.add(name, "shuffle", [src], c, h, w, k=groups, stage=stage)


def build(cfg: ModelConfig) -> LayerGraph:
    """Assemble the layer DAG for a validated ModelConfig."""
    b = _Builder(cfg)
    k = cfg.k
    ch = cfg.stage_channels
    big = cfg.input_resolution >= 64

    # stem: 7x7/2 + 3x3/2 maxpool at large inputs, plain 3x3/1 otherwise
    x = b.conv("stem.conv", "input", ch[0], 7 if big else 3,
               stride=2 if big else 1, bits=32, role="stem")
    x = b.bn("stem.bn", x, role="stem")
    if big:
        x = b.maxpool("stem.pool", x, 3, 2, 1)
    if cfg.use_local_adaptive_shift:
        c0 = b.shapes[x][0]
        y = b.conv("las.conv", x, c0, 3, groups=c0, bits=32, role="stem")
        x = b.bn("las.bn", y, role="stem")
    x = b.sign("stem.sign", x, k, role="stem")

    basenet = cfg.variant == "basenet"
    star = cfg.variant == "boolnet_star"
    op1, op2 = cfg.shortcut_ops
    for s, (c, depth) in enumerate(zip(ch, cfg.stage_depths)):
        stride = 1 if s == 0 else 2
        dilation = 1
        if star and s == len(ch) - 1:
            stride, dilation = 1, 2  # dilation instead of stride, last stage
        for i in range(depth):
            p = f"s{s + 1}.b{i + 1}"
            first = i == 0
            if basenet:
                x = _basenet_block(b, p, x, c, k, s,
                                   stride if first else 1,
                                   dilation, op1, op2)
            elif first and s > 0:
                x = _boolnet_ds_block(b, p, x, c, k, s, stride, dilation,
                                      op1, op2)
            else:
                x = _boolnet_basic_block(b, p, x, c, k, s, dilation, op1, op2)

    # head: binary features -> integer per-channel sum-pool -> PReLU -> dense
    cfin, h, w = b.shapes[x]
    x = b.add("head.pool", "sum_pool", [x], cfin // k, 1, 1, k=k, stage=99,
              role="head")
    x = b.add("head.prelu", "prelu", [x], cfin // k, 1, 1, bits=32, stage=99,
              role="head")
    b.add("head.dense", "dense", [x], cfg.class_count, 1, 1, bits=32,
          stage=99, role="head")
    graph = LayerGraph(cfg, b.layers)
    _check_closure(graph)
    return graph


def _shortcut_branch(b, p, src, cout, k, stage, pool):
    """[1-bit 1x1 conv (groups=1), OR-maxpool 2x2/2, BN, sign] branch."""
    cfg = b.cfg
    y = b.conv(f"{p}.conv", src, cout, 1, groups=1,
               bits=cfg.downsample_conv_bits, stage=stage, role="shortcut")
    if pool:
        y = b.or_maxpool(f"{p}.pool", y, 2, 2, stage)
    y = b.bn(f"{p}.bn", y, stage=stage, role="shortcut")
    return b.sign(f"{p}.sign", y, k, stage=stage, role="shortcut")


def _ms_bconv(b, p, src, cout, k, stage, stride=1, dilation=1, role="body"):
    y = b.conv(f"{p}.conv", src, cout, 3, stride=stride, dilation=dilation,
               groups=k, bits=1, stage=stage, role=role)
    y = b.bn(f"{p}.bn", y, stage=stage, role=role)
    return b.sign(f"{p}.sign", y, k, stage=stage, role=role)


def _basenet_block(b, p, x, c, k, stage, stride, dilation, op1, op2):
    """Two stacked MS-BConv, logic shortcut around each."""
    changes = b.shapes[x] != (c * k,) + b.shapes[x][1:] or stride != 1
    y1 = _ms_bconv(b, f"{p}.u1", x, c, k, stage, stride, dilation)
    if changes:
        sc1 = _shortcut_branch(b, f"{p}.ds", x, c, k, stage, pool=stride == 2)
    else:
        sc1 = x
    a1 = b.logic(f"{p}.agg1", op1, y1, sc1, stage)
    y2 = _ms_bconv(b, f"{p}.u2", a1, c, k, stage, 1, dilation)
    a2 = b.logic(f"{p}.agg2", op2, y2, a1, stage)
    return a2


def _boolnet_basic_block(b, p, x, c, k, stage, dilation, op1, op2):
    """split -> two MS-BConv with shortcuts on one half -> concat -> shuffle."""
    xa = b.split(f"{p}.split_a", x, 0, stage)
    xb = b.split(f"{p}.split_b", x, 1, stage)
    y1 = _ms_bconv(b, f"{p}.u1", xa, c // 2, k, stage, 1, dilation)
    a1 = b.logic(f"{p}.agg1", op1, y1, xa, stage)
    y2 = _ms_bconv(b, f"{p}.u2", a1, c // 2, k, stage, 1, dilation)
    a2 = b.logic(f"{p}.agg2", op2, y2, a1, stage)
    cat = b.concat(f"{p}.concat", a2, xb, stage)
    return b.shuffle(f"{p}.shuffle", cat, 2, stage)


def _boolnet_ds_block(b, p, x, c, k, stage, stride, dilation, op1, op2):
    """Channel-doubling block: both halves processed, two shortcut branches."""
    pool = stride == 2
    sc1 = _shortcut_branch(b, f"{p}.sc1", x, c, k, stage, pool)
    sc2 = _shortcut_branch(b, f"{p}.sc2", x, c, k, stage, pool)
    y1 = _ms_bconv(b, f"{p}.u1", x, c, k, stage, stride, dilation)
    a1 = b.logic(f"{p}.agg1", op1, y1, sc1, stage)
    y2 = _ms_bconv(b, f"{p}.u2", a1, c, k, stage, 1, dilation)
    a2 = b.logic(f"{p}.agg2", op2, y2, sc2, stage)
    return a2


def _check_closure(graph: LayerGraph) -> None:
    """Shape-consistency audit over the finished record list."""
    shapes = {"input": (graph.config.in_channels, graph.config.input_resolution,
                        graph.config.input_resolution)}
    seen = {"input"}
    for lyr in graph:
        for src in lyr.inputs:
            if src not in seen:
                raise ConfigInvalid(f"{lyr.name}: input {src!r} not yet defined")
            c, h, w = shapes[lyr.inputs[0]]
            if (c, h, w) != (lyr.cin, lyr.hin, lyr.win):
                raise ConfigInvalid(
                    f"{lyr.name}: recorded input shape ({lyr.cin},{lyr.hin},"
                    f"{lyr.win}) != producer output ({c},{h},{w})"
                )
        shapes[lyr.name] = (lyr.cout, lyr.hout, lyr.wout)
        seen.add(lyr.name)


# -- config file ingestion (key = value, '#' comments, comma lists) ----------

_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}

_INT_KEYS = {"k", "input_resolution", "class_count", "in_channels",
             "downsample_conv_bits"}
_TUPLE_INT_KEYS = {"stage_channels", "stage_depths"}
_TUPLE_STR_KEYS = {"shortcut_ops"}
_STR_KEYS = {"variant", "downsample_mode"}
_BOOL_KEYS = {"use_local_adaptive_shift"}


def parse_config(text: str) -> ModelConfig:
    """Parse a declarative `key = value` config into a ModelConfig."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _TUPLE_INT_KEYS:
                values[key] = tuple(int(v) for v in val.split(","))
            elif key in _TUPLE_STR_KEYS:
                values[key] = tuple(v.strip() for v in val.split(","))
            elif key in _BOOL_KEYS:
                values[key] = _BOOL[val.lower()]
            elif key in _STR_KEYS:
                values[key] = val
            else:
                raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
        except (ValueError, KeyError):
            raise ConfigInvalid(
                f"line {lineno}: bad value {val!r} for {key!r}"
            ) from None
    return ModelConfig(**values)


def load_config(path) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())
