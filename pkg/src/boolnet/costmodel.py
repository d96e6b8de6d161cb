"""Static analysis of a LayerGraph: op counts, memory, cycles and energy.

Counting conventions (calibrated against the reference accounting):
  * FLOPs = 32-bit MACs; BOPs = 1-bit MACs (not doubled);
    OPs = FLOPs + BOPs/64.
  * Convolution MACs = kh*kw*(Cin/groups)*Cout*Hout*Wout, routed to
    flops or bops by the layer bit width; dense = Cin*Cout flops.
  * BatchNorm contributes 2 flops per output element (scale + shift).
    Sign/pool/logic/shuffle records carry no MACs.
  * Model size: 1 bit per binary weight, 32 per float weight, BN stores
    4 float32 per channel, dense stores a bias; "MB" means 10^6 bytes.

Energy methodology: per layer the active unit needs Cn = A/Pa cycles at
1 GHz (A = operation count, Pa = unit parallelism); compute energy
Ec = Cn*(Ps+Pd)/1e9 mJ; units idling while the busiest unit of the same
stage finishes cost Es = (Cnmax-Cn)*Ps/1e9.  SRAM energy charges one
access per compute cycle at the configured datapath width (64-bit
boolean flow vs 2048-bit for 32-bit-feature BNNs); DRAM traffic is all
weights once per layer plus greedy feature spill past the on-chip
capacity.  Absolute mJ depends on the per-access energy parameters and
is not a calibrated output; ratios and model ordering are.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import MissingPowerEntry

MB = 8e6  # bits per megabyte (10^6 bytes)


@dataclass
class OpCounts:
    flops: float = 0.0
    bops: float = 0.0
    model_size_bits: int = 0

    @property
    def ops(self) -> float:
        return self.flops + self.bops / 64.0

    @property
    def model_size_mb(self) -> float:
        return self.model_size_bits / MB

    def __iadd__(self, other: "OpCounts"):
        self.flops += other.flops
        self.bops += other.bops
        self.model_size_bits += other.model_size_bits
        return self


def layer_counts(lyr) -> OpCounts:
    """MACs and parameter bits contributed by one layer record."""
    out = OpCounts()
    if lyr.kind == "conv":
        macs = lyr.kh * lyr.kw * (lyr.cin // lyr.groups) * lyr.cout
        macs *= lyr.hout * lyr.wout
        weights = lyr.kh * lyr.kw * (lyr.cin // lyr.groups) * lyr.cout
        if lyr.bits == 1:
            out.bops += macs
            out.model_size_bits += weights
        else:
            out.flops += macs
            out.model_size_bits += 32 * weights
    elif lyr.kind == "bn":
        out.flops += 2 * lyr.cout * lyr.hout * lyr.wout
        out.model_size_bits += 4 * 32 * lyr.cout
    elif lyr.kind == "dense":
        out.flops += lyr.cin * lyr.cout
        out.model_size_bits += 32 * (lyr.cin * lyr.cout + lyr.cout)
    elif lyr.kind == "prelu":
        out.model_size_bits += 32  # single shared slope
    return out


def count_ops(graph) -> OpCounts:
    total = OpCounts()
    for lyr in graph:
        total += layer_counts(lyr)
    return total


# -- theoretical minimum memory per stage ------------------------------------


def memory_table(graph=None, *, stage_channels=(64, 128, 256, 512),
                 stage_sizes=(56, 28, 14, 7), k=1, feature_bits=1,
                 dilated_last_stage=False):
    """Per-stage closed-form memory envelope of one convolution block.

    Per stage with C channels at H*W resolution:
      weights     = 9*C^2 bits (one full 3x3 C->C convolution's worth)
      activation  = C*H*W*k bits
      out&features= 2*C*H*W*k*feature_bits (1 boolean flow, 32 for a
                    regular BNN carrying 32-bit features)
    A dilated last stage keeps the previous stage's resolution, hence
    its larger activation footprint.
    """
    if graph is not None:
        cfg = graph.config
        stage_channels = cfg.stage_channels
        res = cfg.input_resolution // (4 if cfg.input_resolution >= 64 else 1)
        sizes = []
        for s in range(len(stage_channels)):
            sizes.append(res)
            if s + 1 < len(stage_channels):
                res //= 2
        stage_sizes = tuple(sizes)
        k = cfg.k
        dilated_last_stage = cfg.variant == "boolnet_star"
    rows = []
    n = len(stage_channels)
    for s, (c, h) in enumerate(zip(stage_channels, stage_sizes)):
        if dilated_last_stage and s == n - 1 and n >= 2:
            h = stage_sizes[s - 1]  # stride replaced by dilation
        weights = 9 * c * c
        activation = c * h * h * k
        outputs = 2 * c * h * h * k * feature_bits
        rows.append(
            {
                "stage": s + 1,
                "channels": c,
                "size": h,
                "weights": weights,
                "activation": activation,
                "output_features": outputs,
                "total": weights + activation + outputs,
            }
        )
    return rows


# -- energy model ------------------------------------------------------------


@dataclass(frozen=True)
class PowerEntry:
    power_mw: float  # Ps + Pd of the unit
    area_um2: float
    static_mw: float  # Ps alone (idle-wait estimate)
    parallelism: float  # ops per cycle


def _default_units():
    # Measured unit powers; the int8 conv runs at 1/8 the binary lanes.
    pa = 2048.0
    pe = 64.0
    frac = 0.1  # assumed static share of total power

    def entry(p, a, par):
        return PowerEntry(p, a, p * frac, par)

    return {
        "bconv": entry(108.8, 131737, pa),
        "bit_agg": entry(1.4, 2150, pe),
        "sign16": entry(1.4, 7956, pe),
        "rprelu32": entry(137.6, 310671, pe),
        "int8_conv": entry(504.0, 836269, pa / 8),
        "int_agg": entry(43.5, 53238, pe),
        "sign32": entry(3.3, 13548, pe),
        "int8_bn": entry(50.1, 274606, pe),
    }


@dataclass
class PowerConfig:
    units: dict = field(default_factory=_default_units)
    clock_hz: float = 1e9
    # per-access energies (pJ) at the two datapath widths; parameters
    # with documented defaults (narrow ~CACTI 6.5 small-array figures,
    # wide scaled, DRAM ~DDR4-2666 per-64-bit-burst average)
    sram_pj_64: float = 6.0
    sram_pj_2048: float = 120.0
    dram_pj_64: float = 1300.0
    feature_capacity_bits: int = 192 * 1024 * 8
    weight_capacity_bits: int = 288 * 1024 * 8

    def unit(self, name: str) -> PowerEntry:
        try:
            return self.units[name]
        except KeyError:
            raise MissingPowerEntry(name) from None

    def ratio(self, a: str, b: str) -> float:
        """Energy-per-operation ratio between two units (power over lanes)."""
        ua, ub = self.unit(a), self.unit(b)
        return (ua.power_mw / ua.parallelism) / (ub.power_mw / ub.parallelism)

    def power_ratio(self, a: str, b: str) -> float:
        """Raw unit power ratio (same-duty-cycle comparison)."""
        return self.unit(a).power_mw / self.unit(b).power_mw


@dataclass
class LayerCost:
    name: str
    unit: str
    amount: float  # A: operations routed to the unit
    cycles: float  # Cn = A / Pa
    compute_mj: float  # Ec
    idle_mj: float = 0.0  # Es
    sram_mj: float = 0.0
    dram_mj: float = 0.0
    dram_bits: float = 0.0


@dataclass
class CostReport:
    label: str
    layers: list = field(default_factory=list)
    compute_mj: float = 0.0
    idle_mj: float = 0.0
    sram_mj: float = 0.0
    dram_mj: float = 0.0

    @property
    def total_mj(self) -> float:
        return self.compute_mj + self.idle_mj + self.sram_mj + self.dram_mj

    def to_dict(self):
        return {
            "label": self.label,
            "compute_mj": self.compute_mj,
            "idle_mj": self.idle_mj,
            "sram_mj": self.sram_mj,
            "dram_mj": self.dram_mj,
            "total_mj": self.total_mj,
        }


def _layer_unit(lyr, regular: bool):
    """Map a layer record to (unit name, operation amount).

    `regular` models a conventional BNN datapath carrying 32-bit
    features: integer additive aggregation, explicit int8 BN, 32-bit
    sign, an RPReLU per activation, and an int8 downsample convolution.
    """
    elems = lyr.cout * lyr.hout * lyr.wout
    if lyr.kind == "conv":
        macs = lyr.kh * lyr.kw * (lyr.cin // lyr.groups) * lyr.cout
        macs *= lyr.hout * lyr.wout
        if lyr.bits == 1 and lyr.role == "shortcut" and regular:
            return "int8_conv", macs
        if lyr.bits == 1:
            return "bconv", macs
        return "int8_conv", macs
    if lyr.kind == "logic":
        return ("int_agg", elems) if regular else ("bit_agg", elems)
    if lyr.kind == "bn":
        # boolean flow folds BN+sign into one threshold unit; charge the
        # fused comparison at the sign record instead
        return ("int8_bn", elems) if regular else (None, 0)
    if lyr.kind == "sign":
        return ("sign32", elems) if regular else ("sign16", elems)
    if lyr.kind == "prelu" or (lyr.kind == "shuffle" and regular):
        return ("rprelu32", elems) if lyr.kind == "prelu" else (None, 0)
    return None, 0


def _feature_bits(lyr, regular: bool, k: int) -> float:
    """Feature footprint a layer must keep resident (in + out)."""
    fbits = 32 if regular else 1
    if lyr.kind in ("conv", "bn"):
        return (lyr.cin * lyr.hin * lyr.win + lyr.cout * lyr.hout * lyr.wout) * fbits
    return 0.0


def energy_report(graph, power: PowerConfig = None, *, regular=False,
                  label=None) -> CostReport:
    """Cycle/energy estimate for one inference pass of the graph."""
    power = power or PowerConfig()
    report = CostReport(label=label or graph.config.variant)
    # group cycles per stage to estimate idle waiting (Es)
    stage_cycles = {}
    costs = []
    for lyr in graph:
        unit_name, amount = _layer_unit(lyr, regular)
        if unit_name is None:
            continue
        u = power.unit(unit_name)
        cn = amount / u.parallelism
        ec = cn * u.power_mw / 1e9
        # SRAM: one access per compute cycle at the datapath width
        sram_pj = power.sram_pj_2048 if regular else power.sram_pj_64
        sram = cn * sram_pj * 1e-9
        # DRAM: weights stream in once per conv/dense layer; features
        # spill when the layer's resident footprint exceeds capacity
        dram_bits = 0.0
        if lyr.kind in ("conv", "dense"):
            wbits = lyr.kh * lyr.kw * (lyr.cin // max(lyr.groups, 1)) * lyr.cout
            wbits *= 1 if (lyr.bits == 1 and not regular) else 8 if regular else 32
            dram_bits += wbits
        spill = _feature_bits(lyr, regular, graph.config.k)
        if spill > power.feature_capacity_bits:
            dram_bits += 2 * (spill - power.feature_capacity_bits)
        dram = (dram_bits / 64.0) * power.dram_pj_64 * 1e-9
        costs.append(LayerCost(lyr.name, unit_name, amount, cn, ec,
                               sram_mj=sram, dram_mj=dram,
                               dram_bits=dram_bits))
        key = (lyr.stage, unit_name)
        stage_cycles.setdefault(lyr.stage, {}).setdefault(unit_name, 0.0)
        stage_cycles[lyr.stage][unit_name] += cn
    # idle: per stage, every unit waits for the busiest unit
    idle_by_stage = {}
    for stage, per_unit in stage_cycles.items():
        cnmax = max(per_unit.values())
        idle = 0.0
        for unit_name, cn in per_unit.items():
            idle += (cnmax - cn) * power.unit(unit_name).static_mw / 1e9
        idle_by_stage[stage] = idle
    report.layers = costs
    report.compute_mj = sum(c.compute_mj for c in costs)
    report.sram_mj = sum(c.sram_mj for c in costs)
    report.dram_mj = sum(c.dram_mj for c in costs)
    report.idle_mj = sum(idle_by_stage.values())
    return report


def compare_models(reports) -> dict:
    """Rank CostReports by total energy; decomposition per model."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    ranked = sorted(reports, key=lambda r: r.total_mj)
    return {
        "ordering": [r.label for r in ranked],
        "models": [r.to_dict() for r in ranked],
    }


# -- report rendering --------------------------------------------------------


def render_ops(counts: OpCounts) -> str:
    return (
        f"flops {counts.flops:.6g}\n"
        f"bops {counts.bops:.6g}\n"
        f"ops {counts.ops:.6g}\n"
        f"model_size_mb {counts.model_size_mb:.6g}\n"
    )


def render_memory(rows) -> str:
    lines = ["stage channels size weights activation output_features total"]
    for r in rows:
        lines.append(
            f"{r['stage']} {r['channels']} {r['size']} {r['weights']} "
            f"{r['activation']} {r['output_features']} {r['total']}"
        )
    return "\n".join(lines) + "\n"


def render_energy(report: CostReport) -> str:
    d = report.to_dict()
    return json.dumps(d, indent=2) + "\n"
