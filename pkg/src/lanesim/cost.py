"""Abstract area/energy/power accounting.

All numbers are in synthetic units.  The default curves are shaped to the
qualitative behavior of real SRAM compilers -- per-read energy falls with
array size but hits a floor, per-bit area efficiency degrades as arrays
shrink -- and are deliberately NOT calibrated to any process node.  Every
published comparison drawn from this module is a ratio or an ordering,
never an absolute.

The CSR baselines model EIE/ESE-style accelerators as described by their
access patterns: per processed matrix row a PE reads two row offsets, one
column index per stored weight, and activations are stored densely.  The
ESE variant exploits weight sparsity only, so null activations still cost
work.  Assumptions: zero-padding escapes are ignored (negligible at the
densities studied and conservative in the baselines' favor), and baseline
MACs are scheduled at full utilization (also in their favor).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ParameterError
from .rnn import RnnNetwork
from .sim import AcceleratorConfig, PartitionReport, SimStats, partition


@dataclass(frozen=True)
class UnitCosts:
    """Synthetic unit-cost curves; override any field via file or kwargs."""

    read_energy_floor: float = 1.0
    read_energy_sqrt: float = 0.4
    read_energy_ref_bits: float = 65536.0
    area_per_bit: float = 1.0
    area_small_penalty: float = 2.0
    area_penalty_ref_bits: float = 65536.0
    regfile_access_energy: float = 0.12
    mac_energy: float = 0.30
    queue_access_energy: float = 2.5
    register_bit_area: float = 3.0
    register_switch_energy: float = 0.0006
    leakage_per_bit_per_cycle: float = 6e-7
    dram_energy_per_byte: float = 1.0
    logic_area_per_lane: float = 1500.0

    def sram_read_energy(self, size_bits: float) -> float:
        """Per-read energy: grows with array size, floors for tiny arrays."""
        if size_bits <= 0:
            return 0.0
        return self.read_energy_floor + self.read_energy_sqrt \
            * math.sqrt(size_bits / self.read_energy_ref_bits)

    def sram_area(self, size_bits: float) -> float:
        """Total array area; per-bit cost rises as the array shrinks."""
        if size_bits <= 0:
            return 0.0
        penalty = 1.0 + self.area_small_penalty \
            / math.sqrt(max(size_bits, 1.0) / self.area_penalty_ref_bits)
        return size_bits * self.area_per_bit * penalty

    @classmethod
    def from_file(cls, path) -> "UnitCosts":
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in fields(cls)}
        bad = set(data) - known
        if bad:
            raise ParameterError(f"unknown unit-cost fields: {sorted(bad)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_COSTS = UnitCosts()


@dataclass
class DesignCost:
    """Area/energy by resource category; totals are the category sums."""

    label: str
    cycles: int
    area: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)

    @property
    def area_total(self) -> float:
        return float(sum(self.area.values()))

    @property
    def energy_total(self) -> float:
        return float(sum(self.energy.values()))

    @property
    def power(self) -> float:
        return self.energy_total / self.cycles if self.cycles else 0.0

    def metadata_activation_area(self) -> float:
        """Sparse-encoding metadata plus activation storage area."""
        keys = ("masks", "act_masks", "row_offsets", "col_indices",
                "activations")
        return float(sum(self.area.get(k, 0.0) for k in keys))


def cost_masr(stats: SimStats, cfg: AcceleratorConfig, net: RnnNetwork,
              costs: UnitCosts = DEFAULT_COSTS,
              part: PartitionReport | None = None) -> DesignCost:
    """Price a completed simulation run.

    Energy is linear in the access counts at fixed configuration; area
    follows the partitioned array sizes, so many small arrays cost more
    per bit than one large array.
    """
    if part is None:
        part = partition(net, cfg)
    lanes = cfg.lanes
    rows_per_lane = math.ceil(net.hidden / cfg.vert_lanes)

    w_bits = part.per_lane_weight_bits_max
    m_bits = part.per_lane_mask_bits_max
    act_bits = part.act_bits_required
    act_mask_bits = cfg.onchip_act_timesteps * net.hidden * 3
    bank_bits = act_bits / cfg.act_banks
    # per-lane mask/work/double-buffer registers plus the backend queue
    reg_bits_lane = 6 * rows_per_lane + 40 * cfg.queue_depth + 96
    regfile_bits = cfg.horiz_pes * cfg.vert_lanes * cfg.act_regfile_words * 10
    register_bits = lanes * reg_bits_lane + regfile_bits

    area = {
        "weights": lanes * costs.sram_area(w_bits),
        "masks": lanes * costs.sram_area(m_bits),
        "activations": cfg.act_banks * costs.sram_area(bank_bits),
        "act_masks": costs.sram_area(act_mask_bits),
        "registers": register_bits * costs.register_bit_area,
        "logic": lanes * costs.logic_area_per_lane,
    }

    e_w = costs.sram_read_energy(w_bits)
    e_m = costs.sram_read_energy(m_bits)
    e_a = costs.sram_read_energy(bank_bits)
    e_am = costs.sram_read_energy(act_mask_bits)
    sram_bits = lanes * (w_bits + m_bits) + act_bits + act_mask_bits
    energy = {
        "weights": stats.sram_reads["weight"] * e_w,
        "masks": stats.sram_reads["weight_mask"] * e_m,
        "activations": (stats.sram_reads["act"]
                        + stats.sram_writes["act"]) * e_a,
        "act_masks": (stats.sram_reads["act_mask"]
                      + stats.sram_writes["act_mask"]) * e_am,
        "registers": (stats.regfile_reads + stats.regfile_writes)
        * costs.regfile_access_energy
        + (stats.queue_pushes + stats.queue_pops) * costs.queue_access_energy
        + register_bits * stats.total_cycles * costs.register_switch_energy,
        "logic": stats.mac_count * costs.mac_energy,
        "leakage": (sram_bits + register_bits) * stats.total_cycles
        * costs.leakage_per_bit_per_cycle,
        "dram": stats.dram_bytes * costs.dram_energy_per_byte,
    }
    return DesignCost(label=f"MASR-{cfg.name}", cycles=stats.total_cycles,
                      area=area, energy=energy)


# ---------------------------------------------------------------------------
# EIE / ESE style CSR baselines
# ---------------------------------------------------------------------------


def _layer_act_profile(net: RnnNetwork):
    """(input_nz, hidden_nz) per layer, from network metadata."""
    inz = float(net.meta.get("input_nz", 0.4))
    hnz = float(net.meta.get("act_nz", 0.2))
    return [(inz if li == 0 else min(1.0, 2 * hnz), hnz)
            for li in range(len(net.layers))]


def cost_csr_baseline(net: RnnNetwork, num_pes: int, timesteps: int,
                      costs: UnitCosts = DEFAULT_COSTS,
                      variant: str = "eie",
                      act_profile=None,
                      onchip_act_timesteps: int = 333,
                      value_bits: int = 10, index_bits: int = 4,
                      dram_bytes_per_cycle: float = 25.6) -> DesignCost:
    """Analytic access model of a CSR-encoded accelerator on this workload.

    eie: weight and activation sparsity exploited in execution, activations
    stored densely.  ese: weight sparsity only, so every activation drives
    its column's worth of MACs.
    """
    if variant not in ("eie", "ese"):
        raise ParameterError(f"unknown baseline variant {variant!r}")
    if act_profile is None:
        act_profile = _layer_act_profile(net)
    bidirectional = net.direction == "bidirectional"
    directions = 2 if bidirectional else 1

    macs = 0.0
    row_offset_reads = 0.0
    col_index_reads = 0.0
    act_reads = 0.0
    nnz_resident = 0
    offset_width = 0
    dram_bytes = 0.0
    dim = net.hidden
    for layer, (input_nz, hidden_nz) in zip(net.layers, act_profile):
        mats = [(layer.w_x, input_nz), (layer.w_h, hidden_nz)]
        if bidirectional:
            mats += [(layer.v_x, input_nz), (layer.v_h, hidden_nz)]
        layer_nnz = sum(m.nnz for m, _ in mats)
        nnz_resident = max(nnz_resident, layer_nnz)
        offset_width = max(offset_width,
                           math.ceil(math.log2(max(m.nnz for m, _ in mats) + 1)))
        dram_bytes += layer_nnz * value_bits / 8.0
        for m, act_nz in mats:
            nz_acts = act_nz * m.rows
            if variant == "eie":
                layer_macs = m.nnz * act_nz
                row_offset_reads += 2 * nz_acts * num_pes * timesteps
            else:
                layer_macs = m.nnz
                row_offset_reads += 2 * m.rows * num_pes * timesteps
            macs += layer_macs * timesteps
            col_index_reads += layer_macs * timesteps
            act_reads += m.rows * timesteps  # dense activation scan

    # dense activation storage: inputs plus both hidden-state streams
    act_bits = onchip_act_timesteps * dim * value_bits * 3
    streamed = max(0, timesteps - onchip_act_timesteps) * directions
    dram_bytes += streamed * dim * value_bits / 8.0

    per_pe_value_bits = nnz_resident * value_bits / num_pes
    per_pe_offset_bits = (dim + 1) * offset_width * 4  # one array per matrix
    per_pe_index_bits = nnz_resident * index_bits / num_pes

    area = {
        "weights": num_pes * costs.sram_area(per_pe_value_bits),
        "row_offsets": num_pes * costs.sram_area(per_pe_offset_bits),
        "col_indices": num_pes * costs.sram_area(per_pe_index_bits),
        "activations": costs.sram_area(act_bits),
        "registers": num_pes * 200 * costs.register_bit_area,
        "logic": num_pes * costs.logic_area_per_lane,
    }

    cycles = int(math.ceil(macs / num_pes))  # perfect scheduling, in the
    # baseline's favor
    sram_bits = num_pes * (per_pe_value_bits + per_pe_offset_bits
                           + per_pe_index_bits) + act_bits
    energy = {
        "weights": macs * costs.sram_read_energy(per_pe_value_bits),
        "row_offsets": row_offset_reads
        * costs.sram_read_energy(per_pe_offset_bits),
        "col_indices": col_index_reads
        * costs.sram_read_energy(per_pe_index_bits),
        "activations": act_reads * costs.sram_read_energy(act_bits),
        "registers": macs * costs.regfile_access_energy,
        "logic": macs * costs.mac_energy,
        "leakage": sram_bits * cycles * costs.leakage_per_bit_per_cycle,
        "dram": dram_bytes * costs.dram_energy_per_byte,
    }
    return DesignCost(label=f"{variant.upper()}-{num_pes}", cycles=cycles,
                      area=area, energy=energy)


# ---------------------------------------------------------------------------
# Comparison tables
# ---------------------------------------------------------------------------


def compare(designs, normalize_to: int = 0):
    """Normalized ratios per category and total; absent categories stay
    absent rather than becoming 0/0."""
    designs = list(designs)
    if not designs:
        raise ParameterError("nothing to compare")
    ref = designs[normalize_to]
    if ref.area_total == 0 or ref.energy_total == 0:
        raise ParameterError("normalizer has zero totals")
    rows = []
    for d in designs:
        row = {
            "label": d.label,
            "cycles": d.cycles,
            "area_total": d.area_total,
            "energy_total": d.energy_total,
            "area_ratio": d.area_total / ref.area_total,
            "energy_ratio": d.energy_total / ref.energy_total,
            "cycles_ratio": d.cycles / ref.cycles if ref.cycles else None,
        }
        for cat in sorted(set(d.area) | set(ref.area)):
            if cat in d.area and cat in ref.area and ref.area[cat] > 0:
                row[f"area_ratio_{cat}"] = d.area[cat] / ref.area[cat]
        for cat in sorted(set(d.energy) | set(ref.energy)):
            if cat in d.energy and cat in ref.energy and ref.energy[cat] > 0:
                row[f"energy_ratio_{cat}"] = d.energy[cat] / ref.energy[cat]
        rows.append(row)
    return rows
