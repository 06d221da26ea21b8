"""Cycle-level simulator of the sparse RNN lane array.

Timing model, in brief.  A matrix-vector product runs as one globally
synchronized phase.  Every lane owns a (row-range x column-range) tile and
walks its columns in ascending order; a column costs max(1, w) cycles of
occupancy, where w is the popcount of the work mask (weight AND activation
bits) over the lane's rows -- w MAC cycles, or a single front-end cycle when
the column holds no work.  A finished column is pushed to the lane's
back-end queue (depth configurable); the lane stalls on a full queue.  The
per-vertical-slice accumulator pops one column per cycle, in ascending
column order, once every lane of the slice has pushed that column.  A
5-cycle pipeline fill is charged once per phase.  The vector-vector add
phase that closes a timestep retires 6 x act_banks elements per cycle
(60-bit activation words) and is not overlapped with the matvecs.

Functional results reuse the golden model's integer kernels, accumulated
per vertical slice and summed in lane order, so simulator outputs are
bit-identical to the golden model by integer associativity -- the
equivalence suite checks exactly that.

Dynamic load balancing relocates work between ring neighbors ahead of the
queue recurrence, bounded by each owner's duplicated tail rows.  Vertical
balancing moves rows between lanes of the same slice (same columns, so the
relocated partial rides the thief's own push); horizontal balancing moves
rows between lanes of one PE, and the owner's push then also waits on the
thief's block.  Relocation moves work, never copies it, so executed MAC
counts are conserved exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CapacityError,
    ConfigError,
    DimensionError,
    SimulationIntegrityError,
)
from .rnn import (
    ActVector,
    RnnNetwork,
    Utterance,
    combine_accumulators,
    encode_acts,
    finish_timestep,
    matvec_accumulators_sliced,
)

PIPELINE_FILL = 5
_NEG = np.int64(-(1 << 60))

# Pareto-front topologies: lanes -> (horiz_lanes, vert_lanes, horiz_pes)
TABLE_TOPOLOGIES = {
    32: (16, 2, 2),
    64: (32, 2, 2),
    128: (32, 4, 2),
    256: (32, 8, 2),
    512: (32, 16, 1),
    1024: (32, 32, 1),
}

BALANCE_MODES = ("none", "horizontal", "vertical", "both")


@dataclass(frozen=True)
class AcceleratorConfig:
    horiz_lanes: int = 16
    vert_lanes: int = 2
    horiz_pes: int = 2
    queue_depth: int = 1
    act_banks: int = 1
    act_word_bits: int = 60
    weight_word_bits: int = 10
    load_balance: str = "none"
    dup_fraction: float = 0.10
    predication: float | None = None
    dram_bytes_per_cycle: float = 25.6
    onchip_act_timesteps: int = 333
    weight_sram_kb_per_lane: float | None = None
    mask_sram_kb_per_lane: float | None = None
    act_sram_kb: float | None = None
    seed: int = 0

    @property
    def lanes(self) -> int:
        return self.horiz_lanes * self.vert_lanes

    @property
    def lanes_per_pe(self) -> int:
        return self.horiz_lanes // self.horiz_pes

    @property
    def act_regfile_words(self) -> int:
        # 8 vertical lanes -> 64 words, 32 -> 16
        return max(1, 512 // self.vert_lanes)

    @property
    def name(self) -> str:
        return f"LANESx{self.lanes}"

    def config_id(self) -> str:
        pred = "off" if self.predication is None else f"{self.predication:g}"
        return (f"h{self.horiz_lanes}v{self.vert_lanes}p{self.horiz_pes}"
                f"q{self.queue_depth}b{self.act_banks}lb-{self.load_balance}"
                f"pred-{pred}s{self.seed}")


def validate_config(cfg: AcceleratorConfig) -> AcceleratorConfig:
    """Check every constraint; raise ConfigError naming all violations."""
    v = []
    if cfg.horiz_lanes < 1 or cfg.horiz_lanes > 32:
        v.append(f"horiz_lanes {cfg.horiz_lanes} outside [1, 32]")
    if cfg.vert_lanes < 1 or cfg.vert_lanes > 32:
        v.append(f"vert_lanes {cfg.vert_lanes} outside [1, 32]")
    if not 1 <= cfg.horiz_lanes * cfg.vert_lanes <= 1024:
        v.append(f"total lanes {cfg.horiz_lanes * cfg.vert_lanes} "
                 "outside [1, 1024]")
    if cfg.horiz_pes < 1:
        v.append("horiz_pes must be >= 1")
    elif cfg.horiz_lanes % cfg.horiz_pes != 0:
        v.append(f"horiz_pes {cfg.horiz_pes} does not divide "
                 f"horiz_lanes {cfg.horiz_lanes}")
    if cfg.queue_depth < 1:
        v.append("queue_depth must be >= 1")
    if cfg.act_banks < 1:
        v.append("act_banks must be >= 1")
    if cfg.act_word_bits < 2:
        v.append("act_word_bits must be >= 2")
    if cfg.weight_word_bits < 2:
        v.append("weight_word_bits must be >= 2")
    if cfg.load_balance not in BALANCE_MODES:
        v.append(f"load_balance {cfg.load_balance!r} not one of {BALANCE_MODES}")
    if not 0.0 <= cfg.dup_fraction <= 1.0:
        v.append("dup_fraction outside [0, 1]")
    if cfg.predication is not None and cfg.predication > 0:
        v.append("predication threshold must be <= 0")
    if cfg.dram_bytes_per_cycle <= 0:
        v.append("dram_bytes_per_cycle must be positive")
    if cfg.onchip_act_timesteps < 0:
        v.append("onchip_act_timesteps must be >= 0")
    if v:
        raise ConfigError(v)
    return cfg


def canonical_config(lanes: int, **overrides) -> AcceleratorConfig:
    """The published topology for a total lane count (Pareto-front points)."""
    if lanes not in TABLE_TOPOLOGIES:
        raise ConfigError([f"no canonical topology for {lanes} lanes"])
    h, vl, p = TABLE_TOPOLOGIES[lanes]
    return validate_config(AcceleratorConfig(
        horiz_lanes=h, vert_lanes=vl, horiz_pes=p, **overrides))


def split_bounds(n: int, parts: int) -> np.ndarray:
    """Even contiguous split; remainder goes to the lowest-index parts."""
    base, rem = divmod(n, parts)
    sizes = np.full(parts, base, dtype=np.int64)
    sizes[:rem] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


# ---------------------------------------------------------------------------
# Partitioning and capacity accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaneAssignment:
    """Tile bounds for one matrix shape plus the duplicated-tail depth."""

    rows: int
    cols: int
    row_bounds: np.ndarray
    col_bounds: np.ndarray
    dup_rows: int


def _assignment_for(rows: int, cols: int, cfg: AcceleratorConfig) -> LaneAssignment:
    dup = 0
    if cfg.load_balance != "none":
        dup = math.ceil(cfg.dup_fraction * rows)
    return LaneAssignment(rows=rows, cols=cols,
                          row_bounds=split_bounds(rows, cfg.vert_lanes),
                          col_bounds=split_bounds(cols, cfg.horiz_lanes),
                          dup_rows=dup)


@dataclass
class PartitionReport:
    per_lane_weight_bits_max: int
    per_lane_weight_bits_mean: float
    per_lane_mask_bits_max: int
    duplicate_weight_bits_max: int
    act_bits_required: int

    @property
    def per_lane_weight_kb(self) -> float:
        return self.per_lane_weight_bits_max / 8192.0

    @property
    def per_lane_mask_kb(self) -> float:
        return self.per_lane_mask_bits_max / 8192.0


def partition(net: RnnNetwork, cfg: AcceleratorConfig) -> PartitionReport:
    """Tile the network onto the lane array and account per-lane SRAM.

    The resident set is one layer's four matrices (forward and backward
    directions double-buffered).  Raises CapacityError when a configured
    SRAM limit is exceeded.
    """
    cfg = validate_config(cfg)
    wb = cfg.weight_word_bits
    worst_w = worst_m = worst_dup = 0
    mean_acc = 0.0
    for layer in net.layers:
        mats = (layer.w_x, layer.w_h, layer.v_x, layer.v_h)
        lane_w = np.zeros((cfg.vert_lanes, cfg.horiz_lanes), dtype=np.int64)
        lane_m = np.zeros_like(lane_w)
        lane_dup = np.zeros_like(lane_w)
        for m in mats:
            asn = _assignment_for(m.rows, m.cols, cfg)
            nz = m.mask.astype(np.int64)
            csum = np.zeros((m.rows + 1, m.cols), dtype=np.int64)
            np.cumsum(nz, axis=0, out=csum[1:])
            per_v = csum[asn.row_bounds[1:]] - csum[asn.row_bounds[:-1]]
            tail_start = np.maximum(asn.row_bounds[1:] - asn.dup_rows,
                                    asn.row_bounds[:-1])
            per_v_tail = csum[asn.row_bounds[1:]] - csum[tail_start]
            for h in range(cfg.horiz_lanes):
                lo, hi = asn.col_bounds[h], asn.col_bounds[h + 1]
                lane_w[:, h] += per_v[:, lo:hi].sum(axis=1) * wb
                lane_m[:, h] += (asn.row_bounds[1:] - asn.row_bounds[:-1]) \
                    * (hi - lo)
                if cfg.load_balance != "none":
                    lane_dup[:, h] += per_v_tail[:, lo:hi].sum(axis=1) * wb
        worst_w = max(worst_w, int((lane_w + lane_dup).max()))
        worst_m = max(worst_m, int(lane_m.max()))
        worst_dup = max(worst_dup, int(lane_dup.max()))
        mean_acc = max(mean_acc, float(lane_w.mean()))

    act_bits = cfg.onchip_act_timesteps * 3 * (cfg.act_regfile_words
                                               * cfg.vert_lanes) * 10

    report = PartitionReport(per_lane_weight_bits_max=worst_w,
                             per_lane_weight_bits_mean=mean_acc,
                             per_lane_mask_bits_max=worst_m,
                             duplicate_weight_bits_max=worst_dup,
                             act_bits_required=act_bits)
    if cfg.weight_sram_kb_per_lane is not None \
            and report.per_lane_weight_kb > cfg.weight_sram_kb_per_lane:
        raise CapacityError(
            f"per-lane weights {report.per_lane_weight_kb:.1f}KB exceed "
            f"{cfg.weight_sram_kb_per_lane}KB")
    if cfg.mask_sram_kb_per_lane is not None \
            and report.per_lane_mask_kb > cfg.mask_sram_kb_per_lane:
        raise CapacityError(
            f"per-lane masks {report.per_lane_mask_kb:.1f}KB exceed "
            f"{cfg.mask_sram_kb_per_lane}KB")
    if cfg.act_sram_kb is not None and act_bits / 8192.0 > cfg.act_sram_kb:
        raise CapacityError("activation SRAM capacity exceeded")
    return report


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class SimStats:
    horiz_lanes: int
    vert_lanes: int
    total_cycles: int = 0
    mac_busy: np.ndarray = None
    frontend: np.ndarray = None
    stall: np.ndarray = None
    idle: np.ndarray = None
    mac_count: int = 0
    work_mask_macs: int = 0
    vvadd_cycles: int = 0
    accumulate_cycles: int = 0
    weight_load_cycles: int = 0
    weight_load_exposed: int = 0
    act_load_exposed: int = 0
    sram_reads: dict = field(default_factory=lambda: {
        "weight": 0, "weight_mask": 0, "act": 0, "act_mask": 0})
    sram_writes: dict = field(default_factory=lambda: {"act": 0, "act_mask": 0})
    regfile_reads: int = 0
    regfile_writes: int = 0
    queue_pushes: int = 0
    queue_pops: int = 0
    relocated_macs: int = 0
    skipped_columns: int = 0
    dram_bytes: float = 0.0

    def __post_init__(self):
        shape = (self.vert_lanes, self.horiz_lanes)
        for name in ("mac_busy", "frontend", "stall", "idle"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(shape, dtype=np.int64))

    @property
    def lanes(self) -> int:
        return self.horiz_lanes * self.vert_lanes

    @property
    def utilization(self) -> float:
        denom = self.lanes * self.total_cycles
        return self.mac_count / denom if denom else 0.0

    def check_accounting(self):
        total = (self.mac_busy + self.frontend + self.stall + self.idle)
        if not np.all(total == self.total_cycles):
            raise SimulationIntegrityError(
                "per-lane cycle accounting does not close")


def cycle_breakdown(stats: SimStats) -> dict:
    """Normalized fractions of lane time; sums to 1 within 1e-9.

    VVAdd and exposed-load time is spent idle by every lane, so it is
    carved out of the idle category and reported on its own.
    """
    lane_time = stats.lanes * stats.total_cycles
    if lane_time == 0:
        return {k: 0.0 for k in ("mac", "frontend", "stall", "idle",
                                 "vvadd", "load")}
    load = stats.weight_load_exposed + stats.act_load_exposed
    frac = {
        "mac": stats.mac_busy.sum() / lane_time,
        "frontend": stats.frontend.sum() / lane_time,
        "stall": stats.stall.sum() / lane_time,
        "idle": (stats.idle.sum() - stats.lanes
                 * (stats.vvadd_cycles + load)) / lane_time,
        "vvadd": stats.vvadd_cycles / stats.total_cycles,
        "load": load / stats.total_cycles,
    }
    return frac


# ---------------------------------------------------------------------------
# Phase machinery
# ---------------------------------------------------------------------------


def _slice_sums(wmask: np.ndarray, act_bits: np.ndarray,
                row_bounds: np.ndarray, dup_rows: int):
    """Per-(vertical lane, column) work popcounts and duplicated-tail work."""
    work = wmask & act_bits[:, None]
    csum = np.zeros((wmask.shape[0] + 1, wmask.shape[1]), dtype=np.int64)
    np.cumsum(work, axis=0, out=csum[1:])
    sums = csum[row_bounds[1:]] - csum[row_bounds[:-1]]
    if dup_rows > 0:
        tail_start = np.maximum(row_bounds[1:] - dup_rows, row_bounds[:-1])
        tails = csum[row_bounds[1:]] - csum[tail_start]
    else:
        tails = np.zeros_like(sums)
    return sums, tails


def _group_columns(sums, tails, col_bounds, keep=None):
    """Arrange per-column work into (V, H, K) lane-position tensors."""
    V = sums.shape[0]
    H = len(col_bounds) - 1
    idx = []
    for h in range(H):
        cols = np.arange(col_bounds[h], col_bounds[h + 1])
        if keep is not None:
            cols = cols[keep[cols]]
        idx.append(cols)
    K = max((len(c) for c in idx), default=0)
    w = np.zeros((V, H, K), dtype=np.int64)
    tail = np.zeros_like(w)
    valid = np.zeros((H, K), dtype=bool)
    for h, cols in enumerate(idx):
        w[:, h, :len(cols)] = sums[:, cols]
        tail[:, h, :len(cols)] = tails[:, cols]
        valid[h, :len(cols)] = True
    return w, tail, valid


def _rebalance_vertical(w, tail, passes=4):
    """Move work along the vertical ring, bounded by the owners' tails.

    Thief v takes rows from owner (v+1) mod V for the same column, so the
    relocated partial rides the thief's own queue push.  Each pass averages
    directed neighbor pairs; work moves at most one hop in total because an
    owner's tail tokens are consumed on first theft.  Returns moved MACs.
    """
    V = w.shape[0]
    if V < 2:
        return 0
    cap = tail.copy()
    moved = 0
    for _ in range(passes):
        gap = np.roll(w, -1, axis=0) - w
        take = np.minimum(gap // 2, np.roll(cap, -1, axis=0))
        take = np.maximum(take, 0)
        if not take.any():
            break
        w += take
        w -= np.roll(take, 1, axis=0)
        cap -= np.roll(take, 1, axis=0)
        moved += int(take.sum())
    return moved


def _pe_rings(cfg: AcceleratorConfig):
    rings = []
    for p in range(cfg.horiz_pes):
        lo = p * cfg.lanes_per_pe
        rings.append(np.arange(lo, lo + cfg.lanes_per_pe))
    return rings


def _rebalance_horizontal(w, tail, valid, rings, passes=4):
    """Move work between lanes of one PE (same rows, neighbor columns).

    Thief h executes tail rows of owner h+1's current-position column; the
    stolen amounts are returned separately because the owner's push must
    wait for the thief's block.
    """
    hsteal = np.zeros_like(w)
    moved = 0
    cap = tail
    for ring in rings:
        if len(ring) < 2:
            continue
        sub = w[:, ring, :]
        subcap = cap[:, ring, :].copy()
        subvalid = valid[ring, :]
        subcap[:, ~subvalid] = 0
        steal = np.zeros_like(sub)
        for _ in range(passes):
            eff = sub + steal
            gap = np.roll(sub, -1, axis=1) - eff
            take = np.minimum(gap // 2, np.roll(subcap, -1, axis=1))
            take = np.maximum(take, 0)
            take[:, ~subvalid] = 0  # a thief needs a column of its own here
            if not take.any():
                break
            steal += take
            sub -= np.roll(take, 1, axis=1)
            subcap -= np.roll(take, 1, axis=1)
            moved += int(take.sum())
        w[:, ring, :] = sub
        hsteal[:, ring, :] = steal
    return hsteal, moved


@dataclass
class PhaseResult:
    span: int
    busy: np.ndarray
    frontend: np.ndarray
    stall: np.ndarray
    idle: np.ndarray
    macs: int
    pushes: int
    pops: int
    relocated: int


def _empty_phase(V, H) -> PhaseResult:
    z = np.zeros((V, H), dtype=np.int64)
    return PhaseResult(span=0, busy=z, frontend=z.copy(), stall=z.copy(),
                       idle=z.copy(), macs=0, pushes=0, pops=0, relocated=0)


def run_phase(w, tail, valid, lane_active, cfg: AcceleratorConfig,
              rings=None) -> PhaseResult:
    """Execute one matvec phase through the queue/drain recurrence."""
    V, H, K = w.shape
    if K == 0 or not valid.any():
        return _empty_phase(V, H)
    macs_before = int(w.sum())
    relocated = 0
    hsteal = np.zeros_like(w)
    if cfg.load_balance in ("vertical", "both"):
        relocated += _rebalance_vertical(w, tail)
    if cfg.load_balance in ("horizontal", "both") and rings:
        hsteal, m = _rebalance_horizontal(w, tail, valid, rings)
        relocated += m
    if int(w.sum() + hsteal.sum()) != macs_before:
        raise SimulationIntegrityError("load balancing changed the MAC count")

    # ring predecessor per horizontal index (the potential thief of a lane)
    pred = np.arange(H)
    if rings:
        for ring in rings:
            pred[ring] = np.roll(ring, 1)

    busy = np.zeros((V, H), dtype=np.int64)
    fe = np.zeros((V, H), dtype=np.int64)
    stall = np.zeros((V, H), dtype=np.int64)
    resume = np.where(lane_active, PIPELINE_FILL, 0).astype(np.int64)
    pop_prev = np.full(H, _NEG, dtype=np.int64)
    pop_hist = []
    last_pop = np.full(H, -1, dtype=np.int64)
    pushes = 0
    pops = 0

    active_v = lane_active.any(axis=1)  # vertical positions with rows

    for k in range(K):
        wk = w[:, :, k]
        ek = hsteal[:, :, k]
        own = valid[None, :, k] & lane_active
        has_block = own | (ek > 0)
        occ = np.where(own, np.maximum(wk, 1), 0) + ek
        block_end = resume + np.where(has_block, occ, 0)

        push = block_end.copy()
        if rings:
            thief_amt = ek[:, pred]
            thief_end = block_end[:, pred]
            push = np.where(own & (thief_amt > 0),
                            np.maximum(push, thief_end), push)
        if k >= cfg.queue_depth:
            space = pop_hist[k - cfg.queue_depth]
            push = np.where(own, np.maximum(push, space[None, :]), push)

        pushers = own
        pcount = int(pushers.sum())
        pushes += pcount
        masked = np.where(pushers, push, _NEG)
        pop_k = masked.max(axis=0)
        col_here = valid[:, k]
        pop_k = np.where(col_here, np.maximum(pop_k, pop_prev + 1), pop_prev)
        pops += int(col_here.sum())

        busy += np.where(has_block, wk + ek, 0)
        fe += np.where(own & (wk == 0), 1, 0)
        stall += np.where(pushers, push - block_end, 0)
        resume = np.where(pushers, push,
                          np.where(has_block, block_end, resume))
        pop_prev = pop_k
        pop_hist.append(pop_k)
        last_pop = np.where(col_here, pop_k, last_pop)

    span = int(last_pop[valid.any(axis=1)].max()) + 1
    fill = np.where(lane_active, PIPELINE_FILL, 0)
    idle = span - fill - busy - fe - stall
    if np.any(idle < 0):
        raise SimulationIntegrityError("negative idle time in phase accounting")
    return PhaseResult(span=span, busy=busy, frontend=fe + fill, stall=stall,
                       idle=idle, macs=macs_before, pushes=pushes, pops=pops,
                       relocated=relocated)


# ---------------------------------------------------------------------------
# Network-level simulation
# ---------------------------------------------------------------------------


def _chunk_bits(mats, cfg: AcceleratorConfig) -> int:
    vals = sum(m.nnz for m in mats) * cfg.weight_word_bits
    masks = sum(m.rows * m.cols for m in mats)
    return vals + masks


def _act_stream_bits(x: ActVector) -> int:
    return x.nnz * x.quant.bits + x.dim


class _NetworkRun:
    def __init__(self, net: RnnNetwork, utt: Utterance,
                 cfg: AcceleratorConfig):
        self.net = net
        self.utt = utt
        self.cfg = validate_config(cfg)
        self.stats = SimStats(horiz_lanes=cfg.horiz_lanes,
                              vert_lanes=cfg.vert_lanes)
        self.rings = _pe_rings(cfg) if cfg.lanes_per_pe > 1 else None
        self._asn_cache = {}
        self.elems_per_word = max(1, cfg.act_word_bits
                                  // net.layers[0].act_bits)

    def assignment(self, rows: int, cols: int) -> LaneAssignment:
        key = (rows, cols)
        if key not in self._asn_cache:
            self._asn_cache[key] = _assignment_for(rows, cols, self.cfg)
        return self._asn_cache[key]

    def _matvec(self, m, acts: ActVector, keep=None):
        """Functional accumulators (per-slice path) plus the timing phase."""
        cfg = self.cfg
        asn = self.assignment(m.rows, m.cols)
        acc = matvec_accumulators_sliced(m, acts, asn.row_bounds).sum(axis=0)

        sums, tails = _slice_sums(m.mask, acts.vec.mask.bits,
                                  asn.row_bounds, asn.dup_rows)
        full_work = int(sums.sum())
        w, tail, valid = _group_columns(sums, tails, asn.col_bounds, keep)
        if keep is None and int(w.sum()) != full_work:
            raise SimulationIntegrityError("grouped work != work-mask popcount")
        rows_per_v = asn.row_bounds[1:] - asn.row_bounds[:-1]
        lane_active = np.broadcast_to((rows_per_v > 0)[:, None],
                                      (cfg.vert_lanes, cfg.horiz_lanes)).copy()
        res = run_phase(w, tail, valid, lane_active, cfg, self.rings)

        st = self.stats
        st.total_cycles += res.span
        st.mac_busy += res.busy
        st.frontend += res.frontend
        st.stall += res.stall
        st.idle += res.idle
        st.mac_count += res.macs
        st.work_mask_macs += full_work if keep is None else res.macs
        st.queue_pushes += res.pushes
        st.queue_pops += res.pops
        st.accumulate_cycles += res.pops
        st.relocated_macs += res.relocated
        st.sram_reads["weight"] += res.macs
        st.sram_reads["weight_mask"] += res.pushes
        st.regfile_reads += res.macs
        # regfile fill from the activation SRAM, one copy per PE
        acsum = np.concatenate([[0], np.cumsum(acts.vec.mask.bits)])
        slice_nnz = acsum[asn.row_bounds[1:]] - acsum[asn.row_bounds[:-1]]
        words = int(np.ceil(slice_nnz / self.elems_per_word).sum())
        st.sram_reads["act"] += words * cfg.horiz_pes
        st.sram_reads["act_mask"] += cfg.vert_lanes * cfg.horiz_pes
        st.regfile_writes += words * cfg.horiz_pes
        return acc

    def _vvadd(self, out_dim: int, written):
        # one fused sweep over the output elements: bias + intermediate
        # accumulate, ReLU, compact writeback (and the h+g combine on the
        # backward pass), paced by the activation word width and banking
        cfg = self.cfg
        cycles = math.ceil(out_dim / (self.elems_per_word * cfg.act_banks))
        self.stats.total_cycles += cycles
        self.stats.vvadd_cycles += cycles
        self.stats.idle += cycles
        for out in written:
            words = math.ceil(out.nnz / self.elems_per_word)
            self.stats.sram_writes["act"] += words
            self.stats.sram_writes["act_mask"] += 1

    def _direction_timestep(self, w_x, w_h, bias, x_t: ActVector,
                            state: ActVector, bits: int):
        theta = self.cfg.predication
        acc_h = self._matvec(w_h, state)
        hid = combine_accumulators(acc_h, w_h.quant, state.quant)
        skip = None
        keep = None
        if theta is not None:
            skip = hid < theta
            keep = ~skip
            self.stats.skipped_columns += int(skip.sum())
        acc_x = self._matvec(w_x, x_t, keep=keep)
        inp = combine_accumulators(acc_x, w_x.quant, x_t.quant)
        return finish_timestep(hid, inp, bias, bits, skip)

    def run(self):
        net, cfg = self.net, self.cfg
        st = self.stats
        bidir = net.direction == "bidirectional"
        acts = list(self.utt.inputs)
        bpc = cfg.dram_bytes_per_cycle

        # weight double buffering: while one pass computes, the next pass's
        # chunk streams in; only the shortfall is exposed as stall cycles.
        chunks = []
        for layer in net.layers:
            chunks.append(_chunk_bits((layer.w_x, layer.w_h), cfg))
            if bidir:
                chunks.append(_chunk_bits((layer.v_x, layer.v_h), cfg))
        for bits_ in chunks:
            st.dram_bytes += bits_ / 8.0
        st.weight_load_cycles = int(sum(
            math.ceil(b / 8.0 / bpc) for b in chunks))
        pending = [math.ceil(b / 8.0 / bpc) for b in chunks[1:]]

        onchip = cfg.onchip_act_timesteps
        for x in acts[:onchip]:
            st.dram_bytes += _act_stream_bits(x) / 8.0

        outputs = None
        pass_idx = 0
        self._last_step_cycles = 0
        for layer in net.layers:
            bits = layer.act_bits
            h_list = []
            pass_start = st.total_cycles
            state = ActVector.zeros(layer.hidden, bits)
            for t, x_t in enumerate(acts):
                t0 = st.total_cycles
                state = self._direction_timestep(layer.w_x, layer.w_h,
                                                 layer.bias_fwd, x_t, state,
                                                 bits)
                self._vvadd(layer.hidden, [state])
                h_list.append(state)
                self._stream_act(x_t, t)
                self._last_step_cycles = st.total_cycles - t0
            self._expose_weight_load(pending, pass_idx,
                                     st.total_cycles - pass_start)
            pass_idx += 1

            if bidir:
                g_list = [None] * len(acts)
                pass_start = st.total_cycles
                state = ActVector.zeros(layer.hidden, bits)
                for t in range(len(acts) - 1, -1, -1):
                    t0 = st.total_cycles
                    state = self._direction_timestep(layer.v_x, layer.v_h,
                                                     layer.bias_bwd, acts[t],
                                                     state, bits)
                    g_list[t] = state
                    y = encode_acts(h_list[t].dequantize()
                                    + state.dequantize(), bits)
                    self._vvadd(layer.hidden, [state, y])
                    self._stream_act(acts[t], t)
                    self._last_step_cycles = st.total_cycles - t0
                outputs = [encode_acts(h.dequantize() + g.dequantize(), bits)
                           for h, g in zip(h_list, g_list)]
                self._expose_weight_load(pending, pass_idx,
                                         st.total_cycles - pass_start)
                pass_idx += 1
            else:
                outputs = h_list
            acts = outputs

        st.check_accounting()
        if cfg.predication is None \
                and st.mac_count != st.work_mask_macs:
            raise SimulationIntegrityError(
                f"executed MACs {st.mac_count} != work-mask popcount "
                f"{st.work_mask_macs}")
        return outputs, st

    def _stream_act(self, x: ActVector, t: int):
        # the fetch overlaps the previous timestep's compute, whichever
        # pass that timestep belonged to
        if t < self.cfg.onchip_act_timesteps:
            return
        st = self.stats
        bits = _act_stream_bits(x)
        st.dram_bytes += bits / 8.0
        cycles = math.ceil(bits / 8.0 / self.cfg.dram_bytes_per_cycle)
        exposed = max(0, cycles - self._last_step_cycles)
        st.act_load_exposed += exposed
        st.total_cycles += exposed
        st.idle += exposed

    def _expose_weight_load(self, pending, pass_idx, pass_cycles):
        if pass_idx >= len(pending):
            return
        st = self.stats
        exposed = max(0, pending[pass_idx] - pass_cycles)
        st.weight_load_exposed += exposed
        st.total_cycles += exposed
        st.idle += exposed


def simulate_network(net: RnnNetwork, utt: Utterance, cfg: AcceleratorConfig):
    """Run the whole network; returns (outputs, SimStats).

    Outputs are bit-identical to the golden model when predication is off,
    for every topology, queue depth, bank count, and balancing mode.
    """
    if utt.dim != net.input_dim:
        raise DimensionError(
            f"utterance dim {utt.dim} != network input dim {net.input_dim}")
    return _NetworkRun(net, utt, cfg).run()
