"""Canned experiments: single runs, sweeps, Pareto fronts, scaling studies.

Desk scaling: trend experiments run short utterances as stand-ins for the
provisioning-point workload (333 timesteps of speech).  A short run would
expose weight-transfer cycles that a full-length pass hides entirely, so
experiment configs scale the modeled DRAM bandwidth by onchip/T whenever
T falls below the on-chip activation window.  Double-buffering behavior
itself is studied separately at true bandwidth.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cost import DEFAULT_COSTS, UnitCosts, cost_masr
from .errors import LanesimError
from .rnn import RnnNetwork, Utterance, forward_network, generate_synthetic
from .sim import (
    TABLE_TOPOLOGIES,
    AcceleratorConfig,
    canonical_config,
    cycle_breakdown,
    partition,
    simulate_network,
    validate_config,
)

DEFAULT_DRAM_BYTES_PER_CYCLE = 25.6


def desk_scaled_bandwidth(timesteps: int, onchip: int = 333,
                          base: float = DEFAULT_DRAM_BYTES_PER_CYCLE) -> float:
    """Bandwidth making a T-step run overlap like a full-length utterance."""
    if timesteps >= onchip:
        return base
    return base * onchip / max(1, timesteps)


def output_checksum(outputs) -> str:
    h = hashlib.sha256()
    for v in outputs:
        h.update(np.ascontiguousarray(v.dense_codes()).tobytes())
        h.update(np.float64(v.quant.s_pos).tobytes())
        h.update(np.float64(v.quant.s_neg).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class ParetoPoint:
    config_id: str
    cycles: int
    energy_units: float
    area_units: float
    dominated: bool


def run_simulation(net: RnnNetwork, utt: Utterance, cfg: AcceleratorConfig,
                   costs: UnitCosts = DEFAULT_COSTS,
                   check_golden: bool = True) -> dict:
    """One simulation plus cost accounting, flattened to a report row."""
    cfg = validate_config(cfg)
    part = partition(net, cfg)
    outputs, stats = simulate_network(net, utt, cfg)
    frac = cycle_breakdown(stats)
    cost = cost_masr(stats, cfg, net, costs, part)
    row = {
        "config_id": cfg.config_id(),
        "name": cfg.name,
        "horiz_lanes": cfg.horiz_lanes,
        "vert_lanes": cfg.vert_lanes,
        "horiz_pes": cfg.horiz_pes,
        "lanes": cfg.lanes,
        "queue_depth": cfg.queue_depth,
        "act_banks": cfg.act_banks,
        "load_balance": cfg.load_balance,
        "predication": "" if cfg.predication is None else cfg.predication,
        "seed": cfg.seed,
        "status": "ok",
        "error": "",
        "total_cycles": stats.total_cycles,
        "mac_count": stats.mac_count,
        "work_mask_macs": stats.work_mask_macs,
        "utilization": stats.utilization,
        "vvadd_cycles": stats.vvadd_cycles,
        "weight_load_exposed": stats.weight_load_exposed,
        "act_load_exposed": stats.act_load_exposed,
        "relocated_macs": stats.relocated_macs,
        "skipped_columns": stats.skipped_columns,
        "dram_bytes": stats.dram_bytes,
        "per_lane_weight_kb": part.per_lane_weight_kb,
        "per_lane_mask_kb": part.per_lane_mask_kb,
        "energy_units": cost.energy_total,
        "area_units": cost.area_total,
        "power_units": cost.power,
    }
    for k, v in frac.items():
        row[f"frac_{k}"] = v
    for cat, v in sorted(cost.energy.items()):
        row[f"energy_{cat}"] = v
    for cat, v in sorted(cost.area.items()):
        row[f"area_{cat}"] = v
    if check_golden:
        golden = forward_network(net, utt, theta=cfg.predication)
        row["golden_match"] = output_checksum(golden.outputs) \
            == output_checksum(outputs)
        row["output_checksum"] = output_checksum(outputs)
    return row


def _sweep_task(args):
    net, utt, cfg, costs = args
    try:
        return run_simulation(net, utt, cfg, costs)
    except LanesimError as exc:
        return {"config_id": cfg.config_id(), "name": cfg.name,
                "status": "error", "error": str(exc)}


def worker_count(requested: int | None = None) -> int:
    if requested is not None and requested > 0:
        return requested
    env = os.environ.get("LANESIM_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def sweep(net: RnnNetwork, utt: Utterance, configs,
          costs: UnitCosts = DEFAULT_COSTS, workers: int | None = None):
    """Run every config; failures land in their row, the sweep continues.

    Rows come back sorted by config id, so parallel execution order never
    shows in the output.
    """
    configs = list(configs)
    tasks = [(net, utt, cfg, costs) for cfg in configs]
    n = worker_count(workers)
    if n <= 1 or len(configs) <= 1:
        rows = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    return sorted(rows, key=lambda r: r["config_id"])


def topology_set(max_lanes: int = 1024):
    """Every (h, v, p) with h*v a power of two up to max_lanes, dims <= 32,
    p dividing h."""
    out = []
    total = 1
    while total <= max_lanes:
        h = 1
        while h <= min(32, total):
            v = total // h
            if h * v == total and v <= 32:
                p = 1
                while p <= h:
                    if h % p == 0:
                        out.append((h, v, p))
                    p *= 2
            h *= 2
        total *= 2
    return out


def pareto_front(rows, x_key: str = "total_cycles",
                 y_key: str = "energy_units"):
    """Standard non-domination over two minimized objectives."""
    ok = [r for r in rows if r.get("status") == "ok"]
    points = []
    for r in ok:
        dominated = any(
            (o[x_key] <= r[x_key] and o[y_key] <= r[y_key])
            and (o[x_key] < r[x_key] or o[y_key] < r[y_key])
            for o in ok)
        points.append(ParetoPoint(config_id=r["config_id"],
                                  cycles=int(r["total_cycles"]),
                                  energy_units=float(r["energy_units"]),
                                  area_units=float(r["area_units"]),
                                  dominated=dominated))
    return points


def standard_trend_config(lanes: int, timesteps: int,
                          **overrides) -> AcceleratorConfig:
    """Canonical topology with desk-scaled bandwidth for trend runs."""
    overrides.setdefault("dram_bytes_per_cycle",
                         desk_scaled_bandwidth(timesteps))
    return canonical_config(lanes, **overrides)


def sparsity_scaling_experiment(hidden_sizes=(1024, 3072),
                                nz_values=(0.10, 0.25, 0.50),
                                lanes: int = 256, timesteps: int = 4,
                                seed: int = 77, workers: int | None = None):
    """Sparse-vs-dense speedup at equal model shape (one bidirectional
    layer), on the energy-optimal topology with banking and vertical
    balancing enabled."""
    cfg_kw = dict(act_banks=8, load_balance="vertical",
                  dram_bytes_per_cycle=desk_scaled_bandwidth(timesteps))
    rows = []
    for hidden in hidden_sizes:
        dense_net, dense_utt = generate_synthetic(
            hidden, 1, 1.0, 1.0, input_nz=1.0, seed=seed,
            timesteps=timesteps)
        cfg = canonical_config(lanes, **cfg_kw)
        _, dense_stats = simulate_network(dense_net, dense_utt, cfg)
        for nz in nz_values:
            if nz >= 1.0:
                sparse_stats = dense_stats
            else:
                net, utt = generate_synthetic(hidden, 1, nz, nz, input_nz=nz,
                                              seed=seed, timesteps=timesteps)
                _, sparse_stats = simulate_network(net, utt, cfg)
            rows.append({
                "hidden": hidden,
                "nz": nz,
                "lanes": lanes,
                "dense_cycles": dense_stats.total_cycles,
                "sparse_cycles": sparse_stats.total_cycles,
                "speedup": dense_stats.total_cycles
                / sparse_stats.total_cycles,
            })
    return rows


def table4_configs(timesteps: int, **overrides):
    return [standard_trend_config(lanes, timesteps, **overrides)
            for lanes in TABLE_TOPOLOGIES]
