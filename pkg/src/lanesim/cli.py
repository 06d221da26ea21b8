"""Command-line driver for single runs, sweeps, and the scaling studies.

Exit codes: 0 success, 2 configuration/validation error, 3 I/O error,
4 simulation-integrity error (an internal inconsistency, i.e. a bug).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import experiments, reports
from .cost import DEFAULT_COSTS, UnitCosts, compare, cost_csr_baseline, cost_masr
from .errors import (
    ConfigError,
    LanesimError,
    ReportError,
    SimulationIntegrityError,
    StructureError,
)
from .model_io import load_network, save_network
from .rnn import generate_synthetic, generate_utterance, standard_workload
from .sim import (
    TABLE_TOPOLOGIES,
    AcceleratorConfig,
    canonical_config,
    validate_config,
)
from .sparse import metadata_footprint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INTEGRITY = 4

CONFIG_FIELDS = ("horiz_lanes", "vert_lanes", "horiz_pes", "queue_depth",
                 "act_banks", "act_word_bits", "weight_word_bits",
                 "load_balance", "dup_fraction", "predication",
                 "dram_bytes_per_cycle", "onchip_act_timesteps",
                 "weight_sram_kb_per_lane", "mask_sram_kb_per_lane",
                 "act_sram_kb", "seed")


def _parse_synthetic(spec: str) -> dict:
    """Parse 'hidden=800,layers=5,weight_nz=0.33,act_nz=0.2[,...]'."""
    out = {}
    for part in spec.split(","):
        if not part:
            continue
        key, _, val = part.partition("=")
        key = key.strip()
        if key in ("hidden", "layers", "timesteps", "seed", "input_dim",
                   "bits"):
            out[key] = int(val)
        elif key in ("weight_nz", "act_nz", "input_nz", "recur_neg_bias",
                     "dormant_fraction"):
            out[key] = float(val)
        elif key == "direction":
            out[key] = val
        else:
            raise ConfigError([f"unknown synthetic field {key!r}"])
    return out


def _load_workload(args):
    if getattr(args, "model", None):
        try:
            net, utt = load_network(args.model)
        except FileNotFoundError as exc:
            raise ReportError(f"model file not found: {args.model}") from exc
        if utt is None or getattr(args, "timesteps", None):
            t = args.timesteps or 16
            utt = generate_utterance(
                net.input_dim, t,
                input_nz=float(net.meta.get("input_nz", 0.4)),
                seed=args.seed if args.seed is not None else 0)
        return net, utt
    if getattr(args, "synthetic", None):
        kw = _parse_synthetic(args.synthetic)
        kw.setdefault("seed", args.seed if args.seed is not None else 0)
        if getattr(args, "timesteps", None):
            kw["timesteps"] = args.timesteps
        return generate_synthetic(**kw)
    # the benchmark everything in the docs refers to
    return standard_workload(seed=args.seed if args.seed is not None else 20,
                             timesteps=args.timesteps or 16)


def _build_config(args) -> AcceleratorConfig:
    """Config file first, then flags on top (flags win)."""
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ReportError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config parse error: {exc}"]) from exc
        unknown = set(data) - set(CONFIG_FIELDS)
        if unknown:
            raise ConfigError([f"unknown config field {k!r}"
                               for k in sorted(unknown)])
        values.update(data)
    if getattr(args, "lanes", None):
        lanes = int(args.lanes)
        if lanes not in TABLE_TOPOLOGIES:
            raise ConfigError([f"no canonical topology for {lanes} lanes; "
                               "give horiz/vert/pes explicitly"])
        h, v, p = TABLE_TOPOLOGIES[lanes]
        values.update(horiz_lanes=h, vert_lanes=v, horiz_pes=p)
    for field in CONFIG_FIELDS:
        flag = getattr(args, field, None)
        if flag is not None:
            values[field] = flag
    if args.seed is not None:
        values["seed"] = args.seed
    if getattr(args, "desk_scale", False):
        t = args.timesteps or 16
        values.setdefault("dram_bytes_per_cycle",
                          experiments.desk_scaled_bandwidth(t))
    return validate_config(AcceleratorConfig(**values))


def _add_workload_args(p):
    p.add_argument("--model", help="model file (.npz)")
    p.add_argument("--synthetic",
                   help="synthetic spec, e.g. hidden=800,layers=5,"
                        "weight_nz=0.33,act_nz=0.2")
    p.add_argument("--timesteps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)


def _add_config_args(p):
    p.add_argument("--config", help="accelerator config file (JSON)")
    p.add_argument("--lanes", type=int,
                   help="canonical topology by total lane count")
    p.add_argument("--horiz-lanes", dest="horiz_lanes", type=int)
    p.add_argument("--vert-lanes", dest="vert_lanes", type=int)
    p.add_argument("--horiz-pes", dest="horiz_pes", type=int)
    p.add_argument("--queue-depth", dest="queue_depth", type=int)
    p.add_argument("--act-banks", dest="act_banks", type=int)
    p.add_argument("--load-balance", dest="load_balance",
                   choices=("none", "horizontal", "vertical", "both"))
    p.add_argument("--dup-fraction", dest="dup_fraction", type=float)
    p.add_argument("--predication", dest="predication", type=float)
    p.add_argument("--dram-bytes-per-cycle", dest="dram_bytes_per_cycle",
                   type=float)
    p.add_argument("--onchip-act-timesteps", dest="onchip_act_timesteps",
                   type=int)
    p.add_argument("--desk-scale", dest="desk_scale", action="store_true",
                   help="scale bandwidth as a full-length-utterance proxy")
    p.add_argument("--unit-costs", dest="unit_costs",
                   help="unit-cost override file (JSON)")


def _costs(args) -> UnitCosts:
    if getattr(args, "unit_costs", None):
        return UnitCosts.from_file(args.unit_costs)
    return DEFAULT_COSTS


def _int_list(text: str):
    return [int(x) for x in text.split(",") if x]


def _float_list(text: str):
    return [float(x) for x in text.split(",") if x]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    net, utt = _load_workload(args)
    cfg = _build_config(args)
    row = experiments.run_simulation(net, utt, cfg, _costs(args))
    out = reports.ensure_dir(args.out)
    reports.write_json(os.path.join(out, "run.json"),
                       {"kind": "run", "row": row})
    reports.write_table(os.path.join(out, "run.csv"), [row], kind="run")
    if args.figures:
        table = reports.breakdown_long_table([row])
        reports.write_table(os.path.join(out, "breakdown.csv"), table,
                            kind="breakdown")
        reports.fig_fraction_stack(table, "config_id",
                                   os.path.join(out, "breakdown.png"))
    print(f"{row['config_id']}: cycles={row['total_cycles']} "
          f"util={row['utilization']:.3f} energy={row['energy_units']:.4g} "
          f"golden_match={row['golden_match']}")
    if not row["golden_match"]:
        raise SimulationIntegrityError("simulator diverged from golden model")
    return EXIT_OK


def _sweep_configs(args):
    timesteps = args.timesteps or 16
    if args.topologies == "table":
        topos = [TABLE_TOPOLOGIES[l] for l in sorted(TABLE_TOPOLOGIES)]
    elif args.topologies == "all":
        topos = experiments.topology_set(args.max_lanes)
    else:
        topos = []
        for item in args.topologies.split(";"):
            h, v, p = _int_list(item)
            topos.append((h, v, p))
    base = {}
    if args.desk_scale:
        base["dram_bytes_per_cycle"] = \
            experiments.desk_scaled_bandwidth(timesteps)
    cfgs = []
    for h, v, p in topos:
        for q in _int_list(args.queue_depths):
            for b in _int_list(args.banks):
                for mode in args.balance.split(","):
                    cfgs.append(validate_config(AcceleratorConfig(
                        horiz_lanes=h, vert_lanes=v, horiz_pes=p,
                        queue_depth=q, act_banks=b, load_balance=mode,
                        seed=args.seed if args.seed is not None else 0,
                        **base)))
    return cfgs


def cmd_sweep(args) -> int:
    net, utt = _load_workload(args)
    cfgs = _sweep_configs(args)
    rows = experiments.sweep(net, utt, cfgs, _costs(args),
                             workers=args.workers)
    out = reports.ensure_dir(args.out)
    reports.write_table(os.path.join(out, "sweep.csv"), rows, kind="sweep")
    for y_attr, name in (("energy_units", "pareto_energy"),
                         ("area_units", "pareto_area")):
        points = experiments.pareto_front(rows, "total_cycles", y_attr)
        prow = [{"config_id": p.config_id, "cycles": p.cycles,
                 "energy_units": p.energy_units, "area_units": p.area_units,
                 "dominated": p.dominated} for p in points]
        reports.write_table(os.path.join(out, f"{name}.csv"), prow,
                            kind=name)
        if args.figures:
            reports.fig_pareto(points, os.path.join(out, f"{name}.png"),
                               y_attr=y_attr,
                               y_label=y_attr.replace("_", " "))
    _emit_trend_tables(rows, out, figures=args.figures)
    failures = [r for r in rows if r.get("status") != "ok"]
    print(f"sweep: {len(rows)} configs, {len(failures)} failed -> {out}")
    return EXIT_OK


def _emit_trend_tables(rows, out, figures=True):
    ok = [r for r in rows if r.get("status") == "ok"]
    if not ok:
        return
    reports.write_table(os.path.join(out, "breakdown.csv"),
                        reports.breakdown_long_table(ok), kind="breakdown")
    reports.write_table(os.path.join(out, "cost_energy.csv"),
                        reports.cost_breakdown_table(ok, "energy"),
                        kind="cost_energy")
    reports.write_table(os.path.join(out, "cost_area.csv"),
                        reports.cost_breakdown_table(ok, "area"),
                        kind="cost_area")
    if len({r["act_banks"] for r in ok}) > 1:
        fixed = [r for r in ok
                 if r["queue_depth"] == ok[0]["queue_depth"]
                 and r["load_balance"] == ok[0]["load_balance"]]
        table = reports.banking_table(fixed)
        reports.write_table(os.path.join(out, "fig_banking.csv"), table,
                            kind="banking", columns=("banks", "category",
                                                     "fraction"))
        if figures:
            reports.fig_fraction_stack(table, "banks",
                                       os.path.join(out, "fig_banking.png"),
                                       title="activation SRAM banking")
    if len({r["queue_depth"] for r in ok}) > 1:
        fixed = [r for r in ok if r["act_banks"] == ok[0]["act_banks"]
                 and r["load_balance"] == ok[0]["load_balance"]]
        table = reports.queue_table(fixed)
        reports.write_table(os.path.join(out, "fig_queue.csv"), table,
                            kind="queue", columns=("queue_depth", "category",
                                                   "fraction"))
        if figures:
            reports.fig_fraction_stack(table, "queue_depth",
                                       os.path.join(out, "fig_queue.png"),
                                       title="back-end queue depth")
    if len({r["load_balance"] for r in ok}) > 1:
        table = reports.balance_table(ok)
        reports.write_table(os.path.join(out, "fig_balance.csv"), table,
                            kind="balance", columns=("lanes", "balance",
                                                     "utilization"))
        if figures:
            reports.fig_utilization(table,
                                    os.path.join(out, "fig_balance.png"))


def cmd_scale(args) -> int:
    rows = experiments.sparsity_scaling_experiment(
        hidden_sizes=_int_list(args.hidden),
        nz_values=_float_list(args.nz),
        lanes=args.lanes or 256,
        timesteps=args.timesteps or 4,
        seed=args.seed if args.seed is not None else 77)
    out = reports.ensure_dir(args.out)
    reports.write_table(os.path.join(out, "scaling.csv"), rows, kind="scaling",
                        columns=("hidden", "nz", "lanes", "dense_cycles",
                                 "sparse_cycles", "speedup"))
    if args.figures:
        reports.fig_scaling(rows, os.path.join(out, "scaling.png"))
    for r in rows:
        print(f"hidden={r['hidden']} nz={r['nz']}: "
              f"speedup={r['speedup']:.1f}x")
    return EXIT_OK


def cmd_compare_enc(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    rows_n, cols_n = args.rows, args.cols
    keep = math.ceil(args.nz * rows_n * cols_n)
    flat = np.zeros(rows_n * cols_n)
    idx = rng.choice(rows_n * cols_n, size=keep, replace=False)
    flat[idx] = rng.uniform(0.1, 1.0, size=keep)
    from .sparse import CompactMatrix
    matrix = CompactMatrix.from_dense(flat.reshape(rows_n, cols_n))

    enc_rows = []
    for parts in _int_list(args.partitions):
        for fmt in ("bitmask", "csr", "runlength"):
            fp = metadata_footprint(fmt, matrix, parts,
                                    value_bits=args.value_bits,
                                    step_bits=args.step_bits)
            enc_rows.append({
                "format": fmt, "num_partitions": parts,
                "value_bits": fp.value_bits, "mask_bits": fp.mask_bits,
                "row_offset_bits": fp.row_offset_bits,
                "column_index_bits": fp.column_index_bits,
                "metadata_bits": fp.metadata_bits,
                "total_bits": fp.total_bits,
            })
    out = reports.ensure_dir(args.out)
    reports.write_table(os.path.join(out, "encoding.csv"), enc_rows,
                        kind="encoding")
    if args.figures:
        reports.fig_encoding(enc_rows, os.path.join(out, "encoding.png"))

    if args.with_costs:
        net, utt = _load_workload(args)
        costs = _costs(args)
        comp_rows = []
        t = args.timesteps or 16
        for lanes in _int_list(args.partitions):
            if lanes not in TABLE_TOPOLOGIES:
                continue
            cfg = experiments.standard_trend_config(lanes, t)
            masr_row = experiments.run_simulation(net, utt, cfg, costs,
                                                  check_golden=False)
            from .sim import partition, simulate_network
            _, stats = simulate_network(net, utt, cfg)
            masr = cost_masr(stats, cfg, net, costs)
            eie = cost_csr_baseline(net, lanes, utt.timesteps, costs, "eie")
            ese = cost_csr_baseline(net, lanes, utt.timesteps, costs, "ese")
            for d, label in ((masr, "masr"), (eie, "eie"), (ese, "ese")):
                comp_rows.append({
                    "accel": label, "lanes": lanes,
                    "area_units": d.area_total,
                    "energy_units": d.energy_total,
                    "meta_act_area": d.metadata_activation_area(),
                    "area_vs_masr": d.area_total / masr.area_total,
                    "energy_vs_masr": d.energy_total / masr.energy_total,
                })
        reports.write_table(os.path.join(out, "comparison.csv"), comp_rows,
                            kind="comparison")
        if args.figures:
            reports.fig_baseline_ratio(comp_rows, "area_vs_masr",
                                       os.path.join(out, "comparison_area.png"),
                                       "area normalized to this design")
            reports.fig_baseline_ratio(comp_rows, "energy_vs_masr",
                                       os.path.join(out,
                                                    "comparison_energy.png"),
                                       "energy normalized to this design")
    print(f"compare-enc: {len(enc_rows)} rows -> {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    kind, rows = reports.read_table(args.input)
    out = reports.ensure_dir(args.out)
    if kind == "sweep":
        for y_attr, name in (("energy_units", "pareto_energy"),
                             ("area_units", "pareto_area")):
            points = experiments.pareto_front(rows, "total_cycles", y_attr)
            if args.figures:
                reports.fig_pareto(points, os.path.join(out, f"{name}.png"),
                                   y_attr=y_attr,
                                   y_label=y_attr.replace("_", " "))
        _emit_trend_tables(rows, out, figures=args.figures)
    elif kind == "scaling":
        if args.figures:
            reports.fig_scaling(rows, os.path.join(out, "scaling.png"))
    elif kind == "encoding":
        if args.figures:
            reports.fig_encoding(rows, os.path.join(out, "encoding.png"))
    else:
        raise ReportError(f"no report recipe for kind {kind!r}")
    print(f"report({kind}) -> {out}")
    return EXIT_OK


def cmd_make_model(args) -> int:
    kw = _parse_synthetic(args.synthetic)
    kw.setdefault("seed", args.seed if args.seed is not None else 0)
    if args.timesteps:
        kw["timesteps"] = args.timesteps
    net, utt = generate_synthetic(**kw)
    save_network(args.out, net, utt)
    print(f"wrote {args.out}: {net.name} "
          f"({len(net.layers)} layers, {net.hidden} hidden)")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanesim",
        description="Cycle-level simulator and design-space explorer for a "
                    "bitmask-sparse bidirectional-RNN accelerator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration")
    _add_workload_args(p)
    _add_config_args(p)
    p.add_argument("--out", default="out/run")
    p.add_argument("--figures", action="store_true", default=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep configurations, compute fronts")
    _add_workload_args(p)
    p.add_argument("--topologies", default="table",
                   help="'table', 'all', or 'h,v,p;h,v,p;...'")
    p.add_argument("--max-lanes", type=int, default=1024)
    p.add_argument("--queue-depths", default="1")
    p.add_argument("--banks", default="1")
    p.add_argument("--balance", default="none")
    p.add_argument("--desk-scale", action="store_true")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--unit-costs", dest="unit_costs")
    p.add_argument("--out", default="out/sweep")
    p.add_argument("--figures", action="store_true", default=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scale", help="sparsity and size scaling study")
    p.add_argument("--hidden", default="1024,3072")
    p.add_argument("--nz", default="0.10,0.25,0.50")
    p.add_argument("--lanes", type=int, default=256)
    p.add_argument("--timesteps", type=int, default=4)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out/scale")
    p.add_argument("--figures", action="store_true", default=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("compare-enc",
                       help="encoding footprints and baseline comparison")
    p.add_argument("--rows", type=int, default=800)
    p.add_argument("--cols", type=int, default=800)
    p.add_argument("--nz", type=float, default=0.33)
    p.add_argument("--partitions", default="32,64,128,256,512")
    p.add_argument("--value-bits", dest="value_bits", type=int, default=10)
    p.add_argument("--step-bits", dest="step_bits", type=int, default=4)
    p.add_argument("--with-costs", dest="with_costs", action="store_true")
    p.add_argument("--unit-costs", dest="unit_costs")
    _add_workload_args(p)
    p.add_argument("--out", default="out/encoding")
    p.add_argument("--figures", action="store_true", default=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_compare_enc)

    p = sub.add_parser("report", help="re-derive tables/figures from a CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default="out/report")
    p.add_argument("--figures", action="store_true", default=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("make-model", help="generate and save a synthetic model")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--timesteps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="model.npz")
    p.set_defaults(func=cmd_make_model)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SimulationIntegrityError as exc:
        print(f"simulation integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (ReportError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, StructureError, LanesimError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
