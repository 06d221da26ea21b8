"""Report emission: delimited tables plus rendered figures.

Every CSV starts with a schema comment line ``# schema: lanesim/v1
kind=<kind>`` and is written with canonical column order and float
formatting, so identical inputs produce byte-identical files.  Figures are
rendered next to the tables they visualize.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ReportError

SCHEMA = "lanesim/v1"

_FRONT_COLUMNS = ("config_id", "name", "status", "error")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _column_order(rows):
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    front = [c for c in _FRONT_COLUMNS if c in cols]
    rest = sorted(c for c in cols if c not in front)
    return front + rest


def write_table(path, rows, kind: str, columns=None):
    """Write rows as CSV with an embedded schema line; returns the path."""
    rows = list(rows)
    if columns is None:
        columns = _column_order(rows)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {SCHEMA} kind={kind}\n")
            writer = csv.writer(fh)
            writer.writerow(columns)
            for r in rows:
                writer.writerow([_fmt(r.get(c, "")) for c in columns])
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return path


def read_table(path):
    """Parse a report CSV back into (kind, rows) with numbers restored."""
    try:
        with open(path, newline="") as fh:
            first = fh.readline()
            if not first.startswith("# schema: "):
                raise ReportError(f"{path} carries no schema line")
            head = first.strip().split()
            if head[2] != SCHEMA:
                raise ReportError(f"unsupported schema {head[2]!r}")
            kind = head[3].split("=", 1)[1]
            rows = []
            for record in csv.DictReader(fh):
                rows.append({k: _parse_cell(v) for k, v in record.items()})
            return kind, rows
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc}") from exc


def _parse_cell(text: str):
    if text == "":
        return ""
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        i = int(text)
        return i
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_json(path, payload: dict):
    try:
        with open(path, "w") as fh:
            json.dump({"schema": SCHEMA, **payload}, fh, sort_keys=True,
                      indent=2)
            fh.write("\n")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------------------
# Derived figure-analogue tables
# ---------------------------------------------------------------------------

_BREAKDOWN_CATS = ("mac", "frontend", "stall", "idle", "vvadd", "load")


def breakdown_long_table(rows):
    """(config, category, fraction) long format for stacked-bar plots."""
    out = []
    for r in rows:
        if r.get("status") != "ok":
            continue
        for cat in _BREAKDOWN_CATS:
            out.append({"config_id": r["config_id"], "lanes": r.get("lanes"),
                        "category": cat,
                        "fraction": r.get(f"frac_{cat}", 0.0)})
    return out


def banking_table(rows):
    """(banks, category, fraction) across a bank sweep."""
    out = []
    for r in sorted((r for r in rows if r.get("status") == "ok"),
                    key=lambda r: r["act_banks"]):
        for cat in _BREAKDOWN_CATS:
            out.append({"banks": r["act_banks"], "category": cat,
                        "fraction": r.get(f"frac_{cat}", 0.0)})
    return out


def queue_table(rows):
    out = []
    for r in sorted((r for r in rows if r.get("status") == "ok"),
                    key=lambda r: r["queue_depth"]):
        for cat in _BREAKDOWN_CATS:
            out.append({"queue_depth": r["queue_depth"], "category": cat,
                        "fraction": r.get(f"frac_{cat}", 0.0)})
    return out


def balance_table(rows):
    out = []
    for r in sorted((r for r in rows if r.get("status") == "ok"),
                    key=lambda r: (r["lanes"], r["load_balance"])):
        out.append({"lanes": r["lanes"], "balance": r["load_balance"],
                    "utilization": r["utilization"]})
    return out


def cost_breakdown_table(rows, which: str = "energy"):
    out = []
    prefix = f"{which}_"
    for r in rows:
        if r.get("status") != "ok":
            continue
        for k, v in sorted(r.items()):
            if k.startswith(prefix) and k not in (f"{which}_units",):
                out.append({"config_id": r["config_id"],
                            "lanes": r.get("lanes"),
                            "resource": k[len(prefix):],
                            "units": v})
    return out


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def fig_pareto(points, path, y_attr: str = "energy_units",
               y_label: str = "energy (units)"):
    fig, ax = plt.subplots(figsize=(5, 4))
    xs = [p.cycles for p in points]
    ys = [getattr(p, y_attr) for p in points]
    dom = [p.dominated for p in points]
    ax.scatter([x for x, d in zip(xs, dom) if d],
               [y for y, d in zip(ys, dom) if d],
               s=18, c="lightgray", label="dominated")
    front = sorted(((x, y) for x, y, d in zip(xs, ys, dom) if not d))
    if front:
        fx, fy = zip(*front)
        ax.plot(fx, fy, "o-", color="tab:red", label="front")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("cycles")
    ax.set_ylabel(y_label)
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def fig_fraction_stack(table, x_key, path, title=""):
    xs = sorted({row[x_key] for row in table})
    fig, ax = plt.subplots(figsize=(5.5, 4))
    bottom = np.zeros(len(xs))
    for cat in _BREAKDOWN_CATS:
        vals = []
        for x in xs:
            v = [row["fraction"] for row in table
                 if row[x_key] == x and row["category"] == cat]
            vals.append(v[0] if v else 0.0)
        vals = np.asarray(vals, dtype=float)
        ax.bar([str(x) for x in xs], vals, bottom=bottom, label=cat)
        bottom += vals
    ax.set_xlabel(x_key)
    ax.set_ylabel("fraction of cycles")
    ax.set_ylim(0, 1.05)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8, ncol=3)
    return _save(fig, path)


def fig_utilization(table, path):
    lanes = sorted({row["lanes"] for row in table})
    modes = sorted({row["balance"] for row in table})
    width = 0.8 / max(1, len(modes))
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for i, mode in enumerate(modes):
        xs, ys = [], []
        for j, ln in enumerate(lanes):
            v = [row["utilization"] for row in table
                 if row["lanes"] == ln and row["balance"] == mode]
            if v:
                xs.append(j + i * width)
                ys.append(v[0])
        ax.bar(xs, ys, width=width, label=mode)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(lanes))])
    ax.set_xticklabels([f"x{ln}" for ln in lanes])
    ax.set_ylabel("MAC utilization")
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)


def fig_scaling(rows, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    for hidden in sorted({r["hidden"] for r in rows}):
        pts = sorted((r["nz"], r["speedup"]) for r in rows
                     if r["hidden"] == hidden)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-",
                label=f"hidden={hidden}")
    ax.set_xlabel("nonzero ratio (weights and activations)")
    ax.set_ylabel("sparse-vs-dense speedup")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def fig_encoding(rows, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    for fmt in sorted({r["format"] for r in rows}):
        pts = sorted((r["num_partitions"], r["metadata_bits"]) for r in rows
                     if r["format"] == fmt)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=fmt)
    ax.set_xlabel("partitions (parallel MACs/PEs)")
    ax.set_ylabel("metadata bits")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def fig_baseline_ratio(rows, key, path, ylabel):
    fig, ax = plt.subplots(figsize=(5, 4))
    for label in sorted({r["accel"] for r in rows}):
        pts = sorted((r["lanes"], r[key]) for r in rows
                     if r["accel"] == label)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=label)
    ax.set_xlabel("parallel MACs/lanes")
    ax.set_xscale("log", base=2)
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
