"""Geometric "A ± B%" aggregation and table rendering for run manifests."""

from __future__ import annotations

import json
import math
from collections import defaultdict

import numpy as np

from .milp import DataFormatError

TIME_FLOOR = 1e-3
MANIFEST_FORMAT = "RUN-MANIFEST-JSONL"
MANIFEST_VERSION = 1


def aggregate(values) -> tuple[float, float]:
    """``A = exp(mean ln x)`` and ``B = 100 * population std of ln x``."""
    x = np.asarray(list(values), dtype=np.float64)
    if not len(x):
        raise ValueError("aggregate of an empty list")
    if np.any(~(x > 0)):
        raise ValueError("aggregate needs positive values")
    logs = np.log(x)
    return float(math.exp(logs.mean())), float(100.0 * logs.std())


def format_ab(a: float, b: float) -> str:
    head = f"{a:.2f}" if a < 100 else f"{a:.0f}"
    return f"{head} ± {b:.0f}%"


def format_values(values, floor: float | None = None) -> str:
    vals = [max(v, floor) for v in values] if floor is not None else list(values)
    return format_ab(*aggregate(vals))


# -- manifests ----------------------------------------------------------------------

def read_manifest(path) -> tuple[dict, list[dict]]:
    header, rows = None, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if header is None:
                if obj.get("format") != MANIFEST_FORMAT or obj.get("version") != MANIFEST_VERSION:
                    raise DataFormatError(f"{path}: not a {MANIFEST_FORMAT} v{MANIFEST_VERSION} file")
                header = obj
            else:
                rows.append(obj)
    if header is None:
        raise DataFormatError(f"{path}: empty manifest")
    return header, rows


def _render(table: list[list[str]]) -> str:
    widths = [max(len(r[k]) for r in table) for k in range(len(table[0]))]
    lines = []
    for n, r in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def solve_table(rows: list[dict], baseline: str | None = None) -> str:
    """Time and Node columns per policy.

    Each learned-model line (``gnn:`` prefix) is followed by the baseline line;
    other heuristics are listed once after them.
    """
    by_policy: dict[str, list[dict]] = defaultdict(list)
    for r in rows:
        by_policy[r["policy"]].append(r)
    models = [p for p in sorted(by_policy) if p.startswith("gnn:") and p != baseline]
    others = [p for p in sorted(by_policy) if not p.startswith("gnn:") and p != baseline]
    if baseline in by_policy:
        order = [x for p in models for x in (p, baseline)] + others
        if not models:
            order.append(baseline)
    else:
        order = models + others
    table = [["policy", "time (s)", "nodes", "ok", "limit", "oom"]]
    for p in order:
        rs = by_policy[p]
        ok = [r for r in rs if r["status"] != "model_oom_guard"]
        counts = [sum(r["status"] == s for r in rs) for s in ("ok", "limit", "model_oom_guard")]
        if ok:
            t = format_values([r["solve_time_s"] for r in ok], TIME_FLOOR)
            nodes = format_values([max(1, r["node_count"]) for r in ok])
        else:
            t = nodes = "Model OOM"
        label = f"{p} (baseline)" if p == baseline else p
        table.append([label, t, nodes] + [str(c) for c in counts])
    return _render(table)


def accuracy_table(entries: list[dict]) -> str:
    """Rows are architectures, columns are losses; cells are test accuracy."""
    archs = sorted({e["arch"] for e in entries})
    losses = [l for l in ("scores", "rank", "pairwise") if any(e["loss"] == l for e in entries)]
    cell = {(e["arch"], e["loss"]): e["accuracy"] for e in entries}
    table = [["arch"] + losses]
    for a in archs:
        table.append([a] + [f"{cell[(a, l)]:.3f}" if (a, l) in cell else "-" for l in losses])
    return _render(table)


def report_manifest(path) -> str:
    header, rows = read_manifest(path)
    parts = []
    accuracy = header.get("accuracy")
    if accuracy:
        parts.append("Accuracy\n" + accuracy_table(accuracy))
    if rows:
        parts.append("Time / Nodes (A ± B%)\n" + solve_table(rows, header.get("baseline")))
    return "\n".join(parts)
