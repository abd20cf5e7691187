"""Canonical JSON (sorted keys, six-decimal floats) and plain-text tables."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def _encode(value, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            raise ValueError(f"cannot serialize non-finite float {v}")
        text = f"{v:.6f}"
        return "0.000000" if text == "-0.000000" else text
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, np.ndarray):
        return _encode(value.tolist(), indent, level)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(value[k], indent, level + 1)}"
                 for k in sorted(value, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + "\n" + close + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def canonical_json(value, indent: int = 2) -> str:
    return _encode(value, indent, 0) + "\n"


LEVEL_COLUMNS = ("audio", "visual", "av", "type_at_av", "event_at_av")
HEADER = ("A", "V", "AV", "Type", "Event")


def _metric_row(label: str, report: dict) -> str:
    cells = [f"{100 * report[level][k]:6.2f}" for level in ("segment", "event") for k in LEVEL_COLUMNS]
    return f"{label:<32} " + " ".join(cells)


def render_table(results: dict) -> str:
    """Plain-text rendering of an evaluation, comparison or ablation result."""
    head = f"{'':<32} " + " ".join(f"{'seg-' + h:>6}" for h in HEADER) + " " + \
        " ".join(f"{'evt-' + h:>6}" for h in HEADER)
    lines = []
    kind = results.get("kind")
    if kind == "evaluation":
        lines.append(head)
        for subset in ("all", "overlapping", "non-overlapping"):
            rep = results["metrics"][subset]
            lines.append(_metric_row(f"{subset} (n={rep['video_count']})", rep))
    elif kind in ("comparison", "ablation"):
        lines.append(head)
        for name in results["order"]:
            entry = results["results"][name]
            for subset in ("all", "overlapping", "non-overlapping"):
                lines.append(_metric_row(f"{name} [{subset}]", entry["mean"][subset]))
        lines.append("")
        lines.append("event-level average (mean of A, V, AV, Type@AV, Event@AV), subset: all / overlapping")
        for name in results["order"]:
            ea = results["results"][name]["event_average"]
            lines.append(f"  {name:<30} {100 * ea['all']:6.2f} / {100 * ea['overlapping']:6.2f}")
    elif kind == "training":
        lines.append(f"{'epoch':>5} {'total':>10} {'basic':>10} {'avss':>10} {'sim_mse':>10} {'val_type':>10}")
        for e in results["log"]:
            lines.append(
                f"{e['epoch']:>5} {e['total']:10.6f} {e['basic']:10.6f} {e['avss']:10.6f} "
                f"{e['sim_mse']:10.6f} {e['val_type_at_av']:10.6f}"
            )
    else:
        lines.append(canonical_json(results).rstrip())
    return "\n".join(lines) + "\n"


def emit_report(results: dict, path) -> Path:
    """Write canonical JSON to ``path`` and a text table next to it (``.txt``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(results))
    path.with_suffix(".txt").write_text(render_table(results))
    return path
