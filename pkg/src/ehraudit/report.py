"""Deterministic report rendering: JSON, CSV extracts, and SVG plots.

Rendering is a pure function of the report object: stable key order, floats
rounded to 6 significant digits, no timestamps. Run metadata that may vary
(wall-clock, host) belongs in the sidecar written by the CLI, never in
report.json, so identical runs produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Iterable

import numpy as np

from .audits import FlaggedPrompt, PerturbationCurve
from .corpus import Prompt, SensitiveCategory, tokens_to_wire
from .probe import SweepCell, sweep_to_csv

SCHEMA_VERSION = 1


def _round6(x: float) -> float:
    return float(f"{float(x):.6g}")


def to_jsonable(obj):
    """Recursively convert report objects into JSON-ready primitives."""
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, float):
        return _round6(obj)
    if isinstance(obj, (np.floating,)):
        return _round6(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, Prompt):
        setup = {"kind": obj.setup.kind}
        if obj.setup.n is not None:
            setup["n"] = obj.setup.n
        if obj.setup.strip_category is not None:
            setup["strip_category"] = obj.setup.strip_category.name
        return {
            "source_patient": obj.source_patient,
            "setup": setup,
            "tokens": tokens_to_wire(obj.tokens),
            "statics": to_jsonable(obj.statics),
        }
    if isinstance(obj, SensitiveCategory):
        return {"name": obj.name, "prefixes": list(obj.code_prefixes)}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {
            f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)
        }
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def report_to_json(report: dict) -> bytes:
    doc = {"schema_version": SCHEMA_VERSION, **to_jsonable(report)}
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# CSV extracts
# ---------------------------------------------------------------------------

T2_CSV_HEADER = (
    "sensitive_attribute,patient_prevalence,prompt,auroc,auprc,precision,recall,"
    "positive_prediction_count"
)


def t2_to_csv(t2_report: dict) -> str:
    """One row per prompt setup with the standard sensitivity column set."""
    lines = [T2_CSV_HEADER]
    name = t2_report["category"]
    for row in t2_report["rows"]:
        auroc_s = f"{row['auroc']:.6g}" if row["auroc"] is not None else ""
        auprc_s = f"{row['auprc']:.6g}" if row["auprc"] is not None else ""
        lines.append(
            f"{name},{row['prevalence']:.6g},{row['setup']},{auroc_s},{auprc_s},"
            f"{row['precision']:.6g},{row['recall']:.6g},{row['positive_count']}"
        )
    return "\n".join(lines) + "\n"


def t3_to_csv(t3_report: dict) -> str:
    cells = t3_report["cells"]
    return sweep_to_csv([c if isinstance(c, SweepCell) else SweepCell(**c) for c in cells])


# ---------------------------------------------------------------------------
# SVG plots (hand-rolled: dependency-free and byte-stable)
# ---------------------------------------------------------------------------

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 20, 30, 70


def _svg_open(title: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{title}</text>',
    ]


def _axis(parts: list, y_max: float, y_label: str):
    x0, y0, y1 = _ML, _H - _MB, _MT
    parts.append(
        f'<line x1="{x0}" y1="{y0}" x2="{_W - _MR}" y2="{y0}" stroke="black"/>'
    )
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y0 - frac * (y0 - y1)
        parts.append(
            f'<text x="{x0 - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="10" '
            f'font-family="sans-serif">{frac * y_max:.3g}</text>'
        )
    parts.append(
        f'<text x="16" y="{(y0 + y1) / 2:.1f}" font-size="11" font-family="sans-serif" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.1f})" text-anchor="middle">{y_label}</text>'
    )


def bar_chart_svg(title: str, labels: Iterable[str], values: Iterable[float],
                  y_label: str, threshold: float = None, mark_index: int = None) -> str:
    labels = list(labels)
    values = [float(v) for v in values]
    y_max = max(values + ([threshold] if threshold is not None else []) + [1e-9]) * 1.1
    parts = _svg_open(title)
    _axis(parts, y_max, y_label)
    x0, y0, y1 = _ML, _H - _MB, _MT
    span = _W - _ML - _MR
    n = max(len(values), 1)
    slot = span / n
    for i, (label, value) in enumerate(zip(labels, values)):
        h = (value / y_max) * (y0 - y1)
        bx = x0 + i * slot + 0.15 * slot
        parts.append(
            f'<rect x="{bx:.1f}" y="{y0 - h:.1f}" width="{0.7 * slot:.1f}" '
            f'height="{h:.1f}" fill="#4878a8"/>'
        )
        parts.append(
            f'<text x="{x0 + (i + 0.5) * slot:.1f}" y="{y0 + 14}" text-anchor="middle" '
            f'font-size="10" font-family="sans-serif">{label}</text>'
        )
    if threshold is not None:
        ty = y0 - (threshold / y_max) * (y0 - y1)
        parts.append(
            f'<line x1="{x0}" y1="{ty:.1f}" x2="{_W - _MR}" y2="{ty:.1f}" '
            f'stroke="#555555" stroke-dasharray="6,3"/>'
        )
    if mark_index is not None and 0 <= mark_index < len(values):
        mx = x0 + (mark_index + 0.5) * slot
        parts.append(
            f'<line x1="{mx:.1f}" y1="{y0}" x2="{mx:.1f}" y2="{y1}" '
            f'stroke="#c03030" stroke-width="1.5"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def histogram_svg(title: str, series: dict, x_label: str) -> str:
    """Overlaid step histograms; ``series`` maps name -> {edges, counts}."""
    colors = ["#4878a8", "#c03030", "#3a9a5c", "#8a56c0"]
    y_max = 1e-9
    for spec in series.values():
        if spec["counts"]:
            y_max = max(y_max, max(spec["counts"]))
    y_max *= 1.1
    xs_lo = min((s["edges"][0] for s in series.values() if s["edges"]), default=0.0)
    xs_hi = max((s["edges"][-1] for s in series.values() if s["edges"]), default=1.0)
    if xs_lo == xs_hi:
        xs_hi = xs_lo + 1.0
    parts = _svg_open(title)
    _axis(parts, y_max, "count")
    x0, y0, y1 = _ML, _H - _MB, _MT
    span = _W - _ML - _MR

    def sx(x):
        return x0 + (x - xs_lo) / (xs_hi - xs_lo) * span

    for (name, spec), color in zip(sorted(series.items()), colors):
        edges, counts = spec["edges"], spec["counts"]
        if not counts:
            continue
        pts = []
        for i, c in enumerate(counts):
            h = (c / y_max) * (y0 - y1)
            pts.append(f"{sx(edges[i]):.1f},{y0 - h:.1f}")
            pts.append(f"{sx(edges[i + 1]):.1f},{y0 - h:.1f}")
        parts.append(
            f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>'
        )
    for i, name in enumerate(sorted(series)):
        parts.append(
            f'<text x="{_W - _MR - 10}" y="{_MT + 16 + 14 * i}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif" fill="{colors[i % len(colors)]}">'
            f"{name}</text>"
        )
    parts.append(
        f'<text x="{(_ML + _W - _MR) / 2:.1f}" y="{_H - 30}" text-anchor="middle" '
        f'font-size="11" font-family="sans-serif">{x_label}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def t1_svg(t1_report: dict) -> str:
    labels, values = [], []
    for label, row in t1_report["setups"].items():
        if row["mean"] is not None:
            labels.append(label)
            values.append(row["mean"])
    return bar_chart_svg(
        "Distance to true continuation by prompt setup", labels, values, "mean distance"
    )


def t4_svg(t4_report: dict) -> str:
    return histogram_svg(
        "Membership score distributions",
        {"member": t4_report["member_hist"], "non-member": t4_report["nonmember_hist"]},
        "min-k score",
    )


def t5_svg(curve: PerturbationCurve, threshold: float) -> str:
    grid_strs = [str(v) for v in curve.grid]
    mark = grid_strs.index(str(curve.original_value)) if str(curve.original_value) in grid_strs else None
    return bar_chart_svg(
        f"Hit rate under perturbation of {curve.identifier}",
        grid_strs,
        curve.hit_rates,
        "hit rate",
        threshold=threshold,
        mark_index=mark,
    )


def t6_svg(t6_report: dict) -> str:
    totals: dict = {}
    counts: dict = {}
    for row in t6_report["rare_codes"]:
        for cat, rate in row["hit_rates"].items():
            totals[cat] = totals.get(cat, 0.0) + rate
            counts[cat] = counts.get(cat, 0) + 1
    labels = sorted(totals)
    values = [totals[c] / counts[c] for c in labels]
    return bar_chart_svg(
        "Mean sensitive hit rate from rare-code prompts", labels, values, "hit rate"
    )


# ---------------------------------------------------------------------------
# Flagged-prompt worklist round-trip
# ---------------------------------------------------------------------------

def render_report(report: dict, kind: str, out_dir) -> list:
    """Write one rendering of the report; returns the paths written.

    ``kind`` is one of ``json``, ``csv``, ``svg-bundle``. Output bytes are a
    pure function of the report object.
    """
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tests = report.get("tests", {})
    threshold = report.get("config", {}).get("sensitivity_threshold", 0.3)
    written = []

    def emit(name: str, data):
        path = out / name
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            path.write_text(data, encoding="utf-8")
        written.append(path)

    if kind == "json":
        emit("report.json", report_to_json(report))
    elif kind == "csv":
        for key, rep in sorted(tests.items()):
            if key.startswith("t2") and rep.get("rows") is not None:
                emit(f"{key}_sensitivity.csv", t2_to_csv(rep))
            if key.startswith("t3") and rep.get("cells") is not None:
                emit(f"{key}_probing.csv", t3_to_csv(rep))
    elif kind == "svg-bundle":
        for key, rep in sorted(tests.items()):
            if key.startswith("t1") and rep.get("setups"):
                emit(f"{key}_distance_by_setup.svg", t1_svg(rep))
            if key.startswith("t4") and rep.get("member_hist") is not None:
                emit(f"{key}_score_histogram.svg", t4_svg(rep))
            if key.startswith("t5"):
                for i, curve in enumerate(rep.get("curves", [])):
                    if isinstance(curve, dict):
                        curve = PerturbationCurve(**curve)
                    emit(f"{key}_perturbation_{i:02d}.svg", t5_svg(curve, threshold))
            if key.startswith("t6") and rep.get("rare_codes"):
                emit(f"{key}_subgroup_likelihood.svg", t6_svg(rep))
    else:
        raise ValueError(f"unknown rendering kind {kind!r}")
    return written


def worklist_to_jsonl(flagged: list[FlaggedPrompt]) -> str:
    lines = []
    for i, f in enumerate(flagged):
        rec = {
            "index": i,
            "prompt": to_jsonable(f.prompt),
            "category": to_jsonable(f.category),
            "hit_rate": _round6(f.hit_rate),
            "setup": f.setup_label,
            "disposition": f.disposition,
            "note": f.note,
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def worklist_from_jsonl(text: str) -> list[FlaggedPrompt]:
    from .corpus import PromptSetup, tokens_from_wire

    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        setup_obj = rec["prompt"]["setup"]
        category = SensitiveCategory(
            name=rec["category"]["name"], code_prefixes=tuple(rec["category"]["prefixes"])
        )
        setup = PromptSetup(
            kind=setup_obj["kind"],
            n=setup_obj.get("n"),
            strip_category=category if "strip_category" in setup_obj else None,
        )
        prompt = Prompt(
            source_patient=rec["prompt"]["source_patient"],
            setup=setup,
            tokens=tuple(tokens_from_wire(rec["prompt"]["tokens"])),
            statics=rec["prompt"]["statics"],
        )
        out.append(
            FlaggedPrompt(
                prompt=prompt,
                category=category,
                hit_rate=rec["hit_rate"],
                setup_label=rec["setup"],
                disposition=rec.get("disposition", "unresolved"),
                note=rec.get("note", ""),
            )
        )
    return out
