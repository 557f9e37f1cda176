"""Tabular reports recomputed from trace files alone."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Any, Mapping, Sequence

from cfrefine.core import TransitionKind
from cfrefine.harness.io import write_once
from cfrefine.harness.runner import aggregate_metrics, load_manifest, load_traces

Table = tuple[list[str], list[list[Any]]]


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    cells = [list(header)] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def run_tables(run_dir: str | Path) -> dict[str, Table]:
    """Summary, pass@k and per-round transition tables for one run."""
    manifest = load_manifest(run_dir)
    traces = load_traces(run_dir)
    max_iter = int(manifest["loop"]["max_iterations"])
    m = aggregate_metrics(traces, max_iter)
    summary = (
        ["run", "feedback", "n", "aborted", "lfr", "validity", "ss", "ppl", "mean_rounds", "gen_calls", "clf_calls"],
        [
            [
                manifest["run_id"],
                _arm(manifest["loop"]),
                m["n"],
                m["n_aborted"],
                m["lfr"],
                m["validity"],
                m["ss"],
                m["ppl"],
                m["mean_rounds"],
                m["generator_calls"],
                m["classifier_calls"],
            ]
        ],
    )
    pass_k = (["k", "pass_at_k"], [[int(k), v] for k, v in m["pass_at_k"].items()])
    kinds = [k.value for k in TransitionKind]
    transitions = (["round"] + kinds, [[i] + [row[k] for k in kinds] for i, row in enumerate(m["transitions"])])
    return {"summary": summary, "pass_at_k": pass_k, "transitions": transitions}


def _arm(loop: Mapping[str, Any]) -> str:
    if loop["feedback"] == "attribution":
        return f"attribution-{loop['attribution_mode']}-{loop['attribution_method']}"
    return str(loop["feedback"])


def write_tables(tables: Mapping[str, Table], out_dir: Path, title: str = "") -> Path:
    """Write ``<name>.csv`` per table plus one ``report.txt``; never overwrites different content."""
    out_dir.mkdir(parents=True, exist_ok=True)
    parts = [f"{title}\n\n"] if title else []
    for name, (header, rows) in tables.items():
        write_once(out_dir / f"{name}.csv", render_csv(header, rows))
        parts.append(f"## {name}\n{render_text(header, rows)}\n")
    write_once(out_dir / "report.txt", "".join(parts))
    return out_dir / "report.txt"


def report(run_dir: str | Path, out_dir: str | Path | None = None) -> Path:
    run_dir = Path(run_dir)
    target = Path(out_dir) if out_dir is not None else run_dir / "report"
    return write_tables(run_tables(run_dir), target, f"run {run_dir.name}")


ABLATION_HEADER = ["arm", "feedback", "early_stop", "lfr", "ss", "ppl", "d_lfr", "d_ss", "d_ppl"]


def ablation_table(rows: Sequence[Mapping[str, Any]]) -> Table:
    return ABLATION_HEADER, [[r[h] for h in ABLATION_HEADER] for r in rows]
