"""Counterfactual data augmentation output and accuracy scoring."""

from __future__ import annotations

from pathlib import Path
from typing import Any

from cfrefine.errors import AlignmentError, InputError
from cfrefine.harness.io import read_jsonl, write_jsonl
from cfrefine.harness.runner import load_traces

CDA_POLICIES = ("valid_only", "all")


def cda_records(run_dir: str | Path, policy: str = "valid_only") -> list[dict[str, Any]]:
    """Originals with gold labels, plus final-round counterfactuals labelled by the classifier."""
    if policy not in CDA_POLICIES:
        raise InputError(f"policy must be one of {CDA_POLICIES}")
    out = []
    for t in load_traces(run_dir):
        inst = t.instance
        out.append(
            {"id": inst.id, "text_fields": dict(inst.text_fields), "label": inst.gold_label, "provenance": {"kind": "original"}}
        )
        final = t.final
        if final is None or (policy == "valid_only" and not final.valid):
            continue
        out.append(
            {
                "id": f"{inst.id}::cf",
                "text_fields": inst.with_edit(final.candidate_text),
                "label": final.prediction.label,
                "provenance": {"kind": "counterfactual", "source": inst.id, "round": final.k, "valid": final.valid},
            }
        )
    return out


def emit_cda(run_dir: str | Path, policy: str = "valid_only", out_path: str | Path | None = None) -> Path:
    records = cda_records(run_dir, policy)
    out = Path(out_path) if out_path is not None else Path(run_dir) / f"cda-{policy}.jsonl"
    write_jsonl(out, records)
    return out


def _labels(path: str | Path, label_key: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, rec in read_jsonl(path):
        if "id" not in rec or label_key not in rec:
            raise InputError(f"{path} line {lineno}: needs 'id' and {label_key!r}")
        out[str(rec["id"])] = rec[label_key]
    return out


def score_predictions(pred_file: str | Path, gold_file: str | Path, label_key: str = "label") -> float:
    """Accuracy in percent, rounded to two decimals, over id-aligned files."""
    preds = _labels(pred_file, label_key)
    gold = _labels(gold_file, label_key)
    if set(preds) != set(gold):
        missing = sorted(set(gold) ^ set(preds))
        raise AlignmentError(f"prediction and gold ids differ ({len(missing)} unmatched, e.g. {missing[:3]})")
    if not gold:
        raise InputError("no records to score")
    hits = sum(preds[i] == gold[i] for i in gold)
    return round(100.0 * hits / len(gold), 2)
