"""LLM-as-a-judge scoring of finished runs, with agreement statistics."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from cfrefine import metrics
from cfrefine.errors import InputError, JudgeParseError, ServiceError, UndefinedAgreementError
from cfrefine.harness.io import read_jsonl
from cfrefine.harness.runner import load_manifest, load_traces
from cfrefine.prompts import JudgeScores, extract_judge_scores, render_prompt
from cfrefine.services.clients import GenerationParams, GeneratorClient

log = logging.getLogger(__name__)

DIMENSIONS = JudgeScores._fields  # completeness, satisfaction, feasibility
JUDGE_PARAMS = GenerationParams(temperature=0.0, max_new_tokens=64)


@dataclass
class JudgeReport:
    ratings: list[dict[str, Any]]  # one per (method, item, judge) with parsed scores
    parse_errors: int
    service_errors: int
    means: dict[str, dict[str, dict[str, Mapping[str, float]]]]  # method -> judge -> dimension -> summary
    inter_judge_alpha: dict[str, float | None]
    judge_vs_human_alpha: dict[str, dict[str, float | None]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "parse_errors": self.parse_errors,
            "service_errors": self.service_errors,
            "means": self.means,
            "inter_judge_alpha": self.inter_judge_alpha,
            "judge_vs_human_alpha": self.judge_vs_human_alpha,
        }


def _method_name(run_dir: Path) -> str:
    loop = load_manifest(run_dir)["loop"]
    if loop["feedback"] == "attribution":
        return f"attribution-{loop['attribution_mode']}-{loop['attribution_method']}"
    return str(loop["feedback"])


def judge_items(run_dir: str | Path, sample: int | None = None, seed: int = 0) -> list[dict[str, str]]:
    """Judge prompt bindings for every completed trace (optionally a seeded sample)."""
    items = []
    for t in load_traces(run_dir):
        if t.final is None or t.original_prediction is None:
            continue
        items.append(
            {
                "id": t.instance.id,
                "INPUT_TEXT": t.instance.edit_text,
                "CF_TEXT": t.final.candidate_text,
                "ORIGINAL_LABEL": t.original_prediction.label,
                "PRED_LABEL": t.final.prediction.label,
                "IS_FLIP": str(t.final.prediction.label != t.original_prediction.label),
            }
        )
    if sample is not None and sample < len(items):
        keep = set(random.Random(seed).sample(range(len(items)), sample))
        items = [it for i, it in enumerate(items) if i in keep]
    return items


def _alpha(records: Sequence[tuple[str, str, int | None]]) -> float | None:
    try:
        return metrics.krippendorff_alpha(metrics.RatingsMatrix.from_records(records), "ordinal")
    except (UndefinedAgreementError, InputError):
        return None


def load_human_ratings(path: str | Path) -> list[dict[str, Any]]:
    """Records ``{method, id, rater, completeness, satisfaction, feasibility}``."""
    out = []
    for lineno, rec in read_jsonl(path):
        missing = [k for k in ("method", "id", "rater", *DIMENSIONS) if k not in rec]
        if missing:
            raise InputError(f"{path} line {lineno}: missing {missing}")
        out.append(rec)
    return out


def judge_run(
    run_dirs: Sequence[str | Path],
    judges: Mapping[str, GeneratorClient],
    human_ratings: Sequence[Mapping[str, Any]] | None = None,
    *,
    sample: int | None = None,
    seed: int = 0,
    params: GenerationParams = JUDGE_PARAMS,
    templates: Mapping[str, str] | None = None,
) -> JudgeReport:
    if not judges:
        raise InputError("at least one judge is required")
    ratings: list[dict[str, Any]] = []
    parse_errors = service_errors = 0
    for run_dir in run_dirs:
        method = _method_name(Path(run_dir))
        for item in judge_items(run_dir, sample, seed):
            prompt = render_prompt("judge", item, templates)
            for name, client in judges.items():
                try:
                    scores = extract_judge_scores(client.generate(prompt, params))
                except JudgeParseError as e:
                    parse_errors += 1
                    log.warning("judge %s on %s/%s: %s", name, method, item["id"], e)
                    continue
                except ServiceError as e:
                    service_errors += 1
                    log.warning("judge %s on %s/%s failed: %s", name, method, item["id"], e)
                    continue
                ratings.append({"method": method, "id": item["id"], "judge": name, **scores._asdict()})

    means: dict[str, dict[str, dict[str, Mapping[str, float]]]] = {}
    for r in ratings:
        means.setdefault(r["method"], {}).setdefault(r["judge"], {})
    for method, per_judge in means.items():
        for name in per_judge:
            rows = [r for r in ratings if r["method"] == method and r["judge"] == name]
            per_judge[name] = {dim: dict(metrics.summarize(r[dim] for r in rows)) for dim in DIMENSIONS}

    def item_key(r: Mapping[str, Any]) -> str:
        return f"{r['method']}/{r['id']}"

    inter = {dim: _alpha([(r["judge"], item_key(r), r[dim]) for r in ratings]) for dim in DIMENSIONS}

    vs_human: dict[str, dict[str, float | None]] = {}
    if human_ratings:
        for name in judges:
            mine = [r for r in ratings if r["judge"] == name]
            vs_human[name] = {
                dim: _alpha(
                    [(f"human:{h['rater']}", item_key(h), h[dim]) for h in human_ratings]
                    + [(f"judge:{name}", item_key(r), r[dim]) for r in mine]
                )
                for dim in DIMENSIONS
            }
    return JudgeReport(ratings, parse_errors, service_errors, means, inter, vs_human)


def means_table(report: JudgeReport) -> tuple[list[str], list[list[Any]]]:
    """Mean ± std per method and judge, two decimals."""
    header = ["method", "judge", *DIMENSIONS, "n"]
    rows = []
    for method, per_judge in report.means.items():
        for name, dims in per_judge.items():
            rows.append(
                [method, name]
                + [f"{dims[d]['mean']:.2f} ± {dims[d]['std']:.2f}" for d in DIMENSIONS]
                + [dims[DIMENSIONS[0]]["n"]]
            )
    return header, rows


def agreement_table(report: JudgeReport) -> tuple[list[str], list[list[Any]]]:
    header = ["comparison", *DIMENSIONS]
    rows = [["inter-judge", *(report.inter_judge_alpha[d] for d in DIMENSIONS)]]
    for name, dims in report.judge_vs_human_alpha.items():
        rows.append([f"{name} vs humans", *(dims[d] for d in DIMENSIONS)])
    return header, rows
