"""Batch execution: one trace per instance, streamed to ``traces.jsonl``."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from cfrefine import metrics
from cfrefine.core import Instance, Trace
from cfrefine.errors import CfRefineError, ServiceError
from cfrefine.harness.io import canonical_digest, dumps
from cfrefine.loop import LoopConfig, run_instance
from cfrefine.services.clients import Services

log = logging.getLogger(__name__)

TRACES = "traces.jsonl"
MANIFEST = "manifest.json"


class PartialFailure(CfRefineError):
    """More instances aborted than the configured threshold allows."""

    def __init__(self, message: str, run_dir: Path, all_service_failures: bool = False):
        super().__init__(message)
        self.run_dir = run_dir
        self.all_service_failures = all_service_failures


@dataclass
class RunResult:
    run_dir: Path
    traces: list[Trace]
    metrics: dict[str, Any]
    manifest: dict[str, Any]


def dataset_digest(instances: Sequence[Instance]) -> str:
    return canonical_digest([i.to_dict() for i in instances])


def fresh_dir(root: Path, name: str) -> Path:
    """Create ``root/name``, or ``root/name-2``, ... if taken; never reuse a directory."""
    root.mkdir(parents=True, exist_ok=True)
    candidate = root / name
    n = 1
    while True:
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            n += 1
            candidate = root / f"{name}-{n}"


def score_trace(trace: Trace, services: Services, concat_pair: bool = False) -> Trace:
    """Attach semantic similarity and perplexity of the final candidate."""
    final = trace.final
    if final is None:
        return trace
    inst = trace.instance
    scores: dict[str, float | None] = {"ss": None, "ppl": None}
    try:
        if services.embedder is not None:
            if concat_pair:
                a = " ".join(inst.text_fields.values())
                b = " ".join(inst.with_edit(final.candidate_text).values())
            else:
                a, b = inst.edit_text, final.candidate_text
            scores["ss"] = metrics.cosine(services.embedder.embed(a), services.embedder.embed(b))
        if services.scorer is not None and final.candidate_text.strip():
            scores["ppl"] = metrics.perplexity(services.scorer.score_tokens(final.candidate_text))
    except (ServiceError, CfRefineError) as e:
        log.warning("scoring %s failed: %s", inst.id, e)
        return dataclasses.replace(trace, scores=scores, warnings=trace.warnings + (f"scoring failed: {e}",))
    return dataclasses.replace(trace, scores=scores)


def _mean(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.mean(vals)) if vals else None


def aggregate_metrics(traces: Sequence[Trace], max_iterations: int) -> dict[str, Any]:
    """Aggregate block for a run; a pure function of the traces."""
    done = [t for t in traces if t.original_prediction is not None and t.rounds]
    n_rounds = max_iterations + 1
    out: dict[str, Any] = {
        "n": len(traces),
        "n_aborted": sum(t.aborted for t in traces),
        "n_scored": len(done),
    }
    if done:
        out["lfr"] = metrics.lfr(
            [t.original_prediction.label for t in done], [t.final.prediction.label for t in done]
        )
        out["validity"] = sum(t.final.valid for t in done) / len(done)
    else:
        out["lfr"] = None
        out["validity"] = None
    out["ss"] = _mean(t.scores.get("ss") for t in done)
    out["ppl"] = _mean(t.scores.get("ppl") for t in done)
    out["pass_at_k"] = {str(k): metrics.pass_at_k(traces, k) for k in range(1, n_rounds + 1)}
    out["transitions"] = metrics.transition_histogram(traces, n_rounds)
    out["mean_rounds"] = _mean(len(t.rounds) for t in traces)
    out["generator_calls"] = sum(t.generator_calls for t in traces)
    out["classifier_calls"] = sum(t.classifier_calls for t in traces)
    out["parse_failures"] = sum(r.parse_failed for t in traces for r in t.rounds)
    return out


def run_batch(
    dataset: Sequence[Instance],
    cfg: LoopConfig,
    services: Services,
    parallelism: int = 1,
    *,
    output_root: str | Path = "runs",
    run_name: str | None = None,
    config_snapshot: Mapping[str, Any] | None = None,
    abort_threshold: float = 0.5,
    concat_pair: bool = False,
) -> RunResult:
    """Run every instance, stream traces in dataset order, then write the manifest.

    Raises :class:`PartialFailure` (after writing everything) when the share
    of aborted instances exceeds ``abort_threshold``.
    """
    started = datetime.now(timezone.utc).isoformat()
    digest = dataset_digest(dataset)
    snapshot = dict(config_snapshot or {})
    snapshot.setdefault("loop", cfg.to_dict())
    name = run_name or f"{cfg.label}-{canonical_digest([snapshot, digest])[:10]}"
    run_dir = fresh_dir(Path(output_root), name)

    results: dict[int, Trace] = {}
    next_to_write = 0
    cond = threading.Condition()
    out = open(run_dir / TRACES, "x", encoding="utf-8")

    def flush_ready() -> None:
        nonlocal next_to_write
        while next_to_write in results:
            out.write(dumps(results[next_to_write].to_dict()) + "\n")
            out.flush()
            next_to_write += 1

    def work(i: int, inst: Instance) -> None:
        trace = run_instance(inst, cfg, services)
        trace = score_trace(trace, services, concat_pair)
        with cond:
            results[i] = trace
            flush_ready()

    try:
        if parallelism > 1:
            with ThreadPoolExecutor(parallelism) as pool:
                for f in [pool.submit(work, i, inst) for i, inst in enumerate(dataset)]:
                    f.result()
        else:
            for i, inst in enumerate(dataset):
                work(i, inst)
    finally:
        out.close()

    traces = [results[i] for i in range(len(dataset))]
    agg = aggregate_metrics(traces, cfg.max_iterations)
    manifest = {
        "run_id": run_dir.name,
        "config": snapshot,
        "loop": cfg.to_dict(),
        "dataset_digest": digest,
        "instance_ids": [i.id for i in dataset],
        "model_ids": services.model_ids(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "metrics": agg,
    }
    (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    aborted = [t for t in traces if t.aborted]
    if traces and len(aborted) / len(traces) > abort_threshold:
        service_only = len(aborted) == len(traces) and all(
            t.error and t.error.split(":")[0] in _SERVICE_ERROR_NAMES for t in aborted
        )
        raise PartialFailure(
            f"{len(aborted)}/{len(traces)} instances aborted (threshold {abort_threshold:.0%})",
            run_dir,
            all_service_failures=service_only,
        )
    return RunResult(run_dir, traces, agg, manifest)


_SERVICE_ERROR_NAMES = {"TransportError", "ProtocolError", "PromptTooLongError", "DegenerateEmbeddingError", "ServiceError"}


def load_traces(run_dir: str | Path) -> list[Trace]:
    path = Path(run_dir) / TRACES
    with open(path, encoding="utf-8") as fh:
        return [Trace.from_dict(json.loads(line)) for line in fh if line.strip()]


def load_manifest(run_dir: str | Path) -> dict[str, Any]:
    return json.loads((Path(run_dir) / MANIFEST).read_text(encoding="utf-8"))


# -- ablations ---------------------------------------------------------------

ABLATION_FEEDBACK = ("none", "random", "least", "top", "confidence", "natural_language")


def ablation_arms(
    base: LoopConfig,
    feedback: Sequence[str] = ABLATION_FEEDBACK,
    methods: Sequence[str] = ("kernel_shap",),
    early_stop: Sequence[bool] = (True, False),
) -> list[LoopConfig]:
    """Expand the ablation grid; 'none' is always included as the baseline."""
    kinds = list(feedback)
    if "none" not in kinds:
        kinds.insert(0, "none")
    arms = []
    for stop in early_stop:
        for kind in kinds:
            if kind in ("top", "least", "random"):
                for method in methods:
                    arms.append(
                        dataclasses.replace(
                            base, feedback="attribution", attribution_mode=kind, attribution_method=method, early_stop=stop
                        )
                    )
            else:
                arms.append(dataclasses.replace(base, feedback=kind, early_stop=stop))
    return arms


def arm_name(cfg: LoopConfig) -> str:
    return f"{cfg.label}-{'es' if cfg.early_stop else 'noes'}"


def _delta(a: float | None, b: float | None) -> float | None:
    return None if a is None or b is None else a - b


def ablation_suite(
    dataset: Sequence[Instance],
    base_cfg: LoopConfig,
    services: Services,
    *,
    output_root: str | Path,
    feedback: Sequence[str] = ABLATION_FEEDBACK,
    methods: Sequence[str] = ("kernel_shap",),
    early_stop: Sequence[bool] = (True, False),
    parallelism: int = 1,
    config_snapshot: Mapping[str, Any] | None = None,
    abort_threshold: float = 0.5,
    concat_pair: bool = False,
) -> tuple[Path, list[dict[str, Any]]]:
    """Run every arm and tabulate LFR/SS/PPL with deltas against the no-feedback arm."""
    root = fresh_dir(Path(output_root), f"ablation-{canonical_digest(dict(config_snapshot or {}))[:10]}")
    results: dict[str, RunResult] = {}
    arms = ablation_arms(base_cfg, feedback, methods, early_stop)
    for arm in arms:
        name = arm_name(arm)
        results[name] = run_batch(
            dataset,
            arm,
            services,
            parallelism,
            output_root=root,
            run_name=name,
            config_snapshot={**dict(config_snapshot or {}), "loop": arm.to_dict()},
            abort_threshold=abort_threshold,
            concat_pair=concat_pair,
        )
    rows = []
    for arm in arms:
        name = arm_name(arm)
        m = results[name].metrics
        base = results[arm_name(dataclasses.replace(arm, feedback="none", attribution_method=None))].metrics
        rows.append(
            {
                "arm": name,
                "feedback": arm.label,
                "early_stop": arm.early_stop,
                "lfr": m["lfr"],
                "ss": m["ss"],
                "ppl": m["ppl"],
                "d_lfr": _delta(m["lfr"], base["lfr"]),
                "d_ss": _delta(m["ss"], base["ss"]),
                "d_ppl": _delta(m["ppl"], base["ppl"]),
            }
        )
    return root, rows
