"""Faithfulness comparison of attribution methods over a dataset."""

from __future__ import annotations

import math
from typing import Any, Sequence

from cfrefine import attribution as attr_mod
from cfrefine import metrics
from cfrefine.core import Instance, Prediction
from cfrefine.loop import derive_seed
from cfrefine.services.clients import Services

FAITHFULNESS_METHODS = ("loo", "lime", "kernel_shap", "external")


def faithfulness_rows(
    dataset: Sequence[Instance],
    services: Services,
    methods: Sequence[str] = ("loo", "lime", "kernel_shap"),
    *,
    seed: int = 0,
    surrogate: attr_mod.SurrogateConfig | None = None,
    workers: int = 1,
) -> list[dict[str, Any]]:
    """Mean comprehensiveness, sufficiency and tau_loo per method.

    Attributions explain the classifier's predicted label on the edit field,
    with the other fields held fixed.
    """
    per_method: dict[str, list[attr_mod.Faithfulness]] = {m: [] for m in methods}
    for inst in dataset:
        if not inst.edit_text.split():
            continue

        def classify(text: str, inst: Instance = inst) -> Prediction:
            return services.classifier.classify(inst.with_edit(text), allow_empty=True)

        label = services.classifier.classify(inst.text_fields).label
        for method in methods:
            if method == "external":
                if services.attributor is None:
                    continue
                result = services.attributor.attribute(inst.edit_text, label)
            else:
                cfg = surrogate
                if cfg is not None:
                    cfg = attr_mod.SurrogateConfig(
                        cfg.n_samples, cfg.kernel_width, cfg.ridge_lambda, derive_seed(seed, inst.id, method)
                    )
                result = attr_mod.attribute(method, inst.edit_text, classify, label, cfg, workers=workers)
            per_method[method].append(attr_mod.faithfulness(inst.edit_text, result, classify, label, workers=workers))

    rows = []
    for method, scores in per_method.items():
        taus = [s.tau_loo for s in scores if not math.isnan(s.tau_loo)]
        rows.append(
            {
                "method": method,
                "n": len(scores),
                "comprehensiveness": metrics.summarize(s.comprehensiveness for s in scores)["mean"],
                "sufficiency": metrics.summarize(s.sufficiency for s in scores)["mean"],
                "tau_loo": metrics.summarize(taus)["mean"] if taus else None,
            }
        )
    return rows
