"""Counterfactual refinement loop.

Round 0 asks the generator for a first counterfactual. Every later round
feeds back one signal about the current candidate (or the original input)
and asks for a revision, until the explained classifier predicts the target
label (with early stopping) or ``max_iterations`` refinements have run.
"""

from __future__ import annotations

import hashlib
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Mapping

from cfrefine import attribution as attr_mod
from cfrefine.core import (
    AttributionFeedback,
    AttributionMode,
    CandidateRound,
    ConfidenceFeedback,
    FeedbackSignal,
    Instance,
    NaturalLanguageFeedback,
    NoFeedback,
    Prediction,
    Trace,
    choose_target_label,
    classify_transition,
)
from cfrefine.errors import (
    AlignmentError,
    CfParseError,
    ConfigError,
    InputError,
    InvalidTargetError,
    NumericalError,
    ServiceError,
)
from cfrefine.prompts import extract_cf, extract_think, format_confidence, format_top_words, render_prompt
from cfrefine.services.clients import GenerationParams, Services

log = logging.getLogger(__name__)

FEEDBACK_KINDS = ("none", "confidence", "attribution", "natural_language")
ATTRIBUTION_METHODS = ("loo", "lime", "kernel_shap", "external")
FEEDBACK_TARGETS = ("current_candidate", "original_input")


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("|".join(map(str, parts)).encode("utf-8")).hexdigest()
    return int(digest[:16], 16) >> 1


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 5
    feedback: str = "confidence"
    attribution_mode: AttributionMode = AttributionMode.TOP
    attribution_method: str | None = None
    early_stop: bool = True
    feedback_target: str = "current_candidate"
    generation: GenerationParams = field(default_factory=GenerationParams)
    surrogate: attr_mod.SurrogateConfig | None = None
    hint: str = ""
    seed: int = 0
    templates: Mapping[str, str] = field(default_factory=dict)
    attribution_workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "attribution_mode", AttributionMode(self.attribution_mode))
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.feedback not in FEEDBACK_KINDS:
            raise ConfigError(f"feedback must be one of {FEEDBACK_KINDS}, got {self.feedback!r}")
        if self.feedback == "attribution" and self.attribution_method not in ATTRIBUTION_METHODS:
            raise ConfigError(
                f"attribution feedback needs a method from {ATTRIBUTION_METHODS}, got {self.attribution_method!r}"
            )
        if self.feedback_target not in FEEDBACK_TARGETS:
            raise ConfigError(f"feedback_target must be one of {FEEDBACK_TARGETS}")

    @property
    def label(self) -> str:
        """Short arm name, e.g. ``attribution-top-lime``."""
        if self.feedback == "attribution":
            return f"attribution-{self.attribution_mode.value}-{self.attribution_method}"
        return self.feedback

    def to_dict(self) -> dict[str, Any]:
        g = self.generation
        s = self.surrogate
        return {
            "max_iterations": self.max_iterations,
            "feedback": self.feedback,
            "attribution_mode": self.attribution_mode.value,
            "attribution_method": self.attribution_method,
            "early_stop": self.early_stop,
            "feedback_target": self.feedback_target,
            "generation": {
                "temperature": g.temperature,
                "top_p": g.top_p,
                "top_k": g.top_k,
                "max_new_tokens": g.max_new_tokens,
                "seed": g.seed,
            },
            "surrogate": (
                None
                if s is None
                else {
                    "n_samples": s.n_samples,
                    "kernel_width": s.kernel_width,
                    "ridge_lambda": s.ridge_lambda,
                    "seed": s.seed,
                }
            ),
            "hint": self.hint,
            "seed": self.seed,
            "templates": dict(self.templates),
            "attribution_workers": self.attribution_workers,
        }


class Meter:
    """Per-trace call counters; thread-safe because attribution may fan out."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.generator_calls = 0
        self.classifier_calls = 0
        self.warnings: list[str] = []

    def add(self, generator: int = 0, classifier: int = 0) -> None:
        with self._lock:
            self.generator_calls += generator
            self.classifier_calls += classifier

    def warn(self, message: str) -> None:
        log.warning(message)
        with self._lock:
            self.warnings.append(message)


@dataclass(frozen=True)
class RoundState:
    """What feedback is built from: a text of the edited field and its prediction."""

    instance: Instance
    original_prediction: Prediction
    target_label: str
    text: str
    prediction: Prediction
    k: int


def _classify(services: Services, meter: Meter, fields: Mapping[str, str], allow_empty: bool = False) -> Prediction:
    pred, n = services.classifier.classify_counted(fields, allow_empty=allow_empty)
    meter.add(classifier=n)
    return pred


def _generate(services: Services, meter: Meter, prompt: str, params: GenerationParams) -> str:
    out = services.generator.generate(prompt, params)
    meter.add(generator=1)
    return out


def _params_for(cfg: LoopConfig, instance: Instance, k: int, stage: str) -> GenerationParams:
    g = cfg.generation
    if g.seed is None:
        return g
    return GenerationParams(g.temperature, g.top_p, g.top_k, g.max_new_tokens, derive_seed(g.seed, instance.id, k, stage))


def _hint(cfg: LoopConfig, instance: Instance) -> str:
    parts = [cfg.hint] if cfg.hint else []
    others = [(name, text) for name, text in instance.text_fields.items() if name != instance.edit_field]
    if others:
        parts.append(f"Edit only the {instance.edit_field}.")
        parts.extend(f"{name.capitalize()}: {text}" for name, text in others)
    return " ".join(parts)


def _bindings(state: RoundState, cfg: LoopConfig, current_text: str, **extra: object) -> dict[str, object]:
    b: dict[str, object] = {
        "ORIGINAL_LABEL": state.original_prediction.label,
        "TARGET_LABEL": state.target_label,
        "INPUT_TEXT": state.instance.edit_text,
        "CF_TEXT": current_text,
        "HINT": _hint(cfg, state.instance),
    }
    b.update(extra)
    return b


def build_feedback(
    cfg: LoopConfig, state: RoundState, services: Services, meter: Meter | None = None
) -> FeedbackSignal:
    """Construct the configured feedback signal for ``state``.

    Natural-language feedback always critiques ``state.text`` against the
    original input. Attribution alignment failures fall back to no feedback
    and leave a warning on the meter.
    """
    meter = meter or Meter()
    kind = cfg.feedback
    if kind == "none":
        return NoFeedback()
    if kind == "confidence":
        return ConfidenceFeedback(state.prediction.label, format_confidence(state.prediction.confidence))
    if kind == "natural_language":
        prompt = render_prompt("nl_feedback", _bindings(state, cfg, state.text), cfg.templates)
        raw = _generate(services, meter, prompt, _params_for(cfg, state.instance, state.k, "critique"))
        return NaturalLanguageFeedback(extract_think(raw))

    label = state.prediction.label
    method = cfg.attribution_method
    assert method is not None
    seed = derive_seed(cfg.seed, state.instance.id, state.k, "attribution")
    try:
        if method == "external":
            if services.attributor is None:
                raise ConfigError("external attribution requested but no attribution service configured")
            result = services.attributor.attribute(state.text, label)
        else:
            surrogate = cfg.surrogate
            if surrogate is not None:
                surrogate = attr_mod.SurrogateConfig(
                    surrogate.n_samples, surrogate.kernel_width, surrogate.ridge_lambda, seed
                )
            elif method == "lime":
                surrogate = attr_mod.SurrogateConfig(seed=seed)
            elif method == "kernel_shap":
                surrogate = attr_mod.SurrogateConfig(n_samples=2048, ridge_lambda=0.0, seed=seed)

            def classify(text: str) -> Prediction:
                return _classify(services, meter, state.instance.with_edit(text), allow_empty=True)

            result = attr_mod.attribute(
                method, state.text, classify, label, surrogate, workers=cfg.attribution_workers
            )
    except AlignmentError as e:
        meter.warn(f"round {state.k}: attribution alignment failed ({e}); no feedback this round")
        return NoFeedback()
    if not result.words:
        return NoFeedback()
    idx = attr_mod.select_feedback_indices(result, cfg.attribution_mode, seed)
    words = tuple((result.words[i], result.scores[i]) for i in idx)
    return AttributionFeedback(words, cfg.attribution_mode, method)


def refinement_prompt(
    cfg: LoopConfig,
    state: RoundState,
    feedback: FeedbackSignal,
    current_text: str,
    current_prediction: Prediction,
) -> str:
    """Pick and render the refinement template for this round.

    While the candidate still carries the original label the flip-seeking
    variants are used; once it has moved away, the minimal-edit variants that
    ask to keep the new label.
    """
    still_original = current_prediction.label == state.original_prediction.label
    if isinstance(feedback, ConfidenceFeedback):
        template = "refine_confidence_flip" if still_original else "refine_confidence"
        extra = {"PRED_LABEL": feedback.label, "CONF": feedback.percent}
    elif isinstance(feedback, AttributionFeedback):
        template = "refine_attribution_flip" if still_original else "refine_attribution"
        extra = {"PRED_LABEL": state.prediction.label, "TOP_WORDS": format_top_words(feedback.words)}
    elif isinstance(feedback, NaturalLanguageFeedback):
        template = "nl_edit"
        extra = {"FEEDBACK_TEXT": feedback.critique_text}
    else:
        template = "refine_none"
        extra = {}
    return render_prompt(template, _bindings(state, cfg, current_text, **extra), cfg.templates)


def _candidate(raw: str, previous: str) -> tuple[str, bool]:
    try:
        return extract_cf(raw), False
    except CfParseError:
        return previous, True


def run_instance(instance: Instance, cfg: LoopConfig, services: Services) -> Trace:
    """Run the refinement loop for one instance and return its full trace.

    Service failures end the trace early with ``error`` set; rounds produced
    so far are kept.
    """
    meter = Meter()
    space = services.classifier.space
    instance.validate(space)
    rounds: list[CandidateRound] = []
    original: Prediction | None = None
    target: str | None = None

    def finish(error: str | None = None) -> Trace:
        stopped = bool(cfg.early_stop and rounds and rounds[-1].valid and error is None)
        return Trace(
            instance=instance,
            original_prediction=original,
            target_label=target,
            rounds=tuple(rounds),
            stopped_early=stopped,
            generator_calls=meter.generator_calls,
            classifier_calls=meter.classifier_calls,
            error=error,
            warnings=tuple(meter.warnings),
        )

    def record(k: int, text: str, failed: bool, feedback: FeedbackSignal, previous: CandidateRound | None) -> CandidateRound:
        pred = _classify(services, meter, instance.with_edit(text), allow_empty=True)
        valid = pred.label == target
        previously_valid = previous.valid if previous is not None else False
        r = CandidateRound(
            k=k,
            candidate_text=text,
            prediction=pred,
            feedback=feedback,
            valid=valid,
            parse_failed=failed,
            transition=classify_transition(previously_valid, valid),
            label_changed=pred.label != original.label,
        )
        rounds.append(r)
        return r

    try:
        original = _classify(services, meter, instance.text_fields)
        target = choose_target_label(
            original.label, space, instance.target_label, derive_seed(cfg.seed, instance.id, "target")
        )
        state = RoundState(instance, original, target, instance.edit_text, original, 0)
        prompt = render_prompt("base", _bindings(state, cfg, instance.edit_text), cfg.templates)
        raw = _generate(services, meter, prompt, _params_for(cfg, instance, 0, "edit"))
        text, failed = _candidate(raw, instance.edit_text)
        current = record(0, text, failed, NoFeedback(), None)

        for k in range(1, cfg.max_iterations + 1):
            if cfg.early_stop and current.valid:
                break
            if cfg.feedback_target == "original_input":
                state = RoundState(instance, original, target, instance.edit_text, original, k)
            else:
                state = RoundState(instance, original, target, current.candidate_text, current.prediction, k)
            feedback = build_feedback(cfg, state, services, meter)
            prompt = refinement_prompt(cfg, state, feedback, current.candidate_text, current.prediction)
            raw = _generate(services, meter, prompt, _params_for(cfg, instance, k, "edit"))
            text, failed = _candidate(raw, current.candidate_text)
            current = record(k, text, failed, feedback, current)
    except (ServiceError, InvalidTargetError, NumericalError, InputError) as e:
        if isinstance(e, ConfigError):
            raise
        log.error("instance %s aborted: %s", instance.id, e)
        return finish(f"{type(e).__name__}: {e}")
    return finish()
