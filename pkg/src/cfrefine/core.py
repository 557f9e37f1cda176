"""Domain types shared by the engine, services, metrics and harness.

Everything here is an immutable value object. Traces and their parts
round-trip through plain dicts (``to_dict`` / ``from_dict``) so they can be
written as one JSON object per line.
"""

from __future__ import annotations

import enum
import random
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from cfrefine.errors import InputError, InvalidTargetError, SchemaError

_WORD_RE = re.compile(r"\S+")

PROB_TOLERANCE = 1e-6


def tokenize_words(text: str) -> list[tuple[str, tuple[int, int]]]:
    """Split on Unicode whitespace; punctuation stays attached to its word."""
    return [(m.group(0), m.span()) for m in _WORD_RE.finditer(text)]


def words_of(text: str) -> list[str]:
    return [w for w, _ in tokenize_words(text)]


@dataclass(frozen=True)
class LabelSpace:
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise SchemaError("a label space needs at least two labels")
        if len(set(labels)) != len(labels):
            raise SchemaError(f"duplicate labels in {labels!r}")

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SchemaError(f"unknown label {label!r}; expected one of {self.labels}") from None

    def argmax(self, probs: Mapping[str, float]) -> str:
        # first label in space order wins ties
        best = self.labels[0]
        for label in self.labels[1:]:
            if probs.get(label, 0.0) > probs.get(best, 0.0):
                best = label
        return best


@dataclass(frozen=True)
class Prediction:
    label: str
    probs: Mapping[str, float]

    def __post_init__(self) -> None:
        total = sum(self.probs.values())
        if abs(total - 1.0) > PROB_TOLERANCE:
            raise InputError(f"probabilities sum to {total}, not 1")
        for label, p in self.probs.items():
            if not 0.0 <= p <= 1.0:
                raise InputError(f"probability {p} for {label!r} outside [0, 1]")
        if self.label not in self.probs:
            raise InputError(f"predicted label {self.label!r} has no probability")

    @classmethod
    def from_probs(cls, probs: Mapping[str, float], space: LabelSpace) -> "Prediction":
        full = {label: float(probs.get(label, 0.0)) for label in space.labels}
        extra = set(probs) - set(space.labels)
        if extra:
            raise SchemaError(f"probabilities for labels outside the space: {sorted(extra)}")
        return cls(space.argmax(full), full)

    def prob(self, label: str) -> float:
        return self.probs.get(label, 0.0)

    @property
    def confidence(self) -> float:
        return self.prob(self.label)

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label, "probs": dict(self.probs)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Prediction":
        return cls(d["label"], dict(d["probs"]))


@dataclass(frozen=True)
class Instance:
    id: str
    text_fields: Mapping[str, str]
    gold_label: str
    edit_field: str
    target_label: str | None = None

    def __post_init__(self) -> None:
        if self.edit_field not in self.text_fields:
            raise SchemaError(
                f"instance {self.id}: edit field {self.edit_field!r} not among {list(self.text_fields)}"
            )

    @property
    def edit_text(self) -> str:
        return self.text_fields[self.edit_field]

    def with_edit(self, text: str) -> dict[str, str]:
        fields = dict(self.text_fields)
        fields[self.edit_field] = text
        return fields

    def validate(self, space: LabelSpace) -> None:
        for label in (self.gold_label, self.target_label):
            if label is not None and label not in space:
                raise SchemaError(f"instance {self.id}: unknown label {label!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text_fields": dict(self.text_fields),
            "gold_label": self.gold_label,
            "edit_field": self.edit_field,
            "target_label": self.target_label,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Instance":
        return cls(
            id=d["id"],
            text_fields=dict(d["text_fields"]),
            gold_label=d["gold_label"],
            edit_field=d["edit_field"],
            target_label=d.get("target_label"),
        )


def choose_target_label(
    y_pred: str, space: LabelSpace, override: str | None = None, seed: int = 0
) -> str:
    """Pick the label a counterfactual should reach.

    A supplied override wins; otherwise a seeded uniform draw over every label
    except the current prediction.
    """
    if y_pred not in space:
        raise SchemaError(f"prediction {y_pred!r} not in label space")
    if override is not None:
        if override not in space:
            raise SchemaError(f"target {override!r} not in label space")
        if override == y_pred:
            raise InvalidTargetError(f"target label {override!r} equals the current prediction")
        return override
    remaining = [label for label in space.labels if label != y_pred]
    return random.Random(seed).choice(remaining)


class TransitionKind(str, enum.Enum):
    FAIL_TO_FAIL = "FailToFail"
    FAIL_TO_SUCCESS = "FailToSuccess"
    PREVIOUS_SUCCESS = "PreviousSuccess"
    SUCCESS_TO_FAIL = "SuccessToFail"


def classify_transition(previously_valid: bool, now_valid: bool) -> TransitionKind:
    if previously_valid:
        return TransitionKind.PREVIOUS_SUCCESS if now_valid else TransitionKind.SUCCESS_TO_FAIL
    return TransitionKind.FAIL_TO_SUCCESS if now_valid else TransitionKind.FAIL_TO_FAIL


@dataclass(frozen=True)
class AttributionResult:
    """Per-word importance for one (text, label) pair."""

    words: tuple[str, ...]
    scores: tuple[float, ...]
    method: str
    label: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if len(self.words) != len(self.scores):
            raise InputError(f"{len(self.words)} words but {len(self.scores)} scores")

    def as_pairs(self) -> list[tuple[str, float]]:
        return list(zip(self.words, self.scores))

    @classmethod
    def for_text(cls, text: str, scores: Sequence[float], method: str, label: str) -> "AttributionResult":
        return cls(tuple(words_of(text)), tuple(scores), method, label)


# -- feedback signals ------------------------------------------------------


class AttributionMode(str, enum.Enum):
    TOP = "top"
    LEAST = "least"
    RANDOM = "random"


@dataclass(frozen=True)
class NoFeedback:
    kind = "none"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind}


@dataclass(frozen=True)
class ConfidenceFeedback:
    label: str
    percent: int
    kind = "confidence"

    def __post_init__(self) -> None:
        if not 0 <= self.percent <= 100:
            raise InputError(f"confidence percent {self.percent} outside [0, 100]")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "label": self.label, "percent": self.percent}


@dataclass(frozen=True)
class AttributionFeedback:
    words: tuple[tuple[str, float], ...]
    mode: AttributionMode
    method: str
    kind = "attribution"

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "words": [[w, s] for w, s in self.words],
            "mode": self.mode.value,
            "method": self.method,
        }


@dataclass(frozen=True)
class NaturalLanguageFeedback:
    critique_text: str
    kind = "natural_language"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "critique_text": self.critique_text}


FeedbackSignal = NoFeedback | ConfidenceFeedback | AttributionFeedback | NaturalLanguageFeedback


def feedback_from_dict(d: Mapping[str, Any]) -> FeedbackSignal:
    kind = d["kind"]
    if kind == "none":
        return NoFeedback()
    if kind == "confidence":
        return ConfidenceFeedback(d["label"], int(d["percent"]))
    if kind == "attribution":
        return AttributionFeedback(
            tuple((w, float(s)) for w, s in d["words"]), AttributionMode(d["mode"]), d["method"]
        )
    if kind == "natural_language":
        return NaturalLanguageFeedback(d["critique_text"])
    raise InputError(f"unknown feedback kind {kind!r}")


# -- rounds and traces -----------------------------------------------------


@dataclass(frozen=True)
class CandidateRound:
    k: int
    candidate_text: str
    prediction: Prediction
    feedback: FeedbackSignal
    valid: bool
    parse_failed: bool
    transition: TransitionKind
    label_changed: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "candidate_text": self.candidate_text,
            "prediction": self.prediction.to_dict(),
            "feedback": self.feedback.to_dict(),
            "valid": self.valid,
            "label_changed": self.label_changed,
            "parse_failed": self.parse_failed,
            "transition": self.transition.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CandidateRound":
        return cls(
            k=int(d["k"]),
            candidate_text=d["candidate_text"],
            prediction=Prediction.from_dict(d["prediction"]),
            feedback=feedback_from_dict(d["feedback"]),
            valid=bool(d["valid"]),
            parse_failed=bool(d["parse_failed"]),
            transition=TransitionKind(d["transition"]),
            label_changed=bool(d.get("label_changed", False)),
        )


@dataclass(frozen=True)
class Trace:
    instance: Instance
    original_prediction: Prediction | None
    target_label: str | None
    rounds: tuple[CandidateRound, ...]
    stopped_early: bool
    generator_calls: int
    classifier_calls: int
    error: str | None = None
    warnings: tuple[str, ...] = ()
    scores: Mapping[str, float | None] = field(default_factory=dict)

    @property
    def aborted(self) -> bool:
        return self.error is not None

    @property
    def final(self) -> CandidateRound | None:
        return self.rounds[-1] if self.rounds else None

    def first_valid_round(self) -> int | None:
        for r in self.rounds:
            if r.valid:
                return r.k
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "instance": self.instance.to_dict(),
            "original_prediction": (
                self.original_prediction.to_dict() if self.original_prediction else None
            ),
            "target_label": self.target_label,
            "rounds": [r.to_dict() for r in self.rounds],
            "stopped_early": self.stopped_early,
            "generator_calls": self.generator_calls,
            "classifier_calls": self.classifier_calls,
            "error": self.error,
            "warnings": list(self.warnings),
            "scores": dict(self.scores),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Trace":
        orig = d.get("original_prediction")
        return cls(
            instance=Instance.from_dict(d["instance"]),
            original_prediction=Prediction.from_dict(orig) if orig else None,
            target_label=d.get("target_label"),
            rounds=tuple(CandidateRound.from_dict(r) for r in d["rounds"]),
            stopped_early=bool(d["stopped_early"]),
            generator_calls=int(d["generator_calls"]),
            classifier_calls=int(d["classifier_calls"]),
            error=d.get("error"),
            warnings=tuple(d.get("warnings", ())),
            scores=dict(d.get("scores", {})),
        )


def check_trace_invariants(trace: Trace, max_iterations: int, early_stop: bool) -> list[str]:
    """Return human-readable violations of the trace invariants (empty when sound)."""
    problems: list[str] = []
    rounds = trace.rounds
    if not trace.aborted and not 1 <= len(rounds) <= max_iterations + 1:
        problems.append(f"round count {len(rounds)} outside [1, {max_iterations + 1}]")
    for i, r in enumerate(rounds):
        if r.k != i:
            problems.append(f"round {i} carries index {r.k}")
        if r.valid != (r.prediction.label == trace.target_label):
            problems.append(f"round {i}: validity flag disagrees with target label")
        if r.parse_failed:
            previous = rounds[i - 1].candidate_text if i else trace.instance.edit_text
            if r.candidate_text != previous:
                problems.append(f"round {i}: parse failure did not reuse the previous candidate")
    if early_stop:
        for i, r in enumerate(rounds[:-1]):
            if r.valid:
                problems.append(f"round {i + 1} follows a valid round under early stopping")
        if any(r.transition is TransitionKind.SUCCESS_TO_FAIL for r in rounds):
            problems.append("SuccessToFail transition under early stopping")
    if trace.stopped_early and (not rounds or not rounds[-1].valid):
        problems.append("stopped_early set but the last round is not valid")
    return problems
