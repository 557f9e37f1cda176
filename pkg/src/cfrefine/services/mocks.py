"""Deterministic in-process stand-ins for the model services.

Each mock exposes ``handle(payload) -> dict`` speaking the wire format of its
route, so it can sit behind :class:`LocalTransport` or a real HTTP server.

The scripted generator reads prompts rendered from the shipped templates and
assumes single-line texts: the line after ``Original ...:`` is the input and
the line after ``Current counterfactual:`` is the candidate.
"""

from __future__ import annotations

import hashlib
import math
import re
import string
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from cfrefine.core import LabelSpace, Prediction
from cfrefine.prompts import JudgeScores, format_judge_scores
from cfrefine.services.clients import (
    AttributionClient,
    ClassifierClient,
    EmbedderClient,
    GeneratorClient,
    ScorerClient,
    Services,
    WindowConfig,
)
from cfrefine.services.transport import LocalTransport

_PUNCT = string.punctuation + "“”‘’"


def normalize_word(word: str) -> str:
    return word.strip(_PUNCT).casefold()


class LexiconClassifier:
    """Signed keyword weights per class, softmax over summed class scores."""

    def __init__(
        self,
        space: LabelSpace,
        weights: Mapping[str, Mapping[str, float]],
        bias: Mapping[str, float] | None = None,
        model: str = "mock-lexicon",
        report_tokens: bool = True,
    ):
        self.space = space
        self.weights = {label: {normalize_word(w): float(v) for w, v in ws.items()} for label, ws in weights.items()}
        self.bias = dict(bias or {})
        self.model = model
        self.report_tokens = report_tokens

    def class_scores(self, text: str) -> list[float]:
        words = [normalize_word(w) for w in text.split()]
        scores = []
        for label in self.space.labels:
            table = self.weights.get(label, {})
            s = self.bias.get(label, 0.0)
            for w in words:
                s += table.get(w, 0.0)
            scores.append(s)
        return scores

    def probs(self, text: str) -> dict[str, float]:
        scores = self.class_scores(text)
        m = max(scores)
        exps = [math.exp(s - m) for s in scores]
        total = sum(exps)
        return {label: e / total for label, e in zip(self.space.labels, exps)}

    def predict(self, text_fields: Mapping[str, str] | str) -> Prediction:
        text = text_fields if isinstance(text_fields, str) else " ".join(text_fields.values())
        return Prediction.from_probs(self.probs(text), self.space)

    def handle(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        fields = payload["fields"]
        pred = self.predict(fields)
        body: dict[str, Any] = {"label": pred.label, "probs": dict(pred.probs), "model": self.model}
        if self.report_tokens:
            body["n_tokens"] = sum(len(t.split()) for t in fields.values())
        return body


@dataclass(frozen=True)
class PromptView:
    kind: str  # base | refine | nl_feedback | nl_edit | judge
    original: str | None
    current: str | None
    keywords: tuple[str, ...] = ()
    lines: tuple[str, ...] = ()

    def line_after(self, prefix: str) -> str | None:
        for i, line in enumerate(self.lines[:-1]):
            if line.startswith(prefix):
                return self.lines[i + 1]
        return None


def parse_prompt(prompt: str) -> PromptView:
    lines = prompt.split("\n")
    if "Wrap your reasoning inside <think>" in prompt:
        kind = "nl_feedback"
    elif "LLM-as-a-judge" in prompt:
        kind = "judge"
    elif prompt.startswith("Based on the feedback below"):
        kind = "nl_edit"
    elif "Current counterfactual:" in lines:
        kind = "refine"
    else:
        kind = "base"
    original = None
    current = None
    keywords: tuple[str, ...] = ()
    for i, line in enumerate(lines[:-1]):
        if original is None and line.startswith("Original") and line.endswith(":"):
            original = lines[i + 1]
        if current is None and line in ("Current counterfactual:", "Counterfactual example:"):
            current = lines[i + 1]
    for line in lines:
        if line.startswith("Key words influencing this prediction: "):
            body = line[len("Key words influencing this prediction: ") :].rstrip(".")
            keywords = tuple(w for w in body.split(", ") if w)
    return PromptView(kind, original, current, keywords, tuple(lines))


@dataclass(frozen=True)
class RewriteRule:
    """Replace whole-word ``old`` with ``new``.

    ``rounds`` limits the rule to those round indices (None: every round).
    With ``needs_top_keyword`` the rule fires only when ``old`` is the first
    word listed in attribution feedback.
    """

    old: str
    new: str
    rounds: frozenset[int] | None = None
    needs_top_keyword: bool = False

    def applies(self, round_index: int | None, view: PromptView) -> bool:
        if self.rounds is not None and (round_index is None or round_index not in self.rounds):
            return False
        if self.needs_top_keyword:
            return bool(view.keywords) and normalize_word(view.keywords[0]) == normalize_word(self.old)
        return True

    def apply(self, text: str) -> str:
        return re.sub(rf"(?<!\w){re.escape(self.old)}(?!\w)", self.new, text)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RewriteRule":
        rounds = d.get("rounds")
        return cls(
            d["old"],
            d["new"],
            frozenset(int(r) for r in rounds) if rounds is not None else None,
            bool(d.get("needs_top_keyword", False)),
        )


class ScriptedGenerator:
    """Applies ordered rewrite rules to the text named in the prompt.

    Round indices are only known when ``tick`` is set: every output then gets
    the tick word appended, and the round of a refinement prompt is the number
    of ticks already in its current candidate. A parse-failure round adds no
    tick, so a failure listed in ``fail_rounds`` repeats on the rounds after it.
    """

    def __init__(
        self,
        rules: Sequence[RewriteRule] = (),
        *,
        tick: str | None = None,
        critique: str = "Replace the words that carry the original label.",
        fail_rounds: Iterable[int] = (),
        preamble: str = "Here is the revised text.",
        model: str = "mock-scripted",
    ):
        self.rules = list(rules)
        self.tick = tick
        self.critique = critique
        self.fail_rounds = frozenset(fail_rounds)
        self.preamble = preamble
        self.model = model
        if tick is None and (self.fail_rounds or any(r.rounds is not None for r in self.rules)):
            raise ValueError("round-indexed rules need a tick word")

    def round_of(self, view: PromptView) -> int | None:
        if view.kind == "base":
            return 0
        if self.tick is None or view.current is None:
            return None
        return view.current.split().count(self.tick)

    def complete(self, prompt: str) -> str:
        view = parse_prompt(prompt)
        if view.kind == "nl_feedback":
            return f"<think>{self.critique}</think>"
        source = view.current if view.current is not None else view.original
        if source is None:
            raise ValueError("scripted generator could not find a text in the prompt")
        k = self.round_of(view)
        if k is not None and k in self.fail_rounds:
            return "I cannot produce a counterfactual for this input."
        text = source
        for rule in self.rules:
            if rule.applies(k, view):
                text = rule.apply(text)
        if self.tick is not None:
            text = f"{text} {self.tick}"
        return f"{self.preamble}\n<cf>{text}</cf>"

    def handle(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        return {"text": self.complete(payload["prompt"]), "model": self.model}


class ScriptedJudge:
    """Judge stand-in: fixed scores, or a function of (original, counterfactual)."""

    def __init__(
        self,
        scores: tuple[int, int, int] | Callable[[str, str], tuple[int, int, int]],
        model: str = "mock-judge",
    ):
        self.scores = scores
        self.model = model

    def handle(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        view = parse_prompt(payload["prompt"])
        if callable(self.scores):
            values = self.scores(view.original or "", view.current or "")
        else:
            values = self.scores
        return {"text": format_judge_scores(JudgeScores(*values)), "model": self.model}


class HashEmbedder:
    """Bag-of-words count vector with md5 bucket hashing; order-insensitive."""

    def __init__(self, dim: int = 64, model: str = "mock-hash-embedder"):
        self.dim = dim
        self.model = model

    def vector(self, text: str) -> list[float]:
        v = [0.0] * self.dim
        for w in text.split():
            token = normalize_word(w)
            if token:
                v[int(hashlib.md5(token.encode("utf-8")).hexdigest(), 16) % self.dim] += 1.0
        return v

    def handle(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        return {"vector": self.vector(payload["text"]), "model": self.model}


class UnigramScorer:
    """Context-free token scorer over whitespace tokens."""

    def __init__(self, probs: Mapping[str, float], unk_prob: float = 1e-4, model: str = "mock-unigram"):
        self.probs = dict(probs)
        self.unk_prob = unk_prob
        self.model = model

    def handle(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        tokens = payload["text"].split()
        return {
            "tokens": tokens,
            "logprobs": [math.log(self.probs.get(t, self.unk_prob)) for t in tokens],
            "model": self.model,
        }


class WordLengthAttributor:
    """External-attribution stand-in: each word scores its own length."""

    model = "mock-word-length"

    def handle(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        return {
            "spans": [{"text": w, "score": float(len(w))} for w in payload["text"].split()],
            "model": self.model,
        }


@dataclass
class MockStack:
    """The mock objects behind one :class:`Services` bundle."""

    classifier: LexiconClassifier
    generator: ScriptedGenerator
    embedder: HashEmbedder = field(default_factory=HashEmbedder)
    scorer: UnigramScorer = field(default_factory=lambda: UnigramScorer({}, unk_prob=0.01))
    attributor: WordLengthAttributor = field(default_factory=WordLengthAttributor)

    def handlers(self) -> dict[str, Callable[[Mapping[str, Any]], dict[str, Any]]]:
        return {
            "generate": self.generator.handle,
            "classify": self.classifier.handle,
            "embed": self.embedder.handle,
            "score": self.scorer.handle,
            "attribute": self.attributor.handle,
        }

    def services(
        self, window: WindowConfig | None = None, max_prompt_chars: int | None = None, **client_kw: Any
    ) -> Services:
        transport = LocalTransport(self.handlers())
        return Services(
            generator=GeneratorClient(transport, max_prompt_chars=max_prompt_chars, **client_kw),
            classifier=ClassifierClient(transport, self.classifier.space, window=window, **client_kw),
            embedder=EmbedderClient(transport, **client_kw),
            scorer=ScorerClient(transport, **client_kw),
            attributor=AttributionClient(transport, **client_kw),
        )


def sentiment_stack(
    rules: Sequence[RewriteRule] = (RewriteRule("boring", "great"),),
    *,
    tick: str | None = None,
    **generator_kw: Any,
) -> MockStack:
    """Binary sentiment mock: 'great'/'good' push positive, 'boring'/'bad' push negative."""
    space = LabelSpace(("negative", "positive"))
    classifier = LexiconClassifier(
        space,
        {"positive": {"great": 2.0, "good": 1.0}, "negative": {"boring": 2.0, "bad": 1.0}},
    )
    return MockStack(classifier, ScriptedGenerator(rules, tick=tick, **generator_kw))
