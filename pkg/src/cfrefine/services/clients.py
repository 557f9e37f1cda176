"""Typed clients for the generator, classifier, embedder, scorer and attributor."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from cfrefine.core import AttributionResult, LabelSpace, Prediction, tokenize_words
from cfrefine.errors import (
    AlignmentError,
    DegenerateEmbeddingError,
    InputError,
    PromptTooLongError,
    ProtocolError,
)
from cfrefine.services.transport import ServiceClient, Transport


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.9
    top_p: float = 0.95
    top_k: int = 50
    max_new_tokens: int = 4096
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise InputError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise InputError("top_p must lie in (0, 1]")
        if self.top_k < 1:
            raise InputError("top_k must be >= 1")
        if self.max_new_tokens < 1:
            raise InputError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class WindowConfig:
    window_size: int = 512
    stride: int = 256

    def __post_init__(self) -> None:
        if not 0 < self.stride <= self.window_size:
            raise InputError("need 0 < stride <= window_size")


@dataclass(frozen=True)
class ScoredTokens:
    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.logprobs):
            raise ProtocolError(f"{len(self.tokens)} tokens but {len(self.logprobs)} logprobs")
        if any(lp > 0 for lp in self.logprobs):
            raise ProtocolError("log-probabilities must be <= 0")


class GeneratorClient(ServiceClient):
    route = "generate"

    def __init__(self, transport: Transport, *, max_prompt_chars: int | None = None, **kw: Any):
        super().__init__(transport, **kw)
        self.max_prompt_chars = max_prompt_chars

    def generate(self, prompt: str, params: GenerationParams | None = None) -> str:
        params = params or GenerationParams()
        if self.max_prompt_chars is not None and len(prompt) > self.max_prompt_chars:
            raise PromptTooLongError(
                f"prompt has {len(prompt)} characters, limit is {self.max_prompt_chars}"
            )
        payload = {
            "prompt": prompt,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "top_k": params.top_k,
            "max_new_tokens": params.max_new_tokens,
            "seed": params.seed,
        }
        text = self._field(self._request(payload), "text", self.route)
        if not isinstance(text, str):
            raise ProtocolError("generate response 'text' is not a string")
        return text


def window_starts(n: int, window: int, stride: int) -> list[int]:
    """Start offsets of overlapping windows that together cover ``n`` items."""
    if n <= window:
        return [0]
    starts = list(range(0, n - window + 1, stride))
    if starts[-1] + window < n:
        starts.append(n - window)
    return starts


def vote(predictions: Sequence[Prediction], space: LabelSpace) -> Prediction:
    """Majority label over windows; ties go to the higher mean probability, then space order."""
    counts = {label: 0 for label in space.labels}
    for p in predictions:
        counts[p.label] += 1
    mean = {
        label: sum(p.prob(label) for p in predictions) / len(predictions) for label in space.labels
    }
    total = sum(mean.values())
    mean = {label: v / total for label, v in mean.items()}
    top = max(counts.values())
    tied = [label for label in space.labels if counts[label] == top]
    winner = tied[0]
    for label in tied[1:]:
        if mean[label] > mean[winner]:
            winner = label
    return Prediction(winner, mean)


class ClassifierClient(ServiceClient):
    """Explained-model client with optional sliding-window majority voting.

    Token counts come from the service's ``n_tokens`` when reported, otherwise
    whitespace words. Only the longest text field is windowed; other fields
    ride along whole in every window.
    """

    route = "classify"

    def __init__(
        self,
        transport: Transport,
        space: LabelSpace,
        *,
        window: WindowConfig | None = None,
        **kw: Any,
    ):
        super().__init__(transport, **kw)
        self.space = space
        self.window = window

    def _parse(self, body: Mapping[str, Any]) -> Prediction:
        probs = self._field(body, "probs", self.route)
        if not isinstance(probs, dict):
            raise ProtocolError("classify response 'probs' is not an object")
        try:
            pred = Prediction.from_probs({k: float(v) for k, v in probs.items()}, self.space)
        except (InputError, TypeError, ValueError) as e:
            raise ProtocolError(f"bad classify response: {e}") from e
        label = body.get("label", pred.label)
        if label not in self.space:
            raise ProtocolError(f"classify returned unknown label {label!r}")
        return Prediction(label, pred.probs)

    def classify_counted(
        self, text_fields: Mapping[str, str], *, allow_empty: bool = False
    ) -> tuple[Prediction, int]:
        """Classify and report how many requests it took."""
        if not allow_empty and not any(t.strip() for t in text_fields.values()):
            raise InputError("cannot classify empty text")
        fields = dict(text_fields)
        n_words = sum(len(tokenize_words(t)) for t in fields.values())
        if self.window is None or n_words <= self.window.window_size:
            body = self._request({"fields": fields})
            pred = self._parse(body)
            n_tokens = body.get("n_tokens")
            if self.window is None or not isinstance(n_tokens, int) or n_tokens <= self.window.window_size:
                return pred, 1
            return self._windowed(fields, n_words, n_tokens, calls=1)
        return self._windowed(fields, n_words, n_words, calls=0)

    def classify(self, text_fields: Mapping[str, str], *, allow_empty: bool = False) -> Prediction:
        return self.classify_counted(text_fields, allow_empty=allow_empty)[0]

    def _windowed(
        self, fields: dict[str, str], n_words: int, n_tokens: int, calls: int
    ) -> tuple[Prediction, int]:
        assert self.window is not None
        name = max(fields, key=lambda f: len(tokenize_words(fields[f])))
        words = [w for w, _ in tokenize_words(fields[name])]
        scale = n_words / n_tokens
        size = max(1, math.floor(self.window.window_size * scale))
        stride = max(1, math.floor(self.window.stride * scale))
        preds = []
        for start in window_starts(len(words), size, stride):
            chunk = dict(fields)
            chunk[name] = " ".join(words[start : start + size])
            preds.append(self._parse(self._request({"fields": chunk})))
            calls += 1
        return vote(preds, self.space), calls


class EmbedderClient(ServiceClient):
    route = "embed"

    def __init__(self, transport: Transport, **kw: Any):
        super().__init__(transport, **kw)
        self.dim: int | None = None

    def embed(self, text: str) -> np.ndarray:
        vec = self._field(self._request({"text": text}), "vector", self.route)
        try:
            v = np.asarray(vec, dtype=float)
        except (TypeError, ValueError) as e:
            raise ProtocolError("embed response 'vector' is not numeric") from e
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ProtocolError("embed response must be a finite 1-d vector")
        if self.dim is None:
            self.dim = v.shape[0]
        elif v.shape[0] != self.dim:
            raise ProtocolError(f"embedding dimension changed from {self.dim} to {v.shape[0]}")
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise DegenerateEmbeddingError(f"zero embedding for text {text[:40]!r}")
        return v / norm


class ScorerClient(ServiceClient):
    route = "score"

    def score_tokens(self, text: str) -> ScoredTokens:
        if not text.strip():
            raise InputError("cannot score empty text")
        body = self._request({"text": text})
        tokens = self._field(body, "tokens", self.route)
        logprobs = self._field(body, "logprobs", self.route)
        if not isinstance(tokens, list) or not isinstance(logprobs, list):
            raise ProtocolError("score response fields must be lists")
        return ScoredTokens(tuple(str(t) for t in tokens), tuple(float(x) for x in logprobs))


_SUBWORD_MARKERS = ("##", "▁", "Ġ")
_SPECIAL_PIECES = {"[CLS]", "[SEP]", "[PAD]", "<s>", "</s>", "<pad>", "<|endoftext|>"}


def align_spans(text: str, spans: Sequence[tuple[str, float]]) -> list[float]:
    """Sum (sub)word span scores onto the whitespace words of ``text``."""
    pieces = []
    for piece, score in spans:
        if piece in _SPECIAL_PIECES:
            continue
        p = piece.strip()
        for marker in _SUBWORD_MARKERS:
            if p.startswith(marker):
                p = p[len(marker) :]
        if p:
            pieces.append((p.casefold(), float(score)))
    scores: list[float] = []
    i = 0
    for word, _ in tokenize_words(text):
        target = word.casefold()
        acc, total = "", 0.0
        while acc != target:
            if i >= len(pieces):
                raise AlignmentError(f"no attribution spans cover word {word!r}")
            piece, s = pieces[i]
            i += 1
            acc += piece
            total += s
            if not target.startswith(acc):
                raise AlignmentError(f"span {piece!r} does not align with word {word!r}")
        scores.append(total)
    if i != len(pieces):
        raise AlignmentError(f"{len(pieces) - i} attribution spans left over after alignment")
    return scores


class AttributionClient(ServiceClient):
    """External (e.g. white-box) attribution service, realigned to whitespace words."""

    route = "attribute"

    def __init__(self, transport: Transport, *, method: str = "external", **kw: Any):
        super().__init__(transport, **kw)
        self.method = method

    def attribute(self, text: str, label: str) -> AttributionResult:
        raw = self._field(self._request({"text": text, "label": label}), "spans", self.route)
        try:
            spans = [(s["text"], float(s["score"])) for s in raw]
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError("attribute response spans must be {text, score} objects") from e
        return AttributionResult.for_text(text, align_spans(text, spans), self.method, label)


@dataclass
class Services:
    """Bundle of the clients one run talks to. Only generator and classifier are mandatory."""

    generator: GeneratorClient
    classifier: ClassifierClient
    embedder: EmbedderClient | None = None
    scorer: ScorerClient | None = None
    attributor: AttributionClient | None = None

    def model_ids(self) -> dict[str, list[str]]:
        out = {}
        for name in ("generator", "classifier", "embedder", "scorer", "attributor"):
            client = getattr(self, name)
            if client is not None:
                out[name] = sorted(client.model_ids)
        return out
