"""Closed-form classifiers shared by the attribution and acceptance tests."""

from __future__ import annotations

import math
import random
from typing import Callable, Mapping

from cfrefine.core import LabelSpace, Prediction
from cfrefine.services.mocks import LexiconClassifier

AB = LabelSpace(("A", "B"))


class Counting:
    """Wraps a text -> Prediction function and counts calls."""

    def __init__(self, fn: Callable[[str], Prediction]):
        self.fn = fn
        self.calls = 0

    def __call__(self, text: str) -> Prediction:
        self.calls += 1
        return self.fn(text)


def binary(p_a: float) -> Prediction:
    p_a = min(1.0, max(0.0, p_a))
    return Prediction("A" if p_a >= 0.5 else "B", {"A": p_a, "B": 1.0 - p_a})


def linear_presence(weights: Mapping[str, float], base: float) -> Callable[[str], Prediction]:
    """p(A) = base + sum of weights of the words present."""

    def classify(text: str) -> Prediction:
        present = set(text.split())
        return binary(base + sum(w for word, w in weights.items() if word in present))

    return classify


def and_game(a: str, b: str, base: float = 0.5, bonus: float = 0.4) -> Callable[[str], Prediction]:
    """p(A) rises by ``bonus`` only when both words are present."""

    def classify(text: str) -> Prediction:
        words = set(text.split())
        return binary(base + (bonus if a in words and b in words else 0.0))

    return classify


def decisive_word(word: str, base: float = 0.1, jump: float = 0.7, per_other: float = 0.005):
    def classify(text: str) -> Prediction:
        words = text.split()
        return binary(base + (jump if word in words else 0.0) + per_other * sum(w != word for w in words))

    return classify


def random_lexicon(rng: random.Random, d: int, vocab: int = 12):
    """A three-class lexicon mock and a d-word text drawn from its vocabulary."""
    space = LabelSpace(("x", "y", "z"))
    words = [f"w{i}" for i in range(vocab)]
    weights = {label: {w: rng.uniform(-2, 2) for w in words} for label in space.labels}
    clf = LexiconClassifier(space, weights)
    text = " ".join(rng.choice(words) for _ in range(d))
    return clf, text


def lexicon_classify(clf: LexiconClassifier) -> Callable[[str], Prediction]:
    return lambda text: clf.predict(text)


def sigmoid_delta(w: float) -> float:
    return 1 / (1 + math.exp(-w)) - 0.5
