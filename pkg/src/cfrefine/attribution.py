"""Black-box word attributions computed by deleting words and re-classifying.

All methods share one perturbation semantics: a coalition keeps the words
whose mask bit is 1 and joins them with single spaces; the all-ones
coalition is the original text and the empty coalition is the empty string,
sent to the classifier as-is. ``classify`` is any callable mapping a text to
a :class:`~cfrefine.core.Prediction`.
"""

from __future__ import annotations

import itertools
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from cfrefine.core import AttributionMode, AttributionResult, Prediction, words_of
from cfrefine.errors import InputError, NumericalError, OracleCapError, UndefinedCorrelationError
from cfrefine.metrics import correlation

Classify = Callable[[str], Prediction]

EXACT_SHAPLEY_MAX_WORDS = 12
DEFAULT_AOPC_BINS = (1, 5, 10, 20, 50)


@dataclass(frozen=True)
class SurrogateConfig:
    n_samples: int = 1000
    kernel_width: float | None = None  # LIME; None means 0.25 * sqrt(d)
    ridge_lambda: float = 1e-3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise InputError("n_samples must be positive")
        if self.kernel_width is not None and self.kernel_width <= 0:
            raise InputError("kernel_width must be > 0")
        if self.ridge_lambda < 0:
            raise InputError("ridge_lambda must be >= 0")


LIME_DEFAULTS = SurrogateConfig(n_samples=1000)
KERNEL_SHAP_DEFAULTS = SurrogateConfig(n_samples=2048, ridge_lambda=0.0)


class _Coalitions:
    """Memoised p(label | coalition text), optionally fanned out over threads."""

    def __init__(self, text: str, classify: Classify, label: str, workers: int = 1):
        self.text = text
        self.words = words_of(text)
        self.d = len(self.words)
        self.classify = classify
        self.label = label
        self.workers = workers
        self.cache: dict[tuple[int, ...], float] = {}
        self.calls = 0

    def render(self, mask: Sequence[int]) -> str:
        if all(mask):
            return self.text
        return " ".join(w for w, keep in zip(self.words, mask) if keep)

    def values(self, masks: Iterable[Sequence[int]]) -> list[float]:
        keys = [tuple(int(b) for b in m) for m in masks]
        todo = list(dict.fromkeys(k for k in keys if k not in self.cache))
        texts = [self.render(k) for k in todo]
        if self.workers > 1 and len(texts) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                preds = list(pool.map(self.classify, texts))
        else:
            preds = [self.classify(t) for t in texts]
        self.calls += len(todo)
        for k, p in zip(todo, preds):
            self.cache[k] = p.prob(self.label)
        return [self.cache[k] for k in keys]

    def value(self, mask: Sequence[int]) -> float:
        return self.values([mask])[0]


def _require_words(c: _Coalitions) -> None:
    if c.d < 1:
        raise InputError("attribution needs at least one word")


def leave_one_out(text: str, classify: Classify, label: str, *, workers: int = 1) -> AttributionResult:
    """score_i = p(label | x) - p(label | x without word i); d + 1 classifier calls."""
    c = _Coalitions(text, classify, label, workers)
    _require_words(c)
    masks = [tuple(1 for _ in range(c.d))]
    masks += [tuple(0 if j == i else 1 for j in range(c.d)) for i in range(c.d)]
    vals = c.values(masks)
    return AttributionResult(tuple(c.words), tuple(vals[0] - v for v in vals[1:]), "loo", label)


def _weighted_ridge(X: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> np.ndarray:
    """Coefficients of a weighted ridge fit with an unpenalised intercept."""
    sw = w.sum()
    xm = w @ X / sw
    ym = w @ y / sw
    Xc = X - xm
    yc = y - ym
    A = Xc.T @ (Xc * w[:, None]) + lam * np.eye(X.shape[1])
    b = Xc.T @ (w * yc)
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as e:
        raise NumericalError("singular surrogate system; raise ridge_lambda or n_samples") from e


def lime_attribute(
    text: str,
    classify: Classify,
    label: str,
    cfg: SurrogateConfig = LIME_DEFAULTS,
    *,
    workers: int = 1,
) -> AttributionResult:
    c = _Coalitions(text, classify, label, workers)
    _require_words(c)
    d = c.d
    if cfg.n_samples < d + 2:
        raise InputError(f"LIME needs n_samples >= d + 2 = {d + 2}")
    rng = np.random.default_rng(cfg.seed)
    Z = np.vstack([np.ones((1, d), dtype=int), rng.integers(0, 2, size=(cfg.n_samples - 1, d))])
    y = np.asarray(c.values(Z.tolist()))
    # cosine distance to the all-ones mask
    kept = Z.sum(axis=1)
    dist = 1.0 - np.sqrt(kept / d)
    width = cfg.kernel_width if cfg.kernel_width is not None else 0.25 * math.sqrt(d)
    w = np.exp(-(dist**2) / width**2)
    coef = _weighted_ridge(Z.astype(float), y, w, cfg.ridge_lambda)
    return AttributionResult(tuple(c.words), tuple(coef.tolist()), "lime", label)


def shapley_kernel_weight(d: int, size: int) -> float:
    return (d - 1) / (math.comb(d, size) * size * (d - size))


def kernel_shap(
    text: str,
    classify: Classify,
    label: str,
    cfg: SurrogateConfig = KERNEL_SHAP_DEFAULTS,
    *,
    workers: int = 1,
) -> AttributionResult:
    """Shapley-kernel weighted least squares under the efficiency constraint.

    Enumerates every proper coalition when 2^d - 2 <= n_samples (then the
    result is the exact Shapley value); otherwise samples coalition sizes in
    proportion to their total kernel mass and subsets uniformly within a size.
    """
    c = _Coalitions(text, classify, label, workers)
    _require_words(c)
    d = c.d
    full = c.value([1] * d)
    empty = c.value([0] * d)
    delta = full - empty
    if d == 1:
        return AttributionResult(tuple(c.words), (delta,), "kernel_shap", label)

    if 2**d - 2 <= cfg.n_samples:
        masks = [m for m in itertools.product((0, 1), repeat=d) if 0 < sum(m) < d]
        weights = [shapley_kernel_weight(d, sum(m)) for m in masks]
    else:
        rng = np.random.default_rng(cfg.seed)
        sizes = np.arange(1, d)
        mass = (d - 1) / (sizes * (d - sizes))
        counts: dict[tuple[int, ...], float] = {}
        for s in rng.choice(sizes, size=cfg.n_samples, p=mass / mass.sum()):
            on = rng.choice(d, size=int(s), replace=False)
            m = [0] * d
            for i in on:
                m[i] = 1
            key = tuple(m)
            counts[key] = counts.get(key, 0.0) + 1.0
        masks = list(counts)
        weights = list(counts.values())

    Z = np.asarray(masks, dtype=float)
    y = np.asarray(c.values(masks)) - empty
    w = np.sqrt(np.asarray(weights))
    # substitute phi_last = delta - sum(others)
    X = Z[:, :-1] - Z[:, [-1]]
    t = y - Z[:, -1] * delta
    sol, _, rank, _ = np.linalg.lstsq(X * w[:, None], t * w, rcond=None)
    if cfg.ridge_lambda == 0 and rank < d - 1:
        raise NumericalError(f"coalition sample spans rank {rank} < {d - 1}; raise n_samples")
    if cfg.ridge_lambda > 0:
        A = (X * w[:, None]).T @ (X * w[:, None]) + cfg.ridge_lambda * np.eye(d - 1)
        try:
            sol = np.linalg.solve(A, (X * w[:, None]).T @ (t * w))
        except np.linalg.LinAlgError as e:
            raise NumericalError("singular KernelSHAP system") from e
    phi = np.append(sol, delta - sol.sum())
    return AttributionResult(tuple(c.words), tuple(phi.tolist()), "kernel_shap", label)


def exact_shapley(text: str, classify: Classify, label: str, *, workers: int = 1) -> AttributionResult:
    """Brute-force Shapley values over all 2^d coalitions (d <= 12)."""
    c = _Coalitions(text, classify, label, workers)
    d = c.d
    if d > EXACT_SHAPLEY_MAX_WORDS:
        raise OracleCapError(f"exact Shapley capped at {EXACT_SHAPLEY_MAX_WORDS} words, got {d}")
    _require_words(c)
    masks = list(itertools.product((0, 1), repeat=d))
    value = dict(zip(masks, c.values(masks)))
    fact = [math.factorial(n) for n in range(d + 1)]
    phi = [0.0] * d
    for m in masks:
        size = sum(m)
        for i in range(d):
            if m[i]:
                continue
            with_i = m[:i] + (1,) + m[i + 1 :]
            weight = fact[size] * fact[d - size - 1] / fact[d]
            phi[i] += weight * (value[with_i] - value[m])
    return AttributionResult(tuple(c.words), tuple(phi), "exact_shapley", label)


def feedback_k(d: int) -> int:
    """Number of feedback words: max(10, floor(0.10 * d)), never more than d."""
    return min(d, max(10, math.floor(0.10 * d)))


def select_feedback_indices(attr: AttributionResult, mode: AttributionMode | str, seed: int = 0) -> list[int]:
    mode = AttributionMode(mode)
    d = len(attr.words)
    k = feedback_k(d)
    positions = range(d)
    if mode is AttributionMode.TOP:
        return sorted(positions, key=lambda i: (-attr.scores[i], i))[:k]
    if mode is AttributionMode.LEAST:
        return sorted(positions, key=lambda i: (attr.scores[i], i))[:k]
    return sorted(random.Random(seed).sample(list(positions), k))


def select_feedback_words(attr: AttributionResult, mode: AttributionMode | str, seed: int = 0) -> list[str]:
    """top: k best (descending); least: k worst (ascending); random: seeded sample in text order."""
    return [attr.words[i] for i in select_feedback_indices(attr, mode, seed)]


class Faithfulness(NamedTuple):
    comprehensiveness: float
    sufficiency: float
    tau_loo: float


def bin_sizes(d: int, bins: Sequence[float] = DEFAULT_AOPC_BINS) -> list[int]:
    """Words per AOPC bin: ceil(b% of d), at least one, at most d."""
    return [min(d, max(1, math.ceil(b * d / 100))) for b in bins]


def faithfulness(
    text: str,
    attr: AttributionResult,
    classify: Classify,
    label: str,
    bins: Sequence[float] = DEFAULT_AOPC_BINS,
    *,
    workers: int = 1,
) -> Faithfulness:
    """AOPC comprehensiveness / sufficiency and Kendall tau-b against leave-one-out."""
    c = _Coalitions(text, classify, label, workers)
    _require_words(c)
    if list(attr.words) != c.words:
        raise InputError("attribution words do not match the text")
    d = c.d
    ranked = sorted(range(d), key=lambda i: (-attr.scores[i], i))
    p_full = c.value([1] * d)
    comp, suff = [], []
    for n in bin_sizes(d, bins):
        top = set(ranked[:n])
        without = [0 if i in top else 1 for i in range(d)]
        only = [1 if i in top else 0 for i in range(d)]
        comp.append(p_full - c.value(without))
        suff.append(p_full - c.value(only))
    loo = leave_one_out(text, classify, label, workers=workers)
    try:
        tau = correlation(attr.scores, loo.scores, "kendall") if d >= 2 else float("nan")
    except UndefinedCorrelationError:
        tau = float("nan")
    return Faithfulness(float(np.mean(comp)), float(np.mean(suff)), tau)


METHODS = {
    "loo": lambda text, classify, label, cfg, workers: leave_one_out(text, classify, label, workers=workers),
    "lime": lambda text, classify, label, cfg, workers: lime_attribute(
        text, classify, label, cfg or LIME_DEFAULTS, workers=workers
    ),
    "kernel_shap": lambda text, classify, label, cfg, workers: kernel_shap(
        text, classify, label, cfg or KERNEL_SHAP_DEFAULTS, workers=workers
    ),
}


def attribute(
    method: str,
    text: str,
    classify: Classify,
    label: str,
    cfg: SurrogateConfig | None = None,
    *,
    workers: int = 1,
) -> AttributionResult:
    """Dispatch to a black-box method by name ('loo', 'lime', 'kernel_shap')."""
    try:
        fn = METHODS[method]
    except KeyError:
        raise InputError(f"unknown black-box attribution method {method!r}") from None
    return fn(text, classify, label, cfg, workers)
