"""Quantitative measures over predictions, embeddings, token scores, traces and ratings."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from cfrefine.core import TransitionKind
from cfrefine.errors import InputError, UndefinedAgreementError, UndefinedCorrelationError

if TYPE_CHECKING:
    from cfrefine.core import Trace
    from cfrefine.services.clients import ScoredTokens


def lfr(orig_preds: Sequence[str], cf_preds: Sequence[str]) -> float:
    """Label flip rate: share of pairs whose predicted label differs."""
    if len(orig_preds) != len(cf_preds):
        raise InputError(f"{len(orig_preds)} original vs {len(cf_preds)} counterfactual predictions")
    if not orig_preds:
        raise InputError("LFR needs at least one instance")
    return sum(a != b for a, b in zip(orig_preds, cf_preds)) / len(orig_preds)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        raise InputError("cosine of a zero vector is undefined")
    return float(a @ b) / denom


def semantic_similarity(
    x_texts: Sequence[str], cf_texts: Sequence[str], embed: Callable[[str], np.ndarray]
) -> float:
    """Mean cosine similarity between paired sentence embeddings."""
    if len(x_texts) != len(cf_texts):
        raise InputError("text lists differ in length")
    if not x_texts:
        raise InputError("semantic similarity needs at least one pair")
    return float(np.mean([cosine(embed(x), embed(c)) for x, c in zip(x_texts, cf_texts)]))


def perplexity(scored: "ScoredTokens | Sequence[float]") -> float:
    """exp of the negative mean token log-probability."""
    logprobs = list(getattr(scored, "logprobs", scored))
    if not logprobs:
        raise InputError("perplexity of an empty token list is undefined")
    return math.exp(-math.fsum(logprobs) / len(logprobs))


def pass_at_k(traces: Iterable["Trace"], k: int) -> float:
    """Share of traces whose first valid round falls within the first k attempts."""
    if k < 1:
        raise InputError("k must be >= 1")
    traces = list(traces)
    if not traces:
        return 0.0
    hits = 0
    for t in traces:
        first = t.first_valid_round()
        if first is not None and first < k:
            hits += 1
    return hits / len(traces)


def transition_histogram(traces: Iterable["Trace"], n_rounds: int) -> list[dict[str, int]]:
    """Per-round counts of transition kinds.

    A trace that already ended on a valid round keeps contributing
    ``PreviousSuccess`` to later rounds; one that ended invalid stops counting.
    """
    rows: list[Counter] = [Counter() for _ in range(n_rounds)]
    for t in traces:
        for k in range(n_rounds):
            if k < len(t.rounds):
                rows[k][t.rounds[k].transition.value] += 1
            elif t.rounds and t.rounds[-1].valid:
                rows[k][TransitionKind.PREVIOUS_SUCCESS.value] += 1
    return [{kind.value: row.get(kind.value, 0) for kind in TransitionKind} for row in rows]


# -- agreement ---------------------------------------------------------------


@dataclass(frozen=True)
class RatingsMatrix:
    raters: tuple[str, ...]
    items: tuple[str, ...]
    values: tuple[tuple[int | None, ...], ...]  # [item][rater]

    def __post_init__(self) -> None:
        if len(self.raters) < 2:
            raise InputError("agreement needs at least two raters")
        if len(self.values) != len(self.items):
            raise InputError("one row of ratings per item expected")
        for row in self.values:
            if len(row) != len(self.raters):
                raise InputError("one rating (or None) per rater expected in every row")

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, str, int | None]]) -> "RatingsMatrix":
        """Build from (rater, item, value) triples; absent pairs become missing."""
        table: dict[tuple[str, str], int | None] = {}
        raters: list[str] = []
        items: list[str] = []
        for rater, item, value in records:
            if rater not in raters:
                raters.append(rater)
            if item not in items:
                items.append(item)
            table[(item, rater)] = value
        values = tuple(tuple(table.get((i, r)) for r in raters) for i in items)
        return cls(tuple(raters), tuple(items), values)


def _delta2(level: str, values: list[float], n_c: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if level == "nominal":
        return (v[:, None] != v[None, :]).astype(float)
    if level == "interval":
        return (v[:, None] - v[None, :]) ** 2
    if level == "ordinal":
        cum = np.concatenate([[0.0], np.cumsum(n_c)])
        m = len(values)
        d = np.zeros((m, m))
        for c in range(m):
            for k in range(m):
                lo, hi = min(c, k), max(c, k)
                d[c, k] = (cum[hi + 1] - cum[lo] - (n_c[c] + n_c[k]) / 2) ** 2
        return d
    raise InputError(f"unknown measurement level {level!r}")


def krippendorff_alpha(m: RatingsMatrix, level: str = "ordinal") -> float:
    """Coincidence-matrix Krippendorff's alpha; 1.0 when observed disagreement is zero."""
    units = [[v for v in row if v is not None] for row in m.values]
    units = [u for u in units if len(u) >= 2]
    if not units:
        raise UndefinedAgreementError("no item was rated by two or more raters")
    domain = sorted({v for u in units for v in u})
    index = {v: i for i, v in enumerate(domain)}
    o = np.zeros((len(domain), len(domain)))
    for u in units:
        counts = Counter(u)
        mu = len(u)
        for c, nc in counts.items():
            for k, nk in counts.items():
                pairs = nc * (nk - 1) if c == k else nc * nk
                o[index[c], index[k]] += pairs / (mu - 1)
    n_c = o.sum(axis=1)
    n = n_c.sum()
    d2 = _delta2(level, domain, n_c)
    observed = float((o * d2).sum())
    if observed == 0.0:
        return 1.0
    expected = float((np.outer(n_c, n_c) * d2).sum()) / (n - 1)
    if expected == 0.0:
        raise UndefinedAgreementError("expected disagreement is zero")
    return float(1.0 - observed / expected)


# -- correlation -------------------------------------------------------------


def correlation(a: Sequence[float], b: Sequence[float], method: str = "pearson") -> float:
    """Pearson, Spearman or Kendall tau-b."""
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError("correlation needs two equal-length 1-d sequences")
    if len(x) < 2:
        raise InputError("correlation needs at least two points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("correlation with a constant input is undefined")
    if np.array_equal(x, y):
        return 1.0  # exact; scipy's tie corrections can land one ulp short
    if method == "pearson":
        r = stats.pearsonr(x, y).statistic
    elif method == "spearman":
        r = stats.spearmanr(x, y).statistic
    elif method == "kendall":
        r = stats.kendalltau(x, y, variant="b").statistic
    else:
        raise InputError(f"unknown correlation method {method!r}")
    return float(np.clip(r, -1.0, 1.0))


def summarize(values: Iterable[float]) -> Mapping[str, float]:
    arr = np.asarray([v for v in values if v is not None and not math.isnan(v)], dtype=float)
    if arr.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "n": 0}
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": int(arr.size)}
