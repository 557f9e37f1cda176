from __future__ import annotations

import math
import random

import numpy as np
import pytest

from cfrefine import attribution as A
from cfrefine.core import AttributionMode, AttributionResult
from cfrefine.errors import InputError, OracleCapError
from cfrefine.metrics import correlation
from cfrefine.services.mocks import sentiment_stack

from helpers import Counting, and_game, decisive_word, lexicon_classify, linear_presence, random_lexicon


@pytest.fixture
def sentiment():
    return lexicon_classify(sentiment_stack().classifier)


def test_loo_exact_on_lexicon(sentiment):
    r = A.leave_one_out("a boring film", sentiment, "negative")
    # removing 'boring' leaves a tie at exactly 0.5
    assert r.scores == (0.0, 1 / (1 + math.exp(-2.0)) - 0.5, 0.0)


def test_loo_exact_two_signals(sentiment):
    r = A.leave_one_out("good but boring", sentiment, "positive")
    full = math.exp(-1.0) / (1.0 + math.exp(-1.0))
    assert r.scores == (
        full - math.exp(-2.0) / (1.0 + math.exp(-2.0)),
        0.0,
        full - 1.0 / (math.exp(-1.0) + 1.0),
    )


def test_loo_call_count_is_d_plus_one(sentiment):
    c = Counting(sentiment)
    A.leave_one_out("the the film was boring", c, "negative")
    assert c.calls == 6


def test_exact_shapley_and_game():
    r = A.exact_shapley("not very good", and_game("not", "good"), "A")
    assert r.scores == pytest.approx((0.2, 0.0, 0.2), abs=1e-12)


def test_exact_shapley_efficiency_and_cap(sentiment):
    text = "good boring bad great plot"
    r = A.exact_shapley(text, sentiment, "positive")
    full = sentiment(text).prob("positive")
    empty = sentiment("").prob("positive")
    assert sum(r.scores) == pytest.approx(full - empty, abs=1e-12)
    with pytest.raises(OracleCapError):
        A.exact_shapley(" ".join(["w"] * 13), sentiment, "positive")


def test_kernel_shap_matches_exact_small():
    rng = random.Random(3)
    clf, text = random_lexicon(rng, 6)
    f = lexicon_classify(clf)
    ks = A.kernel_shap(text, f, "y")
    ex = A.exact_shapley(text, f, "y")
    assert np.max(np.abs(np.subtract(ks.scores, ex.scores))) < 1e-9


def test_kernel_shap_sampled_regime_keeps_efficiency():
    rng = random.Random(5)
    clf, text = random_lexicon(rng, 10)
    f = lexicon_classify(clf)
    ks = A.kernel_shap(text, f, "x", A.SurrogateConfig(n_samples=600, ridge_lambda=0.0, seed=1))
    ex = A.exact_shapley(text, f, "x")
    assert sum(ks.scores) == pytest.approx(sum(ex.scores), abs=1e-9)
    assert np.max(np.abs(np.subtract(ks.scores, ex.scores))) < 0.05
    again = A.kernel_shap(text, f, "x", A.SurrogateConfig(n_samples=600, ridge_lambda=0.0, seed=1))
    assert again == ks


def test_kernel_shap_single_word(sentiment):
    r = A.kernel_shap("boring", sentiment, "negative")
    assert r.scores[0] == pytest.approx(sentiment("boring").prob("negative") - 0.5)


def test_lime_recovers_linear_weights():
    words = [f"w{i}" for i in range(6)]
    weights = dict(zip(words, [0.30, -0.05, 0.12, 0.0, 0.08, 0.2]))
    r = A.lime_attribute(" ".join(words), linear_presence(weights, 0.2), "A", A.SurrogateConfig(2000, seed=4))
    assert r.scores == pytest.approx(list(weights.values()), abs=1e-3)


def test_lime_seeded_and_sample_floor(sentiment):
    cfg = A.SurrogateConfig(200, seed=9)
    assert A.lime_attribute("a boring film", sentiment, "negative", cfg) == A.lime_attribute(
        "a boring film", sentiment, "negative", cfg
    )
    with pytest.raises(InputError):
        A.lime_attribute("a b c d", sentiment, "negative", A.SurrogateConfig(5))


def test_lime_parallel_matches_serial(sentiment):
    cfg = A.SurrogateConfig(300, seed=2)
    text = "good plot but boring bad pacing"
    assert A.lime_attribute(text, sentiment, "positive", cfg, workers=4) == A.lime_attribute(
        text, sentiment, "positive", cfg
    )


def test_empty_text_rejected(sentiment):
    with pytest.raises(InputError):
        A.leave_one_out("   ", sentiment, "negative")


@pytest.mark.parametrize("d,k", [(1, 1), (5, 5), (10, 10), (50, 10), (109, 10), (110, 11), (200, 20)])
def test_feedback_k(d, k):
    assert A.feedback_k(d) == k


def _attr(d: int) -> AttributionResult:
    return AttributionResult(tuple(f"w{i}" for i in range(d)), tuple(float((i * 7) % d) for i in range(d)), "loo", "A")


def test_select_modes():
    r = _attr(50)
    top = A.select_feedback_words(r, AttributionMode.TOP)
    least = A.select_feedback_words(r, "least")
    assert len(top) == len(least) == 10
    assert [r.scores[r.words.index(w)] for w in top] == sorted((s for s in r.scores), reverse=True)[:10]
    assert [r.scores[r.words.index(w)] for w in least] == sorted(r.scores)[:10]
    rnd = A.select_feedback_indices(r, "random", seed=3)
    assert rnd == sorted(rnd) and len(set(rnd)) == 10
    assert rnd == A.select_feedback_indices(r, "random", seed=3)
    assert rnd != A.select_feedback_indices(r, "random", seed=4)


def test_bin_sizes():
    assert A.bin_sizes(20) == [1, 1, 2, 4, 10]
    assert A.bin_sizes(3) == [1, 1, 1, 1, 2]
    assert A.bin_sizes(1) == [1] * 5


def test_faithfulness_hand_computed():
    words = [f"o{i}" for i in range(19)]
    words.insert(4, "key")
    text = " ".join(words)
    f = decisive_word("key")
    loo = A.leave_one_out(text, f, "A")
    res = A.faithfulness(text, loo, f, "A")
    drops = [0.7 + 0.005 * (n - 1) for n in (1, 1, 2, 4, 10)]
    keeps = [0.095 - 0.005 * (n - 1) for n in (1, 1, 2, 4, 10)]
    assert res.comprehensiveness == pytest.approx(sum(drops) / 5, abs=1e-9)
    assert res.sufficiency == pytest.approx(sum(keeps) / 5, abs=1e-9)
    assert res.tau_loo == 1.0


def test_faithfulness_reversed_attribution_has_negative_tau(sentiment):
    text = "good plot but boring bad"
    loo = A.leave_one_out(text, sentiment, "positive")
    rev = AttributionResult(loo.words, tuple(-s for s in loo.scores), "x", "positive")
    assert A.faithfulness(text, rev, sentiment, "positive").tau_loo == pytest.approx(-1.0)


def test_kendall_tau_b_known_value():
    assert correlation([1, 2, 3, 4], [1, 3, 2, 4], "kendall") == pytest.approx(2 / 3)


def test_attribute_dispatch(sentiment):
    assert A.attribute("loo", "a boring film", sentiment, "negative").method == "loo"
    with pytest.raises(InputError):
        A.attribute("gradcam", "a", sentiment, "negative")
