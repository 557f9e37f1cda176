from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfrefine.core import (
    AttributionFeedback,
    AttributionMode,
    AttributionResult,
    CandidateRound,
    ConfidenceFeedback,
    Instance,
    LabelSpace,
    NaturalLanguageFeedback,
    NoFeedback,
    Prediction,
    Trace,
    TransitionKind,
    choose_target_label,
    classify_transition,
    feedback_from_dict,
    tokenize_words,
)
from cfrefine.errors import InputError, InvalidTargetError

AG = LabelSpace(("World", "Sports", "Business", "Sci/Tech"))
BIN = LabelSpace(("negative", "positive"))


def test_label_space_rejects_duplicates_and_empty():
    with pytest.raises(InputError):
        LabelSpace(("a", "a"))
    with pytest.raises(InputError):
        LabelSpace(())


def test_prediction_must_sum_to_one():
    Prediction("a", {"a": 0.7, "b": 0.3})
    with pytest.raises(InputError):
        Prediction("a", {"a": 0.7, "b": 0.4})
    with pytest.raises(InputError):
        Prediction("a", {"a": 1.2, "b": -0.2})


def test_prediction_from_probs_argmax_first_wins():
    p = Prediction.from_probs({"negative": 0.5, "positive": 0.5}, BIN)
    assert p.label == "negative"
    assert p.confidence == 0.5


def test_tokenize_words_spans():
    assert tokenize_words("  a bb\tc ") == [("a", (2, 3)), ("bb", (4, 6)), ("c", (7, 8))]


def test_instance_edit_field_must_exist():
    with pytest.raises(InputError):
        Instance("x", {"premise": "p"}, "entailment", "hypothesis")


def test_instance_with_edit_keeps_other_fields():
    inst = Instance("x", {"premise": "A man sleeps.", "hypothesis": "A man is awake."}, "contradiction", "hypothesis")
    assert inst.with_edit("A man rests.") == {"premise": "A man sleeps.", "hypothesis": "A man rests."}


def test_target_binary_is_the_other_label():
    assert choose_target_label("negative", BIN) == "positive"


def test_target_multiclass_seeded_golden():
    # pinned: seed 7 over the remaining AG News labels
    assert choose_target_label("World", AG, seed=7) == "Business"
    assert choose_target_label("World", AG, seed=7) == choose_target_label("World", AG, seed=7)


def test_target_override_equal_to_prediction_is_rejected():
    with pytest.raises(InvalidTargetError):
        choose_target_label("Sports", AG, override="Sports")
    assert choose_target_label("Sports", AG, override="World") == "World"


@given(st.sampled_from(AG.labels), st.integers(0, 2**32))
def test_target_never_equals_prediction(pred, seed):
    target = choose_target_label(pred, AG, seed=seed)
    assert target != pred and target in AG


@pytest.mark.parametrize(
    "before,after,kind",
    [
        (False, False, TransitionKind.FAIL_TO_FAIL),
        (False, True, TransitionKind.FAIL_TO_SUCCESS),
        (True, True, TransitionKind.PREVIOUS_SUCCESS),
        (True, False, TransitionKind.SUCCESS_TO_FAIL),
    ],
)
def test_classify_transition(before, after, kind):
    assert classify_transition(before, after) is kind


def test_attribution_result_for_text():
    r = AttributionResult.for_text("not good", [0.1, 0.9], "loo", "positive")
    assert r.as_pairs() == [("not", 0.1), ("good", 0.9)]
    with pytest.raises(InputError):
        AttributionResult.for_text("not good", [0.1], "loo", "positive")


def test_confidence_feedback_percent_range():
    ConfidenceFeedback("positive", 100)
    with pytest.raises(InputError):
        ConfidenceFeedback("positive", 101)


@pytest.mark.parametrize(
    "fb",
    [
        NoFeedback(),
        ConfidenceFeedback("positive", 87),
        AttributionFeedback((("boring", 0.4), ("plot", 0.1)), AttributionMode.TOP, "lime"),
        NaturalLanguageFeedback("Swap the adjective."),
    ],
)
def test_feedback_round_trip(fb):
    assert feedback_from_dict(fb.to_dict()) == fb


def test_trace_round_trip():
    inst = Instance("r1", {"text": "boring"}, "negative", "text")
    pred = Prediction("negative", {"negative": 0.9, "positive": 0.1})
    flipped = Prediction("positive", {"negative": 0.2, "positive": 0.8})
    rounds = (
        CandidateRound(0, "dull", pred, NoFeedback(), False, False, TransitionKind.FAIL_TO_FAIL),
        CandidateRound(1, "great", flipped, ConfidenceFeedback("negative", 90), True, False, TransitionKind.FAIL_TO_SUCCESS, True),
    )
    t = Trace(inst, pred, "positive", rounds, True, 2, 3, scores={"ss": 0.5, "ppl": None})
    back = Trace.from_dict(t.to_dict())
    assert back == t
    assert back.final.candidate_text == "great"
    assert back.first_valid_round() == 1
    assert not back.aborted
