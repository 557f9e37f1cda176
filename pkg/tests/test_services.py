from __future__ import annotations

import math
import threading
import time

import numpy as np
import pytest

from cfrefine.core import LabelSpace, Prediction
from cfrefine.errors import (
    AlignmentError,
    DegenerateEmbeddingError,
    InputError,
    PromptTooLongError,
    ProtocolError,
    TransportError,
)
from cfrefine.services import (
    AttributionClient,
    ClassifierClient,
    EmbedderClient,
    GenerationParams,
    GeneratorClient,
    HttpTransport,
    LocalTransport,
    ScoredTokens,
    ScorerClient,
    WindowConfig,
    align_spans,
    vote,
    window_starts,
)
from cfrefine.services.mocks import HashEmbedder, LexiconClassifier, UnigramScorer, parse_prompt

BIN = LabelSpace(("negative", "positive"))
AB = LabelSpace(("A", "B"))


def test_http_round_trip_matches_local(http_server, stack):
    http = ClassifierClient(HttpTransport(http_server.url, token="s3cret"), BIN, retries=0)
    local = ClassifierClient(LocalTransport(stack.handlers()), BIN, retries=0)
    fields = {"text": "a boring but good film"}
    assert http.classify(fields) == local.classify(fields)
    route, auth, body = http_server.seen[-1]
    assert route == "classify" and auth == "Bearer s3cret" and body == {"fields": fields}
    assert http.model_ids == {"mock-lexicon"}


def test_http_generate_sends_sampling_params(http_server):
    gen = GeneratorClient(HttpTransport(http_server.url), retries=0)
    out = gen.generate("Original text:\nboring\n", GenerationParams(seed=11))
    assert "<cf>great</cf>" in out
    body = http_server.seen[-1][2]
    assert body == {"prompt": "Original text:\nboring\n", "temperature": 0.9, "top_p": 0.95, "top_k": 50,
                    "max_new_tokens": 4096, "seed": 11}


def test_retry_recovers_from_transient_5xx(http_server):
    http_server.fail_first["classify"] = 2
    c = ClassifierClient(HttpTransport(http_server.url), BIN, retries=3, backoff=0.0)
    c.classify({"text": "good"})
    assert c.calls == 1 and c.attempts == 3


def test_retries_exhausted_raise_transport_error():
    c = ClassifierClient(HttpTransport("http://127.0.0.1:9", timeout=1.0), BIN, retries=3, backoff=0.0)
    with pytest.raises(TransportError) as e:
        c.classify({"text": "good"})
    assert e.value.attempts == 4
    assert c.attempts == 4 and c.calls == 0


def test_backoff_is_exponential(monkeypatch):
    sleeps = []
    monkeypatch.setattr(time, "sleep", sleeps.append)
    c = ClassifierClient(LocalTransport({}), BIN, retries=3, backoff=0.5)
    with pytest.raises(TransportError):
        c.classify({"text": "x"})
    assert sleeps == [0.5, 1.0, 2.0]


def test_4xx_is_not_retried(http_server):
    c = ClassifierClient(HttpTransport(http_server.url + "/nope"), BIN, retries=3, backoff=0.0)
    with pytest.raises(ProtocolError):
        c.classify({"text": "x"})
    assert c.attempts == 1


def test_concurrency_cap_is_respected():
    active = 0
    peak = 0
    lock = threading.Lock()

    def slow(payload):
        nonlocal active, peak
        with lock:
            active += 1
            peak = max(peak, active)
        time.sleep(0.02)
        with lock:
            active -= 1
        return {"text": "<cf>x</cf>"}

    g = GeneratorClient(LocalTransport({"generate": slow}), retries=0, concurrency=2)
    threads = [threading.Thread(target=g.generate, args=("p",)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak <= 2 and g.calls == 8


def test_prompt_too_long():
    g = GeneratorClient(LocalTransport({}), max_prompt_chars=5)
    with pytest.raises(PromptTooLongError):
        g.generate("123456")


def test_generation_params_validation():
    with pytest.raises(InputError):
        GenerationParams(top_p=0.0)
    with pytest.raises(InputError):
        GenerationParams(temperature=-1)


def test_malformed_probs_is_protocol_error():
    c = ClassifierClient(LocalTransport({"classify": lambda p: {"label": "A", "probs": {"A": 0.9, "B": 0.3}}}), AB)
    with pytest.raises(ProtocolError):
        c.classify({"text": "x"})
    c = ClassifierClient(LocalTransport({"classify": lambda p: {"label": "A"}}), AB)
    with pytest.raises(ProtocolError):
        c.classify({"text": "x"})


def test_empty_text_is_input_error(services):
    with pytest.raises(InputError):
        services.classifier.classify({"text": "   "})
    assert services.classifier.classify({"text": ""}, allow_empty=True).label == "negative"


def test_window_starts_cover_everything():
    assert window_starts(10, 512, 256) == [0]
    assert window_starts(1000, 512, 256) == [0, 256, 488]
    for n in range(1, 60):
        starts = window_starts(n, 8, 3)
        covered = {i for s in starts for i in range(s, min(n, s + 8))}
        assert covered == set(range(n))


def test_vote_tie_breaks_on_mean_probability():
    # one window each; the mean of A is 0.53 so A wins the 1-1 tie
    w1 = Prediction("A", {"A": 0.61, "B": 0.39})
    w2 = Prediction("B", {"A": 0.45, "B": 0.55})
    out = vote([w1, w2], AB)
    assert out.label == "A"
    assert out.prob("A") == pytest.approx(0.53)


def test_vote_majority_beats_mean():
    preds = [Prediction("A", {"A": 0.51, "B": 0.49})] * 2 + [Prediction("B", {"A": 0.01, "B": 0.99})]
    out = vote(preds, AB)
    assert out.label == "A" and out.prob("B") > out.prob("A")


def test_windowed_classification_majority():
    clf = LexiconClassifier(BIN, {"positive": {"great": 1.0}, "negative": {"bad": 1.0}})
    c = ClassifierClient(LocalTransport({"classify": clf.handle}), BIN, window=WindowConfig(4, 4))
    text = "great great x x bad bad x x bad x x x"
    pred, calls = c.classify_counted({"text": text})
    assert calls == 3 and pred.label == "negative"  # 12 words > window: no whole-text call
    # short input: one call, no windows
    assert c.classify_counted({"text": "great"})[1] == 1


def test_windowing_uses_reported_token_count():
    clf = LexiconClassifier(BIN, {"positive": {"great": 1.0}})

    def handle(payload):
        body = clf.handle(payload)
        body["n_tokens"] = 2 * body["n_tokens"]  # two subword tokens per word
        return body

    c = ClassifierClient(LocalTransport({"classify": handle}), BIN, window=WindowConfig(4, 4))
    _, calls = c.classify_counted({"text": "a b c d"})
    assert calls == 1 + 2  # 8 tokens -> windows of 2 words


def test_embedder_normalizes_and_checks_dimension():
    vecs = iter([[3.0, 4.0], [1.0, 0.0, 0.0]])
    e = EmbedderClient(LocalTransport({"embed": lambda p: {"vector": next(vecs)}}))
    assert np.allclose(e.embed("a"), [0.6, 0.8])
    with pytest.raises(ProtocolError):
        e.embed("b")
    z = EmbedderClient(LocalTransport({"embed": lambda p: {"vector": [0.0, 0.0]}}))
    with pytest.raises(DegenerateEmbeddingError):
        z.embed("a")


def test_scorer_validation():
    s = ScorerClient(LocalTransport({"score": UnigramScorer({"a": 0.5}).handle}))
    st = s.score_tokens("a a")
    assert st.tokens == ("a", "a") and st.logprobs == (math.log(0.5),) * 2
    with pytest.raises(ProtocolError):
        ScoredTokens(("a",), (0.1,))
    with pytest.raises(ProtocolError):
        ScoredTokens(("a", "b"), (-0.1,))
    with pytest.raises(InputError):
        s.score_tokens(" ")


def test_align_spans_merges_subwords():
    spans = [("[CLS]", 9.0), ("▁un", 0.25), ("believ", 0.25), ("able", 0.5), ("Ġfilm", 1.0), ("[SEP]", 9.0)]
    assert align_spans("Unbelievable film", spans) == [1.0, 1.0]


def test_align_spans_errors():
    with pytest.raises(AlignmentError):
        align_spans("hello world", [("hello", 1.0)])
    with pytest.raises(AlignmentError):
        align_spans("hello", [("help", 1.0)])
    with pytest.raises(AlignmentError):
        align_spans("hello", [("hello", 1.0), ("extra", 1.0)])


def test_external_attribution_client(services):
    r = services.attributor.attribute("a boring movie", "negative")
    assert r.scores == (1.0, 6.0, 5.0) and r.method == "external"


def test_hash_embedder_is_order_insensitive():
    h = HashEmbedder()
    assert h.vector("good film") == h.vector("film good")


def test_parse_prompt_kinds():
    assert parse_prompt("Original text:\nx\n").kind == "base"
    v = parse_prompt("Original text:\nx\nCurrent counterfactual:\ny\nKey words influencing this prediction: y, z.")
    assert (v.kind, v.original, v.current, v.keywords) == ("refine", "x", "y", ("y", "z"))
