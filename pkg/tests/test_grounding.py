from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adreason.backends import MockRule
from adreason.grounding import (
    WEAK_EVIDENCE,
    AnchorSet,
    EvidenceChain,
    EvidenceRef,
    Verdict,
    anchors_in_text,
    extract_anchors,
    needs_visual_grounding,
    parse_anchor_reply,
    pick_anchor,
    refine_answer,
    repair_visual_anchor,
    strip_meta_phrases,
    verify_grounding,
)
from adreason.ingest import SubjectProfile

from helpers import hash_mock, reply


def chain(*texts):
    return EvidenceChain([EvidenceRef(i, "clip_search", t) for i, t in enumerate(texts)])


# -- anchors ---------------------------------------------------------------------


def test_quoted_ocr_becomes_anchor():
    anchors = extract_anchors(chain('[POTENTIAL_TEXT]: "NIKE"'))
    assert "nike" in anchors and anchors.sources["nike"] == (0,)


def test_empty_evidence_gives_empty_set():
    assert len(extract_anchors(EvidenceChain())) == 0


def test_registry_subject_name_found_in_observation():
    man = SubjectProfile("S01", "man in red", ["red jacket"])
    anchors = extract_anchors(chain("a man in red opens the door"), subjects=[man])
    assert "man in red" in anchors


def test_rendering_vocabulary_is_not_an_anchor():
    terms = anchors_in_text("Block 1: 0–5 s (score 1.2)\n[SCENE]: The Ferrari Logo glows. Clip Search done.")
    assert {"ferrari", "logo", "ferrari logo"} <= terms
    assert not terms & {"block", "scene", "clip", "search", "the"}


def test_anchor_set_normalises_and_merges():
    a = AnchorSet({"  Red  Ferrari ": (2,), "red ferrari": (1,), "": (0,)})
    assert a.terms == ["red ferrari"] and a.sources["red ferrari"] == (1, 2)
    assert "RED FERRARI" in a
    assert a.union(AnchorSet.of(["logo"], 4)).terms == ["logo", "red ferrari"]


def test_llm_anchors_union_and_failure():
    ev = chain("a sink in a bathroom")
    mock = hash_mock([reply("plumber, leaking pipe, the", task="anchors")])
    got = extract_anchors(ev, mock, use_llm=True)
    assert {"plumber", "leaking pipe"} <= set(got) and "the" not in got
    assert mock.requests[0].role == "refiner"
    assert len(extract_anchors(ev, hash_mock([MockRule(error="transport")]), use_llm=True)) == 0


def test_parse_anchor_reply():
    assert parse_anchor_reply("Red car,\nBlue  sky, a, one two three four five six seven") == ["red car", "blue sky"]


@settings(max_examples=80, deadline=None)
@given(st.lists(st.text(alphabet='abcXYZ "\n', max_size=30), max_size=5), st.text(alphabet='abcXYZ "', max_size=30))
def test_extract_anchors_monotone(texts, extra):
    before = set(extract_anchors(chain(*texts)))
    after = set(extract_anchors(chain(*texts, extra)))
    assert before <= after


# -- verification ------------------------------------------------------------------


def test_ferrari_answer_accepted():
    v = verify_grounding("a red Ferrari speeds past", chain("x"), AnchorSet.of(["ferrari"]))
    assert v.accepted and v.matched == ("ferrari",)


def test_abstract_answer_rejected():
    v = verify_grounding("the brand is trustworthy", chain("x"), AnchorSet.of(["sink", "plumber"]))
    assert v.state == "Reject" and v.reason == WEAK_EVIDENCE
    assert v.note.startswith("Reject: Weak Evidence. ")
    assert "plumber" in v.detail and "sink" in v.detail


def test_no_anchors_and_no_verifier_rejects():
    assert not verify_grounding("something", chain("x"), AnchorSet()).accepted
    failing = hash_mock([MockRule(error="transport")])
    assert not verify_grounding("something", chain("x"), [], failing, use_llm=True).accepted


def test_word_boundaries():
    assert not verify_grounding("a carpet", chain("x"), ["car"]).accepted
    assert verify_grounding("the car.", chain("x"), ["car"]).accepted


def test_llm_verifier_branch():
    mock = hash_mock([reply("Claims are backed.\nVERDICT: SUPPORTED", task="verify")])
    v = verify_grounding("it sells freedom", chain("open road"), [], mock, use_llm=True)
    assert v.accepted and v.reason == "verifier affirmed"
    mock = hash_mock([reply("VERDICT: UNSUPPORTED", task="verify")])
    assert not verify_grounding("it sells freedom", chain("open road"), [], mock, use_llm=True).accepted


def test_verdict_validation():
    with pytest.raises(ValueError):
        Verdict("Reject", " ")
    with pytest.raises(ValueError):
        Verdict("Maybe", "x")
    with pytest.raises(ValueError):
        verify_grounding("  ", chain("x"), [])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from(["ferrari", "red car", "logo", "sink", "man in red"]), max_size=5),
       st.sampled_from(["a red car drives", "the logo", "nothing here", "man in red smiles"]), st.randoms())
def test_verification_order_insensitive(terms, answer, rnd):
    shuffled = list(terms)
    rnd.shuffle(shuffled)
    a = verify_grounding(answer, chain("x"), terms)
    b = verify_grounding(answer, chain("x"), shuffled)
    assert (a.state, a.matched) == (b.state, b.matched)


# -- repair ---------------------------------------------------------------------------


def test_repair_vehicle_to_ferrari():
    anchors = AnchorSet.of(["red ferrari"])
    mock = hash_mock([reply("a red Ferrari", task="repair")])
    fixed = repair_visual_anchor("a vehicle", anchors, mock, question="What specific car appears?")
    assert fixed == "a red Ferrari"
    assert verify_grounding(fixed, chain("x"), anchors).accepted
    assert "red ferrari" in mock.requests[0].text


def test_repair_appends_anchor_when_rewrite_misses():
    mock = hash_mock([reply(" ".join(["word"] * 30), task="repair")])
    fixed = repair_visual_anchor("a vehicle", ["logo", "red ferrari"], mock, max_words=25)
    assert fixed.endswith("(red ferrari)") and len(fixed.split()) == 25


def test_repair_no_anchors_or_failure_keeps_answer():
    assert repair_visual_anchor("a vehicle", [], hash_mock()) == "a vehicle"
    assert repair_visual_anchor("a vehicle", ["car"], hash_mock([MockRule(error="auth")])) == "a vehicle"


def test_grounding_classifier_and_pick():
    assert needs_visual_grounding("What SPECIFIC object is held?")
    assert not needs_visual_grounding("Why is the mood sad?")
    assert needs_visual_grounding("which brand?", ["which brand"])
    assert pick_anchor(["car", "red car", "blue car"]) == "blue car"


# -- refinement ----------------------------------------------------------------------


def test_refine_returns_short_compression():
    draft = " ".join(f"w{i}" for i in range(60))
    short = " ".join(f"c{i}" for i in range(12))
    mock = hash_mock([reply(short, task="refine")])
    assert refine_answer(draft, mock) == short
    assert len(mock.requests) == 1


def test_refine_truncates_after_one_reprompt():
    long = " ".join(f"x{i}" for i in range(40))
    mock = hash_mock([reply(long, task="refine"), reply(long, task="refine")])
    out = refine_answer("draft", mock)
    assert out.split() == long.split()[:25]
    assert len(mock.requests) == 2 and "40 words" in mock.requests[1].messages[-1].content


def test_refine_strips_meta_phrases():
    assert refine_answer("The answer is Pepsi.") == "Pepsi."
    mock = hash_mock([reply("The video shows that Pepsi wins.", task="refine")])
    assert refine_answer("Pepsi", mock) == "Pepsi wins."


def test_refine_backend_failure_truncates():
    long = " ".join(["a"] * 30)
    assert refine_answer(long, hash_mock([MockRule(error="auth")])) == " ".join(["a"] * 25)
    with pytest.raises(ValueError):
        refine_answer(" ")
    with pytest.raises(ValueError):
        refine_answer("x", max_words=0)


def test_strip_meta_phrases_cases():
    assert strip_meta_phrases("Based on the video, the man is sad") == "The man is sad"
    assert strip_meta_phrases("In the video: a dog.") == "A dog."
    assert strip_meta_phrases("the answer is") == ""


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["red", "The answer is", "car", "the video shows", "Nike", "\n", "big"]), min_size=1, max_size=80))
def test_refine_always_within_budget(parts):
    draft = " ".join(parts)
    if not draft.strip():
        return
    out = refine_answer(draft)
    assert len(out.split()) <= 25
    if not {"red", "car", "nike", "big"} & set(draft.lower().split()):
        return  # nothing but filler: the draft is kept rather than emptied
    assert "the video shows" not in out.lower() and "the answer is" not in out.lower()
