from __future__ import annotations

import pytest

from maskrepair.tokenizer import TokenizedSentence, apply_casing, splice, tokenize

SAMPLES = [
    "I saw a big rabbit",
    "Movie was GREAT, wasn't it?",
    "  leading spaces — and a dash",
    "naïve café pâté",
    "numbers 42 and x9y mix",
    "''quoted'' words 'tis said",
    "",
    "!!!",
]


def test_words_are_case_folded():
    sentence = tokenize("I Saw A BIG Rabbit")
    assert sentence.words == ("i", "saw", "a", "big", "rabbit")


def test_surface_preserves_casing():
    sentence = tokenize("Movie was GREAT")
    assert [sentence.surface(i) for i in range(3)] == ["Movie", "was", "GREAT"]


def test_punctuation_is_not_a_word():
    sentence = tokenize("wait... what?! (really)")
    assert sentence.words == ("wait", "what", "really")


def test_apostrophes_stay_inside_words():
    sentence = tokenize("don't stop, y'all")
    assert sentence.words == ("don't", "stop", "y'all")


def test_pure_quote_runs_are_skipped():
    sentence = tokenize("she said '' nothing")
    assert sentence.words == ("she", "said", "nothing")


@pytest.mark.parametrize("text", SAMPLES)
def test_spans_reconstruct_original(text):
    sentence = tokenize(text)
    raw = text.encode("utf-8")
    rebuilt = bytearray()
    cursor = 0
    for start, end in sentence.spans:
        rebuilt += raw[cursor:start]
        rebuilt += raw[start:end]
        cursor = end
    rebuilt += raw[cursor:]
    assert bytes(rebuilt) == raw


@pytest.mark.parametrize("text", SAMPLES)
def test_span_contents_match_words(text):
    sentence = tokenize(text)
    for i, word in enumerate(sentence.words):
        assert sentence.surface(i).casefold() == word


def test_apply_casing_rules():
    assert apply_casing("BIG", "huge") == "HUGE"
    assert apply_casing("Movie", "film") == "Film"
    assert apply_casing("movie", "film") == "film"
    # neither all-caps nor initial-capital keeps the lowercase replacement
    assert apply_casing("iPhone", "handset") == "handset"
    assert apply_casing("I", "we") == "We"


def test_splice_empty_is_identity():
    text = "No change — at all."
    assert splice(tokenize(text), {}) == text


def test_splice_applies_casing_and_keeps_punctuation():
    sentence = tokenize("The Movie was GREAT, right?")
    out = splice(sentence, {1: "film", 3: "bad"})
    assert out == "The Film was BAD, right?"


def test_splice_matches_independent_span_surgery():
    text = "Ce café — naïve TEST, n'est-ce pas?"
    sentence = tokenize(text)
    replacements = {1: "bistro", 3: "probe"}
    # independent rebuild: split on byte spans and apply the casing rule
    raw = text.encode("utf-8")
    expected = bytearray()
    cursor = 0
    for i, (start, end) in enumerate(sentence.spans):
        expected += raw[cursor:start]
        if i in replacements:
            surface = raw[start:end].decode("utf-8")
            word = replacements[i]
            if len(surface) > 1 and surface.isupper():
                word = word.upper()
            elif surface[:1].isupper():
                word = word[:1].upper() + word[1:]
            expected += word.encode("utf-8")
        else:
            expected += raw[start:end]
        cursor = end
    expected += raw[cursor:]
    assert splice(sentence, replacements) == expected.decode("utf-8")


def test_with_words_replaces_only_given_positions():
    sentence = tokenize("one two three")
    swapped = sentence.with_words({1: "TWO"})
    assert swapped.words == ("one", "TWO", "three")
    assert swapped.spans == sentence.spans
    assert swapped.original_text == sentence.original_text


def test_empty_text():
    sentence = tokenize("")
    assert len(sentence) == 0
    assert isinstance(sentence, TokenizedSentence)
