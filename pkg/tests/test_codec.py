import pytest
from hypothesis import given, strategies as st

from rdistill.codec import (ANSWER_BUDGET, CharBlockCounter, EmptyAnswer,
                            NoAnswerMarker, PREFIX_BUDGET, PROGRAM_BUDGET,
                            SEP_ANSWER, TABLE_BUDGET, WordCounter,
                            encode_program_rationale, encode_target,
                            linearize_table, parse_target)

WORD = WordCounter()
CHAR4 = CharBlockCounter()


class TestEncodeTarget:
    def test_canonical_format(self):
        out = encode_target("What is X?", "evidence here", "42")
        assert out == "What is X? <s> evidence here <answer> 42"

    def test_no_rationale(self):
        assert encode_target("Q", None, "A") == "Q <answer> A"

    def test_empty_answer(self):
        with pytest.raises(EmptyAnswer):
            encode_target("Q", "R", "  ")

    def test_long_rationale_trimmed_question_intact(self):
        rationale = " ".join(f"w{i}" for i in range(500))
        out = encode_target("What is X?", rationale, "42", WORD)
        prefix = out[:out.rfind(SEP_ANSWER)].rstrip()
        assert WORD.count(prefix) == PREFIX_BUDGET
        assert prefix.startswith("What is X? <s> ")

    def test_question_trimmed_only_after_rationale_gone(self):
        question = " ".join(f"q{i}" for i in range(200))
        out = encode_target(question, "r0 r1", "a", WORD)
        prefix = out[:out.rfind(SEP_ANSWER)].rstrip()
        assert WORD.count(prefix) <= PREFIX_BUDGET
        assert "r0" not in prefix

    def test_answer_truncated(self):
        answer = " ".join(f"a{i}" for i in range(50))
        out = encode_target("Q", None, answer, WORD)
        assert WORD.count(out.split(SEP_ANSWER)[-1]) <= ANSWER_BUDGET

    def test_separator_in_field_escaped(self):
        out = encode_target("is <answer> here?", "r <s> r", "a")
        assert out.count(SEP_ANSWER) == 1
        assert out.count("<s>") == 1
        parsed = parse_target(out)
        assert parsed.question == "is <answer> here?"
        assert parsed.rationale == "r <s> r"

    def test_program_marker_survives_in_rationale(self):
        rationale = encode_program_rationale([["a", "b"]], "Div(4, 2)")
        out = encode_target("Q", rationale, "2")
        assert "<program> Div(4, 2)" in out


class TestEncodeProgramRationale:
    def test_linearization(self):
        out = encode_program_rationale([["a", "b"], ["c", "d"]], "Div(25, 5)")
        assert out == "a | b \n c | d <program> Div(25, 5)"

    def test_empty_table(self):
        assert encode_program_rationale([], "Div(25, 5)") == "<program> Div(25, 5)"

    def test_long_table_rows_dropped(self):
        table = [[f"r{i}c0", f"r{i}c1"] for i in range(50)]
        out = encode_program_rationale(table, "Sum(1, 2)", WORD)
        segment = out[:out.find("<program>")].rstrip()
        assert WORD.count(segment) <= TABLE_BUDGET
        assert segment.startswith("r0c0 | r0c1")  # leading rows kept

    def test_long_program_truncated(self):
        program = "Sum(" + ", ".join(str(i) for i in range(200)) + ")"
        out = encode_program_rationale([], program, WORD)
        assert WORD.count(out.split("<program>")[-1]) <= PROGRAM_BUDGET


class TestParseTarget:
    def test_inverse_of_encode(self):
        t = parse_target("Q <s> R <answer> A")
        assert (t.question, t.rationale, t.answer) == ("Q", "R", "A")

    def test_none_sentinel(self):
        t = parse_target("Q <answer> None")
        assert t.rationale is None
        assert t.answer == "None"
        assert t.is_none

    def test_no_marker(self):
        with pytest.raises(NoAnswerMarker):
            parse_target("garbage with no marker")

    def test_splits_last_answer_marker(self):
        t = parse_target("Q <s> contains <answer> inside <answer> final")
        assert t.answer == "final"

    def test_splits_first_rationale_marker(self):
        t = parse_target("Q <s> r1 <s> r2 <answer> A")
        assert t.question == "Q"
        assert t.rationale == "r1 <s> r2"


clean_text = st.text(
    alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"),
                           whitelist_characters=" "),
    min_size=1, max_size=80,
).filter(lambda s: s.strip() == s and s.split())

cells = st.text(alphabet="abcdefgh123", min_size=1, max_size=6)


@given(clean_text, clean_text, clean_text)
def test_round_trip_when_untrimmed(q, r, a):
    out = encode_target(q, r, a, WORD)
    parsed = parse_target(out)
    if WORD.count(f"{q} <s> {r}") <= PREFIX_BUDGET and WORD.count(a) <= ANSWER_BUDGET:
        assert parsed.question == q
        assert parsed.rationale == r
        assert parsed.answer.strip() == a.strip()


@pytest.mark.parametrize("counter", [WORD, CHAR4], ids=["word", "char4"])
@given(q=clean_text, r=clean_text, a=clean_text)
def test_budgets_hold_for_any_counter(counter, q, r, a):
    out = encode_target(q, r, a, counter)
    idx = out.rfind(SEP_ANSWER)
    assert counter.count(out[:idx].rstrip()) <= PREFIX_BUDGET
    assert counter.count(out[idx + len(SEP_ANSWER):].strip()) <= ANSWER_BUDGET


@pytest.mark.parametrize("counter", [WORD, CHAR4], ids=["word", "char4"])
@given(table=st.lists(st.lists(cells, min_size=1, max_size=6), max_size=12),
       program=clean_text)
def test_program_budgets_hold(counter, table, program):
    out = encode_program_rationale(table, program, counter)
    idx = out.find("<program>")
    assert counter.count(out[:idx].rstrip()) <= TABLE_BUDGET
    assert counter.count(out[idx + len("<program>"):].strip()) <= PROGRAM_BUDGET


@given(st.text(max_size=40), st.integers(0, 30))
def test_counter_truncate_contract(text, budget):
    for counter in (WORD, CHAR4):
        assert counter.count(counter.truncate(text, budget)) <= budget


def test_linearize_table_basic():
    assert linearize_table([["a", "b"], ["c"]]) == "a | b \n c"
