import json

import pytest
from hypothesis import given, strategies as st

from rdistill.records import (Crop, ImageRef, MalformedRecord, OcrBox, QAExample,
                              TaskRecord, parse_example, parse_record,
                              serialize_example, serialize_record)


def make_image(id="img1", h=400, w=400, crop=None):
    return ImageRef(id=id, height=h, width=w, crop=crop)


def make_record(task="QRA", decoder_input="", decoder_output="Q <answer> A"):
    return TaskRecord(task=task, example_id="e1", image=make_image(),
                      decoder_input=decoder_input, decoder_output=decoder_output)


class TestTaskRecordSerialization:
    def test_empty_decoder_input_field(self):
        line = serialize_record(make_record())
        assert '"decoder_input":""' in line

    def test_round_trip(self):
        r = make_record()
        assert parse_record(serialize_record(r)) == r

    def test_serialization_is_deterministic(self):
        r = make_record()
        assert serialize_record(r).encode() == serialize_record(r).encode()

    def test_missing_task_field(self):
        line = serialize_record(make_record())
        obj = json.loads(line)
        del obj["task"]
        with pytest.raises(MalformedRecord):
            parse_record(json.dumps(obj))

    def test_unknown_task_name(self):
        line = serialize_record(make_record()).replace('"QRA"', '"FOO"')
        with pytest.raises(MalformedRecord):
            parse_record(line)

    def test_not_json(self):
        with pytest.raises(MalformedRecord):
            parse_record("garbage with no marker")


text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=30)

records = st.builds(
    TaskRecord,
    task=st.just("APR"),
    example_id=text,
    image=st.builds(make_image, id=text,
                    h=st.integers(1, 2000), w=st.integers(1, 2000)),
    decoder_input=text,
    decoder_output=text,
)


@given(records)
def test_round_trip_property(record):
    assert parse_record(serialize_record(record)) == record


@given(records, records)
def test_serialization_injective(a, b):
    if a != b:
        assert serialize_record(a) != serialize_record(b)


class TestInvariants:
    def test_gold_answers_non_empty(self):
        with pytest.raises(ValueError):
            QAExample(example_id="e", image=make_image(), question="q", gold_answers=())

    def test_none_sentinel_rejected_as_gold(self):
        with pytest.raises(ValueError):
            QAExample(example_id="e", image=make_image(), question="q",
                      gold_answers=(" None ",))

    def test_ocr_box_out_of_bounds(self):
        with pytest.raises(ValueError):
            QAExample(example_id="e", image=make_image(h=100, w=100), question="q",
                      gold_answers=("a",),
                      ocr_boxes=(OcrBox("t", 0, 0, 150, 20),))

    def test_decoder_input_empty_iff_input_free_task(self):
        with pytest.raises(ValueError):
            make_record(task="QRA", decoder_input="q")
        with pytest.raises(ValueError):
            make_record(task="APR", decoder_input="")

    def test_crop_within_extent(self):
        with pytest.raises(ValueError):
            make_image(h=400, w=400, crop=Crop("height", 100, 500))

    def test_crop_larger_than_short_edge(self):
        with pytest.raises(ValueError):
            make_image(h=1000, w=400, crop=Crop("height", 0, 600))


def test_example_round_trip():
    ex = QAExample(
        example_id="e1",
        image=make_image(h=1000, w=400, crop=Crop("height", 0, 400)),
        question="what?",
        gold_answers=("a", "b"),
        ocr_text="x y",
        ocr_boxes=(OcrBox("x", 0, 0, 10, 10), OcrBox("y", 0, 20, 10, 30)),
        structured_table=(("h1", "h2"), ("1", "2")),
    )
    assert parse_example(serialize_example(ex)) == ex
