import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reftrack.core import (BBox, Detection, DescriptionRecord, DuplicateRecordError, ParseError, ScoreRow,
                           ScoreTable, Tracklet, iou, iou_matrix, parse_mot_line, read_descriptions, read_mot,
                           read_scores, read_tracklets, write_descriptions, write_mot, write_scores)

pos = st.floats(0.5, 500, allow_nan=False)
coord = st.floats(-200, 1500, allow_nan=False)
boxes = st.builds(BBox, coord, coord, pos, pos)


def test_parse_line_fields():
    d = parse_mot_line("1,3,10.0,20.0,5.0,8.0,0.9,1,1.0")
    assert d.frame == 1 and d.track_id == 3 and d.confidence == 0.9
    assert d.bbox == BBox(10.0, 20.0, 5.0, 8.0)


@pytest.mark.parametrize("line", ["1,3,10,20,5", "x,3,1,1,1,1,1,1,1", "1,3,1,1,0,1,1,1,1", "1,3,1,1,1,1,nan,1,1",
                                  "1.5,3,1,1,1,1,1,1,1"])
def test_parse_line_rejects(line):
    with pytest.raises(ParseError):
        parse_mot_line(line)


def test_read_reports_line_number(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("1,1,0,0,2,2,1,1,1\n1,2,0,0,2\n")
    with pytest.raises(ParseError) as err:
        read_mot(f)
    assert err.value.line_no == 2


def test_empty_file(tmp_path):
    f = tmp_path / "e.txt"
    f.write_text("")
    assert read_mot(f) == []


def test_two_lines_one_tracklet(tmp_path):
    f = tmp_path / "t.txt"
    f.write_text("2,7,0,0,2,2,1,1,1\n4,7,1,1,2,2,1,1,1\n")
    (t,) = read_tracklets(f)
    assert t.track_id == 7 and t.frames == [2, 4]


def test_duplicate_frame_id(tmp_path):
    f = tmp_path / "d.txt"
    f.write_text("2,7,0,0,2,2,1,1,1\n2,7,1,1,2,2,1,1,1\n")
    with pytest.raises(DuplicateRecordError):
        read_mot(f)


@given(st.lists(st.tuples(st.integers(1, 50), st.integers(1, 20), coord, coord, pos, pos,
                          st.floats(0, 1)), min_size=1, max_size=100))
@settings(max_examples=25, deadline=None)
def test_round_trip(tmp_path_factory, rows):
    seen, recs = set(), []
    for f, i, x, y, w, h, c in rows:
        if (f, i) not in seen:
            seen.add((f, i))
            recs.append(Detection(f, BBox(x, y, w, h), c, 1, i, 1.0))
    path = tmp_path_factory.mktemp("rt") / "r.txt"
    write_mot(recs, path)
    assert read_mot(path) == recs


def test_single_entry_tracklet_one_line(tmp_path):
    path = tmp_path / "one.txt"
    write_mot([Tracklet(4, ((3, BBox(1, 2, 3, 4)),))], path)
    assert len(path.read_text().splitlines()) == 1


def test_zero_width_rejected():
    with pytest.raises(ValueError):
        BBox(0, 0, 0, 5)


def test_iou_examples():
    a = BBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(5, 5, 1, 1)) == 0.0
    assert iou(a, BBox(1, 1, 2, 2)) == pytest.approx(1 / 7, abs=1e-15)


@given(boxes, boxes)
def test_iou_symmetric_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(st.lists(boxes, min_size=1, max_size=6), st.lists(boxes, min_size=1, max_size=6))
@settings(max_examples=50)
def test_iou_matrix_matches_scalar(xs, ys):
    m = iou_matrix(xs, ys)
    ref = np.array([[iou(a, b) for b in ys] for a in xs])
    np.testing.assert_allclose(m, ref, rtol=1e-12, atol=1e-12)


@given(boxes)
def test_center_form_involution(b):
    back = BBox.from_xyah(b.to_xyah())
    np.testing.assert_allclose(back.as_tuple(), b.as_tuple(), rtol=1e-9, atol=1e-9)


def test_descriptions_round_trip(tmp_path):
    ds = [DescriptionRecord(1, "red car moving", 0.25, {3: {1, 2}}), DescriptionRecord(2, ("left", "car"))]
    path = tmp_path / "d.json"
    write_descriptions(ds, path)
    assert read_descriptions(path) == ds


def test_description_frequency_range():
    with pytest.raises(ValueError):
        DescriptionRecord(1, "a", 1.5)


def test_scores_round_trip(tmp_path):
    table = ScoreTable([ScoreRow(1, 2, (0.1, 0.7), ((1, 8), (5, 12))), ScoreRow(3, 2, (0.4,), ((1, 3),))])
    path = tmp_path / "s.jsonl"
    write_scores(table, path)
    again = read_scores(path)
    assert again.rows == table.rows
    assert again.rows[0].frame_score(6) == pytest.approx(0.4)
    assert again.rows[0].frame_score(20) is None
