import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diarkit.rttm_io import FormatError
from diarkit.segmentation import (
    EmbeddingSequence, SubSegment, frames_to_subsegments, read_embeddings, uniform_subsegment, write_embeddings,
)
from diarkit.timeline import Segment, Timeline


def spans(subs):
    return [(round(s.segment.onset, 9), round(s.segment.offset, 9)) for s in subs]


def test_uniform_examples():
    assert spans(uniform_subsegment(Timeline.from_pairs([(0, 1.0)]))) == [(0, 1.0)]
    assert spans(uniform_subsegment(Timeline.from_pairs([(0, 2.0)]))) == [(0, 1.5), (0.25, 1.75), (0.5, 2.0)]
    assert uniform_subsegment(Timeline.from_pairs([(0, 0.05)])) == []


def test_tail_window_aligned_to_end():
    got = spans(uniform_subsegment(Timeline.from_pairs([(0, 2.1)])))
    assert got == [(0, 1.5), (0.25, 1.75), (0.5, 2.0), (0.6, 2.1)]


def _windows_cs(a, b, window=150, shift=25, floor=10):
    """Window enumeration on an integer centisecond grid."""
    if b - a <= window:
        return [(a, b)] if b - a >= floor else []
    out = [(s, s + window) for s in range(a, b - window + 1, shift)]
    if out[-1][1] < b:
        out.append((b - window, b))
    return out


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3000), st.integers(1, 800)), max_size=6))
def test_uniform_matches_integer_enumeration(items):
    speech = Timeline.from_pairs([(a / 100, (a + d) / 100) for a, d in items]).normalize()
    want = []
    for seg in speech:
        want += [(x / 100, y / 100) for x, y in _windows_cs(round(seg.onset * 100), round(seg.offset * 100))]
    got = uniform_subsegment(speech)
    assert np.allclose(spans(got), want, atol=1e-9) if want else got == []
    assert [s.index for s in got] == list(range(len(got)))


def test_frames_to_subsegments_midpoint_rule():
    subs = [SubSegment(Segment(0.0, 1.5), 0), SubSegment(Segment(0.25, 1.75), 1)]
    owner = frames_to_subsegments(subs, 0.01)
    centres = (np.arange(len(owner)) + 0.5) * 0.01
    assert np.all(owner[centres < 0.875] == 0)
    assert np.all(owner[centres > 0.875] == 1)
    one = frames_to_subsegments([SubSegment(Segment(1, 2), 0)], 0.01)
    assert np.all(one[:100] == -1) and np.all(one[100:] == 0)


def test_frames_tie_goes_to_lower_index():
    # centres 0.5 and 0.7: frame centred on 0.6 sits exactly between them
    subs = [SubSegment(Segment(0.0, 1.0), 0), SubSegment(Segment(0.2, 1.2), 1)]
    owner = frames_to_subsegments(subs, 0.1)
    assert owner[5] == 0 and owner[6] == 1
    # identical centres collapse onto the first one
    dup = [SubSegment(Segment(0.0, 1.0), 0), SubSegment(Segment(0.0, 1.0), 1)]
    assert set(frames_to_subsegments(dup, 0.01).tolist()) == {0}


def test_frames_outside_speech_unmapped():
    subs = [SubSegment(Segment(0.0, 1.5), 0)]
    owner = frames_to_subsegments(subs, 0.01, speech=Timeline.from_pairs([(0.2, 0.4)]), horizon=1.5)
    assert np.array_equal(np.flatnonzero(owner >= 0), np.arange(20, 40))


def _seq(n=4, d=3, rec="rec"):
    rng = np.random.default_rng(0)
    subs = [SubSegment(Segment(0.25 * i, 0.25 * i + 1.5), i) for i in range(n)]
    return EmbeddingSequence(rec, d, subs, rng.normal(size=(n, d)))


def test_embedding_round_trip_and_empty():
    seq = _seq()
    buf = io.StringIO()
    write_embeddings(seq, buf)
    back = read_embeddings(io.StringIO(buf.getvalue()))
    assert np.array_equal(back.vectors, seq.vectors)
    assert buf.getvalue().startswith("DIARKIT-EMB v1 rec 3\n")
    empty = EmbeddingSequence("e", 5, [], np.zeros((0, 5)))
    buf = io.StringIO()
    write_embeddings(empty, buf)
    again = read_embeddings(io.StringIO(buf.getvalue()))
    assert len(again) == 0 and again.dim == 5


def test_embedding_format_errors():
    with pytest.raises(FormatError):
        read_embeddings(io.StringIO("DIARKIT-EMB v1 rec 3\n0 1 1.0 2.0\n"))
    with pytest.raises(FormatError):
        read_embeddings(io.StringIO("DIARKIT-EMB v2 rec 3\n"))
    with pytest.raises(FormatError):
        read_embeddings(io.StringIO(""))
    with pytest.raises(ValueError):
        EmbeddingSequence("r", 3, [SubSegment(Segment(0, 1), 0)], np.zeros((1, 2)))


def test_within_and_select():
    seq = _seq(n=6)
    kept = seq.within(Timeline.from_pairs([(0.0, 1.0)]))
    # centres 0.75, 1.0, 1.25, ...; only 0.75 lies in [0, 1)
    assert len(kept) == 1 and kept.subsegments[0].index == 0
    sel = seq.select(np.array([1, 3]))
    assert [s.index for s in sel.subsegments] == [0, 1]
    assert np.array_equal(sel.vectors, seq.vectors[[1, 3]])
