"""RTTM and start/end label file reading and writing.

RTTM row layout::

    SPEAKER <rec> <chan> <onset> <dur> <NA> <NA> <speaker> <NA> <NA>

Label file layout: ``<onset> <offset> <label>`` per line.
"""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Iterable, Mapping, TextIO

from .timeline import Annotation, Segment, Timeline, Turn, normalize

# Boundaries are printed with 3 decimals; shorter turns would collapse.
MIN_WRITE_DURATION = 5e-4


class FormatError(ValueError):
    """Malformed input row. ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _float(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise FormatError(f"not a number: {token!r}", lineno) from None
    if not math.isfinite(value):
        raise FormatError(f"non-finite value: {token!r}", lineno)
    return value


def read_rttm(stream: Iterable[str]) -> dict[str, Annotation]:
    """Group SPEAKER rows per recording. Overlaps and row order are kept as-is."""
    turns: dict[str, list[Turn]] = defaultdict(list)
    for lineno, line in enumerate(stream, 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if fields[0] != "SPEAKER":
            continue
        if len(fields) < 9:
            raise FormatError(f"expected at least 9 fields, got {len(fields)}", lineno)
        onset = _float(fields[3], lineno)
        duration = _float(fields[4], lineno)
        if duration <= 0:
            raise FormatError(f"non-positive duration {duration}", lineno)
        if onset < 0:
            raise FormatError(f"negative onset {onset}", lineno)
        turns[fields[1]].append(Turn(Segment(onset, onset + duration), fields[7]))
    return {rec: Annotation(rec, tuple(ts)) for rec, ts in turns.items()}


def format_rttm_row(recording_id: str, turn: Turn) -> str:
    seg = turn.segment
    return (
        f"SPEAKER {recording_id} 1 {seg.onset:.3f} {seg.duration:.3f} "
        f"<NA> <NA> {turn.speaker} <NA> <NA>"
    )


def write_rttm(annotations: Mapping[str, Annotation] | Iterable[Annotation], stream: TextIO) -> None:
    if isinstance(annotations, Mapping):
        annotations = annotations.values()
    rows = []
    for ann in annotations:
        for turn in ann.turns:
            if turn.segment.duration < MIN_WRITE_DURATION:
                raise ValueError(
                    f"{ann.recording_id}: turn {turn.segment} is shorter than the written precision"
                )
            rows.append((ann.recording_id, turn.segment.onset, turn.segment.offset, turn.speaker, turn))
    rows.sort(key=lambda r: r[:4])
    for rec, _, _, _, turn in rows:
        stream.write(format_rttm_row(rec, turn) + "\n")


def read_labels(stream: Iterable[str], keep_labels: Iterable[str] | None = None) -> Timeline:
    """Union of rows whose label is in ``keep_labels`` (all rows when None)."""
    keep = None if keep_labels is None else set(keep_labels)
    segs = []
    for lineno, line in enumerate(stream, 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if len(fields) < 3:
            raise FormatError(f"expected '<onset> <offset> <label>', got {line.strip()!r}", lineno)
        onset, offset = _float(fields[0], lineno), _float(fields[1], lineno)
        if offset <= onset:
            raise FormatError(f"offset {offset} not after onset {onset}", lineno)
        if keep is None or fields[2] in keep:
            segs.append(Segment(onset, offset))
    return normalize(segs)


def write_labels(timeline: Timeline, stream: TextIO, label: str = "speech") -> None:
    for seg in timeline:
        stream.write(f"{seg.onset:.3f} {seg.offset:.3f} {label}\n")
