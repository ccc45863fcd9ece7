"""Uniform sub-segmentation of speech and the embedding file format.

Embedding file::

    DIARKIT-EMB v1 <recording_id> <D>
    <onset> <offset> <x_1> ... <x_D>
    ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .rttm_io import FormatError
from .timeline import TOL, Segment, Timeline, normalize, quantize

EMB_MAGIC = "DIARKIT-EMB"
EMB_VERSION = "v1"


@dataclass(frozen=True)
class SubSegment:
    segment: Segment
    index: int

    @property
    def center(self) -> float:
        return self.segment.middle


def uniform_subsegment(
    speech: Timeline, window: float = 1.5, shift: float = 0.25, min_length: float = 0.1
) -> list[SubSegment]:
    if not 0 < shift <= window:
        raise ValueError(f"need 0 < shift <= window, got shift={shift} window={window}")
    spans: list[Segment] = []
    for seg in normalize(speech):
        if seg.duration <= window + TOL:
            if seg.duration >= min_length - TOL:
                spans.append(seg)
            continue
        k = 0
        while seg.onset + k * shift + window <= seg.offset + TOL:
            start = seg.onset + k * shift
            spans.append(Segment(start, min(start + window, seg.offset)))
            k += 1
        if spans[-1].offset < seg.offset - TOL:
            # tail window aligned to the segment end
            spans.append(Segment(seg.offset - window, seg.offset))
    return [SubSegment(s, i) for i, s in enumerate(spans)]


def frames_to_subsegments(
    subsegments: Sequence[SubSegment],
    frame_step: float = 0.01,
    speech: Timeline | None = None,
    horizon: float | None = None,
) -> np.ndarray:
    """Owner sub-segment per frame (``-1`` when unmapped).

    Each speech frame goes to the sub-segment with the nearest centre; ties
    go to the lower sub-segment index. ``speech`` defaults to the union of
    the sub-segment spans.
    """
    if speech is None:
        speech = normalize(s.segment for s in subsegments)
    if horizon is None:
        horizon = max(speech.extent_end, max((s.segment.offset for s in subsegments), default=0.0))
    mask = quantize(speech, frame_step, horizon)
    owner = np.full(mask.shape[0], -1, dtype=np.int64)
    if not subsegments or not mask.any():
        return owner
    centers = np.array([s.center for s in subsegments])
    # equal centres collapse onto the lowest sub-segment index
    uniq, first = np.unique(centers, return_index=True)
    frames = np.flatnonzero(mask)
    fc = (frames + 0.5) * frame_step
    right = np.clip(np.searchsorted(uniq, fc), 0, len(uniq) - 1)
    left = np.clip(right - 1, 0, len(uniq) - 1)
    d_left = np.abs(fc - uniq[left])
    d_right = np.abs(uniq[right] - fc)
    idx_left, idx_right = first[left], first[right]
    tie = np.abs(d_right - d_left) <= TOL
    pick_right = (~tie & (d_right < d_left)) | (tie & (idx_right < idx_left))
    owner[frames] = np.where(pick_right, idx_right, idx_left)
    return owner


@dataclass
class EmbeddingSequence:
    recording_id: str
    dim: int
    subsegments: list[SubSegment]
    vectors: np.ndarray  # (T, dim)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float).reshape(len(self.subsegments), self.dim)
        if self.dim < 1:
            raise ValueError("embedding dimension must be positive")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embeddings must be finite")
        onsets = [s.segment.onset for s in self.subsegments]
        if any(b < a for a, b in zip(onsets, onsets[1:])):
            raise ValueError("sub-segments must be sorted by onset")

    def __len__(self) -> int:
        return len(self.subsegments)

    @property
    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.subsegments])

    @property
    def durations(self) -> np.ndarray:
        return np.array([s.segment.duration for s in self.subsegments])

    def select(self, keep: np.ndarray) -> "EmbeddingSequence":
        """Subset by boolean mask or index array, re-indexing sub-segments."""
        idx = np.arange(len(self))[keep]
        subs = [SubSegment(self.subsegments[i].segment, k) for k, i in enumerate(idx)]
        return EmbeddingSequence(self.recording_id, self.dim, subs, self.vectors[idx])

    def within(self, speech: Timeline) -> "EmbeddingSequence":
        """Keep sub-segments whose centre lies in ``speech``."""
        speech = normalize(speech)
        keep = np.array(
            [any(s.onset <= c < s.offset for s in speech) for c in self.centers], dtype=bool
        )
        return self.select(keep) if len(self) else self


def write_embeddings(seq: EmbeddingSequence, stream: TextIO) -> None:
    stream.write(f"{EMB_MAGIC} {EMB_VERSION} {seq.recording_id} {seq.dim}\n")
    for sub, vec in zip(seq.subsegments, seq.vectors):
        values = " ".join(repr(float(v)) for v in vec)
        stream.write(f"{sub.segment.onset!r} {sub.segment.offset!r} {values}\n")


def read_embeddings(stream: Iterable[str]) -> EmbeddingSequence:
    lines = iter(enumerate(stream, 1))
    header = None
    for lineno, line in lines:
        if line.strip():
            header = line.split()
            break
    if header is None:
        raise FormatError("empty embedding file", 1)
    if len(header) != 4 or header[0] != EMB_MAGIC or header[1] != EMB_VERSION:
        raise FormatError(f"bad header {' '.join(header)!r}", lineno)
    rec, dim = header[2], int(header[3])
    subs, rows = [], []
    for lineno, line in lines:
        fields = line.split()
        if not fields:
            continue
        if len(fields) != dim + 2:
            raise FormatError(f"expected {dim} values, got {len(fields) - 2}", lineno)
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise FormatError("non-numeric field", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise FormatError("non-finite value", lineno)
        subs.append(SubSegment(Segment(values[0], values[1]), len(subs)))
        rows.append(values[2:])
    vectors = np.array(rows, dtype=float).reshape(len(rows), dim)
    return EmbeddingSequence(rec, dim, subs, vectors)


__all__ = [
    "SubSegment",
    "EmbeddingSequence",
    "uniform_subsegment",
    "frames_to_subsegments",
    "read_embeddings",
    "write_embeddings",
]
