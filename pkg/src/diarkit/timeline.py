"""Interval algebra over time segments.

Times are float seconds. Comparisons use a 1e-9 s tolerance (``TOL``).
All types are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

TOL = 1e-9


@dataclass(frozen=True, order=True)
class Segment:
    onset: float
    offset: float

    def __post_init__(self):
        if not (math.isfinite(self.onset) and math.isfinite(self.offset)):
            raise ValueError(f"non-finite segment bounds ({self.onset}, {self.offset})")
        if self.onset < -TOL:
            raise ValueError(f"negative onset {self.onset}")
        if self.offset - self.onset <= TOL:
            raise ValueError(f"segment must have positive length: ({self.onset}, {self.offset})")

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    @property
    def middle(self) -> float:
        return 0.5 * (self.onset + self.offset)

    def intersects(self, other: "Segment") -> bool:
        return self.onset < other.offset - TOL and other.onset < self.offset - TOL

    def gap_to(self, other: "Segment") -> float:
        """Boundary-to-boundary gap, 0 when the segments touch or intersect."""
        return max(0.0, other.onset - self.offset, self.onset - other.offset)


@dataclass(frozen=True)
class Timeline:
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "Timeline":
        return cls(tuple(Segment(float(a), float(b)) for a, b in pairs))

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    def __bool__(self) -> bool:
        return bool(self.segments)

    def pairs(self) -> list[tuple[float, float]]:
        return [(s.onset, s.offset) for s in self.segments]

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    @property
    def extent_end(self) -> float:
        return max((s.offset for s in self.segments), default=0.0)

    def normalize(self) -> "Timeline":
        return normalize(self)

    def union(self, other: "Timeline") -> "Timeline":
        return normalize(Timeline(self.segments + other.segments))

    def crop(self, within: Segment) -> "Timeline":
        """Intersection with a single segment."""
        out = []
        for s in normalize(self):
            a, b = max(s.onset, within.onset), min(s.offset, within.offset)
            if b - a > TOL:
                out.append(Segment(a, b))
        return Timeline(out)

    def intersect(self, other: "Timeline") -> "Timeline":
        a, b = normalize(self).segments, normalize(other).segments
        out = []
        i = j = 0
        while i < len(a) and j < len(b):
            lo, hi = max(a[i].onset, b[j].onset), min(a[i].offset, b[j].offset)
            if hi - lo > TOL:
                out.append(Segment(lo, hi))
            if a[i].offset < b[j].offset:
                i += 1
            else:
                j += 1
        return Timeline(out)


def normalize(timeline: Timeline | Iterable[Segment]) -> Timeline:
    """Sort and merge overlapping or touching segments."""
    segs = sorted(timeline)
    merged: list[list[float]] = []
    for s in segs:
        if merged and s.onset <= merged[-1][1] + TOL:
            merged[-1][1] = max(merged[-1][1], s.offset)
        else:
            merged.append([s.onset, s.offset])
    return Timeline(tuple(Segment(a, b) for a, b in merged))


def gaps(timeline: Timeline, within: Segment) -> Timeline:
    """Complement of ``timeline`` inside ``within``."""
    out = []
    cursor = within.onset
    for s in timeline.crop(within):
        if s.onset - cursor > TOL:
            out.append(Segment(cursor, s.onset))
        cursor = max(cursor, s.offset)
    if within.offset - cursor > TOL:
        out.append(Segment(cursor, within.offset))
    return Timeline(out)


def distance(segment: Segment, timeline: Timeline) -> float:
    """Minimum boundary-to-boundary gap; ``math.inf`` for an empty timeline."""
    return min((segment.gap_to(s) for s in timeline), default=math.inf)


def n_frames(horizon: float, frame_step: float) -> int:
    if frame_step <= 0:
        raise ValueError("frame_step must be positive")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    return max(0, math.ceil(horizon / frame_step - TOL))


def frame_range(segment: Segment, frame_step: float) -> tuple[int, int]:
    """Half-open index range of frames whose centre lies in ``segment``."""
    start = math.ceil(segment.onset / frame_step - 0.5)
    stop = math.ceil(segment.offset / frame_step - 0.5)
    return max(start, 0), max(stop, 0)


def quantize(timeline: Timeline, frame_step: float, horizon: float) -> np.ndarray:
    """Boolean frame mask; frame i is set iff its centre (i + 0.5) * step is covered."""
    n = n_frames(horizon, frame_step)
    mask = np.zeros(n, dtype=bool)
    for s in timeline:
        a, b = frame_range(s, frame_step)
        mask[a:min(b, n)] = True
    return mask


def from_mask(mask: np.ndarray, frame_step: float) -> Timeline:
    """Inverse of :func:`quantize`: runs of set frames become [i*step, j*step)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return Timeline()
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    starts, stops = edges[::2], edges[1::2]
    return Timeline(tuple(Segment(a * frame_step, b * frame_step) for a, b in zip(starts, stops)))


class Turn(NamedTuple):
    segment: Segment
    speaker: str


@dataclass(frozen=True)
class Annotation:
    recording_id: str
    turns: tuple[Turn, ...] = field(default=())

    def __post_init__(self):
        turns = tuple(Turn(seg, spk) for seg, spk in self.turns)
        for t in turns:
            if not t.speaker:
                raise ValueError("speaker labels must be non-empty")
        object.__setattr__(self, "turns", turns)

    def __len__(self) -> int:
        return len(self.turns)

    def __iter__(self) -> Iterator[Turn]:
        return iter(self.turns)

    @property
    def labels(self) -> list[str]:
        return sorted({t.speaker for t in self.turns})

    def speaker_timeline(self, speaker: str) -> Timeline:
        return normalize(t.segment for t in self.turns if t.speaker == speaker)

    def speech(self) -> Timeline:
        return normalize(t.segment for t in self.turns)

    @property
    def extent_end(self) -> float:
        return max((t.segment.offset for t in self.turns), default=0.0)

    def normalized(self) -> "Annotation":
        """Merge overlapping/touching turns of the same speaker; sort by onset."""
        turns = [Turn(s, spk) for spk in self.labels for s in self.speaker_timeline(spk)]
        turns.sort(key=lambda t: (t.segment.onset, t.segment.offset, t.speaker))
        return Annotation(self.recording_id, tuple(turns))

    def rename(self, mapping: dict[str, str]) -> "Annotation":
        return Annotation(
            self.recording_id,
            tuple(Turn(t.segment, mapping.get(t.speaker, t.speaker)) for t in self.turns),
        )

    def with_turns(self, extra: Sequence[Turn]) -> "Annotation":
        return Annotation(self.recording_id, self.turns + tuple(extra))

    def overlap(self) -> Timeline:
        """Regions where two or more distinct speakers are active."""
        events = []
        for spk in self.labels:
            for s in self.speaker_timeline(spk):
                events.append((s.onset, 1))
                events.append((s.offset, -1))
        events.sort(key=lambda e: (e[0], e[1]))
        out, depth, start = [], 0, 0.0
        for t, d in events:
            if d > 0:
                depth += 1
                if depth == 2:
                    start = t
            else:
                if depth == 2 and t - start > TOL:
                    out.append(Segment(start, t))
                depth -= 1
        return normalize(out)
