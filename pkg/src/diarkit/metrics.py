"""Diarization scoring: DER with forgiveness collar, JER, frame metrics, speaker counts.

Everything is evaluated on 10 ms frames (frame membership by frame centre).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .timeline import Annotation, Segment, Timeline, n_frames, normalize, quantize


@dataclass
class DerReport:
    miss_time: float
    fa_time: float
    speaker_time: float
    scored_time: float  # reference speaker time inside the scored region
    empty_reference: bool = False

    def _pct(self, value: float) -> float:
        return 100.0 * value / self.scored_time if self.scored_time > 0 else math.nan

    @property
    def miss(self) -> float:
        return self._pct(self.miss_time)

    @property
    def fa(self) -> float:
        return self._pct(self.fa_time)

    @property
    def speaker_error(self) -> float:
        return self._pct(self.speaker_time)

    @property
    def der(self) -> float:
        return self.miss + self.fa + self.speaker_error

    def __add__(self, other: "DerReport") -> "DerReport":
        scored = self.scored_time + other.scored_time
        return DerReport(
            self.miss_time + other.miss_time,
            self.fa_time + other.fa_time,
            self.speaker_time + other.speaker_time,
            scored,
            empty_reference=scored <= 0,
        )


@dataclass
class FrameReport:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else math.nan

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan

    @property
    def miss(self) -> float:
        return self.fn / self.n

    @property
    def fa(self) -> float:
        return self.fp / self.n

    @property
    def total_error(self) -> float:
        return self.miss + self.fa


@dataclass
class SpeakerCountStats:
    n_over: int
    n_equal: int
    n_under: int
    mean_diff: float


@dataclass
class JerReport:
    speaker_errors: dict[str, float] = field(default_factory=dict)  # fraction per reference speaker

    @property
    def jer(self) -> float:
        if not self.speaker_errors:
            return math.nan
        return 100.0 * sum(self.speaker_errors.values()) / len(self.speaker_errors)


def optimal_mapping(overlap: np.ndarray) -> tuple[dict[int, int], float]:
    """One-to-one row->column mapping maximising the summed overlap."""
    overlap = np.asarray(overlap)
    if overlap.size == 0:
        return {}, 0
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    mapping = {int(r): int(c) for r, c in zip(rows, cols)}
    return mapping, overlap[rows, cols].sum()


def speaker_frames(ann: Annotation, frame_step: float, horizon: float) -> tuple[list[str], np.ndarray]:
    labels = ann.labels
    n = n_frames(horizon, frame_step)
    mat = np.zeros((len(labels), n), dtype=bool)
    for i, lab in enumerate(labels):
        mat[i] = quantize(ann.speaker_timeline(lab), frame_step, horizon)
    return labels, mat


def collar_zone(reference: Annotation, collar: float) -> Timeline:
    if collar <= 0:
        return Timeline()
    zones = []
    for lab in reference.labels:
        for seg in reference.speaker_timeline(lab):
            for b in (seg.onset, seg.offset):
                zones.append(Segment(max(0.0, b - collar), b + collar))
    return normalize(zones)


def _horizon(*items) -> float:
    return max(x.extent_end for x in items)


def der(
    reference: Annotation,
    hypothesis: Annotation,
    collar: float = 0.25,
    frame_step: float = 0.01,
) -> DerReport:
    """Missed speech, false alarm and speaker confusion over the scored region.

    The region within ``collar`` of every reference boundary is excluded.
    Speakers are matched one-to-one to maximise matched time.
    """
    zone = collar_zone(reference, collar)
    horizon = max(_horizon(reference, hypothesis), zone.extent_end)
    _, ref = speaker_frames(reference, frame_step, horizon)
    _, hyp = speaker_frames(hypothesis, frame_step, horizon)
    scored = ~quantize(zone, frame_step, horizon)
    ref, hyp = ref[:, scored], hyp[:, scored]
    r = ref.sum(axis=0)
    h = hyp.sum(axis=0)
    overlap = ref.astype(np.int64) @ hyp.T.astype(np.int64)
    _, matched = optimal_mapping(overlap)
    miss = int(np.maximum(r - h, 0).sum())
    fa = int(np.maximum(h - r, 0).sum())
    spk = int(np.minimum(r, h).sum()) - int(matched)
    total = int(r.sum())
    return DerReport(
        miss * frame_step, fa * frame_step, spk * frame_step, total * frame_step,
        empty_reference=total == 0,
    )


def jer(reference: Annotation, hypothesis: Annotation, frame_step: float = 0.01) -> JerReport:
    """Per reference speaker: 1 - |ref ∩ mapped hyp| / |ref ∪ mapped hyp|; unmapped speakers score 1."""
    if not reference.turns:
        raise ValueError(f"{reference.recording_id}: empty reference, JER undefined")
    horizon = _horizon(reference, hypothesis)
    ref_labels, ref = speaker_frames(reference, frame_step, horizon)
    _, hyp = speaker_frames(hypothesis, frame_step, horizon)
    inter = ref.astype(np.int64) @ hyp.T.astype(np.int64)
    mapping, _ = optimal_mapping(inter)
    out = {}
    ref_sizes = ref.sum(axis=1)
    hyp_sizes = hyp.sum(axis=1)
    for i, lab in enumerate(ref_labels):
        j = mapping.get(i)
        if j is None:
            out[lab] = 1.0
            continue
        union = int(ref_sizes[i] + hyp_sizes[j] - inter[i, j])
        out[lab] = (union - int(inter[i, j])) / union
    return JerReport(out)


def frame_metrics(
    reference: Timeline, hypothesis: Timeline, frame_step: float = 0.01, horizon: float | None = None
) -> FrameReport:
    if horizon is None:
        horizon = max(reference.extent_end, hypothesis.extent_end)
    ref = quantize(reference, frame_step, horizon)
    hyp = quantize(hypothesis, frame_step, horizon)
    if ref.size == 0:
        raise ValueError("zero-length horizon")
    return FrameReport(
        tp=int(np.sum(ref & hyp)),
        fp=int(np.sum(~ref & hyp)),
        fn=int(np.sum(ref & ~hyp)),
        tn=int(np.sum(~ref & ~hyp)),
    )


def speaker_count_stats(pairs: Iterable[tuple[int, int]]) -> SpeakerCountStats:
    """``pairs`` of (correct count, found count) per recording."""
    pairs = list(pairs)
    diffs = [c - f for c, f in pairs]
    return SpeakerCountStats(
        n_over=sum(d < 0 for d in diffs),
        n_equal=sum(d == 0 for d in diffs),
        n_under=sum(d > 0 for d in diffs),
        mean_diff=float(np.mean(diffs)) if diffs else math.nan,
    )


@dataclass
class RecordingScore:
    recording_id: str
    der: DerReport
    jer: JerReport
    n_ref_speakers: int
    n_hyp_speakers: int


@dataclass
class ScoringReport:
    recordings: list[RecordingScore]

    @property
    def der(self) -> DerReport:
        total = DerReport(0.0, 0.0, 0.0, 0.0)
        for rec in self.recordings:
            total = total + rec.der
        return total

    @property
    def jer(self) -> float:
        errors = [e for rec in self.recordings for e in rec.jer.speaker_errors.values()]
        return 100.0 * float(np.mean(errors)) if errors else math.nan

    @property
    def speaker_counts(self) -> SpeakerCountStats:
        return speaker_count_stats((r.n_ref_speakers, r.n_hyp_speakers) for r in self.recordings)

    def format_table(self) -> str:
        head = f"{'recording':<24}{'DER':>8}{'Miss':>8}{'FA':>8}{'Spk':>8}{'JER':>8}{'#ref':>6}{'#hyp':>6}"
        lines = [head]
        for r in self.recordings:
            d = r.der
            lines.append(
                f"{r.recording_id:<24}{d.der:8.2f}{d.miss:8.2f}{d.fa:8.2f}{d.speaker_error:8.2f}"
                f"{r.jer.jer:8.2f}{r.n_ref_speakers:6d}{r.n_hyp_speakers:6d}"
            )
        d = self.der
        c = self.speaker_counts
        lines.append(
            f"{'*** OVERALL ***':<24}{d.der:8.2f}{d.miss:8.2f}{d.fa:8.2f}{d.speaker_error:8.2f}{self.jer:8.2f}"
        )
        lines.append(f"speakers: over={c.n_over} equal={c.n_equal} under={c.n_under} mean={c.mean_diff:.2f}")
        return "\n".join(lines) + "\n"

    def key_values(self) -> dict[str, float | int]:
        d, c = self.der, self.speaker_counts
        return {
            "der": d.der,
            "miss": d.miss,
            "fa": d.fa,
            "speaker_error": d.speaker_error,
            "scored_time": d.scored_time,
            "jer": self.jer,
            "n_recordings": len(self.recordings),
            "n_over": c.n_over,
            "n_equal": c.n_equal,
            "n_under": c.n_under,
            "mean_speaker_diff": c.mean_diff,
        }


def score_recording(
    reference: Annotation, hypothesis: Annotation, collar: float = 0.25, frame_step: float = 0.01
) -> RecordingScore:
    return RecordingScore(
        reference.recording_id,
        der(reference, hypothesis, collar, frame_step),
        jer(reference, hypothesis, frame_step),
        len(reference.labels),
        len(hypothesis.labels),
    )


def score(
    references: dict[str, Annotation],
    hypotheses: dict[str, Annotation],
    collar: float = 0.25,
    frame_step: float = 0.01,
) -> ScoringReport:
    """Score every reference recording; a missing hypothesis counts as empty output."""
    out = []
    for rec in sorted(references):
        hyp = hypotheses.get(rec, Annotation(rec))
        out.append(score_recording(references[rec], hyp, collar, frame_step))
    return ScoringReport(out)

