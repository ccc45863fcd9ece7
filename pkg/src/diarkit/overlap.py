"""Second-speaker assignment inside detected overlap regions.

The input diarization carries one speaker per frame. Each assigner returns
the input turns plus added turns for the second speaker; nothing outside
the overlap regions is touched and at most two speakers are ever active.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import optimal_mapping, speaker_frames
from .timeline import TOL, Annotation, Segment, Timeline, Turn, from_mask, normalize, quantize


@dataclass
class OverlapResult:
    annotation: Annotation
    added: list[Turn]
    no_second_available: int = 0  # overlap frames left single-speaker

    @property
    def added_time(self) -> float:
        return sum(t.segment.duration for t in self.added)


def _first_speaker_pieces(diarization: Annotation, region: Segment) -> list[tuple[Segment, str]]:
    """Split ``region`` at first-speaker changes."""
    pieces = []
    for spk in diarization.labels:
        for seg in diarization.speaker_timeline(spk).crop(region):
            pieces.append((seg, spk))
    pieces.sort(key=lambda p: (p[0].onset, p[1]))
    return pieces


def assign_second_heuristic(diarization: Annotation, overlaps: Timeline) -> OverlapResult:
    """Second speaker = the different speaker closest in time (ties go to the preceding one)."""
    timelines = {spk: diarization.speaker_timeline(spk) for spk in diarization.labels}
    added: list[Turn] = []
    for region in normalize(overlaps):
        for piece, first in _first_speaker_pieces(diarization, region):
            best = None  # (distance, preceding-first rank, speaker)
            for spk, tl in timelines.items():
                if spk == first:
                    continue
                for seg in tl:
                    if seg.offset <= piece.onset + TOL:
                        cand = (piece.onset - seg.offset, 0, spk)
                    elif seg.onset >= piece.offset - TOL:
                        cand = (seg.onset - piece.offset, 1, spk)
                    else:
                        cand = (0.0, 0, spk)
                    if best is None or cand < best:
                        best = cand
            if best is not None:
                added.append(Turn(piece, best[2]))
    return OverlapResult(diarization.with_turns(added), added)


def _first_labels(diarization: Annotation, frame_step: float, horizon: float) -> tuple[np.ndarray, list[str]]:
    labels, mat = speaker_frames(diarization, frame_step, horizon)
    first = np.full(mat.shape[1], -1, dtype=np.int64)
    active = mat.any(axis=0)
    first[active] = np.argmax(mat[:, active], axis=0)
    return first, labels


def _turns_from_frame_labels(second: np.ndarray, names: Sequence[str], frame_step: float) -> list[Turn]:
    turns = []
    for k, name in enumerate(names):
        for seg in from_mask(second == k, frame_step):
            turns.append(Turn(seg, name))
    turns.sort(key=lambda t: (t.segment.onset, t.speaker))
    return turns


def assign_second_vbx(
    diarization: Annotation,
    overlaps: Timeline,
    gamma: np.ndarray,
    frame_map: np.ndarray,
    column_labels: Sequence[str],
    frame_step: float = 0.01,
) -> OverlapResult:
    """Second speaker = most probable other speaker under the VBx responsibilities.

    ``column_labels[s]`` names the output speaker of gamma column s; columns
    sharing a name (merged by reclustering) are summed before ranking.
    ``frame_map`` gives the sub-segment (gamma row) of each frame, -1 if none.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape[1] != len(column_labels):
        raise ValueError(f"{gamma.shape[1]} gamma columns but {len(column_labels)} column labels")
    unknown = set(diarization.labels) - set(column_labels)
    if unknown:
        raise ValueError(f"diarization speakers {sorted(unknown)} have no gamma column")
    names = sorted(set(column_labels))
    merge = np.zeros((gamma.shape[1], len(names)))
    for s, lab in enumerate(column_labels):
        merge[s, names.index(lab)] = 1.0
    scores = gamma @ merge  # (T, speakers)

    horizon = max(diarization.extent_end, overlaps.extent_end, len(frame_map) * frame_step)
    first_idx, diar_labels = _first_labels(diarization, frame_step, horizon)
    frame_map = np.concatenate([frame_map, np.full(max(0, len(first_idx) - len(frame_map)), -1)])
    ov = quantize(overlaps, frame_step, horizon)
    second = np.full(len(first_idx), -1, dtype=np.int64)
    no_second = 0
    for f in np.flatnonzero(ov & (first_idx >= 0) & (frame_map[: len(first_idx)] >= 0)):
        if len(names) < 2:
            no_second += 1
            continue
        row = scores[frame_map[f]].copy()
        row[names.index(diar_labels[first_idx[f]])] = -np.inf
        second[f] = int(np.argmax(row))
    added = _turns_from_frame_labels(second, names, frame_step)
    return OverlapResult(diarization.with_turns(added), added, no_second)


def assign_second_oracle(
    diarization: Annotation, overlaps: Timeline, reference: Annotation, frame_step: float = 0.01
) -> OverlapResult:
    """Second speaker taken from the reference, translated through the optimal speaker mapping.

    A reference speaker with no mapped system speaker is emitted under its
    own reference label (prefixed ``ref:``).
    """
    horizon = max(diarization.extent_end, overlaps.extent_end, reference.extent_end)
    ref_labels, ref = speaker_frames(reference, frame_step, horizon)
    first_idx, hyp_labels = _first_labels(diarization, frame_step, horizon)
    _, hyp = speaker_frames(diarization, frame_step, horizon)
    mapping, _ = optimal_mapping(ref.astype(np.int64) @ hyp.T.astype(np.int64))
    ref_to_name = {i: hyp_labels[j] for i, j in mapping.items()}
    names = list(hyp_labels)
    for i, lab in enumerate(ref_labels):
        if i not in ref_to_name:
            ref_to_name[i] = f"ref:{lab}"
            names.append(ref_to_name[i])
    ov = quantize(overlaps, frame_step, horizon)
    second = np.full(len(first_idx), -1, dtype=np.int64)
    no_second = 0
    for f in np.flatnonzero(ov & (first_idx >= 0)):
        current = hyp_labels[first_idx[f]]
        options = [ref_to_name[i] for i in np.flatnonzero(ref[:, f]) if ref_to_name[i] != current]
        if not options:
            no_second += 1
            continue
        second[f] = names.index(sorted(options)[0])
    added = _turns_from_frame_labels(second, names, frame_step)
    return OverlapResult(diarization.with_turns(added), added, no_second)
