"""Fusion of several externally produced VAD timelines.

Order of operations: frame-level majority vote on the raw system outputs,
short-silence filling, then pruning of segments far from ASR-detected speech.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .timeline import TOL, Segment, Timeline, distance, from_mask, normalize, quantize


@dataclass
class FusionConfig:
    frame_step: float = 0.01
    fill_gap: float = 0.6
    asr_max_distance: float | None = 0.8
    asr_system: str = "asr"
    # "segment": drop whole fused segments; "frame": drop individual frames
    prune_granularity: str = "segment"
    per_system_fill: dict[str, float] = field(
        default_factory=lambda: {"energy": 0.3, "dnn": 0.7, "asr": 1.1}
    )

    def __post_init__(self):
        durations = [self.frame_step, self.fill_gap, *self.per_system_fill.values()]
        if self.asr_max_distance is not None:
            durations.append(self.asr_max_distance)
        if any(d < 0 for d in durations):
            raise ValueError("fusion durations must be non-negative")
        if self.frame_step <= 0:
            raise ValueError("frame_step must be positive")
        if self.prune_granularity not in ("segment", "frame"):
            raise ValueError(f"unknown prune granularity {self.prune_granularity!r}")


def fill_short_silence(speech: Timeline, max_gap: float) -> Timeline:
    """Absorb every internal gap strictly shorter than ``max_gap`` into speech."""
    speech = normalize(speech)
    out: list[list[float]] = []
    for seg in speech:
        if out and seg.onset - out[-1][1] < max_gap - TOL:
            out[-1][1] = seg.offset
        else:
            out.append([seg.onset, seg.offset])
    return Timeline(tuple(Segment(a, b) for a, b in out))


def vote_counts(systems: Sequence[Timeline], frame_step: float, horizon: float) -> np.ndarray:
    return np.sum([quantize(t, frame_step, horizon) for t in systems], axis=0)


def majority_vote(systems: Sequence[Timeline], cfg: FusionConfig, horizon: float) -> Timeline:
    if len(systems) == 0:
        raise ValueError("majority vote needs at least one system")
    counts = vote_counts(systems, cfg.frame_step, horizon)
    return from_mask(2 * counts > len(systems), cfg.frame_step)


def asr_distance_prune(
    fused: Timeline,
    asr_speech: Timeline,
    max_distance: float,
    granularity: str = "segment",
    frame_step: float = 0.01,
) -> Timeline:
    """Mark as silence speech lying more than ``max_distance`` from ASR speech."""
    if granularity == "segment":
        return Timeline(tuple(s for s in fused if distance(s, asr_speech) <= max_distance + TOL))
    # frame variant: keep only fused speech inside the ASR speech dilated by max_distance
    dilated = normalize(
        Segment(max(0.0, s.onset - max_distance), s.offset + max_distance) for s in asr_speech
    )
    horizon = max(fused.extent_end, dilated.extent_end)
    mask = quantize(fused, frame_step, horizon) & quantize(dilated, frame_step, horizon)
    return from_mask(mask, frame_step)


@dataclass(frozen=True)
class FusionStages:
    voted: Timeline
    filled: Timeline
    pruned: Timeline

    @property
    def result(self) -> Timeline:
        return self.pruned


def fuse(systems: Mapping[str, Timeline], cfg: FusionConfig, horizon: float | None = None) -> FusionStages:
    """Vote, fill short silences, prune far-from-ASR segments. Each stage is returned."""
    if not systems:
        raise ValueError("no VAD systems given")
    if horizon is None:
        horizon = max(t.extent_end for t in systems.values())
    voted = majority_vote(list(systems.values()), cfg, horizon)
    filled = fill_short_silence(voted, cfg.fill_gap)
    if cfg.asr_max_distance is None:
        return FusionStages(voted, filled, filled)
    if cfg.asr_system not in systems:
        raise ValueError(f"ASR pruning enabled but no {cfg.asr_system!r} system among {sorted(systems)}")
    pruned = asr_distance_prune(
        filled, systems[cfg.asr_system], cfg.asr_max_distance, cfg.prune_granularity, cfg.frame_step
    )
    return FusionStages(voted, filled, pruned)


def fill_systems(systems: Mapping[str, Timeline], cfg: FusionConfig) -> dict[str, Timeline]:
    """Per-system short-silence filling with the system-specific gap lengths."""
    return {
        name: fill_short_silence(t, cfg.per_system_fill[name]) if name in cfg.per_system_fill else t
        for name, t in systems.items()
    }
