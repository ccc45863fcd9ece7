"""Synthetic conversations drawn from the PLDA/HMM generative model.

Each conversation is a sequence of fixed-length speech slots (one embedding
each). Speakers follow a sticky HMM; silence is inserted only at speaker
changes; short runs of slots inside turns carry a second, overlapping
speaker (usually the one from the neighbouring turn) whose embedding is
drawn around the mean of both speakers' means. Boundaries are whole centiseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .plda import PldaModel
from .segmentation import EmbeddingSequence, SubSegment
from .timeline import Annotation, Segment, Timeline, Turn

CS = 100  # centiseconds per second


def default_phi(dim: int = 64, top: float = 60.0, bottom: float = 0.5) -> np.ndarray:
    return np.geomspace(top, bottom, dim)


@dataclass
class SimConfig:
    n_speakers: int | tuple[int, int] = 3
    n_subsegments: int | tuple[int, int] = 600
    dim: int = 64
    phi: Sequence[float] | None = None
    gen_loop_p: float = 0.97
    overlap_fraction: float = 0.029
    overlap_run: tuple[int, int] = (4, 8)  # slots per overlap region
    overlap_neighbour_p: float = 0.8
    silence_fraction: float = 0.1
    slot: float = 0.25
    seed: int = 0
    recording_id: str = "sim"

    def __post_init__(self):
        if self.phi is None:
            self.phi = default_phi(self.dim)
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.shape != (self.dim,):
            raise ValueError(f"phi has {self.phi.size} values for dim {self.dim}")
        if np.any(self.phi <= 0):
            raise ValueError("phi must be positive")
        if not 1 <= self.overlap_run[0] <= self.overlap_run[1]:
            raise ValueError("overlap_run must be (lo, hi) with 1 <= lo <= hi")
        for name in ("gen_loop_p", "overlap_fraction", "overlap_neighbour_p"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.silence_fraction < 1:
            raise ValueError("silence_fraction must lie in [0, 1)")
        slot_cs = self.slot * CS
        if slot_cs < 1 or abs(slot_cs - round(slot_cs)) > 1e-9:
            raise ValueError("slot length must be a whole number of centiseconds")


@dataclass
class Conversation:
    reference: Annotation
    vad: Timeline
    ovd: Timeline
    embeddings: EmbeddingSequence
    plda: PldaModel
    states: np.ndarray = field(repr=False)  # first speaker index per slot
    second: np.ndarray = field(repr=False)  # second speaker index per slot, -1 if none
    speaker_names: list[str] = field(default_factory=list)


def _draw(value, rng) -> int:
    if isinstance(value, (tuple, list)):
        lo, hi = value
        return int(rng.integers(lo, hi + 1))
    return int(value)


def draw_speaker_means(rng: np.random.Generator, phi: np.ndarray, n: int) -> np.ndarray:
    return rng.standard_normal((n, len(phi))) * np.sqrt(phi)[None, :]


def draw_states(rng: np.random.Generator, n_speakers: int, length: int, loop_p: float) -> np.ndarray:
    """Sticky HMM with uniform priors; resampled until every speaker appears."""
    for _ in range(1000):
        stay = rng.random(length) < loop_p
        fresh = rng.integers(0, n_speakers, length)
        states = np.empty(length, dtype=np.int64)
        states[0] = fresh[0]
        for t in range(1, length):
            states[t] = states[t - 1] if stay[t] else fresh[t]
        if len(np.unique(states)) == n_speakers:
            return states
    return states


def _turn_runs(states: np.ndarray) -> list[tuple[int, int]]:
    bounds = np.r_[0, np.flatnonzero(states[1:] != states[:-1]) + 1, len(states)]
    return list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))


def _pick_overlaps(
    rng, states: np.ndarray, n_ov: int, run: tuple[int, int], neighbour_p: float, n_speakers: int
) -> np.ndarray:
    """Second speaker per slot (-1 for none), placed as runs of overlapping slots inside turns.

    The second speaker is usually the speaker of the nearer neighbouring turn
    (probability ``neighbour_p``), otherwise any other speaker.
    """
    second = np.full(len(states), -1, dtype=np.int64)
    if n_ov == 0:
        return second
    turns = _turn_runs(states)
    lengths = np.array([b - a for a, b in turns], dtype=float)
    remaining = n_ov
    for _ in range(100 * n_ov):
        if remaining == 0:
            break
        k = int(rng.choice(len(turns), p=lengths / lengths.sum()))
        a, b = turns[k]
        size = min(remaining, int(rng.integers(run[0], run[1] + 1)))
        if b - a < size:
            continue
        lo = int(rng.integers(a, b - size + 1))
        if np.any(second[max(0, lo - 1) : lo + size + 1] >= 0):
            continue
        prev = states[turns[k - 1][0]] if k > 0 else None
        nxt = states[turns[k + 1][0]] if k + 1 < len(turns) else None
        near = prev if nxt is None or (prev is not None and lo - a <= b - lo - size) else nxt
        if rng.random() >= neighbour_p:
            others = [s for s in range(n_speakers) if s != states[a]]
            near = others[int(rng.integers(len(others)))]
        second[lo : lo + size] = near
        remaining -= size
    if remaining > 0:
        # no room left for whole runs: single slots, nearest different speaker
        for slot in rng.permutation(np.flatnonzero(second < 0))[:remaining]:
            diff = np.flatnonzero(states != states[slot])
            second[slot] = states[diff[np.argmin(np.abs(diff - slot))]]
    return second


def generate(cfg: SimConfig) -> Conversation:
    rng = np.random.default_rng(cfg.seed)
    n_spk = _draw(cfg.n_speakers, rng)
    length = _draw(cfg.n_subsegments, rng)
    if n_spk < 1:
        raise ValueError("need at least one speaker")
    if n_spk > length:
        raise ValueError(f"{n_spk} speakers cannot fit in {length} sub-segments")
    phi = cfg.phi
    means = draw_speaker_means(rng, phi, n_spk)
    states = draw_states(rng, n_spk, length, cfg.gen_loop_p)
    n_ov = int(round(cfg.overlap_fraction * length)) if n_spk > 1 else 0
    second = _pick_overlaps(rng, states, n_ov, cfg.overlap_run, cfg.overlap_neighbour_p, n_spk)

    slot_cs = int(round(cfg.slot * CS))
    gap_cs = np.zeros(length, dtype=np.int64)  # silence inserted before slot t
    changes = np.flatnonzero(states[1:] != states[:-1]) + 1
    if len(changes) and cfg.silence_fraction > 0:
        speech_cs = length * slot_cs
        silence_cs = speech_cs * cfg.silence_fraction / (1 - cfg.silence_fraction)
        gaps = rng.exponential(silence_cs / len(changes), len(changes))
        gap_cs[changes] = np.round(gaps).astype(np.int64)
    onset_cs = np.arange(length) * slot_cs + np.cumsum(gap_cs)
    spans = [Segment(o / CS, (o + slot_cs) / CS) for o in onset_cs.tolist()]

    noise = rng.standard_normal((length, cfg.dim))
    centers = means[states].copy()
    ov = second >= 0
    centers[ov] = 0.5 * (means[states[ov]] + means[second[ov]])
    vectors = centers + noise

    names = [f"S{i:02d}" for i in range(n_spk)]
    turns: list[Turn] = []
    start = 0
    for t in range(1, length + 1):
        if t == length or states[t] != states[start]:
            turns.append(Turn(Segment(spans[start].onset, spans[t - 1].offset), names[states[start]]))
            start = t
    turns.extend(Turn(spans[t], names[second[t]]) for t in np.flatnonzero(ov))
    reference = Annotation(cfg.recording_id, tuple(turns)).normalized()

    embeddings = EmbeddingSequence(
        cfg.recording_id, cfg.dim, [SubSegment(s, i) for i, s in enumerate(spans)], vectors
    )
    plda = PldaModel(np.zeros(cfg.dim), np.diag(phi), np.eye(cfg.dim))
    return Conversation(
        reference=reference,
        vad=reference.speech(),
        ovd=reference.overlap(),
        embeddings=embeddings,
        plda=plda,
        states=states,
        second=second,
        speaker_names=names,
    )


def derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
