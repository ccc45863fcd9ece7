"""Merge over-split speakers using one global embedding per speaker."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ahc import AhcConfig, cluster
from .metrics import speaker_frames
from .plda import PldaModel, length_normalize, llr_matrix, per_recording_pca, project_plda
from .segmentation import EmbeddingSequence, frames_to_subsegments
from .timeline import Annotation

Extractor = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GlobalEmbedding:
    speaker: str
    vector: np.ndarray
    weight: float  # seconds of speech behind the vector


def weighted_mean(vectors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return (weights[:, None] * vectors).sum(axis=0) / weights.sum()


def subsegment_speakers(
    diarization: Annotation, embeddings: EmbeddingSequence, frame_step: float = 0.01
) -> list[str | None]:
    """Majority speaker over the frames each sub-segment owns (None if it owns none)."""
    if not len(embeddings):
        return []
    speech = diarization.speech()
    horizon = max(speech.extent_end, max(s.segment.offset for s in embeddings.subsegments))
    owner = frames_to_subsegments(embeddings.subsegments, frame_step, speech, horizon)
    labels, mat = speaker_frames(diarization, frame_step, horizon)
    counts = np.zeros((len(labels), len(embeddings)), dtype=np.int64)
    mapped = owner >= 0
    for k in range(len(labels)):
        sel = mapped & mat[k, : len(owner)]
        counts[k] = np.bincount(owner[sel], minlength=len(embeddings))
    out: list[str | None] = []
    for t in range(len(embeddings)):
        col = counts[:, t]
        out.append(labels[int(np.argmax(col))] if col.any() else None)
    return out


def global_embed(
    diarization: Annotation,
    embeddings: EmbeddingSequence,
    extractor: Extractor = weighted_mean,
    length_norm: bool = True,
    frame_step: float = 0.01,
) -> list[GlobalEmbedding]:
    """One duration-weighted embedding per speaker, optionally scaled to norm sqrt(D)."""
    owners = subsegment_speakers(diarization, embeddings, frame_step)
    durations = embeddings.durations
    out = []
    for spk in diarization.labels:
        idx = [t for t, o in enumerate(owners) if o == spk]
        if not idx:
            raise ValueError(f"speaker {spk!r} owns no sub-segment embedding")
        vec = extractor(embeddings.vectors[idx], durations[idx])
        if length_norm:
            vec = length_normalize(vec)[0]
        out.append(GlobalEmbedding(spk, vec, float(durations[idx].sum())))
    return out


@dataclass
class ReclusterResult:
    annotation: Annotation
    mapping: dict[str, str]  # input speaker -> output speaker


def recluster(
    diarization: Annotation,
    embeddings: EmbeddingSequence,
    plda: PldaModel,
    merge_threshold: float,
    extractor: Extractor = weighted_mean,
    length_norm: bool = True,
    frame_step: float = 0.01,
) -> ReclusterResult:
    """AHC over per-speaker global embeddings; merged speakers keep the smallest label."""
    labels = diarization.labels
    identity = {s: s for s in labels}
    if len(labels) < 2:
        return ReclusterResult(diarization, identity)
    globals_ = global_embed(diarization, embeddings, extractor, length_norm, frame_step)
    vectors = np.array([g.vector for g in globals_])
    # full-dimension PCA only rotates the space
    proj, _ = per_recording_pca(vectors - plda.mean, retained_variance=1.0)
    scores = llr_matrix(vectors @ proj.T, project_plda(plda, proj))
    groups = cluster(scores, AhcConfig(threshold=merge_threshold))
    mapping = {}
    for g in np.unique(groups):
        members = [globals_[i].speaker for i in np.flatnonzero(groups == g)]
        for m in members:
            mapping[m] = min(members)
    return ReclusterResult(diarization.rename(mapping).normalized(), mapping)
