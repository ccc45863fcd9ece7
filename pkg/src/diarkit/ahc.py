"""Average-linkage agglomerative clustering over a similarity matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AhcConfig:
    threshold: float = 0.0
    linkage: str = "average"
    max_clusters: int | None = None

    def __post_init__(self):
        if self.linkage != "average":
            raise ValueError(f"unsupported linkage {self.linkage!r}; only 'average' is available")
        if self.max_clusters is not None and self.max_clusters < 1:
            raise ValueError("max_clusters must be at least 1")


def relabel_by_first_occurrence(labels) -> np.ndarray:
    labels = np.asarray(labels)
    mapping: dict = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels.tolist()):
        out[i] = mapping.setdefault(lab, len(mapping))
    return out


def cluster(similarity: np.ndarray, cfg: AhcConfig) -> np.ndarray:
    """Merge the most similar pair of clusters until the best score drops below threshold.

    Cluster similarity is the mean of the original pairwise scores across
    the two clusters. A cluster is identified by its smallest item index;
    ties go to the lexicographically smallest pair.
    """
    sim = np.asarray(similarity, dtype=float)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"similarity must be a square matrix, got shape {sim.shape}")
    n = sim.shape[0]
    if n == 0:
        raise ValueError("empty similarity matrix")
    off = ~np.eye(n, dtype=bool)
    if np.isnan(sim).any():
        raise ValueError("similarity matrix contains NaN")
    if not np.all(np.isfinite(sim[off])):
        raise ValueError("similarity matrix has non-finite off-diagonal entries")
    if not np.allclose(sim, sim.T, rtol=1e-10, atol=1e-10):
        raise ValueError("similarity matrix must be symmetric")

    # sums[a, b]: total score between clusters a and b (rows indexed by representative)
    sums = 0.5 * (sim + sim.T)
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    members = np.arange(n)
    avg = sums.copy()
    np.fill_diagonal(avg, -np.inf)
    best = np.argmax(avg, axis=1)  # argmax picks the lowest index among ties
    best_val = avg[np.arange(n), best]
    count = n
    while count > 1:
        if cfg.max_clusters is not None and count <= cfg.max_clusters:
            break
        vals = np.where(active, best_val, -np.inf)
        top = vals.max()
        if top < cfg.threshold:
            break
        rows = np.flatnonzero(vals == top)
        a, b = min((min(r, best[r]), max(r, best[r])) for r in rows)
        # merge b into a
        sums[a] += sums[b]
        sums[:, a] = sums[a]
        sizes[a] += sizes[b]
        active[b] = False
        members[members == b] = a
        avg[b, :] = -np.inf
        avg[:, b] = -np.inf
        new_row = np.where(active, sums[a] / (sizes[a] * sizes), -np.inf)
        new_row[a] = -np.inf
        avg[a] = new_row
        avg[:, a] = new_row
        count -= 1
        # rows whose cached partner vanished or whose partner score may have dropped
        stale = active & ((best == a) | (best == b))
        stale[a] = True
        for r in np.flatnonzero(stale):
            best[r] = int(np.argmax(avg[r]))
            best_val[r] = avg[r, best[r]]
        others = active & ~stale
        better = others & ((new_row > best_val) | ((new_row == best_val) & (a < best)))
        best[better] = a
        best_val[better] = new_row[better]
    return relabel_by_first_occurrence(members)
