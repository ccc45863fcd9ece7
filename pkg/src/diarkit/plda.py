"""Two-covariance PLDA: storage, preprocessing, PCA, diagonalisation, scoring.

Model file::

    DIARKIT-PLDA v1 <D>
    <mean row>
    <D rows of the across-class covariance B>
    <D rows of the within-class covariance W>
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np
import scipy.linalg

from .rttm_io import FormatError

log = logging.getLogger(__name__)

PLDA_MAGIC = "DIARKIT-PLDA"
PLDA_VERSION = "v1"
SYM_TOL = 1e-10
PSD_TOL = 1e-10
ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class PldaModel:
    mean: np.ndarray
    across_class: np.ndarray
    within_class: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        b = np.asarray(self.across_class, dtype=float)
        w = np.asarray(self.within_class, dtype=float)
        d = mean.shape[0]
        if b.shape != (d, d) or w.shape != (d, d):
            raise ValueError(f"covariance shapes {b.shape}, {w.shape} do not match mean dim {d}")
        for name, m in (("across-class", b), ("within-class", w)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} covariance is not finite")
            if np.max(np.abs(m - m.T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(m), initial=0.0)):
                raise ValueError(f"{name} covariance is not symmetric")
        b = 0.5 * (b + b.T)
        w = 0.5 * (w + w.T)
        try:
            np.linalg.cholesky(w)
        except np.linalg.LinAlgError:
            raise ValueError("within-class covariance is not positive definite") from None
        evals, evecs = np.linalg.eigh(b)
        if evals.size and evals.min() < -PSD_TOL * max(1.0, abs(evals).max()):
            raise ValueError(f"across-class covariance has negative eigenvalue {evals.min():.3g}")
        if evals.size and evals.min() < 0:
            b = (evecs * np.clip(evals, 0, None)) @ evecs.T
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "across_class", b)
        object.__setattr__(self, "within_class", w)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class DiagonalizedPlda:
    transform: np.ndarray  # (D', D)
    phi: np.ndarray  # (D',) descending

    def apply(self, x: np.ndarray, mean: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - mean) @ self.transform.T


def whitener_from_covariance(cov: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root, mapping ``cov`` to the identity."""
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() <= 0:
        raise ValueError("covariance must be positive definite to whiten")
    return (evecs / np.sqrt(evals)) @ evecs.T


def length_normalize(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        bad = int(np.flatnonzero(norms.ravel() <= 1e-12)[0])
        raise ValueError(f"vector {bad} has zero norm, cannot length-normalize")
    return x * (np.sqrt(x.shape[1]) / norms)


def preprocess(x: np.ndarray, mean: np.ndarray, whitener: np.ndarray) -> np.ndarray:
    """Centre, whiten, and scale every vector to Euclidean norm sqrt(D)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return length_normalize((x - mean) @ np.asarray(whitener).T)


def n_components_for(eigenvalues: np.ndarray, retained_variance: float) -> int:
    """Smallest k whose top-k eigenvalue share reaches ``retained_variance``."""
    ev = np.sort(np.clip(np.asarray(eigenvalues, dtype=float), 0, None))[::-1]
    total = ev.sum()
    if total <= 0 or retained_variance >= 1.0:
        return len(ev)
    share = np.cumsum(ev) / total
    return int(np.searchsorted(share, retained_variance - 1e-12) + 1)


def per_recording_pca(x: np.ndarray, retained_variance: float = 0.55) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the leading principal axes of the recording's own covariance.

    Returns ``(P, x @ P.T)`` where P has orthonormal rows. With fewer than two
    vectors the identity is returned.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    if n < 2:
        log.warning("PCA needs at least 2 vectors, got %d; using identity projection", n)
        return np.eye(d), x.copy()
    cov = np.cov(x, rowvar=False, bias=True).reshape(d, d)
    evals, evecs = np.linalg.eigh(cov)
    # descending eigenvalues; equal eigenvalues keep input dimension order
    order = np.lexsort((np.arange(d), -np.round(evals, 12)))
    evals, evecs = evals[order], evecs[:, order]
    k = n_components_for(evals, retained_variance)
    proj = evecs[:, :k].T
    # fixed sign convention: the largest-magnitude entry of each axis is positive
    signs = np.sign(proj[np.arange(k), np.argmax(np.abs(proj), axis=1)])
    proj = proj * signs[:, None]
    return proj, x @ proj.T


def project_plda(model: PldaModel, proj: np.ndarray) -> PldaModel:
    proj = np.atleast_2d(np.asarray(proj, dtype=float))
    gram = proj @ proj.T
    if np.max(np.abs(gram - np.eye(proj.shape[0]))) > ORTHO_TOL:
        raise ValueError("projection rows are not orthonormal")
    return PldaModel(
        proj @ model.mean,
        proj @ model.across_class @ proj.T,
        proj @ model.within_class @ proj.T,
    )


def diagonalize(model: PldaModel) -> DiagonalizedPlda:
    """Simultaneous diagonalisation: T W T^T = I and T B T^T = diag(phi)."""
    try:
        evals, evecs = scipy.linalg.eigh(model.across_class, model.within_class)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise ValueError(f"cannot diagonalize PLDA: {exc}") from None
    order = np.argsort(-evals, kind="stable")
    phi = np.clip(evals[order], 0, None)
    return DiagonalizedPlda(evecs[:, order].T, phi)


def _llr_terms(phi: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    # per dimension, same-speaker joint cov [[1+p, p], [p, 1+p]] vs independent [[1+p, 0], [0, 1+p]]
    const = np.sum(np.log1p(phi) - 0.5 * np.log1p(2 * phi))
    quad = 0.5 * (1.0 / (1 + phi) - (1 + phi) / (1 + 2 * phi))
    cross = phi / (1 + 2 * phi)
    return const, quad, cross


def llr_matrix(x: np.ndarray, model: PldaModel) -> np.ndarray:
    """Pairwise same-vs-different speaker log-likelihood ratios."""
    diag = diagonalize(model)
    y = diag.apply(x, model.mean)
    const, quad, cross = _llr_terms(diag.phi)
    sq = (y * y) @ quad
    scores = const + sq[:, None] + sq[None, :] + (y * cross) @ y.T
    return 0.5 * (scores + scores.T)


def llr_pair(a: np.ndarray, b: np.ndarray, model: PldaModel) -> float:
    return float(llr_matrix(np.vstack([a, b]), model)[0, 1])


def write_plda(model: PldaModel, stream: TextIO) -> None:
    def row(v):
        return " ".join(f"{float(x):.17g}" for x in v)

    stream.write(f"{PLDA_MAGIC} {PLDA_VERSION} {model.dim}\n")
    stream.write(row(model.mean) + "\n")
    for r in model.across_class:
        stream.write(row(r) + "\n")
    for r in model.within_class:
        stream.write(row(r) + "\n")


def read_plda(stream: Iterable[str]) -> PldaModel:
    rows = [(i, line.split()) for i, line in enumerate(stream, 1) if line.strip()]
    if not rows:
        raise FormatError("empty PLDA file", 1)
    lineno, header = rows[0]
    if len(header) != 3 or header[0] != PLDA_MAGIC or header[1] != PLDA_VERSION:
        raise FormatError(f"bad header {' '.join(header)!r}", lineno)
    d = int(header[2])
    if len(rows) != 1 + 1 + 2 * d:
        raise FormatError(f"expected {2 + 2 * d} non-empty lines, got {len(rows)}", rows[-1][0])
    values = []
    for lineno, fields in rows[1:]:
        if len(fields) != d:
            raise FormatError(f"expected {d} values, got {len(fields)}", lineno)
        try:
            values.append([float(f) for f in fields])
        except ValueError:
            raise FormatError("non-numeric field", lineno) from None
    arr = np.array(values)
    try:
        return PldaModel(arr[0], arr[1 : 1 + d], arr[1 + d :])
    except ValueError as exc:
        raise FormatError(str(exc), rows[0][0]) from None
