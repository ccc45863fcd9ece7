"""Bayesian HMM clustering of x-vector sequences (VBx).

HMM states are speakers. Each speaker s has a latent vector y_s ~ N(0, I)
and emits x_t ~ N(diag(phi)^{1/2} y_s, I) in the diagonalised PLDA space.
Inference alternates a Gaussian update of q(y_s), an HMM forward-backward
pass for the responsibilities gamma, and a point update of the speaker
priors pi. ``fa`` scales the emission log-likelihoods, ``fb`` scales the
speaker-prior KL term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)


@dataclass
class VbxConfig:
    fa: float = 0.3
    fb: float = 16.0
    p_loop: float = 0.9
    max_iters: int = 40
    elbo_epsilon: float = 1e-4
    speaker_floor: float = 1e-4
    init_smoothing: float = 0.95
    # "transitions": expected non-loop transition counts; "occupancy": total soft occupancy
    pi_update: str = "transitions"

    def __post_init__(self):
        if not 0 < self.p_loop < 1:
            raise ValueError("p_loop must lie strictly between 0 and 1")
        if self.fa <= 0 or self.fb <= 0:
            raise ValueError("fa and fb must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.pi_update not in ("transitions", "occupancy"):
            raise ValueError(f"unknown pi update {self.pi_update!r}")


@dataclass
class VbxResult:
    labels: np.ndarray  # (T,) argmax column of gamma
    gamma: np.ndarray  # (T, S) surviving speakers only
    pi: np.ndarray  # (S,)
    alpha: np.ndarray  # (S, D) posterior means of y_s
    inv_l: np.ndarray  # (S, D) posterior variances of y_s
    elbo_trace: list[float] = field(default_factory=list)
    kept: np.ndarray | None = None  # indices of surviving initial speakers

    @property
    def speaker_count(self) -> int:
        return self.gamma.shape[1]


class VbxError(RuntimeError):
    pass


def gamma_init_from_labels(labels, smoothing: float = 0.95, n_speakers: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if n_speakers is None:
        n_speakers = int(labels.max()) + 1 if labels.size else 0
    k = n_speakers
    if k < 1:
        raise ValueError("need at least one initial speaker")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in 0..{k - 1}")
    if k == 1:
        return np.ones((labels.size, 1))
    gamma = np.full((labels.size, k), (1.0 - smoothing) / (k - 1))
    gamma[np.arange(labels.size), labels] = smoothing
    return gamma


def _lse_cols(m: np.ndarray) -> np.ndarray:
    top = m.max(axis=0)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(m - safe).sum(axis=0))


def _lse(v: np.ndarray) -> float:
    top = v.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.exp(v - top).sum()))


def forward_backward(log_lik: np.ndarray, log_trans: np.ndarray, log_init: np.ndarray):
    """Log-domain forward-backward.

    ``log_trans[i, j]`` is log p(state j at t | state i at t-1).
    Returns ``(gamma, log_evidence, log_alpha, log_beta)``.
    """
    log_lik = np.asarray(log_lik, dtype=float)
    log_trans = np.asarray(log_trans, dtype=float)
    t_len, n = log_lik.shape
    la = np.empty((t_len, n))
    lb = np.empty((t_len, n))
    la[0] = log_init + log_lik[0]
    for t in range(1, t_len):
        la[t] = log_lik[t] + _lse_cols(la[t - 1][:, None] + log_trans)
    lb[-1] = 0.0
    trans_t = log_trans.T
    for t in range(t_len - 2, -1, -1):
        lb[t] = _lse_cols((log_lik[t + 1] + lb[t + 1])[:, None] + trans_t)
    log_evidence = _lse(la[-1])
    gamma = np.exp(la + lb - log_evidence)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, log_evidence, la, lb


def loop_transitions(pi: np.ndarray, p_loop: float) -> np.ndarray:
    n = len(pi)
    return p_loop * np.eye(n) + (1 - p_loop) * np.tile(pi, (n, 1))


def update_speakers(x: np.ndarray, phi: np.ndarray, gamma: np.ndarray, fa: float, fb: float):
    """Closed-form q(y_s): diagonal precision I + (fa/fb) n_s phi."""
    n_s = gamma.sum(axis=0)
    f_s = gamma.T @ x
    inv_l = 1.0 / (1.0 + (fa / fb) * n_s[:, None] * phi[None, :])
    alpha = (fa / fb) * inv_l * (f_s * np.sqrt(phi)[None, :])
    return alpha, inv_l


def emission_loglik(x: np.ndarray, phi: np.ndarray, alpha: np.ndarray, inv_l: np.ndarray, fa: float) -> np.ndarray:
    """fa-scaled expected log-likelihood of each x_t under each speaker."""
    d = x.shape[1]
    per_frame = -0.5 * (np.sum(x * x, axis=1) + d * LOG_2PI)
    rho = x * np.sqrt(phi)[None, :]
    return fa * (rho @ alpha.T - 0.5 * ((inv_l + alpha**2) @ phi)[None, :] + per_frame[:, None])


def speaker_kl(alpha: np.ndarray, inv_l: np.ndarray) -> np.ndarray:
    """KL(N(alpha_s, diag(inv_l_s)) || N(0, I)) per speaker."""
    return 0.5 * np.sum(inv_l + alpha**2 - 1.0 - np.log(inv_l), axis=1)


def _transition_pi(log_lik, pi, p_loop, la, lb, log_evidence) -> np.ndarray:
    # expected number of times each speaker is entered through the non-loop branch
    lse_prev = logsumexp(la[:-1], axis=1)
    with np.errstate(divide="ignore"):
        log_terms = np.log1p(-p_loop) + np.log(pi)[None, :] + log_lik[1:] + lb[1:] + lse_prev[:, None] - log_evidence
    counts = np.exp(la[0] + lb[0] - log_evidence) + np.exp(log_terms).sum(axis=0)
    return counts / counts.sum()


def run_vbx(x: np.ndarray, phi: np.ndarray, init_labels, cfg: VbxConfig | None = None) -> VbxResult:
    """Refine an initial clustering; returns labels, responsibilities and the ELBO trace."""
    cfg = cfg or VbxConfig()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    phi = np.asarray(phi, dtype=float).ravel()
    init_labels = np.asarray(init_labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise VbxError("empty embedding sequence")
    if init_labels.shape[0] != x.shape[0]:
        raise VbxError(f"{init_labels.shape[0]} initial labels for {x.shape[0]} embeddings")
    if phi.shape[0] != x.shape[1]:
        raise VbxError(f"phi has {phi.shape[0]} entries for {x.shape[1]}-dim embeddings")
    if np.any(phi < 0):
        raise VbxError("phi must be non-negative")

    gamma = gamma_init_from_labels(init_labels, cfg.init_smoothing)
    n_spk = gamma.shape[1]
    pi = np.full(n_spk, 1.0 / n_spk)
    kept = np.arange(n_spk)
    elbo_trace: list[float] = []
    alpha = inv_l = None
    for it in range(cfg.max_iters):
        alpha, inv_l = update_speakers(x, phi, gamma, cfg.fa, cfg.fb)
        log_lik = emission_loglik(x, phi, alpha, inv_l, cfg.fa)
        with np.errstate(divide="ignore"):
            log_trans = np.log(loop_transitions(pi, cfg.p_loop))
            log_init = np.log(pi)
        gamma, log_evidence, la, lb = forward_backward(log_lik, log_trans, log_init)
        elbo = log_evidence - cfg.fb * float(np.sum(speaker_kl(alpha, inv_l)))
        if not np.isfinite(elbo):
            raise VbxError(f"non-finite ELBO at iteration {it}")
        elbo_trace.append(elbo)

        if cfg.pi_update == "transitions":
            pi = _transition_pi(log_lik, pi, cfg.p_loop, la, lb, log_evidence)
        else:
            pi = gamma.sum(axis=0) / gamma.shape[0]
        keep = pi >= cfg.speaker_floor
        if not keep.any():
            keep[np.argmax(pi)] = True
        if not keep.all():
            log.debug("iteration %d: dropping %d speakers", it, int((~keep).sum()))
            pi = pi[keep] / pi[keep].sum()
            gamma = gamma[:, keep]
            alpha, inv_l = alpha[keep], inv_l[keep]
            kept = kept[keep]
            sums = gamma.sum(axis=1, keepdims=True)
            empty = sums[:, 0] <= 0
            gamma[empty] = pi
            sums[empty] = 1.0
            gamma = gamma / sums

        if len(elbo_trace) > 1 and elbo_trace[-1] - elbo_trace[-2] < cfg.elbo_epsilon:
            break

    return VbxResult(
        labels=np.argmax(gamma, axis=1),
        gamma=gamma,
        pi=pi,
        alpha=alpha,
        inv_l=inv_l,
        elbo_trace=elbo_trace,
        kept=kept,
    )
