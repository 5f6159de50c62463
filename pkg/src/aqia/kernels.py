"""Similarity kernels that couple agents through their summaries.

Summaries are passed around as arrays of shape (N, 3) with columns
``(S, B, U)``; a list of :class:`~aqia.agent.Summary` converts directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 1e-6
CHANNELS = ("wS", "wB", "wU", "wSB", "wSU", "wBU")


def as_summary_array(summaries) -> np.ndarray:
    m = np.asarray(summaries, dtype=float)
    if m.ndim != 2 or m.shape[1] != 3:
        raise ValueError(f"summaries must have shape (N, 3), got {m.shape}")
    return m


@dataclass(frozen=True)
class EnsembleStats:
    muS: float
    muB: float
    muU: float
    sigmaS: float
    sigmaB: float
    sigmaU: float
    epsilon: float = DEFAULT_EPSILON

    @property
    def mu(self) -> np.ndarray:
        return np.array([self.muS, self.muB, self.muU])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([self.sigmaS, self.sigmaB, self.sigmaU])


def compute_stats(summaries, epsilon: float = DEFAULT_EPSILON) -> EnsembleStats:
    """Population mean and standard deviation of each summary channel."""
    m = as_summary_array(summaries)
    if m.shape[0] < 2:
        raise ValueError(f"ensemble statistics need at least 2 agents, got {m.shape[0]}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    mu = m.mean(axis=0)
    sd = m.std(axis=0)
    return EnsembleStats(*mu, *sd, epsilon=float(epsilon))


@dataclass(frozen=True)
class ChannelWeights:
    wS: np.ndarray
    wB: np.ndarray
    wU: np.ndarray
    wSB: np.ndarray
    wSU: np.ndarray
    wBU: np.ndarray
    mask: np.ndarray

    @property
    def aggregate(self) -> np.ndarray:
        """Elementwise sum of the six channels."""
        return self.wS + self.wB + self.wU + self.wSB + self.wSU + self.wBU

    def channels(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in CHANNELS}

    @classmethod
    def zeros(cls, N: int) -> "ChannelWeights":
        z = np.zeros((N, N))
        return cls(z, z, z, z, z, z, np.zeros((N, N), dtype=bool))


def complete_mask(N: int) -> np.ndarray:
    return ~np.eye(N, dtype=bool)


def sample_mask(N: int, edge_density: float, seed) -> np.ndarray:
    """Symmetric Erdos-Renyi edge mask with no self loops.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    if not 0.0 < edge_density <= 1.0:
        raise ValueError(f"edge_density must be in (0, 1], got {edge_density}")
    if edge_density == 1.0:
        return complete_mask(N)
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(N, k=1)
    present = rng.random(iu[0].size) < edge_density
    mask = np.zeros((N, N), dtype=bool)
    mask[iu[0][present], iu[1][present]] = True
    return mask | mask.T


def channel_weights(summaries, stats: EnsembleStats, mask=None) -> ChannelWeights:
    """Six Gaussian similarity kernels between every unmasked agent pair.

    The energy channel divides by ``(sigmaU + eps)**2`` instead of
    ``sigmaU**2`` so identical energies stay finite.
    """
    m = as_summary_array(summaries)
    N = m.shape[0]
    mask = complete_mask(N) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (N, N):
        raise ValueError(f"mask shape {mask.shape} does not match N={N}")
    mask = mask & ~np.eye(N, dtype=bool)
    S, B, U = m.T
    eps = stats.epsilon
    # Squared normalized differences, one (N, N) array per channel.
    dS2, dB2, dU2 = (
        (np.subtract.outer(x, x) / (s + eps)) ** 2
        for x, s in ((S, stats.sigmaS), (B, stats.sigmaB), (U, stats.sigmaU))
    )
    Ut = U - stats.muU
    gS, gB, gU = np.exp(-0.5 * dS2), np.exp(-0.5 * dB2), np.exp(-0.5 * dU2)

    def cross(a, b):
        return 0.5 * (np.outer(a, b) + np.outer(b, a))

    raw = {
        "wS": np.outer(S, S) * gS,
        "wB": np.outer(B, B) * gB,
        "wU": np.outer(Ut, Ut) / (stats.sigmaU + eps) ** 2 * gU,
        "wSB": cross(S, B) * np.exp(-0.25 * (dS2 + dB2)),
        "wSU": cross(S, U) * np.exp(-0.25 * (dS2 + dU2)),
        "wBU": cross(B, U) * np.exp(-0.25 * (dB2 + dU2)),
    }
    out = {k: np.where(mask, v, 0.0) for k, v in raw.items()}
    return ChannelWeights(**out, mask=mask)


def renormalized_fields(summaries, w: ChannelWeights, centered_u: bool = False) -> np.ndarray:
    """Feedback fields ``(phiS, phiB, phiU)`` per agent, shape (N, 3).

    With ``centered_u`` the energy-channel sum uses ``U_j - mean(U)`` in place
    of raw ``U_j``; off by default.
    """
    m = as_summary_array(summaries)
    S, B, U = m.T
    Uf = U - U.mean() if centered_u else U
    phiS = w.wS @ S + w.wSB @ B + w.wSU @ U
    phiB = w.wB @ B + w.wSB @ S + w.wBU @ U
    phiU = w.wU @ Uf + w.wSU @ S + w.wBU @ B
    return np.column_stack([phiS, phiB, phiU])
