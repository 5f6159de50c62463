"""Self-consistent feedback loop over an agent ensemble."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .agent import AgentBatch
from .kernels import (DEFAULT_EPSILON, ChannelWeights, as_summary_array,
                      channel_weights, compute_stats, renormalized_fields)

log = logging.getLogger(__name__)

RETRY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class LoopConfig:
    """Iteration controls.

    ``tol`` is the energy-change stopping threshold, ``mixing`` the linear
    damping factor applied to every update (1 means no damping).
    """

    tol: float = 1e-6
    max_iters: int = 500
    mixing: float = 1.0
    record_trace: bool = False
    epsilon: float = DEFAULT_EPSILON
    centered_u: bool = False
    retry_on_rise: bool = True
    feedback: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.0 < self.mixing <= 1.0:
            raise ValueError("mixing must lie in (0, 1]")


@dataclass
class IterationTrace:
    energies: list = field(default_factory=list)
    summaries_per_iter: Optional[list] = None
    residuals: list = field(default_factory=list)
    retries: int = 0


@dataclass
class FixedPoint:
    summaries: np.ndarray
    energy: float
    iterations: int
    converged: bool
    fields: np.ndarray
    weights: ChannelWeights


def energy_functional(summaries, w: ChannelWeights) -> float:
    """Mean-field energy of the ensemble for frozen weights.

    Mixed channels contribute ``w_ab (a_i b_j + a_j b_i)`` per pair.
    """
    m = as_summary_array(summaries)
    S, B, U = m.T
    # Full-matrix quadratic forms count each unordered pair twice; cross
    # channels already need both orderings, so halve only the diagonal ones.
    pair = (0.5 * (S @ w.wS @ S + B @ w.wB @ B + U @ w.wU @ U)
            + S @ w.wSB @ B + S @ w.wSU @ U + B @ w.wBU @ U)
    return float(U.sum() - pair)


def _as_batch(agents) -> AgentBatch:
    return agents if isinstance(agents, AgentBatch) else AgentBatch.from_agents(agents)


def weights_for(summaries, mask, config: LoopConfig) -> ChannelWeights:
    m = as_summary_array(summaries)
    if not config.feedback:
        w = ChannelWeights.zeros(m.shape[0])
        return ChannelWeights(w.wS, w.wB, w.wU, w.wSB, w.wSU, w.wBU, np.asarray(mask, bool))
    return channel_weights(m, compute_stats(m, config.epsilon), mask)


def total_energy(summaries, mask, config: LoopConfig) -> float:
    """Energy functional with weights computed from the same summaries."""
    return energy_functional(summaries, weights_for(summaries, mask, config))


def bare_summaries(agents) -> np.ndarray:
    """Summaries of every agent's zero-field ground state."""
    batch = _as_batch(agents)
    return batch.solve(np.zeros((len(batch), 3)))


def apply_map(agents, summaries, mask, config: LoopConfig = LoopConfig(),
              mixing: Optional[float] = None):
    """One application of the feedback map.

    Returns
    -------
    new : ndarray (N, 3)
        Updated summaries, mixed with the input when ``mixing < 1``.
    fields : ndarray (N, 3)
        Feedback fields used for the solves.
    weights : ChannelWeights
        Weights computed from the input summaries.
    """
    batch = _as_batch(agents)
    m = as_summary_array(summaries)
    if m.shape[0] != len(batch):
        raise ValueError(f"{m.shape[0]} summaries for {len(batch)} agents")
    if m.shape[0] < 2:
        raise ValueError("the feedback map needs at least 2 agents")
    w = weights_for(m, mask, config)
    phi = renormalized_fields(m, w, centered_u=config.centered_u)
    new = batch.solve(phi)
    eta = config.mixing if mixing is None else mixing
    if eta < 1.0:
        new = (1.0 - eta) * m + eta * new
    return new, phi, w


def run_to_convergence(agents, mask, config: LoopConfig = LoopConfig(), init=None):
    """Iterate the feedback map until the total energy stops changing.

    Non-convergence is reported through ``FixedPoint.converged``, not raised.
    """
    batch = _as_batch(agents)
    m = bare_summaries(batch) if init is None else as_summary_array(init).copy()
    trace = IterationTrace(summaries_per_iter=[m.copy()] if config.record_trace else None)
    energy = total_energy(m, mask, config)
    trace.energies.append(energy)
    converged = False
    it = 0
    phi = w = None
    while it < config.max_iters:
        it += 1
        new, phi, w = apply_map(batch, m, mask, config)
        new_energy = total_energy(new, mask, config)
        if (config.retry_on_rise and config.mixing == 1.0
                and new_energy > energy + RETRY_TOLERANCE):
            half = 0.5 * m + 0.5 * new
            half_energy = total_energy(half, mask, config)
            trace.retries += 1
            log.debug("energy rose by %.3g at iteration %d; retried with mixing 0.5",
                      new_energy - energy, it)
            new, new_energy = half, half_energy
        trace.residuals.append(float(np.max(np.abs(new - m))))
        if trace.summaries_per_iter is not None:
            trace.summaries_per_iter.append(new.copy())
        trace.energies.append(new_energy)
        delta = abs(new_energy - energy)
        m, energy = new, new_energy
        if delta < config.tol:
            converged = True
            break
    if w is None:
        w = weights_for(m, mask, config)
        phi = renormalized_fields(m, w, centered_u=config.centered_u)
    fp = FixedPoint(m, energy, it, converged, phi, w)
    return fp, trace


def jacobian(agents, mask, config: LoopConfig, fp, step: float = 1e-5):
    """Central-difference Jacobian of the undamped map at a fixed point.

    Returns the (3N, 3N) matrix, flattened agent-major ``(S0, B0, U0, S1, ...)``,
    and its eigenvalue moduli sorted in descending order.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    batch = _as_batch(agents)
    m0 = as_summary_array(getattr(fp, "summaries", fp))
    x0 = m0.reshape(-1)
    dim = x0.size
    J = np.empty((dim, dim))
    for k in range(dim):
        xp = x0.copy()
        xm = x0.copy()
        xp[k] += step
        xm[k] -= step
        fp_ = apply_map(batch, xp.reshape(-1, 3), mask, config, mixing=1.0)[0]
        fm_ = apply_map(batch, xm.reshape(-1, 3), mask, config, mixing=1.0)[0]
        J[:, k] = (fp_ - fm_).reshape(-1) / (2.0 * step)
    moduli = np.sort(np.abs(np.linalg.eigvals(J)))[::-1]
    return J, moduli


def spectral_radius(agents, mask, config: LoopConfig, fp, step: float = 1e-5) -> float:
    return float(jacobian(agents, mask, config, fp, step)[1][0])
