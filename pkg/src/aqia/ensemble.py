"""Disorder sampling, regime presets and multi-realization runs."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import diagnostics
from .agent import TOPOLOGIES, AgentBatch, AgentParams
from .kernels import sample_mask
from .meanfield import (FixedPoint, IterationTrace, LoopConfig, run_to_convergence,
                        weights_for)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegimePreset:
    name: str
    N: int = 30
    n: int = 6
    meanJ: float = 1.0
    sigmaJ: float = 0.01
    meanH: float = 1.0
    sigmaH: float = 0.1
    gamma: float = 1.0
    edge_density: float = 1.0
    R: int = 50
    topology: str = "chain"

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.sigmaJ < 0 or self.sigmaH < 0:
            raise ValueError("disorder widths must be non-negative")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0.0 < self.edge_density <= 1.0:
            raise ValueError("edge_density must lie in (0, 1]")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")

    def with_(self, **changes) -> "RegimePreset":
        return replace(self, **changes)


PRESETS = {
    "critical": RegimePreset("critical", meanJ=1.0, sigmaJ=0.01, meanH=1.0, sigmaH=0.1,
                             gamma=1.0, edge_density=1.0),
    "glassy": RegimePreset("glassy", meanJ=0.5, sigmaJ=0.15, meanH=1.0, sigmaH=0.2,
                           gamma=0.6, edge_density=1.0),
    # Sparse connectivity; the density itself is a free choice.
    "community": RegimePreset("community", meanJ=0.5, sigmaJ=0.1, meanH=1.0, sigmaH=0.1,
                              gamma=1.0, edge_density=0.3),
}


def get_preset(name: str) -> RegimePreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def realization_seed(master_seed: int, r: int) -> np.random.SeedSequence:
    """Independent stream for realization ``r``; depends only on ``(master_seed, r)``."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(r),))


def sample_realization(preset: RegimePreset, seed):
    """Draw the agents and the edge mask of one disorder realization.

    ``seed`` is an int or a :class:`numpy.random.SeedSequence`.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    agent_ss, mask_ss = ss.spawn(2)
    rng = np.random.default_rng(agent_ss)
    bonds = TOPOLOGIES[preset.topology](preset.n)
    agents = []
    for _ in range(preset.N):
        h = rng.normal(preset.meanH, preset.sigmaH, preset.n)
        J = rng.normal(preset.meanJ, preset.sigmaJ, len(bonds))
        agents.append(AgentParams(preset.n, bonds, h, J, preset.gamma))
    mask = sample_mask(preset.N, preset.edge_density, mask_ss)
    return agents, mask


def edwards_anderson(summaries) -> float:
    """Mean squared agent polarization."""
    s = np.asarray(summaries, dtype=float)
    S = s[:, 0] if s.ndim == 2 else s
    if S.size < 1:
        raise ValueError("need at least one agent")
    return float(np.mean(S ** 2))


@dataclass
class RealizationResult:
    index: int
    seed: tuple
    fixed_point: FixedPoint
    trace: IterationTrace
    qEA: float
    mean_absS: float
    mean_S: float
    Q: float
    labels: np.ndarray
    aggregate: np.ndarray
    mask: np.ndarray

    @property
    def summaries(self) -> np.ndarray:
        return self.fixed_point.summaries


def final_weights(summaries, mask, config: LoopConfig):
    """Weights recomputed from the converged summaries themselves."""
    return weights_for(summaries, mask, config)


def community_structure(summaries, mask, config: LoopConfig):
    """Aggregate graph, detected communities and modularity of its positive part."""
    agg = final_weights(summaries, mask, config).aggregate
    comm = diagnostics.detect_communities(diagnostics.positive_part(agg))
    return agg, comm


def run_realization(preset: RegimePreset, master_seed: int, r: int,
                    config: LoopConfig = LoopConfig()) -> RealizationResult:
    ss = realization_seed(master_seed, r)
    agents, mask = sample_realization(preset, ss)
    fp, trace = run_to_convergence(AgentBatch.from_agents(agents), mask, config)
    S = fp.summaries[:, 0]
    agg, comm = community_structure(fp.summaries, mask, config)
    return RealizationResult(
        index=r, seed=(int(master_seed), int(r)), fixed_point=fp, trace=trace,
        qEA=edwards_anderson(fp.summaries), mean_absS=float(np.mean(np.abs(S))),
        mean_S=float(np.mean(S)), Q=comm.Q, labels=comm.labels, aggregate=agg, mask=mask)


def _run_one(args):
    preset, master_seed, r, config = args
    try:
        return r, run_realization(preset, master_seed, r, config), None
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        return r, None, f"{type(exc).__name__}: {exc}"


def map_realizations(tasks, threads: int = 1):
    """Evaluate realization tasks, returning results in task order."""
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    return [_run_one(t) for t in tasks]


def _mean_sem(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    sem = x.std(ddof=1) / math.sqrt(x.size) if x.size > 1 else 0.0
    return float(x.mean()), float(sem)


def coefficient_of_variation(values) -> float:
    """Population standard deviation over mean."""
    x = np.asarray(values, dtype=float)
    mean = x.mean()
    return float(x.std() / mean) if mean != 0 else float("nan")


@dataclass
class EnsembleRecord:
    preset: RegimePreset
    master_seed: int
    results: list
    failures: dict = field(default_factory=dict)
    qEA_mean: float = float("nan")
    qEA_sem: float = float("nan")
    absS_mean: float = float("nan")
    absS_sem: float = float("nan")
    Q_mean: float = float("nan")
    Q_sem: float = float("nan")
    cv_qEA: float = float("nan")
    converged_fraction: float = float("nan")

    @classmethod
    def aggregate(cls, preset, master_seed, results, failures=None):
        rec = cls(preset, master_seed, list(results), dict(failures or {}))
        if not rec.results:
            return rec
        q = [r.qEA for r in rec.results]
        rec.qEA_mean, rec.qEA_sem = _mean_sem(q)
        rec.absS_mean, rec.absS_sem = _mean_sem([r.mean_absS for r in rec.results])
        rec.Q_mean, rec.Q_sem = _mean_sem([r.Q for r in rec.results])
        rec.cv_qEA = coefficient_of_variation(q)
        rec.converged_fraction = float(np.mean([r.fixed_point.converged for r in rec.results]))
        return rec

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    def as_dict(self) -> dict:
        return {
            "preset": self.preset.name,
            "master_seed": self.master_seed,
            "realizations": len(self.results),
            "failed": self.n_failed,
            "qEA_mean": self.qEA_mean, "qEA_sem": self.qEA_sem,
            "absS_mean": self.absS_mean, "absS_sem": self.absS_sem,
            "Q_mean": self.Q_mean, "Q_sem": self.Q_sem,
            "cv_qEA": self.cv_qEA,
            "converged_fraction": self.converged_fraction,
        }


def run_ensemble(preset: RegimePreset, master_seed: int, config: LoopConfig = LoopConfig(),
                 threads: int = 1) -> EnsembleRecord:
    """Run ``preset.R`` realizations and aggregate their statistics.

    Failed realizations are dropped from the aggregates and listed in
    ``failures``; if every realization fails a ``RuntimeError`` is raised.
    """
    tasks = [(preset, master_seed, r, config) for r in range(preset.R)]
    results, failures = [], {}
    for r, res, err in map_realizations(tasks, threads):
        if res is None:
            failures[r] = err
        else:
            results.append(res)
    if not results:
        raise RuntimeError(f"all {preset.R} realizations failed: {failures}")
    if failures:
        log.warning("%d of %d realizations failed and were excluded", len(failures), preset.R)
    return EnsembleRecord.aggregate(preset, master_seed, results, failures)


@dataclass
class SweepGrid:
    J_values: np.ndarray
    gamma_values: np.ndarray
    absS: np.ndarray
    qEA: np.ndarray
    chi: np.ndarray
    Q: np.ndarray
    records: list
    status: np.ndarray


def sweep_grid(base: RegimePreset, J_values: Sequence[float], gamma_values: Sequence[float],
               master_seed: int, config: LoopConfig = LoopConfig(), threads: int = 1) -> SweepGrid:
    """Ensemble observables on a (mean J, gamma) grid.

    Every cell reuses ``master_seed``, so neighbouring cells share disorder
    draws up to the shift of the means.  ``chi`` is filled along each J row
    when the gamma axis has at least three points.
    """
    J_values = np.asarray(J_values, dtype=float)
    gamma_values = np.asarray(gamma_values, dtype=float)
    if J_values.size == 0 or gamma_values.size == 0:
        raise ValueError("grid axes must be non-empty")
    shape = (J_values.size, gamma_values.size)
    absS, qEA, Q = np.full(shape, np.nan), np.full(shape, np.nan), np.full(shape, np.nan)
    status = np.empty(shape, dtype=object)
    records = [[None] * shape[1] for _ in range(shape[0])]
    for a, J in enumerate(J_values):
        for b, g in enumerate(gamma_values):
            preset = base.with_(meanJ=float(J), gamma=float(g))
            try:
                rec = run_ensemble(preset, master_seed, config, threads)
            except RuntimeError as exc:
                status[a, b] = f"failed: {exc}"
                continue
            records[a][b] = rec
            absS[a, b], qEA[a, b], Q[a, b] = rec.absS_mean, rec.qEA_mean, rec.Q_mean
            status[a, b] = "ok" if rec.n_failed == 0 else f"partial: {rec.n_failed} failed"
    chi = np.full(shape, np.nan)
    if gamma_values.size >= 3:
        for a in range(shape[0]):
            if np.all(np.isfinite(absS[a])):
                chi[a] = diagnostics.susceptibility(gamma_values, absS[a])
    return SweepGrid(J_values, gamma_values, absS, qEA, chi, Q, records, status)
