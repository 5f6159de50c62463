"""Adaptive ensembles of transverse-field Ising agents coupled by summary feedback."""
# ruff: noqa: F401
__version__ = "0.1.0"

from .agent import AgentBatch, AgentParams, GroundState, Summary, ground_state, measure_summaries
from .kernels import ChannelWeights, channel_weights, compute_stats, renormalized_fields
from .meanfield import LoopConfig, FixedPoint, energy_functional, run_to_convergence, jacobian
from .ensemble import PRESETS, RegimePreset, run_ensemble, run_realization, sweep_grid
from .diagnostics import detect_communities, modularity, binder_cumulant, susceptibility
from .scaling import FssDataset, bootstrap_fit, collapse_fit, fss_scan, hysteresis_sweep
