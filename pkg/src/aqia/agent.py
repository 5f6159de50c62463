"""Exact treatment of a single agent: a small transverse-field Ising patch.

Basis convention: bit ``k`` of a basis index is qubit ``k``; bit value 0 is
spin up (Z = +1), bit value 1 is spin down (Z = -1).  All Hamiltonians are
real symmetric in this basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

MAX_QUBITS = 14


class Summary(NamedTuple):
    """Reduced observables of one agent: polarization, bond correlation, energy per qubit."""

    S: float
    B: float
    U: float


class FeedbackFields(NamedTuple):
    phiS: float
    phiB: float
    phiU: float


@dataclass(frozen=True)
class GroundState:
    energy: float
    amplitudes: np.ndarray


def chain_bonds(n: int) -> tuple[tuple[int, int], ...]:
    """Open chain ``(k, k+1)``."""
    return tuple((k, k + 1) for k in range(n - 1))


def ring_bonds(n: int) -> tuple[tuple[int, int], ...]:
    if n < 3:
        return chain_bonds(n)
    return chain_bonds(n) + ((0, n - 1),)


def complete_bonds(n: int) -> tuple[tuple[int, int], ...]:
    return tuple((k, l) for k in range(n) for l in range(k + 1, n))


TOPOLOGIES = {"chain": chain_bonds, "ring": ring_bonds, "complete": complete_bonds}


@dataclass(frozen=True)
class AgentParams:
    """Microscopic parameters of one agent.

    Parameters
    ----------
    n : int
        Number of qubits, ``1 <= n <= 14``.
    bonds : sequence of (k, l)
        Internal bond set with ``0 <= k < l < n``.
    h : array_like, shape (n,)
        Longitudinal fields.
    J : array_like, shape (len(bonds),)
        Bond couplings.
    gamma : float
        Transverse field, non-negative.
    """

    n: int
    bonds: tuple[tuple[int, int], ...]
    h: np.ndarray
    J: np.ndarray
    gamma: float

    def __post_init__(self):
        n = int(self.n)
        if not 1 <= n <= MAX_QUBITS:
            raise ValueError(f"qubit count n={n} outside [1, {MAX_QUBITS}]")
        bonds = tuple((int(k), int(l)) for k, l in self.bonds)
        for k, l in bonds:
            if not 0 <= k < l < n:
                raise ValueError(f"invalid bond ({k}, {l}) for n={n}")
        if len(set(bonds)) != len(bonds):
            raise ValueError("duplicate bonds")
        h = np.asarray(self.h, dtype=float).reshape(-1)
        J = np.asarray(self.J, dtype=float).reshape(-1)
        if h.shape != (n,):
            raise ValueError(f"h must have length {n}, got {h.shape[0]}")
        if J.shape != (len(bonds),):
            raise ValueError(f"J must have length {len(bonds)}, got {J.shape[0]}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(J))):
            raise ValueError("h and J must be finite")
        gamma = float(self.gamma)
        if not np.isfinite(gamma) or gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {gamma}")
        h.flags.writeable = False
        J.flags.writeable = False
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "bonds", bonds)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "gamma", gamma)

    @property
    def dim(self) -> int:
        return 1 << self.n

    @classmethod
    def uniform(cls, n, h=0.0, J=0.0, gamma=1.0, topology="chain"):
        bonds = TOPOLOGIES[topology](n)
        return cls(n, bonds, np.full(n, h, dtype=float),
                   np.full(len(bonds), J, dtype=float), gamma)


@dataclass(frozen=True)
class _Operators:
    """Cached basis-diagonal Z and ZZ values and the summed X matrix."""

    z: np.ndarray          # (dim, n)
    zz: np.ndarray         # (dim, n_bonds)
    x_sum: np.ndarray      # (dim, dim), sum_k X_k
    s_diag: np.ndarray     # diagonal of the polarization operator
    b_diag: np.ndarray     # diagonal of the bond-correlation operator
    flips: np.ndarray = field(repr=False)  # (dim, n) index of state with bit k flipped


@lru_cache(maxsize=64)
def _operators(n: int, bonds: tuple[tuple[int, int], ...]) -> _Operators:
    dim = 1 << n
    idx = np.arange(dim)
    bits = (idx[:, None] >> np.arange(n)[None, :]) & 1
    z = 1.0 - 2.0 * bits
    if bonds:
        k, l = np.array(bonds).T
        zz = z[:, k] * z[:, l]
    else:
        zz = np.zeros((dim, 0))
    flips = idx[:, None] ^ (1 << np.arange(n))[None, :]
    x_sum = np.zeros((dim, dim))
    for col in range(n):
        x_sum[idx, flips[:, col]] = 1.0
    s_diag = z.mean(axis=1)
    b_diag = zz.mean(axis=1) if bonds else np.zeros(dim)
    for a in (z, zz, x_sum, s_diag, b_diag, flips):
        a.flags.writeable = False
    return _Operators(z, zz, x_sum, s_diag, b_diag, flips)


def _ops(params: AgentParams) -> _Operators:
    return _operators(params.n, params.bonds)


def _bare_diagonal(params: AgentParams, ops: _Operators) -> np.ndarray:
    return -(ops.z @ params.h) - (ops.zz @ params.J if params.bonds else 0.0)


def build_hamiltonian(params: AgentParams) -> np.ndarray:
    """Dense matrix of the bare patch Hamiltonian.

    ``H = -sum_k h_k Z_k - sum_bonds J_kl Z_k Z_l - gamma sum_k X_k``.
    """
    ops = _ops(params)
    H = -params.gamma * ops.x_sum
    H[np.diag_indices_from(H)] = _bare_diagonal(params, ops)
    return H


def build_mf_hamiltonian(params: AgentParams, fields) -> np.ndarray:
    """Bare Hamiltonian shifted by the three feedback fields.

    The energy-channel operator is the bare Hamiltonian over ``n``, so that
    channel reduces to a uniform rescaling by ``1 - phiU / n``.
    """
    phiS, phiB, phiU = (float(f) for f in fields)
    ops = _ops(params)
    scale = 1.0 - phiU / params.n
    H = (-params.gamma * scale) * ops.x_sum
    diag = scale * _bare_diagonal(params, ops) - phiS * ops.s_diag - phiB * ops.b_diag
    H[np.diag_indices_from(H)] = diag
    return H


def _fix_sign(vecs: np.ndarray) -> np.ndarray:
    # Deterministic gauge: largest-magnitude component positive (first on ties).
    pivot = np.argmax(np.abs(vecs), axis=-1)
    sel = np.take_along_axis(vecs, pivot[..., None], axis=-1)
    return vecs * np.where(sel < 0, -1.0, 1.0)


def ground_state(H: np.ndarray) -> GroundState:
    """Lowest eigenpair of a real symmetric matrix.

    Degenerate ground levels return the first eigenvector LAPACK produces;
    that case is only reachable with exactly symmetric test inputs.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    w, v = np.linalg.eigh(H)
    return GroundState(float(w[0]), _fix_sign(v[:, 0]))


def measure_summaries(params: AgentParams, gs) -> Summary:
    """Polarization, bond correlation and bare energy per qubit of ``gs``.

    ``gs`` may be a :class:`GroundState` or a bare amplitude vector.
    """
    psi = np.asarray(getattr(gs, "amplitudes", gs), dtype=float)
    if psi.shape != (params.dim,):
        raise ValueError(f"state has shape {psi.shape}, expected ({params.dim},)")
    ops = _ops(params)
    p = psi * psi
    S = float(p @ ops.s_diag)
    B = float(p @ ops.b_diag)
    e = p @ _bare_diagonal(params, ops) - params.gamma * (psi @ ops.x_sum @ psi)
    return Summary(S, B, float(e) / params.n)


# -- batched paths used by the ensemble loop ---------------------------------

def _common_structure(agents: Sequence[AgentParams]) -> tuple[int, tuple]:
    n, bonds = agents[0].n, agents[0].bonds
    for a in agents[1:]:
        if a.n != n or a.bonds != bonds:
            raise ValueError("batched solves require agents with identical n and bonds")
    return n, bonds


@dataclass(frozen=True)
class AgentBatch:
    """Stacked view of agents sharing one qubit count and bond set."""

    agents: tuple[AgentParams, ...]
    n: int
    bonds: tuple[tuple[int, int], ...]
    bare_diag: np.ndarray   # (N, dim)
    gamma: np.ndarray       # (N,)

    @classmethod
    def from_agents(cls, agents: Sequence[AgentParams]) -> "AgentBatch":
        agents = tuple(agents)
        if not agents:
            raise ValueError("empty agent list")
        n, bonds = _common_structure(agents)
        ops = _operators(n, bonds)
        diag = np.stack([_bare_diagonal(a, ops) for a in agents])
        gamma = np.array([a.gamma for a in agents])
        return cls(agents, n, bonds, diag, gamma)

    def __len__(self):
        return len(self.agents)

    @property
    def ops(self) -> _Operators:
        return _operators(self.n, self.bonds)

    def mf_hamiltonians(self, fields: np.ndarray) -> np.ndarray:
        """Stack of mean-field Hamiltonians, ``fields`` of shape (N, 3)."""
        fields = np.asarray(fields, dtype=float)
        ops = self.ops
        scale = 1.0 - fields[:, 2] / self.n
        H = (-(self.gamma * scale))[:, None, None] * ops.x_sum[None]
        diag = (scale[:, None] * self.bare_diag
                - fields[:, 0:1] * ops.s_diag[None]
                - fields[:, 1:2] * ops.b_diag[None])
        i = np.arange(H.shape[-1])
        H[:, i, i] = diag
        return H

    def ground_states(self, fields: np.ndarray) -> np.ndarray:
        """Ground-state amplitudes, shape (N, dim)."""
        _, v = np.linalg.eigh(self.mf_hamiltonians(fields))
        return _fix_sign(v[:, :, 0])

    def measure(self, psi: np.ndarray) -> np.ndarray:
        """Summaries (N, 3) of stacked states, energy against the bare Hamiltonian."""
        ops = self.ops
        p = psi * psi
        S = p @ ops.s_diag
        B = p @ ops.b_diag
        x = np.einsum("na,ab,nb->n", psi, ops.x_sum, psi)
        U = (np.einsum("na,na->n", p, self.bare_diag) - self.gamma * x) / self.n
        return np.column_stack([S, B, U])

    def solve(self, fields: np.ndarray) -> np.ndarray:
        return self.measure(self.ground_states(fields))
