"""Network and order-parameter diagnostics of converged ensembles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CommunityAssignment:
    labels: np.ndarray
    Q: float


@dataclass(frozen=True)
class NetworkStats:
    strengths: np.ndarray
    clustering: np.ndarray
    threshold: float
    degrees: np.ndarray


def positive_part(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    out = np.where(w > 0, w, 0.0)
    np.fill_diagonal(out, 0.0)
    return out


def modularity(w, labels) -> float:
    """Modularity of a partition, excluding self pairs from the sum.

    ``Q = 1/(2W) sum_{i != j} (w_ij - k_i k_j / 2W) delta(c_i, c_j)``.
    An empty graph has ``Q = 0``.
    """
    w = np.asarray(w, dtype=float)
    labels = np.asarray(labels)
    k = w.sum(axis=1)
    two_w = k.sum()
    if two_w == 0:
        return 0.0
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    B = w - np.outer(k, k) / two_w
    return float(B[same].sum() / two_w)


def _relabel(labels) -> np.ndarray:
    """Contiguous labels in order of first appearance."""
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv]


def detect_communities(w, refine: bool = True) -> CommunityAssignment:
    """Greedy agglomerative modularity maximization.

    Starts from singletons and merges the pair of communities with the
    largest modularity gain while that gain is positive.  Ties go to the
    lexicographically smallest ``(label_a, label_b)``.  With ``refine`` the
    merged partition is then polished by :func:`refine_partition`, which
    can only raise Q.
    """
    w = np.asarray(w, dtype=float)
    N = w.shape[0]
    labels = np.arange(N)
    two_w = w.sum()
    if two_w <= 0 or N < 2:
        return CommunityAssignment(_relabel(labels), 0.0)
    k = w.sum(axis=1)
    # Community-level edge weights and strengths; rows of dead communities stay unused.
    E = w.copy()
    np.fill_diagonal(E, 0.0)
    K = k.copy()
    alive = np.ones(N, dtype=bool)
    while True:
        gain = (E - np.outer(K, K) / two_w) / (0.5 * two_w)
        gain[~alive, :] = -np.inf
        gain[:, ~alive] = -np.inf
        gain[np.tril_indices(N)] = -np.inf
        best = gain.max()
        if not best > 0:
            break
        # argmax returns the first maximal entry in row-major order, i.e. smallest (a, b).
        a, b = np.unravel_index(np.argmax(gain), gain.shape)
        E[a, :] += E[b, :]
        E[:, a] += E[:, b]
        E[a, a] = 0.0
        K[a] += K[b]
        alive[b] = False
        labels[labels == b] = a
    labels = _relabel(labels)
    if refine:
        labels = refine_partition(w, labels)
    return CommunityAssignment(labels, modularity(w, labels))


def refine_partition(w, labels) -> np.ndarray:
    """Kernighan-Lin style single-node moves.

    Each pass moves every node exactly once, always taking the best available
    move (to another community or a fresh one) even when it lowers Q, and
    keeps the best partition met along the way.  Passes repeat until one
    brings no improvement.  Ties go to the lowest node, then lowest label.
    """
    w = np.asarray(w, dtype=float)
    N = w.shape[0]
    k = w.sum(axis=1)
    two_w = k.sum()
    labels = _relabel(labels)
    if two_w <= 0 or N < 2:
        return labels
    B = w - np.outer(k, k) / two_w
    np.fill_diagonal(B, 0.0)
    while True:
        cur = labels.copy()
        locked = np.zeros(N, dtype=bool)
        gain_total = 0.0
        best_q, best = 0.0, labels
        for _ in range(N):
            # Column N is the empty community every node may open.
            onehot = np.zeros((N, N + 1))
            onehot[np.arange(N), cur] = 1.0
            score = B @ onehot
            used = onehot.any(axis=0)
            used[N] = True
            if used[:N].all():
                used[N] = False
            own = score[np.arange(N), cur]
            gain = score - own[:, None]
            gain[:, ~used] = -np.inf
            gain[np.arange(N), cur] = -np.inf
            gain[locked] = -np.inf
            i, c = np.unravel_index(np.argmax(gain), gain.shape)
            if not np.isfinite(gain[i, c]):
                break
            if c == N:
                c = np.flatnonzero(~onehot[:, :N].any(axis=0))[0]
            gain_total += 2.0 * gain[i, c] / two_w
            cur[i] = c
            locked[i] = True
            if gain_total > best_q + 1e-12:
                best_q, best = gain_total, cur.copy()
        if best is labels:
            return labels
        labels = _relabel(best)


def network_stats(w, threshold_fraction: float = 0.1) -> NetworkStats:
    """Signed strengths and per-node clustering on a thresholded graph.

    Edges are kept where ``|w_ij| > threshold_fraction * max|w|``.
    """
    w = np.asarray(w, dtype=float)
    strengths = w.sum(axis=1)
    absw = np.abs(w.copy())
    np.fill_diagonal(absw, 0.0)
    cut = threshold_fraction * absw.max() if absw.size else 0.0
    A = (absw > cut).astype(float)
    deg = A.sum(axis=1)
    triangles = np.diag(A @ A @ A) / 2.0
    pairs = deg * (deg - 1) / 2.0
    with np.errstate(invalid="ignore", divide="ignore"):
        clustering = np.where(deg >= 2, triangles / np.where(pairs > 0, pairs, 1.0), 0.0)
    return NetworkStats(strengths, clustering, float(cut), deg)


def _spins(item) -> np.ndarray:
    """Polarization vector from a result object, a summary array or a plain vector."""
    s = getattr(item, "summaries", item)
    s = np.asarray(s, dtype=float)
    return s[:, 0] if s.ndim == 2 else s


def correlation_matrix(results, mode: str = "per-realization", sort: bool = True,
                       index: int = 0):
    """Agent-agent polarization products ``S_i S_j``.

    Parameters
    ----------
    results : sequence
        Realization results, (N, 3) summary arrays or polarization vectors.
    mode : {"per-realization", "ensemble"}
        Use realization ``index`` only, or average products over all
        realizations with agents aligned by sorted polarization.
    sort : bool
        Order agents by polarization.  Always applied in ensemble mode.

    Returns
    -------
    C : ndarray (N, N)
    meta : dict
        Mode, sorting and, for a single realization, the agent order.
    """
    results = list(results)
    if not results:
        raise ValueError("no realizations given")
    if mode == "per-realization":
        S = _spins(results[index])
        order = np.argsort(S, kind="stable") if sort else np.arange(S.size)
        S = S[order]
        meta = {"mode": mode, "sorted": bool(sort), "realization": int(index),
                "order": order.tolist()}
        return np.outer(S, S), meta
    if mode == "ensemble":
        C = None
        for item in results:
            S = np.sort(_spins(item), kind="stable")
            C = np.outer(S, S) if C is None else C + np.outer(S, S)
        meta = {"mode": mode, "sorted": True, "realizations": len(results)}
        return C / len(results), meta
    raise ValueError(f"unknown correlation mode {mode!r}")


def derivative_operator(gammas) -> np.ndarray:
    """Matrix ``D`` with ``D @ v == np.gradient(v, gammas)`` (first-order edges)."""
    g = np.asarray(gammas, dtype=float)
    return np.gradient(np.eye(g.size), g, axis=0)


def susceptibility(gammas, values) -> np.ndarray:
    """Negative slope of an order parameter along the transverse field.

    Interior points use the three-point finite difference (exact for
    quadratics on any grid), the ends one-sided differences.
    """
    g = np.asarray(gammas, dtype=float)
    v = np.asarray(values, dtype=float)
    if g.size < 3:
        raise ValueError("susceptibility needs at least 3 points")
    if g.shape != v.shape:
        raise ValueError("gammas and values differ in length")
    if np.any(np.diff(g) <= 0):
        raise ValueError("gammas must be strictly increasing")
    return -np.gradient(v, g)


def susceptibility_error(gammas, sems) -> np.ndarray:
    """Standard errors of :func:`susceptibility` for independent point errors."""
    D = derivative_operator(gammas)
    return np.sqrt((D ** 2) @ np.asarray(sems, dtype=float) ** 2)


def binder_cumulant(samples) -> float:
    """``1 - <m^4> / (3 <m^2>^2)`` over the samples; NaN if all are zero."""
    m = np.asarray(samples, dtype=float).ravel()
    if m.size < 2:
        raise ValueError("binder cumulant needs at least 2 samples")
    m2 = np.mean(m ** 2)
    if m2 == 0:
        return float("nan")
    return float(1.0 - np.mean(m ** 4) / (3.0 * m2 ** 2))


def jackknife_error(samples, statistic) -> float:
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        return 0.0
    loo = np.array([statistic(np.delete(x, i)) for i in range(n)])
    if not np.all(np.isfinite(loo)):
        return float("nan")
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
