"""Brute-force references shared by the unit and acceptance tests."""
import numpy as np

from aqia.diagnostics import modularity


def set_partitions(n):
    """All partitions of ``range(n)`` as restricted-growth label lists."""
    if n == 0:
        yield []
        return
    labels = [0] * n

    def grow(i, top):
        if i == n:
            yield list(labels)
            return
        for v in range(top + 2):
            labels[i] = v
            yield from grow(i + 1, max(top, v))

    yield from grow(1, 0)


def optimal_modularity(w):
    return max(modularity(w, p) for p in set_partitions(len(w)))


def random_weighted_graph(rng, N, density=0.5):
    """Erdos-Renyi edges with Uniform(0, 1) weights."""
    w = rng.uniform(0, 1, (N, N)) * (rng.random((N, N)) < density)
    w = np.triu(w, 1)
    return w + w.T
