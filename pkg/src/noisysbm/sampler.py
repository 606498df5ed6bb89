"""Simulation of NSBM triples and of the fixed or random graphs used as ground truth."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .model import (
    LatentState,
    ModelParams,
    ObservationMatrix,
    edge_index,
    edge_pairs,
    n_edges,
    validate_theta,
)

GRAPH_KINDS = ("nsbm", "star", "spider", "erdos_renyi_M", "bipartite", "preferential_attachment")


@dataclass(frozen=True)
class NoiseSpec:
    sigma0: float = 1.0
    mu1: float = 2.0
    sigma1: float = 1.0

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.sigma1 > 0):
            raise ValueError("noise standard deviations must be positive")


@dataclass(frozen=True)
class GraphSpec:
    """Ground-truth graph description; unused fields are ignored by the chosen ``kind``."""

    kind: str
    n: int
    M: int | None = None
    p: float | None = None
    edges_per_node: int | None = None
    n0: int | None = None
    p0: float | None = None
    theta: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in GRAPH_KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}; expected one of {GRAPH_KINDS}")
        if self.n < 2:
            raise ValueError("n must be at least 2")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_nsbm(n: int, theta: ModelParams, seed=None) -> tuple[LatentState, ObservationMatrix]:
    """Draw ``(Z, A, X)`` from the Gaussian NSBM; ``Z`` is 0-based."""
    validate_theta(theta)
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = _rng(seed)
    Z = rng.choice(theta.Q, size=n, p=theta.pi).astype(np.intp)
    rows, cols = edge_pairs(n)
    zq, zl = Z[rows], Z[cols]
    A = (rng.random(rows.size) < theta.w[zq, zl]).astype(np.int8)
    noise = rng.standard_normal(rows.size)
    x = np.where(A == 1, theta.mu[zq, zl] + theta.sigma[zq, zl] * noise, theta.sigma0 * noise)
    return LatentState(Z, A), ObservationMatrix(n, x)


def _from_pairs(n, pairs) -> np.ndarray:
    A = np.zeros(n_edges(n), dtype=np.int8)
    if len(pairs):
        p = np.asarray(pairs)
        lo, hi = np.minimum(p[:, 0], p[:, 1]), np.maximum(p[:, 0], p[:, 1])
        A[edge_index(lo, hi, n)] = 1
    return A


def graph_star(n: int) -> np.ndarray:
    """Node 0 linked to every other node."""
    if n < 3:
        raise ValueError("star needs n >= 3")
    return _from_pairs(n, [(0, j) for j in range(1, n)])


def graph_spider(n: int) -> np.ndarray:
    """Star plus a ring through the non-hub nodes ``1 -> 2 -> ... -> n-1 -> 1``."""
    if n < 4:
        raise ValueError("spider needs n >= 4")
    ring = [(j, j + 1) for j in range(1, n - 1)] + [(n - 1, 1)]
    return _from_pairs(n, [(0, j) for j in range(1, n)] + ring)


def graph_erdos_renyi(n: int, M: int, seed=None) -> np.ndarray:
    """``G(n, M)``: ``M`` distinct edges drawn uniformly without replacement."""
    m = n_edges(n)
    if not 0 <= M <= m:
        raise ValueError(f"M must lie in [0, {m}], got {M}")
    A = np.zeros(m, dtype=np.int8)
    A[_rng(seed).choice(m, size=M, replace=False)] = 1
    return A


def graph_bipartite(n: int, p: float, seed=None) -> np.ndarray:
    """Independent edges with probability ``p`` between the two halves of the nodes."""
    if n % 2:
        raise ValueError("bipartite graph needs an even n")
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    rows, cols = edge_pairs(n)
    cross = (rows < n // 2) & (cols >= n // 2)
    draws = _rng(seed).random(rows.size) < p
    return (cross & draws).astype(np.int8)


def graph_preferential(n: int, edges_per_node: int, n0: int, p0: float, seed=None) -> np.ndarray:
    """Preferential attachment grown from a ``G(n0, p0)`` root.

    Each new node links to ``edges_per_node`` distinct existing nodes drawn
    with probability proportional to ``degree + 1``.
    """
    if not 1 <= n0 < n:
        raise ValueError("need 1 <= n0 < n")
    if not 0 <= edges_per_node <= n0:
        raise ValueError(f"edges_per_node must lie in [0, n0={n0}]")
    if not 0 <= p0 <= 1:
        raise ValueError("p0 must lie in [0, 1]")
    rng = _rng(seed)
    rows, cols = edge_pairs(n0)
    root = rng.random(rows.size) < p0
    pairs = list(zip(rows[root].tolist(), cols[root].tolist()))
    deg = np.zeros(n, dtype=float)
    np.add.at(deg, rows[root], 1)
    np.add.at(deg, cols[root], 1)
    for v in range(n0, n):
        if edges_per_node == 0:
            continue
        weights = deg[:v] + 1.0
        targets = rng.choice(v, size=edges_per_node, replace=False, p=weights / weights.sum())
        pairs.extend((int(t), v) for t in targets)
        deg[targets] += 1
        deg[v] += edges_per_node
    return _from_pairs(n, pairs)


def noisy_observation(A, noise: NoiseSpec, seed=None) -> ObservationMatrix:
    """Independent draws ``N(0, sigma0^2)`` off the graph and ``N(mu1, sigma1^2)`` on it."""
    A = np.asarray(A)
    m = A.size
    n = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if n * (n - 1) // 2 != m:
        raise ValueError(f"adjacency length {m} is not n(n-1)/2")
    z = _rng(seed).standard_normal(m)
    x = np.where(A == 1, noise.mu1 + noise.sigma1 * z, noise.sigma0 * z)
    return ObservationMatrix(n, x)


def sample_graph(spec: GraphSpec, seed=None) -> np.ndarray:
    """Adjacency for the non-NSBM kinds."""
    rng = _rng(seed)
    if spec.kind == "star":
        return graph_star(spec.n)
    if spec.kind == "spider":
        return graph_spider(spec.n)
    if spec.kind == "erdos_renyi_M":
        return graph_erdos_renyi(spec.n, spec.M, rng)
    if spec.kind == "bipartite":
        return graph_bipartite(spec.n, spec.p, rng)
    if spec.kind == "preferential_attachment":
        return graph_preferential(spec.n, spec.edges_per_node, spec.n0, spec.p0, rng)
    raise ValueError(f"{spec.kind!r} is not a fixed-graph kind")


def sample_scenario(spec: GraphSpec, noise: NoiseSpec | None, seed=None) -> tuple[LatentState, ObservationMatrix]:
    """One ground truth plus observation for any graph kind."""
    rng = _rng(seed)
    if spec.kind == "nsbm":
        if spec.theta is None:
            raise ValueError("nsbm graph spec needs theta")
        return sample_nsbm(spec.n, ModelParams.from_dict(spec.theta), rng)
    if noise is None:
        raise ValueError(f"graph kind {spec.kind!r} needs a noise spec")
    A = sample_graph(spec, rng)
    return LatentState(None, A), noisy_observation(A, noise, rng)
